//! Shared fixtures and reference implementations for the integration tests.
//! Each `check_*` function runs one acceptance criterion and returns a short
//! detail line, or the reason it failed.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gw_core::align::{
    cosine, topk_soft_align, EmbeddingCache, EmbeddingVector, FileCacheProvider, TopKTable,
};
use gw_core::codebook::{AttributeClass, Codebook, SceneDomain, Snippet};
use gw_core::eval::{
    build_swap_vocab, compute_report, default_miou_sweep, default_report_thresholds, match_detections, percent,
    precision_recall_f1, prompt_swap_eval, round_half_up, swap_average, Detection, GroundTruth, MetricsReport,
    SwapSet, SwapSetDocument, SwapSource, Vocabulary,
};
use gw_core::geometry::{
    classify_size, iou, make_crops, nms, plan_scales, BBox, ImageMeta, ScaleRole, ScaleTable, SceneKind,
    SizeThresholdTable,
};
use gw_core::prompt::PromptTemplate;
use gw_core::llm::MockChatClient;
use gw_core::pipeline::{
    detections_jsonl, load_dataset, load_proposals, run_detect, Dataset, PipelineConfig, Resources,
    RunInputs, RunOutput,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub type Check = Result<String, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- formulas

fn cents(x: f64) -> i64 {
    (round_half_up(x, 2) * 100.0).round() as i64
}

/// F1 recomputed from printed (recall, precision) percentages must land on
/// the printed F1 within one hundredth.
pub fn check_f1_cells() -> Check {
    let cells = [(91.70, 93.23, 92.46), (70.85, 88.00, 78.50), (73.51, 83.12, 78.02)];
    let mut seen = Vec::new();
    for (r, p, printed) in cells {
        let f1 = round_half_up(gw_core::eval::f1_score(p / 100.0, r / 100.0) * 100.0, 2);
        let diff = (cents(f1) - cents(printed)).abs();
        seen.push(format!("{f1:.2}"));
        if diff > 1 {
            return Err(format!("R={r} P={p}: got {f1:.2}, printed {printed:.2}"));
        }
    }
    Ok(seen.join(" / "))
}

pub fn check_swap_average() -> Check {
    let avg = percent(swap_average(&[0.7683, 0.7611, 0.7622]));
    let diff = (cents(avg) - cents(76.40)).abs();
    if diff > 1 {
        return Err(format!("average {avg:.2} vs printed 76.40"));
    }
    Ok(format!("{avg:.2} vs 76.40"))
}

// ---------------------------------------------------------------- geometry

/// IoU on integer corners, computed with integer intersection and union.
pub fn oracle_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0);
    let inter = iw * ih;
    if inter == 0 {
        return 0.0;
    }
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    inter as f64 / union as f64
}

pub fn random_grid_box(r: &mut impl Rng, grid: i64) -> [i64; 4] {
    let x1 = r.gen_range(0..grid - 1);
    let y1 = r.gen_range(0..grid - 1);
    [x1, y1, r.gen_range(x1 + 1..=grid), r.gen_range(y1 + 1..=grid)]
}

pub fn to_bbox(c: [i64; 4], score: f64, source: &str) -> BBox {
    BBox::new("img", c.map(|v| v as f64), score, source).unwrap()
}

pub fn check_iou_oracle(trials: usize) -> Check {
    let mut r = rng(11);
    for t in 0..trials {
        let grid = [4, 16, 100][t % 3];
        let (a, b) = (random_grid_box(&mut r, grid), random_grid_box(&mut r, grid));
        let got = iou(&to_bbox(a, 0.5, "s"), &to_bbox(b, 0.5, "s"));
        let want = oracle_iou(a, b);
        if got != want || iou(&to_bbox(b, 0.5, "s"), &to_bbox(a, 0.5, "s")) != want {
            return Err(format!("{a:?} vs {b:?}: got {got}, oracle {want}"));
        }
    }
    Ok(format!("{trials} pairs exact"))
}

/// Reference NMS: repeatedly take the best remaining box and delete every
/// remaining box overlapping it by more than the threshold.
pub fn oracle_nms(items: &[([i64; 4], f64, String)], thr: f64) -> Vec<([i64; 4], f64, String)> {
    let mut pool = items.to_vec();
    pool.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.2.cmp(&b.2))
            .then_with(|| a.0.cmp(&b.0))
    });
    let mut kept = Vec::new();
    while !pool.is_empty() {
        let top = pool.remove(0);
        pool.retain(|c| oracle_iou(top.0, c.0) <= thr);
        kept.push(top);
    }
    kept
}

fn key(b: &BBox) -> ([i64; 4], u64, String) {
    (b.coords().map(|v| v as i64), b.score.to_bits(), b.source.clone())
}

pub fn check_nms_oracle(trials: usize) -> Check {
    let mut r = rng(12);
    for thr in [0.3, 0.5, 0.7] {
        for _ in 0..trials {
            let n = r.gen_range(0..14);
            let grid = r.gen_range(4..40);
            let items: Vec<_> = (0..n)
                .map(|_| {
                    // Coarse scores so that ties happen.
                    let score = r.gen_range(0..5) as f64 / 4.0;
                    let source = ["a", "b"][r.gen_range(0..2)].to_string();
                    (random_grid_box(&mut r, grid), score, source)
                })
                .collect();
            let boxes: Vec<BBox> = items.iter().map(|(c, s, src)| to_bbox(*c, *s, src)).collect();
            let mut got: Vec<_> = nms(&boxes, thr).iter().map(key).collect();
            let mut want: Vec<_> = oracle_nms(&items, thr)
                .into_iter()
                .map(|(c, s, src)| (c, s.to_bits(), src))
                .collect();
            got.sort();
            want.sort();
            if got != want {
                return Err(format!("thr {thr}: {items:?} kept {got:?}, oracle {want:?}"));
            }
        }
    }
    Ok(format!("{trials} instances at each of 0.3, 0.5, 0.7"))
}

// ---------------------------------------------------------------- alignment

pub fn random_vector(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

pub fn ev(v: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(v).unwrap()
}

/// Sort everything by (similarity desc, id asc) and truncate.
pub fn oracle_topk(
    crop: &EmbeddingVector,
    book: &[(String, EmbeddingVector)],
    k: usize,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = book
        .iter()
        .map(|(id, v)| (id.clone(), cosine(crop, v).unwrap()))
        .collect();
    all.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    all.truncate(k);
    all
}

/// A codebook with deliberate exact ties: some entries copy earlier vectors.
pub fn random_book(r: &mut impl Rng, n: usize, dim: usize, with_copies: bool) -> Vec<(String, EmbeddingVector)> {
    let mut book: Vec<(String, EmbeddingVector)> = Vec::with_capacity(n);
    for i in 0..n {
        let v = if with_copies && i > 0 && r.gen_bool(0.2) {
            book[r.gen_range(0..i)].1.clone()
        } else {
            ev(random_vector(r, dim))
        };
        book.push((format!("s{:03}", r.gen_range(0..1000)) + &format!("-{i}"), v));
    }
    book
}

pub fn check_topk_oracle(trials: usize) -> Check {
    let mut r = rng(13);
    for t in 0..trials {
        let dim = [4, 16, 512][t % 3];
        let n = r.gen_range(1..=100);
        let book = random_book(&mut r, n, dim, true);
        let crop = if r.gen_bool(0.1) {
            book[0].1.clone()
        } else {
            ev(random_vector(&mut r, dim))
        };
        let k = r.gen_range(1..=n + 3);
        let got: Vec<(String, f64)> = topk_soft_align(&crop, &book, k)
            .unwrap()
            .into_iter()
            .map(|m| (m.snippet_id, m.similarity))
            .collect();
        let want = oracle_topk(&crop, &book, k);
        if got != want {
            return Err(format!("trial {t} (n={n}, dim={dim}, k={k}) differs"));
        }
    }
    Ok(format!("{trials} instances, dims 4/16/512"))
}

pub fn check_scale_invariance(trials: usize) -> Check {
    let mut r = rng(14);
    for t in 0..trials {
        let dim = [4, 16, 64, 512][t % 4];
        let n = r.gen_range(2..=60);
        let book = random_book(&mut r, n, dim, false);
        let crop = ev(random_vector(&mut r, dim));
        let k = r.gen_range(1..=n);
        let ids = |c: &EmbeddingVector, b: &[(String, EmbeddingVector)]| -> Vec<String> {
            topk_soft_align(c, b, k).unwrap().into_iter().map(|m| m.snippet_id).collect()
        };
        let base = ids(&crop, &book);
        let alpha = 10f64.powf(r.gen_range(-3.0..3.0));
        if ids(&crop.scaled(alpha).unwrap(), &book) != base {
            return Err(format!("trial {t}: scaling the crop by {alpha} reordered Top-{k}"));
        }
        let j = r.gen_range(0..n);
        let mut scaled_book = book.clone();
        scaled_book[j].1 = book[j].1.scaled(alpha).unwrap();
        if ids(&crop, &scaled_book) != base {
            return Err(format!("trial {t}: scaling snippet {j} by {alpha} reordered Top-{k}"));
        }
    }
    Ok(format!("{trials} trials"))
}

// ---------------------------------------------------------------- cache

pub const EDGE_FLOATS: &[f32] = &[
    0.0,
    -0.0,
    f32::MIN_POSITIVE,
    -f32::MIN_POSITIVE,
    1.0e-45,
    -1.0e-45,
    1.17e-38,
    f32::MAX,
    f32::MIN,
    f32::EPSILON,
    1.0,
    -1.0,
    0.1,
    16_777_217.0,
];

pub fn random_f32(r: &mut impl Rng) -> f32 {
    match r.gen_range(0..4) {
        0 => EDGE_FLOATS[r.gen_range(0..EDGE_FLOATS.len())],
        1 => f32::from_bits(r.gen_range(0..0x0080_0000u32) | if r.gen::<bool>() { 0x8000_0000 } else { 0 }),
        2 => loop {
            let f = f32::from_bits(r.gen());
            if f.is_finite() {
                break f;
            }
        },
        _ => r.gen_range(-1.0f32..1.0),
    }
}

/// Independent encoder for the cache layout.
pub fn oracle_encode(dim: usize, entries: &[(String, Vec<f32>)]) -> Vec<u8> {
    let mut out = b"GWEMB1".to_vec();
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (id, v) in entries {
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    out
}

pub fn random_cache_entries(r: &mut impl Rng) -> (usize, Vec<(String, Vec<f32>)>) {
    let dim = r.gen_range(1..=40);
    let n = r.gen_range(0..30);
    let entries = (0..n)
        .map(|i| {
            let id = match i % 3 {
                0 => format!("s{i:04x}"),
                1 => format!("img_{i}/1.00,2.00,3.00,4.00/zoom_in@0.50"),
                _ => format!("ünï-{i}"),
            };
            (id, (0..dim).map(|_| random_f32(r)).collect())
        })
        .collect();
    (dim, entries)
}

pub fn check_cache_round_trip(files: usize) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng(15);
    for f in 0..files {
        let (dim, entries) = random_cache_entries(&mut r);
        let vectors: Vec<(String, EmbeddingVector)> = entries
            .iter()
            .map(|(id, v)| (id.clone(), EmbeddingVector::from_f32(v).unwrap()))
            .collect();
        let cache = EmbeddingCache::new(dim, vectors).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("c{f}.gwemb"));
        cache.write(&path).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        if bytes != oracle_encode(dim, &entries) {
            return Err(format!("file {f}: bytes differ from the reference layout"));
        }
        let back = EmbeddingCache::read(&path).map_err(|e| e.to_string())?;
        if back.dim() != dim || back.len() != entries.len() {
            return Err(format!("file {f}: header mismatch"));
        }
        for ((id, want), (got_id, got)) in entries.iter().zip(back.entries()) {
            let got = got.to_f32_exact().ok_or_else(|| format!("{id}: not f32-exact"))?;
            let same = got.iter().map(|x| x.to_bits()).eq(want.iter().map(|x| x.to_bits()));
            if id != got_id || !same {
                return Err(format!("file {f}, entry {id}: values differ bitwise"));
            }
        }
    }
    Ok(format!("{files} files bit-exact"))
}

// ---------------------------------------------------------------- scales

pub fn check_scale_plans(trials: usize) -> Check {
    let table = ScaleTable::default();
    let thresholds = SizeThresholdTable::default();
    let mut r = rng(16);
    for _ in 0..trials {
        let scene = if r.gen_bool(0.5) { SceneKind::Natural } else { SceneKind::RemoteSensing };
        let (w, h) = (r.gen_range(16..4000u32), r.gen_range(16..4000u32));
        let meta = ImageMeta::new("img", w, h, scene);
        let x1 = r.gen_range(0.0..w as f64 - 1.0);
        let y1 = r.gen_range(0.0..h as f64 - 1.0);
        let b = BBox::new(
            "img",
            [x1, y1, r.gen_range(x1 + 0.5..=w as f64), r.gen_range(y1 + 0.5..=h as f64)],
            0.5,
            "t",
        )
        .unwrap();
        let size = classify_size(&b, &meta, &thresholds);
        let plan = plan_scales(&size, scene, &table).map_err(|e| e.to_string())?;
        let (zi, zo) = (plan.count(ScaleRole::ZoomIn), plan.count(ScaleRole::ZoomOut));
        let ok = plan.count(ScaleRole::Primary) == 1
            && match scene {
                SceneKind::Natural => zi == 2 && zo == 1,
                SceneKind::RemoteSensing => (2..=3).contains(&zi) && (2..=3).contains(&zo),
            };
        if !ok {
            return Err(format!("{scene} {:?}: {zi} zoom-in, {zo} zoom-out", size.level));
        }
    }
    let k = TopKTable::default().remote_sensing;
    if (k.primary, k.zoom_in, k.zoom_out) != (3, 5, 5) {
        return Err(format!("remote sensing K is {k:?}"));
    }
    Ok(format!("{trials} plans; RS K primary 3, zoom 5"))
}

// ---------------------------------------------------------------- golden run

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub struct Golden {
    pub cfg: PipelineConfig,
    pub dataset: Dataset,
    pub proposals: BTreeMap<String, Vec<BBox>>,
    pub resources: Resources,
    pub provider: FileCacheProvider,
    pub swaps: Vec<SwapSet>,
}

pub fn load_golden() -> Result<Golden, String> {
    let dir = golden_dir();
    let cfg = PipelineConfig::load(&dir.join("gw.toml")).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    let scene = cfg.scene().map_err(|e| e.to_string())?;
    let dataset = load_dataset(cfg.dataset.annotations.as_ref().unwrap(), None, scene).map_err(|e| e.to_string())?;
    let proposals = load_proposals(cfg.dataset.proposals.as_ref().unwrap()).map_err(|e| e.to_string())?;
    let resources = Resources::load(&cfg, &dataset.categories).map_err(|e| e.to_string())?;
    let provider = FileCacheProvider::open(cfg.embedding.cache.as_ref().unwrap()).map_err(|e| e.to_string())?;
    let swaps = cfg
        .swap_sets
        .iter()
        .map(|p| build_swap_vocab(&resources.vocabulary, SwapSource::File(p)))
        .collect::<gw_core::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    Ok(Golden {
        cfg,
        dataset,
        proposals,
        resources,
        provider,
        swaps,
    })
}

impl Golden {
    pub fn run(&self, workers: usize, swap: Option<&SwapSet>) -> Result<RunOutput, String> {
        let mut cfg = self.cfg.clone();
        cfg.workers = workers;
        let inputs = RunInputs {
            metas: &self.dataset.metas,
            proposals: &self.proposals,
            images_dir: None,
        };
        let chat = MockChatClient::top_snippet();
        run_detect(&cfg, &self.resources, &inputs, &self.provider, &chat, swap).map_err(|e| e.to_string())
    }

    pub fn report(&self, run: &RunOutput) -> MetricsReport {
        compute_report(
            &run.detections,
            &self.dataset.ground_truths,
            &default_report_thresholds(),
            &default_miou_sweep(),
        )
    }
}

pub fn oracle_expectations() -> Value {
    let text = std::fs::read_to_string(golden_dir().join("expected_oracle.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

/// Compares a run against the oracle's detections and metrics, exactly.
pub fn compare_with_oracle(run: &RunOutput, report: &MetricsReport, oracle: &Value) -> Check {
    let want = oracle["detections"].as_array().unwrap();
    if want.len() != run.detections.len() {
        return Err(format!("{} detections, oracle has {}", run.detections.len(), want.len()));
    }
    for (d, w) in run.detections.iter().zip(want) {
        let bbox: Vec<f64> = w["bbox"].as_array().unwrap().iter().map(f).collect();
        if d.image_id != w["image_id"].as_str().unwrap()
            || d.bbox.to_vec() != bbox
            || d.score != f(&w["score"])
            || d.category != w["category"].as_str().unwrap()
            || d.error.is_some() != w["failed"].as_bool().unwrap()
        {
            return Err(format!("detection {d:?} differs from oracle {w}"));
        }
    }
    for (m, w) in report.per_threshold.iter().zip(oracle["per_threshold"].as_array().unwrap()) {
        let counts = [m.tp, m.fp, m.fn_].map(|c| c as u64);
        let want_counts = ["tp", "fp", "fn"].map(|k| w[k].as_u64().unwrap());
        let floats = [m.iou, m.precision, m.recall, m.f1];
        let want_floats = ["iou", "precision", "recall", "f1"].map(|k| f(&w[k]));
        if counts != want_counts || floats != want_floats {
            return Err(format!("IoU {}: {m:?} vs oracle {w}", m.iou));
        }
    }
    let sweep: Vec<f64> = report.sweep.iter().map(|m| m.f1).collect();
    let want_sweep: Vec<f64> = oracle["sweep_f1"].as_array().unwrap().iter().map(f).collect();
    if sweep != want_sweep || report.miou.f1 != f(&oracle["miou_f1"]) {
        return Err(format!("sweep {sweep:?} vs oracle {want_sweep:?}"));
    }
    Ok(format!(
        "{} detections, F1@0.5 {:.4}, F1@mIoU {:.4}",
        run.detections.len(),
        report.per_threshold[0].f1,
        report.miou.f1
    ))
}

pub fn check_golden() -> Check {
    let g = load_golden()?;
    let oracle = oracle_expectations();
    let expected = std::fs::read_to_string(golden_dir().join("expected_detections.jsonl")).map_err(|e| e.to_string())?;
    let mut detail = String::new();
    for workers in [1, 4, 16] {
        let run = g.run(workers, None)?;
        if detections_jsonl(&run.detections) != expected {
            return Err(format!("workers={workers}: detections file differs from the committed one"));
        }
        detail = compare_with_oracle(&run, &g.report(&run), &oracle)?;
    }
    Ok(format!("workers 1/4/16 identical; {detail}"))
}

// ---------------------------------------------------------------- prompt swap

fn f1_at_half(dets: &[Detection], gts: &[GroundTruth]) -> f64 {
    let m = match_detections(dets, gts, 0.5, true);
    precision_recall_f1(m.tp, m.fp, m.fn_).f1
}

const CATEGORY_NAMES: &[&str] = &["airplane", "ship", "storage tank", "vehicle", "bridge", "harbor"];
const DISTRACTORS: &[&str] = &["metallic sheen", "long cast shadow", "rows of bright dots", "grey concrete"];
const ALIAS_POOLS: &[&[&str]] = &[
    &["aeroplane", "vessel", "oil tank", "automobile", "overpass", "port"],
    &["jet", "watercraft", "silo", "motorcar", "viaduct", "dock"],
    &["airliner", "freighter", "reservoir", "sedan", "span", "marina"],
];

/// A small in-memory scene: category and distractor snippets on basis
/// vectors, one image, non-overlapping proposals whose primary crops point
/// at a random snippet.
struct SwapWorld {
    cfg: PipelineConfig,
    resources: Resources,
    provider: FileCacheProvider,
    metas: Vec<ImageMeta>,
    proposals: BTreeMap<String, Vec<BBox>>,
    gts: Vec<GroundTruth>,
    swaps: Vec<SwapSet>,
}

fn swap_world(r: &mut impl Rng) -> SwapWorld {
    let scene = SceneKind::RemoteSensing;
    let n_cat = r.gen_range(2..=CATEGORY_NAMES.len());
    let cats: Vec<String> = CATEGORY_NAMES[..n_cat].iter().map(|s| s.to_string()).collect();
    let mut snippets: Vec<Snippet> = cats
        .iter()
        .map(|c| Snippet::new(c, AttributeClass::CommonCategory, SceneDomain::RemoteSensing))
        .collect();
    snippets.extend(
        DISTRACTORS
            .iter()
            .map(|t| Snippet::new(t, AttributeClass::Appearance, SceneDomain::RemoteSensing)),
    );
    let dim = snippets.len() + 2;
    let basis = |i: usize| {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        ev(v)
    };
    let mut entries: Vec<(String, EmbeddingVector)> =
        snippets.iter().enumerate().map(|(i, s)| (s.snippet_id.clone(), basis(i))).collect();

    let meta = ImageMeta::new("scene", 1000, 1000, scene);
    let cfg = PipelineConfig {
        scene_kind: Some(scene),
        ..Default::default()
    };
    let mut boxes = Vec::new();
    let mut gts = Vec::new();
    for slot in 0..r.gen_range(1..=12usize) {
        let (x, y) = ((slot % 4) as f64 * 240.0 + 10.0, (slot / 4) as f64 * 300.0 + 10.0);
        let (w, h) = (r.gen_range(20.0..200.0f64).round(), r.gen_range(20.0..200.0f64).round());
        let b = BBox::new("scene", [x, y, x + w, y + h], r.gen_range(1..100) as f64 / 100.0, "rpn").unwrap();
        let answer = r.gen_range(0..snippets.len());
        let mut primary = basis(answer).values().to_vec();
        primary[dim - 1] = 0.1;
        if r.gen_bool(0.8) {
            let label = cats[r.gen_range(0..n_cat)].clone();
            let jitter = r.gen_range(0.0..30.0f64).round();
            gts.push(GroundTruth {
                image_id: "scene".into(),
                bbox: [x + jitter, y, x + w + jitter, y + h],
                category: label,
            });
        }
        let size = classify_size(&b, &meta, &cfg.size_thresholds);
        let plan = plan_scales(&size, scene, &cfg.scales).unwrap();
        for c in make_crops(&b, &plan, &meta).unwrap() {
            let v = if c.role == ScaleRole::Primary {
                ev(primary.clone())
            } else {
                ev(random_vector(r, dim))
            };
            entries.push((c.crop_id, v.rounded_to_f32().unwrap()));
        }
        boxes.push(b);
    }
    let vocabulary = Vocabulary::new(cats.clone(), &BTreeMap::new()).unwrap();
    let swaps = ALIAS_POOLS
        .iter()
        .enumerate()
        .map(|(i, pool)| {
            let mut aliases: Vec<&str> = pool[..n_cat].to_vec();
            aliases.shuffle(r);
            let doc = SwapSetDocument {
                set_id: format!("texts-{}", i + 1),
                aliases: cats.iter().cloned().zip(aliases.into_iter().map(String::from)).collect(),
            };
            build_swap_vocab(&vocabulary, SwapSource::Document(doc)).unwrap()
        })
        .collect();
    let cache = EmbeddingCache::new(dim, entries).unwrap();
    SwapWorld {
        resources: Resources {
            codebook: Codebook::new(snippets, scene).unwrap(),
            template: PromptTemplate::shipped(scene),
            vocabulary,
        },
        cfg,
        provider: FileCacheProvider::new(cache, "memory"),
        metas: vec![meta],
        proposals: [("scene".to_string(), boxes)].into(),
        gts,
        swaps,
    }
}

impl SwapWorld {
    fn run(&self, swap: Option<&SwapSet>) -> Result<Vec<Detection>, String> {
        let inputs = RunInputs {
            metas: &self.metas,
            proposals: &self.proposals,
            images_dir: None,
        };
        run_detect(&self.cfg, &self.resources, &inputs, &self.provider, &MockChatClient::top_snippet(), swap)
            .map(|o| o.detections)
            .map_err(|e| e.to_string())
    }
}

/// Random worlds: every swap set scores exactly like the unswapped run.
pub fn check_swap_property(trials: usize) -> Check {
    let mut r = rng(17);
    for t in 0..trials {
        let w = swap_world(&mut r);
        let plain = f1_at_half(&w.run(None)?, &w.gts);
        let mut results = BTreeMap::new();
        for s in &w.swaps {
            results.insert(s.set_id.clone(), w.run(Some(s))?);
        }
        let report = prompt_swap_eval(&results, &w.gts, &w.resources.vocabulary, &w.swaps)
            .map_err(|e| e.to_string())?;
        if report.per_set.iter().any(|s| s.f1 != plain) {
            return Err(format!("world {t}: plain F1 {plain}, swapped {:?}", report.per_set));
        }
    }
    Ok(format!("{trials} random worlds"))
}

/// The golden fixture under its three swap sets.
pub fn check_golden_swap() -> Check {
    let g = load_golden()?;
    if g.swaps.len() < 3 {
        return Err(format!("only {} swap sets", g.swaps.len()));
    }
    let mut results = BTreeMap::new();
    for s in &g.swaps {
        results.insert(s.set_id.clone(), g.run(4, Some(s))?.detections);
    }
    let report = prompt_swap_eval(&results, &g.dataset.ground_truths, &g.resources.vocabulary, &g.swaps)
        .map_err(|e| e.to_string())?;
    let first = report.per_set[0].f1;
    if report.per_set.iter().any(|s| s.f1 != first) {
        return Err(format!("F1@0.5 differs across sets: {:?}", report.per_set));
    }
    Ok(format!("{} sets at F1@0.5 {first:.4}", report.per_set.len()))
}

pub fn check_prompt_swap() -> Check {
    let a = check_golden_swap()?;
    let b = check_swap_property(40)?;
    Ok(format!("golden: {a}; {b} match the plain run"))
}
