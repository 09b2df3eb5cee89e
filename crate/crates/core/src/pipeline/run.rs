use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;

use crate::align::provider::ImageSource;
use crate::align::{
    embed_codebook, embed_crops, search_object, CodebookIndex, EmbeddingProvider, EmbeddingVector, ScaleMatches,
};
use crate::codebook::{AttributeClass, Codebook};
use crate::error::{Error, Result};
use crate::eval::{map_answer, normalize_label, Detection, EmbeddingFallback, SwapSet, Vocabulary, UNKNOWN};
use crate::geometry::{
    calibrate_scores, classify_size, clip_to_image, crop_layout, merge_proposals, plan_scales, BBox, ImageMeta, ProposalSet,
};
use crate::llm::{guess_category, ChatClient};
use crate::pipeline::config::PipelineConfig;
use crate::prompt::{compute_spatial_info, default_scenario, load_template, render_prompt, PromptContext, PromptTemplate};
use crate::sync::Semaphore;

/// Codebook, template and vocabulary for one run.
#[derive(Debug, Clone)]
pub struct Resources {
    pub codebook: Codebook,
    pub template: PromptTemplate,
    pub vocabulary: Vocabulary,
}

impl Resources {
    /// Loads what the config names. Without a vocabulary file the dataset's
    /// category names are used.
    pub fn load(cfg: &PipelineConfig, dataset_categories: &[String]) -> Result<Self> {
        let scene = cfg.scene()?;
        let codebook = match &cfg.codebook {
            Some(p) => crate::codebook::load_codebook(p, scene)?,
            None => Codebook::starter(scene),
        };
        let template = match &cfg.template {
            Some(p) => load_template(p, scene)?,
            None => PromptTemplate::shipped(scene),
        };
        let vocabulary = match &cfg.vocabulary {
            Some(p) => Vocabulary::read(p)?,
            None if !dataset_categories.is_empty() => {
                Vocabulary::new(dataset_categories.to_vec(), &BTreeMap::new())?
            }
            None => {
                return Err(Error::Config(
                    "no vocabulary: set `vocabulary` or provide annotations with categories".into(),
                ))
            }
        };
        Ok(Resources {
            codebook,
            template,
            vocabulary,
        })
    }
}

/// Category-name snippets renamed to their aliases. Snippet ids are kept, so
/// cached embeddings still apply.
pub fn swap_codebook(cb: &Codebook, swap: &SwapSet) -> Result<Codebook> {
    let mut renames = HashMap::new();
    for s in cb.snippets() {
        if s.attribute_class != AttributeClass::CommonCategory {
            continue;
        }
        let key = normalize_label(&s.text);
        if let Some((_, alias)) = swap.pairs.iter().find(|(c, _)| normalize_label(c) == key) {
            renames.insert(s.text.clone(), alias.clone());
        }
    }
    cb.with_texts(&renames)
}

pub struct RunInputs<'a> {
    pub metas: &'a [ImageMeta],
    pub proposals: &'a BTreeMap<String, Vec<BBox>>,
    pub images_dir: Option<&'a Path>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub images: usize,
    pub proposals_in: usize,
    /// Proposals lying entirely outside their image.
    pub proposals_dropped: usize,
    pub proposals_out: usize,
    pub crops: usize,
    pub prompts: usize,
    pub answers: usize,
    pub failures: usize,
    pub unknowns: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub scene_kind: String,
    pub seed: u64,
    pub embedding_provider: String,
    pub chat_client: String,
    pub template_id: String,
    pub codebook_snippets: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub swap_set: Option<String>,
    /// Unix seconds; `SOURCE_DATE_EPOCH` when set.
    pub started_at: u64,
    pub finished_at: u64,
    pub counts: StageCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub detections: Vec<Detection>,
    pub manifest: RunManifest,
}

fn timestamp() -> u64 {
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(n) = v.trim().parse() {
            return n;
        }
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Anchors of one image: proposals clipped to the image, grouped by source,
/// optionally calibrated, then fused.
pub fn image_anchors(meta: &ImageMeta, proposals: &[BBox], cfg: &PipelineConfig) -> (Vec<BBox>, usize) {
    let mut by_source: BTreeMap<&str, Vec<BBox>> = BTreeMap::new();
    let mut dropped = 0;
    for p in proposals {
        match clip_to_image(p, meta) {
            Ok(b) => by_source.entry(p.source.as_str()).or_default().push(b),
            Err(e) => {
                log::warn!("image {}: dropping proposal: {e}", meta.image_id);
                dropped += 1;
            }
        }
    }
    let sets: Vec<ProposalSet> = by_source
        .into_iter()
        .map(|(source, boxes)| ProposalSet {
            source: source.to_string(),
            boxes,
        })
        .collect();
    let sets = if cfg.calibrate_scores { calibrate_scores(&sets) } else { sets };
    (merge_proposals(&sets, cfg.nms_threshold), dropped)
}

struct Job<'a> {
    meta: &'a ImageMeta,
    image: usize,
    anchor: BBox,
}

struct Outcome {
    detection: Detection,
    crops: usize,
    answered: bool,
    failed: bool,
}

struct Engine<'a> {
    cfg: &'a PipelineConfig,
    provider: &'a dyn EmbeddingProvider,
    chat: &'a dyn ChatClient,
    chat_slots: Semaphore,
    codebook: Codebook,
    index: CodebookIndex,
    template: &'a PromptTemplate,
    vocabulary: Vocabulary,
    fallback: Option<EmbeddingFallback<'a>>,
    swap: Option<&'a SwapSet>,
}

fn snippets_used(m: &ScaleMatches) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in &m.per_role {
        for s in &r.matches {
            if !out.contains(&s.snippet_id) {
                out.push(s.snippet_id.clone());
            }
        }
    }
    out
}

impl Engine<'_> {
    fn process(&self, job: &Job<'_>, image: &ImageSource) -> Outcome {
        let mut crops = 0;
        let mut answered = false;
        let mut partial = Detection {
            image_id: job.anchor.image_id.clone(),
            bbox: job.anchor.coords(),
            score: job.anchor.score,
            category: UNKNOWN.into(),
            category_raw: String::new(),
            reasoning: String::new(),
            snippets_used: Vec::new(),
            error: None,
        };
        let result = (|| -> Result<()> {
            let scene = job.meta.scene_kind;
            let size = classify_size(&job.anchor, job.meta, &self.cfg.size_thresholds);
            let plan = plan_scales(&size, scene, &self.cfg.scales)?;
            let k = self.cfg.top_k.for_scene(scene);
            let matches = search_object(&job.anchor, &plan, job.meta, &self.index, self.provider, image, k)?;
            crops = {
                let mut ids: Vec<&str> = matches.per_role.iter().map(|r| r.crop_id.as_str()).collect();
                ids.sort_unstable();
                ids.dedup();
                ids.len()
            };
            partial.snippets_used = snippets_used(&matches);
            let spatial = compute_spatial_info(&job.anchor, job.meta, &size);
            let scenario = self.cfg.scenario.as_deref().unwrap_or(default_scenario(scene));
            let mut ctx = PromptContext::from_matches(scene, scenario, spatial, &matches, &self.codebook)?;
            ctx.show_similarities = self.cfg.show_similarities;
            if self.cfg.closed_set {
                ctx = ctx.with_vocabulary_hint(self.vocabulary.categories().to_vec());
            }
            let prompt = render_prompt(self.template, &ctx)?;
            let guess = {
                let _slot = self.chat_slots.acquire();
                guess_category(self.chat, &prompt, &self.cfg.chat)?
            };
            answered = true;
            partial.category_raw = guess.category_raw.clone();
            partial.reasoning = guess.reasoning;
            let mapped = map_answer(&guess.category_raw, &self.vocabulary, self.fallback.as_ref())?;
            partial.category = match self.swap {
                Some(s) => s.to_canonical(&mapped).unwrap_or(UNKNOWN).to_string(),
                None => mapped,
            };
            Ok(())
        })();
        let failed = match result {
            Ok(()) => false,
            Err(e) => {
                log::warn!(
                    "image {} box {:?}: {e}",
                    job.anchor.image_id,
                    job.anchor.coords()
                );
                partial.category = UNKNOWN.into();
                partial.error = Some(e.to_string());
                true
            }
        };
        Outcome {
            detection: partial,
            crops,
            answered: answered && !failed,
            failed,
        }
    }
}

fn box_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    a.image_id
        .cmp(&b.image_id)
        .then_with(|| {
            a.bbox
                .iter()
                .zip(&b.bbox)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .then_with(|| b.score.total_cmp(&a.score))
}

/// Runs every object of every image through search, prompting and answer
/// mapping. Per-object failures become "unknown" detections carrying the
/// error; only setup failures (codebook embedding, fallback setup, unknown
/// image ids, worker pool) abort the run.
pub fn run_detect(
    cfg: &PipelineConfig,
    res: &Resources,
    inputs: &RunInputs<'_>,
    provider: &dyn EmbeddingProvider,
    chat: &dyn ChatClient,
    swap: Option<&SwapSet>,
) -> Result<RunOutput> {
    let started_at = timestamp();
    let scene = cfg.scene()?;
    for id in inputs.proposals.keys() {
        if !inputs.metas.iter().any(|m| &m.image_id == id) {
            return Err(Error::Dataset(format!("proposals reference unknown image {id}")));
        }
    }

    let (codebook, vocabulary) = match swap {
        Some(s) => (swap_codebook(&res.codebook, s)?, s.alias_vocabulary()?),
        None => (res.codebook.clone(), res.vocabulary.clone()),
    };
    let index = embed_codebook(provider, &codebook)?;
    let fallback = match cfg.fallback_floor {
        Some(floor) => Some(EmbeddingFallback::new(provider, &vocabulary, floor)?),
        None => None,
    };

    let mut counts = StageCounts {
        images: inputs.metas.len(),
        ..Default::default()
    };
    let mut images = Vec::with_capacity(inputs.metas.len());
    let mut jobs = Vec::new();
    for (i, meta) in inputs.metas.iter().enumerate() {
        images.push(match (inputs.images_dir, &meta.file_name) {
            (Some(dir), Some(name)) => ImageSource::from_path(dir.join(name)),
            _ => ImageSource::none(),
        });
        let props = inputs.proposals.get(&meta.image_id).map(Vec::as_slice).unwrap_or(&[]);
        counts.proposals_in += props.len();
        let (anchors, dropped) = image_anchors(meta, props, cfg);
        counts.proposals_dropped += dropped;
        counts.proposals_out += anchors.len();
        jobs.extend(anchors.into_iter().map(|anchor| Job {
            meta,
            image: i,
            anchor,
        }));
    }
    log::info!(
        "{} images, {} proposals fused into {} objects",
        counts.images,
        counts.proposals_in,
        counts.proposals_out
    );

    let engine = Engine {
        cfg,
        provider,
        chat,
        chat_slots: Semaphore::new(cfg.chat_max_in_flight),
        codebook,
        index,
        template: &res.template,
        vocabulary,
        fallback,
        swap,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    let outcomes: Vec<Outcome> = pool.install(|| {
        jobs.par_iter()
            .map(|job| engine.process(job, &images[job.image]))
            .collect()
    });

    let mut detections = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        counts.prompts += 1;
        counts.crops += o.crops;
        counts.answers += usize::from(o.answered);
        counts.failures += usize::from(o.failed);
        counts.unknowns += usize::from(o.detection.category == UNKNOWN);
        detections.push(o.detection);
    }
    detections.sort_by(box_order);

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        scene_kind: scene.to_string(),
        seed: cfg.seed,
        embedding_provider: provider.identity(),
        chat_client: chat.identity(),
        template_id: res.template.template_id.clone(),
        codebook_snippets: res.codebook.len(),
        swap_set: swap.map(|s| s.set_id.clone()),
        started_at,
        finished_at: timestamp(),
        counts,
    };
    Ok(RunOutput {
        detections,
        manifest,
    })
}

/// Every vector a cached run needs: one per snippet (keyed by snippet id) and
/// one per distinct crop (keyed by crop id), rounded to f32.
pub fn build_cache_entries(
    cfg: &PipelineConfig,
    res: &Resources,
    inputs: &RunInputs<'_>,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<(String, EmbeddingVector)>> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    let index = embed_codebook(provider, &res.codebook)?;
    for (id, v) in index.entries() {
        if seen.insert(id.clone()) {
            entries.push((id.clone(), v.rounded_to_f32()?));
        }
    }
    for meta in inputs.metas {
        let image = match (inputs.images_dir, &meta.file_name) {
            (Some(dir), Some(name)) => ImageSource::from_path(dir.join(name)),
            _ => ImageSource::none(),
        };
        let props = inputs.proposals.get(&meta.image_id).map(Vec::as_slice).unwrap_or(&[]);
        let (anchors, _) = image_anchors(meta, props, cfg);
        for anchor in &anchors {
            let size = classify_size(anchor, meta, &cfg.size_thresholds);
            let plan = plan_scales(&size, meta.scene_kind, &cfg.scales)?;
            let crops: Vec<_> = crop_layout(anchor, &plan, meta)?
                .crops
                .into_iter()
                .filter(|c| !seen.contains(&c.crop_id))
                .collect();
            let vecs = embed_crops(provider, &image, &crops)?;
            for (c, v) in crops.into_iter().zip(vecs) {
                seen.insert(c.crop_id.clone());
                entries.push((c.crop_id, v.rounded_to_f32()?));
            }
        }
        log::info!("image {}: {} cache entries so far", meta.image_id, entries.len());
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{EmbeddingCache, EmbeddingVector, FileCacheProvider};
    use crate::geometry::SceneKind;
    use crate::llm::MockChatClient;

    #[test]
    fn anchors_drop_outside_and_fuse() {
        let meta = ImageMeta::new("i", 100, 100, SceneKind::Natural);
        let cfg = PipelineConfig::default();
        let b = |c: [f64; 4], s: f64, src: &str| BBox::new("i", c, s, src).unwrap();
        let (anchors, dropped) = image_anchors(
            &meta,
            &[
                b([0.0, 0.0, 10.0, 10.0], 0.9, "a"),
                b([0.0, 0.0, 10.0, 11.0], 0.8, "b"),
                b([200.0, 200.0, 210.0, 210.0], 0.7, "a"),
                b([90.0, 90.0, 120.0, 120.0], 0.6, "b"),
            ],
            &cfg,
        );
        assert_eq!(dropped, 1);
        assert_eq!(anchors.len(), 2);
        assert_eq!(anchors[1].coords(), [90.0, 90.0, 100.0, 100.0]);
    }

    #[test]
    fn empty_proposals_give_empty_run() {
        let cfg = PipelineConfig {
            scene_kind: Some(SceneKind::Natural),
            ..Default::default()
        };
        let cb = Codebook::starter(SceneKind::Natural);
        let entries = cb
            .snippets()
            .iter()
            .map(|s| (s.snippet_id.clone(), EmbeddingVector::new(vec![1.0, 0.5]).unwrap()))
            .collect();
        let provider = FileCacheProvider::new(EmbeddingCache::new(2, entries).unwrap(), "mem");
        let res = Resources {
            codebook: cb,
            template: PromptTemplate::shipped(SceneKind::Natural),
            vocabulary: Vocabulary::new(vec!["dog".into()], &BTreeMap::new()).unwrap(),
        };
        let metas = [ImageMeta::new("i", 10, 10, SceneKind::Natural)];
        let out = run_detect(
            &cfg,
            &res,
            &RunInputs {
                metas: &metas,
                proposals: &BTreeMap::new(),
                images_dir: None,
            },
            &provider,
            &MockChatClient::top_snippet(),
            None,
        )
        .unwrap();
        assert!(out.detections.is_empty());
        assert_eq!(
            out.manifest.counts,
            StageCounts {
                images: 1,
                ..Default::default()
            }
        );
    }
}
