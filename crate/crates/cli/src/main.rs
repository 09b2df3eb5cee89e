use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use gw_core::align::{
    cache_read, EmbeddingCache, EmbeddingProvider, FileCacheProvider, HttpEmbeddingProvider,
};
use gw_core::eval::{build_swap_vocab, prompt_swap_eval, GroundTruth, SwapSource};
use gw_core::geometry::{ImageMeta, SceneKind};
use gw_core::llm::{ChatClient, HttpChatClient, MockChatClient};
use gw_core::pipeline::{
    emit_metrics, emit_swap_report, load_dataset, load_image_meta, load_proposals, read_detections,
    render_overlay, run::build_cache_entries, run_detect, write_run, PipelineConfig, Resources, RunInputs,
};

#[derive(Parser)]
#[command(name = "gw", version, about = "Training-free open-vocabulary object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Pipeline configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_scene)]
    scene: Option<SceneKind>,
    /// Line-delimited proposals
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// COCO-style annotations
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Answer with a deterministic offline model instead of the chat endpoint
    #[arg(long)]
    mock_llm: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Name every proposal and write detections plus a run manifest
    Detect(Common),
    /// Score a detections file against annotations
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/detections.jsonl
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Re-run detection under each alias vocabulary and compare F1
    SwapEval {
        #[command(flatten)]
        common: Common,
        #[arg(long = "swap-set")]
        swap_sets: Vec<PathBuf>,
    },
    /// Build or inspect GWEMB1 embedding caches
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Draw detections (and optionally ground truth) as SVG per image
    Overlay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        with_gt: bool,
    },
    /// Check a configuration and everything it references
    ValidateConfig(Common),
}

#[derive(Subcommand)]
enum CacheAction {
    /// Embed the codebook and every crop through the embedding service
    Build {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to <out>/embeddings.gwemb
        #[arg(long)]
        cache_out: Option<PathBuf>,
    },
    Inspect {
        path: PathBuf,
        /// Ids to list
        #[arg(long, default_value_t = 10)]
        head: usize,
    },
}

fn parse_scene(s: &str) -> Result<SceneKind, String> {
    s.parse().map_err(|e: gw_core::Error| e.to_string())
}

/// Exit status classes.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<ExitCode, Failure>;

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

const PARTIAL: u8 = 3;

fn load_config(c: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config)
        .with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(s) = c.scene {
        cfg.scene_kind = Some(s);
    }
    if let Some(p) = &c.proposals {
        cfg.dataset.proposals = Some(p.clone());
    }
    if let Some(p) = &c.annotations {
        cfg.dataset.annotations = Some(p.clone());
    }
    if let Some(p) = &c.images {
        cfg.dataset.images = Some(p.clone());
    }
    if let Some(p) = &c.out {
        cfg.output_dir = p.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Data {
    metas: Vec<ImageMeta>,
    gts: Vec<GroundTruth>,
    categories: Vec<String>,
}

fn load_data(cfg: &PipelineConfig) -> anyhow::Result<Data> {
    let scene = cfg.scene()?;
    if let Some(ann) = &cfg.dataset.annotations {
        let d = load_dataset(ann, cfg.dataset.images.as_deref(), scene)?;
        return Ok(Data {
            metas: d.metas,
            gts: d.ground_truths,
            categories: d.categories,
        });
    }
    if let Some(m) = &cfg.dataset.image_meta {
        return Ok(Data {
            metas: load_image_meta(m, scene)?,
            gts: Vec::new(),
            categories: Vec::new(),
        });
    }
    bail!("no images: set dataset.annotations, dataset.image_meta or --annotations")
}

fn provider(cfg: &PipelineConfig) -> anyhow::Result<Box<dyn EmbeddingProvider>> {
    if let Some(p) = &cfg.embedding.cache {
        return Ok(Box::new(FileCacheProvider::open(p)?));
    }
    let url = cfg
        .embedding
        .service
        .as_deref()
        .ok_or_else(|| anyhow!("no embedding source configured"))?;
    Ok(Box::new(HttpEmbeddingProvider::connect(
        url,
        cfg.embedding.max_in_flight,
        Duration::from_secs_f64(cfg.embedding.timeout_secs),
    )?))
}

fn chat_client(cfg: &PipelineConfig, mock: bool) -> anyhow::Result<Box<dyn ChatClient>> {
    if mock {
        return Ok(Box::new(MockChatClient::top_snippet()));
    }
    Ok(Box::new(HttpChatClient::new(&cfg.chat)?))
}

fn proposals_of(cfg: &PipelineConfig) -> anyhow::Result<BTreeMap<String, Vec<gw_core::geometry::BBox>>> {
    let p = cfg
        .dataset
        .proposals
        .as_ref()
        .ok_or_else(|| anyhow!("no proposals: set dataset.proposals or --proposals"))?;
    Ok(load_proposals(p)?)
}

fn detect(c: &Common) -> Outcome {
    let cfg = load_config(c).config()?;
    let data = load_data(&cfg).config()?;
    let res = Resources::load(&cfg, &data.categories).config()?;
    let proposals = proposals_of(&cfg).config()?;
    let provider = provider(&cfg).runtime()?;
    let chat = chat_client(&cfg, c.mock_llm).runtime()?;
    let inputs = RunInputs {
        metas: &data.metas,
        proposals: &proposals,
        images_dir: cfg.dataset.images.as_deref(),
    };
    let run = run_detect(&cfg, &res, &inputs, provider.as_ref(), chat.as_ref(), None).runtime()?;
    for f in write_run(&cfg.output_dir, &run).runtime()? {
        log::info!("wrote {}", f.display());
    }
    if cfg.dataset.annotations.is_some() {
        let (report, _) = emit_metrics(&run.detections, &data.gts, &cfg.output_dir).runtime()?;
        print!("{}", report.to_table());
    }
    let counts = &run.manifest.counts;
    println!(
        "{} objects, {} answered, {} failed, {} unknown",
        counts.prompts, counts.answers, counts.failures, counts.unknowns
    );
    Ok(if counts.failures > 0 { ExitCode::from(PARTIAL) } else { ExitCode::SUCCESS })
}

fn evaluate(c: &Common, detections: Option<&Path>) -> Outcome {
    let cfg = load_config(c).config()?;
    let data = load_data(&cfg).config()?;
    let path = detections
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("detections.jsonl"));
    let dets = read_detections(&path).config()?;
    let (report, _) = emit_metrics(&dets, &data.gts, &cfg.output_dir).runtime()?;
    print!("{}", report.to_table());
    Ok(ExitCode::SUCCESS)
}

fn swap_eval(c: &Common, swap_paths: &[PathBuf]) -> Outcome {
    let cfg = load_config(c).config()?;
    let data = load_data(&cfg).config()?;
    let res = Resources::load(&cfg, &data.categories).config()?;
    let proposals = proposals_of(&cfg).config()?;
    let paths = if swap_paths.is_empty() { cfg.swap_sets.clone() } else { swap_paths.to_vec() };
    if paths.is_empty() {
        return Err(Failure::Config(anyhow!("no swap sets: pass --swap-set or set swap_sets")));
    }
    let swaps = paths
        .iter()
        .map(|p| build_swap_vocab(&res.vocabulary, SwapSource::File(p)))
        .collect::<Result<Vec<_>, _>>()
        .config()?;
    let provider = provider(&cfg).runtime()?;
    let chat = chat_client(&cfg, c.mock_llm).runtime()?;
    let inputs = RunInputs {
        metas: &data.metas,
        proposals: &proposals,
        images_dir: cfg.dataset.images.as_deref(),
    };
    let mut results = BTreeMap::new();
    let mut failures = 0;
    for s in &swaps {
        let run = run_detect(&cfg, &res, &inputs, provider.as_ref(), chat.as_ref(), Some(s)).runtime()?;
        write_run(&cfg.output_dir.join("swap").join(&s.set_id), &run).runtime()?;
        failures += run.manifest.counts.failures;
        results.insert(s.set_id.clone(), run.detections);
    }
    let report = prompt_swap_eval(&results, &data.gts, &res.vocabulary, &swaps).runtime()?;
    emit_swap_report(&report, &cfg.output_dir).runtime()?;
    print!("{}", gw_core::pipeline::swap_table(&report));
    Ok(if failures > 0 { ExitCode::from(PARTIAL) } else { ExitCode::SUCCESS })
}

fn cache_build(c: &Common, out: Option<&Path>) -> Outcome {
    let cfg = load_config(c).config()?;
    if cfg.embedding.service.is_none() {
        return Err(Failure::Config(anyhow!("cache build needs embedding.service or GW_EMBED_ENDPOINT")));
    }
    let data = load_data(&cfg).config()?;
    let res = Resources::load(&cfg, &data.categories).config()?;
    let proposals = proposals_of(&cfg).config()?;
    let provider = provider(&cfg).runtime()?;
    let inputs = RunInputs {
        metas: &data.metas,
        proposals: &proposals,
        images_dir: cfg.dataset.images.as_deref(),
    };
    let entries = build_cache_entries(&cfg, &res, &inputs, provider.as_ref()).runtime()?;
    let cache = EmbeddingCache::new(provider.dim(), entries).runtime()?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("embeddings.gwemb"));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).runtime()?;
    }
    cache.write(&path).runtime()?;
    println!("wrote {} entries (dim {}) to {}", cache.len(), cache.dim(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn cache_inspect(path: &Path, head: usize) -> Outcome {
    let cache = cache_read(path).config()?;
    println!("{}: dim {}, {} entries", path.display(), cache.dim(), cache.len());
    for (id, _) in cache.entries().iter().take(head) {
        println!("  {id}");
    }
    Ok(ExitCode::SUCCESS)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn overlay(c: &Common, detections: Option<&Path>, with_gt: bool) -> Outcome {
    let cfg = load_config(c).config()?;
    let data = load_data(&cfg).config()?;
    let path = detections
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("detections.jsonl"));
    let dets = read_detections(&path).config()?;
    let dir = cfg.output_dir.join("overlays");
    std::fs::create_dir_all(&dir).runtime()?;
    for meta in &data.metas {
        let mine: Vec<_> = dets.iter().filter(|d| d.image_id == meta.image_id).cloned().collect();
        let image = match (&cfg.dataset.images, &meta.file_name) {
            (Some(d), Some(f)) => Some(d.join(f)),
            _ => None,
        };
        let svg = render_overlay(meta, image.as_deref(), &mine, with_gt.then_some(data.gts.as_slice())).runtime()?;
        let out = dir.join(format!("{}.svg", file_stem_for(&meta.image_id)));
        std::fs::write(&out, svg).runtime()?;
    }
    println!("wrote {} overlays to {}", data.metas.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}

fn validate_config(c: &Common) -> Outcome {
    let cfg = load_config(c).config()?;
    let data = load_data(&cfg).ok();
    let cats = data.map(|d| d.categories).unwrap_or_default();
    let res = Resources::load(&cfg, &cats).config()?;
    println!(
        "ok: scene {}, {} snippets, template {}, {} categories, config {}",
        cfg.scene().config()?,
        res.codebook.len(),
        res.template.template_id,
        res.vocabulary.len(),
        cfg.hash()
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors count as configuration errors; clap's own code 2 would
    // read as a runtime failure.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Detect(c) => detect(c),
        Command::Evaluate { common, detections } => evaluate(common, detections.as_deref()),
        Command::SwapEval { common, swap_sets } => swap_eval(common, swap_sets),
        Command::Cache { action } => match action {
            CacheAction::Build { common, cache_out } => cache_build(common, cache_out.as_deref()),
            CacheAction::Inspect { path, head } => cache_inspect(path, *head),
        },
        Command::Overlay {
            common,
            detections,
            with_gt,
        } => overlay(common, detections.as_deref(), *with_gt),
        Command::ValidateConfig(c) => validate_config(c),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
