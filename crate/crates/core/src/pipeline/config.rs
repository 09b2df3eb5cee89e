use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::TopKTable;
use crate::error::{Error, Result};
use crate::geometry::{SceneKind, ScaleTable, SizeThresholdTable};
use crate::llm::ChatConfig;

pub const EMBED_ENDPOINT_ENV: &str = "GW_EMBED_ENDPOINT";

/// Where embeddings come from: a `GWEMB1` file or an embedding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub cache: Option<PathBuf>,
    pub service: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            cache: None,
            service: None,
            max_in_flight: 16,
            timeout_secs: 30.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// COCO-style annotation document.
    pub annotations: Option<PathBuf>,
    /// Line-delimited image metadata, for runs without annotations.
    pub image_meta: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Required, either here or from `--scene`.
    pub scene_kind: Option<SceneKind>,
    pub nms_threshold: f64,
    /// Per-source min-max score rescaling before fusion.
    pub calibrate_scores: bool,
    pub size_thresholds: SizeThresholdTable,
    pub scales: ScaleTable,
    pub top_k: TopKTable,
    /// Snippet codebook; the bundled starter codebook when unset.
    pub codebook: Option<PathBuf>,
    /// Prompt template; the bundled one for the scene when unset.
    pub template: Option<PathBuf>,
    pub scenario: Option<String>,
    pub show_similarities: bool,
    pub embedding: EmbeddingConfig,
    pub chat: ChatConfig,
    pub chat_max_in_flight: usize,
    pub vocabulary: Option<PathBuf>,
    /// List the vocabulary in the prompt.
    pub closed_set: bool,
    /// Cosine floor for the embedding fallback of answer mapping; off when unset.
    pub fallback_floor: Option<f64>,
    pub swap_sets: Vec<PathBuf>,
    pub dataset: DatasetConfig,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scene_kind: None,
            nms_threshold: 0.5,
            calibrate_scores: false,
            size_thresholds: SizeThresholdTable::default(),
            scales: ScaleTable::default(),
            top_k: TopKTable::default(),
            codebook: None,
            template: None,
            scenario: None,
            show_similarities: true,
            embedding: EmbeddingConfig::default(),
            chat: ChatConfig::default(),
            chat_max_in_flight: 8,
            vocabulary: None,
            closed_set: false,
            fallback_floor: None,
            swap_sets: Vec::new(),
            dataset: DatasetConfig::default(),
            workers: 4,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn must_exist(what: &str, p: &Option<PathBuf>) -> Result<()> {
    match p {
        Some(path) if !path.exists() => Err(Error::Config(format!(
            "{what} {} does not exist",
            path.display()
        ))),
        _ => Ok(()),
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, location: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(location, e.to_string()))
    }

    /// Reads a config file. Relative paths are taken relative to the file's
    /// directory, and the chat and embedding environment variables applied.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.codebook);
        resolve(base, &mut self.template);
        resolve(base, &mut self.embedding.cache);
        resolve(base, &mut self.vocabulary);
        resolve(base, &mut self.dataset.annotations);
        resolve(base, &mut self.dataset.image_meta);
        resolve(base, &mut self.dataset.images);
        resolve(base, &mut self.dataset.proposals);
        for p in &mut self.swap_sets {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    /// `GW_EMBED_ENDPOINT` only fills in a service when no embedding source
    /// is configured.
    pub fn apply_env(&mut self) {
        self.chat = std::mem::take(&mut self.chat).with_env();
        if self.embedding.cache.is_none() && self.embedding.service.is_none() {
            if let Ok(ep) = std::env::var(EMBED_ENDPOINT_ENV) {
                if !ep.trim().is_empty() {
                    self.embedding.service = Some(ep);
                }
            }
        }
    }

    pub fn scene(&self) -> Result<SceneKind> {
        self.scene_kind
            .ok_or_else(|| Error::Config("scene_kind is not set (config or --scene)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene()?;
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(Error::Config(format!(
                "nms_threshold {} outside [0, 1]",
                self.nms_threshold
            )));
        }
        self.size_thresholds.natural.validate()?;
        self.size_thresholds.remote_sensing.validate()?;
        self.scales.validate()?;
        self.top_k.natural.validate()?;
        self.top_k.remote_sensing.validate()?;
        self.chat.validate()?;
        if self.workers == 0 || self.chat_max_in_flight == 0 || self.embedding.max_in_flight == 0 {
            return Err(Error::Config(
                "workers and in-flight limits must be positive".into(),
            ));
        }
        if !(self.embedding.timeout_secs.is_finite() && self.embedding.timeout_secs > 0.0) {
            return Err(Error::Config("embedding timeout must be positive".into()));
        }
        if let Some(f) = self.fallback_floor {
            if !(-1.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("fallback_floor {f} outside [-1, 1]")));
            }
        }
        match (&self.embedding.cache, &self.embedding.service) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set either embedding.cache or embedding.service, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(format!(
                    "no embedding source: set embedding.cache, embedding.service or {EMBED_ENDPOINT_ENV}"
                )))
            }
            _ => {}
        }
        must_exist("codebook", &self.codebook)?;
        must_exist("template", &self.template)?;
        must_exist("embedding cache", &self.embedding.cache)?;
        must_exist("vocabulary", &self.vocabulary)?;
        must_exist("annotations", &self.dataset.annotations)?;
        must_exist("image metadata", &self.dataset.image_meta)?;
        must_exist("image directory", &self.dataset.images)?;
        must_exist("proposals", &self.dataset.proposals)?;
        for p in &self.swap_sets {
            must_exist("swap set", &Some(p.clone()))?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the resolved configuration. The API key is never part
    /// of it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
