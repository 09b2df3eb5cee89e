//! Dataset ingestion, configuration, the end-to-end detection run and its
//! report files.

pub mod config;
pub mod dataset;
pub mod overlay;
pub mod report;
pub mod run;

pub use config::{DatasetConfig, EmbeddingConfig, PipelineConfig, EMBED_ENDPOINT_ENV};
pub use dataset::{
    detections_jsonl, load_dataset, load_image_meta, load_proposals, read_detections, write_detections, Dataset,
};
pub use overlay::render_overlay;
pub use report::{emit_metrics, emit_swap_report, swap_table, write_run};
pub use run::{image_anchors, run_detect, swap_codebook, Resources, RunInputs, RunManifest, RunOutput, StageCounts};
