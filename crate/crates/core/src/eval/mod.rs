//! Re-projection of free-form answers onto a fixed vocabulary, detection
//! matching, P/R/F1 reports, P-R curves and prompt-swap scoring.

pub mod curve;
pub mod metrics;
pub mod swap;
pub mod vocab;

pub use curve::{curve_csv, curve_svg, pr_curve, PrPoint};
pub use metrics::{
    compute_report, default_miou_sweep, default_report_thresholds, f1_score, match_detections, percent,
    precision_recall_f1, round_half_up, Detection, GroundTruth, MatchResult, MetricsReport, Prf,
    ThresholdMetrics,
};
pub use swap::{prompt_swap_eval, remap_to_canonical, swap_average, SwapReport, SwapSetScore};
pub use vocab::{
    build_swap_vocab, map_answer, normalize_label, EmbeddingFallback, SwapSet, SwapSetDocument, SwapSource,
    Vocabulary, VocabularyDocument, DEFAULT_FALLBACK_FLOOR, UNKNOWN,
};
