//! Training-free open-vocabulary object detection.
//!
//! Class-agnostic proposals from several detectors are fused with NMS, each
//! surviving box is viewed at several scales, every view is matched against a
//! snippet codebook by cosine similarity, and the Top-K snippets are rendered
//! into a structured prompt from which a chat model names the object. The
//! [`eval`] module re-projects free-form answers onto a fixed vocabulary and
//! scores them.

pub mod align;
pub mod codebook;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod sync;

pub use error::{Error, Result};
