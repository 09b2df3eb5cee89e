use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::metrics::{match_detections, precision_recall_f1, Detection, GroundTruth};
use crate::eval::vocab::{SwapSet, Vocabulary, UNKNOWN};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapSetScore {
    pub set_id: String,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapReport {
    pub per_set: Vec<SwapSetScore>,
    pub average: f64,
}

/// Unweighted mean; zero for no values.
pub fn swap_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Rewrites alias categories to their canonical names. Unmappable categories
/// become "unknown".
pub fn remap_to_canonical(dets: &[Detection], swap: &SwapSet) -> Vec<Detection> {
    dets.iter()
        .map(|d| Detection {
            category: swap.to_canonical(&d.category).unwrap_or(UNKNOWN).to_string(),
            ..d.clone()
        })
        .collect()
}

/// F1 at IoU 0.5 per swap set and their average. Detections must already be
/// mapped back to canonical names.
pub fn prompt_swap_eval(
    results: &BTreeMap<String, Vec<Detection>>,
    gts: &[GroundTruth],
    v: &Vocabulary,
    swaps: &[SwapSet],
) -> Result<SwapReport> {
    for id in results.keys() {
        if !swaps.iter().any(|s| &s.set_id == id) {
            return Err(Error::SwapSet(format!("unknown set_id {id:?}")));
        }
    }
    let mut per_set = Vec::with_capacity(swaps.len());
    for s in swaps {
        let dets = results.get(&s.set_id).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(d) = dets.iter().find(|d| d.category != UNKNOWN && !v.contains(&d.category)) {
            return Err(Error::SwapSet(format!(
                "{}: detection category {:?} is not canonical",
                s.set_id, d.category
            )));
        }
        let m = match_detections(dets, gts, 0.5, true);
        per_set.push(SwapSetScore {
            set_id: s.set_id.clone(),
            f1: precision_recall_f1(m.tp, m.fp, m.fn_).f1,
        });
    }
    let average = swap_average(&per_set.iter().map(|s| s.f1).collect::<Vec<_>>());
    Ok(SwapReport { per_set, average })
}
