use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::eval::vocab::UNKNOWN;
use crate::geometry::iou_coords;

/// One named box produced by the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: [f64; 4],
    pub score: f64,
    pub category: String,
    pub category_raw: String,
    #[serde(default)]
    pub reasoning: String,
    #[serde(default)]
    pub snippets_used: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    pub bbox: [f64; 4],
    pub category: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Match {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matches: Vec<Match>,
}

/// Processing order for greedy matching: score descending, then image id and
/// coordinates so ties are deterministic.
pub fn detection_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&dets[a], &dets[b]);
        db.score
            .total_cmp(&da.score)
            .then_with(|| da.image_id.cmp(&db.image_id))
            .then_with(|| {
                da.bbox
                    .iter()
                    .zip(&db.bbox)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching. Detections are taken by descending score; each
/// claims the unmatched ground truth in its image (of its category when
/// `class_aware`) with the highest IoU at or above `iou_thr`. Under
/// `class_aware`, "unknown" detections never match.
pub fn match_detections(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thr: f64,
    class_aware: bool,
) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let mut matches = Vec::new();
    for di in detection_order(dets) {
        let d = &dets[di];
        if class_aware && d.category == UNKNOWN {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] || g.image_id != d.image_id || (class_aware && g.category != d.category) {
                continue;
            }
            let v = iou_coords(&d.bbox, &g.bbox);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, v)) = best {
            taken[gi] = true;
            matches.push(Match {
                detection: di,
                ground_truth: gi,
                iou: v,
            });
        }
    }
    let tp = matches.len();
    MatchResult {
        tp,
        fp: dets.len() - tp,
        fn_: gts.len() - tp,
        matches,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Zero denominators give zero.
pub fn precision_recall_f1(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |n: usize, d: usize| if d > 0 { n as f64 / d as f64 } else { 0.0 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Rounds half away from zero to `decimals` places. A relative nudge of a few
/// ulps keeps values such as 76.385 (stored as 76.38499...) rounding up.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let m = 10f64.powi(decimals as i32);
    let scaled = x * m;
    let nudged = scaled.abs() * (1.0 + 4.0 * f64::EPSILON);
    (nudged + 0.5).floor().copysign(scaled) / m
}

/// A fraction in [0, 1] as a percentage with two decimals.
pub fn percent(x: f64) -> f64 {
    round_half_up(x * 100.0, 2)
}

pub fn default_report_thresholds() -> Vec<f64> {
    vec![0.5, 0.95]
}

/// 0.50, 0.55, ..., 0.95.
pub fn default_miou_sweep() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub iou: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn at_threshold(dets: &[Detection], gts: &[GroundTruth], iou: f64) -> ThresholdMetrics {
    let m = match_detections(dets, gts, iou, true);
    let prf = precision_recall_f1(m.tp, m.fp, m.fn_);
    ThresholdMetrics {
        iou,
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Counts {
    pub detections: usize,
    pub ground_truths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub counts: Counts,
    pub per_threshold: Vec<ThresholdMetrics>,
    /// Means of P, R and F1 over the sweep.
    pub miou: Prf,
    pub sweep: Vec<ThresholdMetrics>,
}

/// Class-aware metrics at each report threshold plus sweep means.
pub fn compute_report(
    dets: &[Detection],
    gts: &[GroundTruth],
    thresholds: &[f64],
    miou_sweep: &[f64],
) -> MetricsReport {
    let sweep: Vec<ThresholdMetrics> = miou_sweep.iter().map(|&t| at_threshold(dets, gts, t)).collect();
    let mean = |f: fn(&ThresholdMetrics) -> f64| {
        if sweep.is_empty() {
            0.0
        } else {
            sweep.iter().map(f).sum::<f64>() / sweep.len() as f64
        }
    };
    MetricsReport {
        counts: Counts {
            detections: dets.len(),
            ground_truths: gts.len(),
        },
        per_threshold: thresholds.iter().map(|&t| at_threshold(dets, gts, t)).collect(),
        miou: Prf {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        sweep,
    }
}

impl MetricsReport {
    /// Plain-text table with percentages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "detections: {}  ground truths: {}",
            self.counts.detections, self.counts.ground_truths
        );
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8}",
            "IoU", "TP", "FP", "FN", "P", "R", "F1"
        );
        for m in &self.per_threshold {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>6} {:>6} {:>8.2} {:>8.2} {:>8.2}",
                format!("{:.2}", m.iou),
                m.tp,
                m.fp,
                m.fn_,
                percent(m.precision),
                percent(m.recall),
                percent(m.f1)
            );
        }
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>6} {:>6} {:>8.2} {:>8.2} {:>8.2}",
            "mIoU",
            "-",
            "-",
            "-",
            percent(self.miou.precision),
            percent(self.miou.recall),
            percent(self.miou.f1)
        );
        out
    }
}
