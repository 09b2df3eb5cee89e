use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    compute_report, curve_csv, curve_svg, default_miou_sweep, default_report_thresholds, percent, pr_curve,
    Detection, GroundTruth, MetricsReport, SwapReport,
};
use crate::pipeline::dataset::write_detections;
use crate::pipeline::run::RunOutput;

fn write(path: PathBuf, body: impl AsRef<[u8]>) -> Result<PathBuf> {
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `detections.jsonl` and `manifest.json`.
pub fn write_run(out_dir: &Path, run: &RunOutput) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let dets = out_dir.join("detections.jsonl");
    write_detections(&dets, &run.detections)?;
    Ok(vec![dets, write(out_dir.join("manifest.json"), pretty(&run.manifest))?])
}

/// Writes `metrics.json`, `metrics.txt`, and P-R curves at IoU 0.5
/// (`pr_curve.csv` class-aware, `pr_curve.svg` with both class-aware and
/// class-agnostic curves).
pub fn emit_metrics(dets: &[Detection], gts: &[GroundTruth], out_dir: &Path) -> Result<(MetricsReport, Vec<PathBuf>)> {
    ensure_dir(out_dir)?;
    let report = compute_report(dets, gts, &default_report_thresholds(), &default_miou_sweep());
    let aware = pr_curve(dets, gts, 0.5, true);
    let agnostic = pr_curve(dets, gts, 0.5, false);
    let files = vec![
        write(out_dir.join("metrics.json"), pretty(&report))?,
        write(out_dir.join("metrics.txt"), report.to_table())?,
        write(out_dir.join("pr_curve.csv"), curve_csv(&aware))?,
        write(
            out_dir.join("pr_curve.svg"),
            curve_svg(&[("class-aware", &aware), ("class-agnostic", &agnostic)]),
        )?,
    ];
    Ok((report, files))
}

pub fn swap_table(r: &SwapReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16} {:>8}", "set", "F1@0.5");
    for s in &r.per_set {
        let _ = writeln!(out, "{:<16} {:>8.2}", s.set_id, percent(s.f1));
    }
    let _ = writeln!(out, "{:<16} {:>8.2}", "Avg", percent(r.average));
    out
}

/// Writes `swap_report.json` and `swap_report.txt`.
pub fn emit_swap_report(r: &SwapReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    Ok(vec![
        write(out_dir.join("swap_report.json"), pretty(r))?,
        write(out_dir.join("swap_report.txt"), swap_table(r))?,
    ])
}
