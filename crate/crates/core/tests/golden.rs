//! End-to-end runs on the golden fixture.

mod common;

use common::*;
use gw_core::eval::UNKNOWN;
use gw_core::pipeline::{emit_metrics, read_detections, render_overlay, write_run};

#[test]
fn golden_matches_oracle_for_every_worker_count() {
    check_golden().unwrap();
}

#[test]
fn missing_crops_fail_one_object_only() {
    let g = load_golden().unwrap();
    let run = g.run(4, None).unwrap();
    let failed: Vec<_> = run.detections.iter().filter(|d| d.error.is_some()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].image_id, "img_3");
    assert_eq!(failed[0].category, UNKNOWN);
    assert!(failed[0].error.as_ref().unwrap().contains("img_3/400.00,100.00,440.00,120.00/primary@1.00"));
    let c = run.manifest.counts;
    assert_eq!((c.images, c.proposals_in, c.proposals_out, c.failures), (5, 15, 14, 1));
    assert_eq!(c.answers + c.failures, c.prompts);
}

#[test]
fn synonyms_and_distractors_map_as_expected() {
    let g = load_golden().unwrap();
    let run = g.run(1, None).unwrap();
    let boat = run.detections.iter().find(|d| d.category_raw == "boat").unwrap();
    assert_eq!(boat.category, "ship");
    let sheen = run.detections.iter().find(|d| d.category_raw == "metallic sheen").unwrap();
    assert_eq!(sheen.category, UNKNOWN);
    assert!(sheen.error.is_none());
}

#[test]
fn clipped_proposal_keeps_its_clipped_box() {
    let g = load_golden().unwrap();
    let run = g.run(1, None).unwrap();
    assert!(run.detections.iter().any(|d| d.image_id == "img_4" && d.bbox == [480.0, 480.0, 512.0, 512.0]));
}

#[test]
fn swapped_runs_report_canonical_names() {
    let g = load_golden().unwrap();
    let vocab = &g.resources.vocabulary;
    for s in &g.swaps {
        let run = g.run(4, Some(s)).unwrap();
        assert_eq!(run.manifest.swap_set.as_deref(), Some(s.set_id.as_str()));
        assert!(run.detections.iter().all(|d| d.category == UNKNOWN || vocab.contains(&d.category)));
        // The alias vocabulary has no synonym for "boat".
        let boat = run.detections.iter().find(|d| d.category_raw == "boat").unwrap();
        assert_eq!(boat.category, UNKNOWN);
    }
}

#[test]
fn written_outputs_round_trip() {
    let g = load_golden().unwrap();
    let run = g.run(2, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run(dir.path(), &run).unwrap();
    assert_eq!(read_detections(&dir.path().join("detections.jsonl")).unwrap(), run.detections);

    let (report, files) = emit_metrics(&run.detections, &g.dataset.ground_truths, dir.path()).unwrap();
    assert_eq!(files.len(), 4);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["per_threshold"][0]["tp"], report.per_threshold[0].tp);
    let csv = std::fs::read_to_string(dir.path().join("pr_curve.csv")).unwrap();
    assert!(csv.starts_with("score,recall,precision"));
    let svg = std::fs::read_to_string(dir.path().join("pr_curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn overlays_cover_detections_and_ground_truth() {
    let g = load_golden().unwrap();
    let run = g.run(2, None).unwrap();
    for meta in &g.dataset.metas {
        let mine: Vec<_> = run.detections.iter().filter(|d| d.image_id == meta.image_id).cloned().collect();
        let svg = render_overlay(meta, None, &mine, Some(&g.dataset.ground_truths)).unwrap();
        let gts = g.dataset.ground_truths.iter().filter(|t| t.image_id == meta.image_id).count();
        assert_eq!(svg.matches("class=\"det\"").count(), mine.len(), "{}", meta.image_id);
        assert_eq!(svg.matches("class=\"gt\"").count(), gts, "{}", meta.image_id);
    }
}
