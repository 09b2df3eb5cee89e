//! One PASS/FAIL line per acceptance criterion. Every criterion runs even
//! when an earlier one fails; the process exits non-zero if any line is FAIL.
//! Runs without the libtest harness so the lines are never captured.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("f1-formula-cells", Box::new(check_f1_cells)),
        ("prompt-swap-average", Box::new(check_swap_average)),
        ("iou-oracle", Box::new(|| check_iou_oracle(3000))),
        ("nms-oracle", Box::new(|| check_nms_oracle(1000))),
        ("topk-oracle", Box::new(|| check_topk_oracle(1200))),
        ("cosine-scale-invariance", Box::new(|| check_scale_invariance(600))),
        ("gwemb1-round-trip", Box::new(|| check_cache_round_trip(150))),
        ("golden-end-to-end", Box::new(check_golden)),
        ("scale-plan-conformance", Box::new(|| check_scale_plans(2000))),
        ("prompt-swap-invariance", Box::new(check_prompt_swap)),
    ];
    let mut failed = Vec::new();
    for (name, check) in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let ms = start.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS {name} ({ms} ms): {detail}"),
            Err(reason) => {
                println!("FAIL {name} ({ms} ms): {reason}");
                failed.push(*name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: {} of {} criteria passed", criteria.len(), criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
