use std::fmt::Write as _;

use serde::Serialize;

use crate::eval::metrics::{detection_order, match_detections, Detection, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
}

/// One point per distinct detection score, highest first, counting every
/// detection scored at or above it.
///
/// Greedy matching takes detections by descending score, so the matching of a
/// score prefix is a prefix of the full matching and one pass suffices.
pub fn pr_curve(dets: &[Detection], gts: &[GroundTruth], iou_thr: f64, class_aware: bool) -> Vec<PrPoint> {
    let matched = {
        let mut v = vec![false; dets.len()];
        for m in match_detections(dets, gts, iou_thr, class_aware).matches {
            v[m.detection] = true;
        }
        v
    };
    let order = detection_order(dets);
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    for (pos, &i) in order.iter().enumerate() {
        seen += 1;
        tp += usize::from(matched[i]);
        let last_of_score = order
            .get(pos + 1)
            .is_none_or(|&j| dets[j].score != dets[i].score);
        if last_of_score {
            points.push(PrPoint {
                score: dets[i].score,
                recall: if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 },
                precision: tp as f64 / seen as f64,
            });
        }
    }
    points
}

pub fn curve_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("score,recall,precision\n");
    for p in points {
        let _ = writeln!(out, "{:.6},{:.6},{:.6}", p.score, p.recall, p.precision);
    }
    out
}

const W: f64 = 480.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Precision against recall as a standalone SVG document. Each curve is a
/// labelled step polyline.
pub fn curve_svg(curves: &[(&str, &[PrPoint])]) -> String {
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let plot_w = W - 2.0 * PAD;
    let plot_h = H - 2.0 * PAD;
    let x = |r: f64| PAD + r * plot_w;
    let y = |p: f64| H - PAD - p * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    for i in 0..=5 {
        let t = f64::from(i) / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            x(0.0),
            y(t),
            x(1.0),
            y(t)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.1}</text>"#,
            x(0.0) - 6.0,
            y(t) + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.1}</text>"#,
            x(t),
            y(0.0) + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Recall</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">Precision</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (ci, (label, pts)) in curves.iter().enumerate() {
        let color = COLORS[ci % COLORS.len()];
        if !pts.is_empty() {
            let mut path = String::new();
            let mut prev_r = 0.0;
            for p in pts.iter() {
                let _ = write!(path, "{:.2},{:.2} {:.2},{:.2} ", x(prev_r), y(p.precision), x(p.recall), y(p.precision));
                prev_r = p.recall;
            }
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.trim_end()
            );
        }
        let ly = PAD + 14.0 + 16.0 * ci as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            W - PAD - 110.0,
            W - PAD - 90.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            W - PAD - 85.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
