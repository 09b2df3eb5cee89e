use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{Detection, GroundTruth};
use crate::geometry::ImageMeta;

const DET_COLOR: &str = "#e4572e";
const UNKNOWN_COLOR: &str = "#888888";
const GT_COLOR: &str = "#2e86ab";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG with the image (when given) underneath one labelled rectangle per
/// detection and, optionally, dashed ground-truth rectangles.
pub fn render_overlay(
    meta: &ImageMeta,
    image: Option<&Path>,
    dets: &[Detection],
    gts: Option<&[GroundTruth]>,
) -> Result<String> {
    if let Some(d) = dets.iter().find(|d| d.image_id != meta.image_id) {
        return Err(Error::Dataset(format!(
            "detection for image {} passed to the overlay of {}",
            d.image_id, meta.image_id
        )));
    }
    if let Some(p) = image {
        if !p.is_file() {
            return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
    }
    let (w, h) = (meta.width, meta.height);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&meta.image_id));
    match image {
        Some(p) => {
            let _ = writeln!(
                s,
                r#"<image x="0" y="0" width="{w}" height="{h}" xlink:href="{}"/>"#,
                escape(&p.display().to_string())
            );
        }
        None => {
            let _ = writeln!(s, r##"<rect x="0" y="0" width="{w}" height="{h}" fill="#f4f4f4"/>"##);
        }
    }
    let _ = writeln!(
        s,
        r##"<rect class="frame" x="0" y="0" width="{w}" height="{h}" fill="none" stroke="#333"/>"##
    );
    if let Some(gts) = gts {
        for g in gts.iter().filter(|g| g.image_id == meta.image_id) {
            let [x1, y1, x2, y2] = g.bbox;
            let _ = writeln!(
                s,
                r#"<rect class="gt" x="{x1:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="{GT_COLOR}" stroke-width="2" stroke-dasharray="6 3"/>"#,
                x2 - x1,
                y2 - y1
            );
            let _ = writeln!(
                s,
                r#"<text class="gt-label" x="{x1:.1}" y="{:.1}" fill="{GT_COLOR}">{}</text>"#,
                y2 + 13.0,
                escape(&g.category)
            );
        }
    }
    for d in dets {
        let [x1, y1, x2, y2] = d.bbox;
        let color = if d.category == crate::eval::UNKNOWN { UNKNOWN_COLOR } else { DET_COLOR };
        let _ = writeln!(
            s,
            r#"<rect class="det" x="{x1:.1}" y="{y1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            x2 - x1,
            y2 - y1
        );
        let _ = writeln!(
            s,
            r#"<text class="det-label" x="{x1:.1}" y="{:.1}" fill="{color}">{} {:.2}</text>"#,
            (y1 - 4.0).max(12.0),
            escape(&d.category),
            d.score
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
