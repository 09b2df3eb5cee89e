//! Contextual prompt rendering.
//!
//! A template is plain text with `{placeholder}` fields (`{{` and `}}` are
//! literal braces). Available placeholders:
//!
//! | placeholder           | rendered as                                               |
//! |-----------------------|-----------------------------------------------------------|
//! | `scene_kind`          | `natural` or `remote sensing`                             |
//! | `scenario`            | the scenario setting text                                 |
//! | `bbox_width`, `bbox_height` | box extent in pixels, one decimal                   |
//! | `aspect_ratio`        | width / height, two decimals                              |
//! | `area_fraction`       | fraction of the image area, four decimals                 |
//! | `area_percent`        | the same as a percentage, two decimals                    |
//! | `size_level`          | `small`, `medium` or `large`                              |
//! | `size_sentence`       | one sentence stating both the fraction and the level      |
//! | `resolution`          | `0.50 m/pixel`, or `unknown`                              |
//! | `physical_size`       | `10.0 m x 5.0 m`, or `unknown`                            |
//! | `main_snippets`       | `text (class, 0.812); ...` for the primary view           |
//! | `zoom_in_sections`    | one line per zoom-in view, or `none`                      |
//! | `zoom_out_sections`   | one line per zoom-out view, or `none`                     |
//! | `vocabulary_hint`     | candidate category sentence in closed-set mode, else empty |
//! | `answer_format`       | `Category: <name>`                                        |

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::align::ScaleMatches;
use crate::codebook::{AttributeClass, Codebook};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageMeta, ScaleRole, SceneKind, SizeClass, SizeLevel};

pub const PLACEHOLDERS: &[&str] = &[
    "scene_kind",
    "scenario",
    "bbox_width",
    "bbox_height",
    "aspect_ratio",
    "area_fraction",
    "area_percent",
    "size_level",
    "size_sentence",
    "resolution",
    "physical_size",
    "main_snippets",
    "zoom_in_sections",
    "zoom_out_sections",
    "vocabulary_hint",
    "answer_format",
];

/// Line prefix in front of the rendered primary-view snippets.
pub const MAIN_EVIDENCE_MARKER: &str = "Main object evidence:";

/// Section headings of the shipped templates, in the order they appear.
pub const SECTION_MARKERS: [&str; 4] = [
    "## Scenario",
    "## Spatial structure",
    "## Main object",
    "## Context",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialInfo {
    pub bbox_extent: (f64, f64),
    pub aspect_ratio: f64,
    pub area_fraction: f64,
    pub size_level: SizeLevel,
    pub resolution: Option<f64>,
    pub physical_size: Option<(f64, f64)>,
}

pub fn compute_spatial_info(b: &BBox, meta: &ImageMeta, size: &SizeClass) -> SpatialInfo {
    let (w, h) = (b.width(), b.height());
    SpatialInfo {
        bbox_extent: (w, h),
        aspect_ratio: w / h,
        area_fraction: size.area_fraction,
        size_level: size.level,
        resolution: meta.resolution,
        physical_size: meta.resolution.map(|r| (w * r, h * r)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSnippet {
    pub text: String,
    pub attribute_class: AttributeClass,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoomSection {
    pub factor: f64,
    pub snippets: Vec<PromptSnippet>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptContext {
    pub scene_kind: SceneKind,
    pub scenario_text: String,
    pub spatial: SpatialInfo,
    pub main_snippets: Vec<PromptSnippet>,
    pub zoom_in_sections: Vec<ZoomSection>,
    pub zoom_out_sections: Vec<ZoomSection>,
    /// Candidate categories, only in closed-set mode.
    pub vocabulary_hint: Option<Vec<String>>,
    pub show_similarities: bool,
}

pub fn default_scenario(scene: SceneKind) -> &'static str {
    match scene {
        SceneKind::Natural => {
            "You are looking at a photograph of an everyday scene together with a careful observer who describes what they see."
        }
        SceneKind::RemoteSensing => {
            "You are an image analyst looking at satellite or aerial imagery of the Earth's surface."
        }
    }
}

impl PromptContext {
    /// Assembles a context from search results, resolving snippet ids
    /// against the codebook.
    pub fn from_matches(
        scene_kind: SceneKind,
        scenario_text: impl Into<String>,
        spatial: SpatialInfo,
        matches: &ScaleMatches,
        codebook: &Codebook,
    ) -> Result<Self> {
        let index = codebook.index();
        let resolve = |list: &[crate::align::SnippetMatch]| -> Result<Vec<PromptSnippet>> {
            list.iter()
                .map(|m| {
                    let s = index.get(m.snippet_id.as_str()).ok_or_else(|| {
                        Error::Codebook(format!("unknown snippet id {}", m.snippet_id))
                    })?;
                    Ok(PromptSnippet {
                        text: s.text.clone(),
                        attribute_class: s.attribute_class,
                        similarity: m.similarity,
                    })
                })
                .collect()
        };
        let sections = |role| -> Result<Vec<ZoomSection>> {
            matches
                .role(role)
                .map(|r| {
                    Ok(ZoomSection {
                        factor: r.factor,
                        snippets: resolve(&r.matches)?,
                    })
                })
                .collect()
        };
        Ok(PromptContext {
            scene_kind,
            scenario_text: scenario_text.into(),
            spatial,
            main_snippets: resolve(matches.anchor_matches())?,
            zoom_in_sections: sections(ScaleRole::ZoomIn)?,
            zoom_out_sections: sections(ScaleRole::ZoomOut)?,
            vocabulary_hint: None,
            show_similarities: true,
        })
    }

    pub fn with_vocabulary_hint(mut self, categories: Vec<String>) -> Self {
        self.vocabulary_hint = Some(categories);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Field(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub scene_kind: SceneKind,
    body: String,
    pieces: Vec<Piece>,
}

fn parse_body(body: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut chars = body.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                text.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                text.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => {
                            return Err(Error::Template(format!("unterminated placeholder {{{name}")))
                        }
                    }
                }
                if !PLACEHOLDERS.contains(&name.as_str()) {
                    return Err(Error::UnknownPlaceholder(name));
                }
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Field(name));
            }
            '}' => return Err(Error::Template("unmatched '}'".into())),
            other => text.push(other),
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

impl PromptTemplate {
    pub fn new(template_id: impl Into<String>, scene_kind: SceneKind, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let pieces = parse_body(&body)?;
        Ok(PromptTemplate {
            template_id: template_id.into(),
            scene_kind,
            body,
            pieces,
        })
    }

    /// The bundled template for a scene kind.
    pub fn shipped(scene_kind: SceneKind) -> Self {
        let (id, body) = match scene_kind {
            SceneKind::Natural => ("natural-v1", include_str!("../resources/template_natural.txt")),
            SceneKind::RemoteSensing => (
                "remote_sensing-v1",
                include_str!("../resources/template_remote_sensing.txt"),
            ),
        };
        PromptTemplate::new(id, scene_kind, body).expect("bundled template is valid")
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> impl Iterator<Item = &str> {
        self.pieces.iter().filter_map(|p| match p {
            Piece::Field(f) => Some(f.as_str()),
            Piece::Text(_) => None,
        })
    }

    pub fn uses(&self, placeholder: &str) -> bool {
        self.placeholders().any(|p| p == placeholder)
    }
}

/// Loads a template file; its id is the file stem. Template files must
/// mention the "guess what" game.
pub fn load_template(path: &Path, scene_kind: SceneKind) -> Result<PromptTemplate> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !body.to_lowercase().contains("guess what") {
        return Err(Error::Template(format!(
            "{} does not mention the \"guess what\" game",
            path.display()
        )));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "template".into());
    PromptTemplate::new(id, scene_kind, body)
}

fn snippet_list(list: &[PromptSnippet], show_similarities: bool) -> String {
    list.iter()
        .map(|s| {
            if show_similarities {
                format!("{} ({}, {:.3})", s.text, s.attribute_class, s.similarity)
            } else {
                format!("{} ({})", s.text, s.attribute_class)
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn section_lines(label: &str, sections: &[ZoomSection], show_similarities: bool) -> String {
    if sections.is_empty() {
        return "none".into();
    }
    let mut out = String::new();
    for (i, s) in sections.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(
            out,
            "- {label} x{:.2}: {}",
            s.factor,
            snippet_list(&s.snippets, show_similarities)
        );
    }
    out
}

fn size_sentence(spatial: &SpatialInfo, scene: SceneKind) -> String {
    let imagery = match scene {
        SceneKind::Natural => "a natural-scene photograph",
        SceneKind::RemoteSensing => "remote sensing imagery",
    };
    format!(
        "The object covers {:.2}% of the image area (fraction {:.4}), which makes it a {} object for {imagery}.",
        spatial.area_fraction * 100.0,
        spatial.area_fraction,
        spatial.size_level
    )
}

fn field(name: &str, ctx: &PromptContext) -> Result<String> {
    let sp = &ctx.spatial;
    Ok(match name {
        "scene_kind" => match ctx.scene_kind {
            SceneKind::Natural => "natural".into(),
            SceneKind::RemoteSensing => "remote sensing".into(),
        },
        "scenario" => ctx.scenario_text.clone(),
        "bbox_width" => format!("{:.1}", sp.bbox_extent.0),
        "bbox_height" => format!("{:.1}", sp.bbox_extent.1),
        "aspect_ratio" => format!("{:.2}", sp.aspect_ratio),
        "area_fraction" => format!("{:.4}", sp.area_fraction),
        "area_percent" => format!("{:.2}%", sp.area_fraction * 100.0),
        "size_level" => sp.size_level.to_string(),
        "size_sentence" => size_sentence(sp, ctx.scene_kind),
        "resolution" => match sp.resolution {
            Some(r) => format!("{r:.2} m/pixel"),
            None => "unknown".into(),
        },
        "physical_size" => match sp.physical_size {
            Some((w, h)) => format!("{w:.1} m x {h:.1} m"),
            None => "unknown".into(),
        },
        "main_snippets" => {
            if ctx.main_snippets.is_empty() {
                return Err(Error::MissingField("main_snippets"));
            }
            snippet_list(&ctx.main_snippets, ctx.show_similarities)
        }
        "zoom_in_sections" => section_lines("zoom-in", &ctx.zoom_in_sections, ctx.show_similarities),
        "zoom_out_sections" => {
            section_lines("zoom-out", &ctx.zoom_out_sections, ctx.show_similarities)
        }
        "vocabulary_hint" => match &ctx.vocabulary_hint {
            Some(cats) if !cats.is_empty() => format!(
                "The object belongs to one of these categories: {}. Answer with one of them.\n",
                cats.join(", ")
            ),
            _ => String::new(),
        },
        "answer_format" => "Category: <name>".into(),
        other => return Err(Error::UnknownPlaceholder(other.to_string())),
    })
}

pub fn render_prompt(t: &PromptTemplate, ctx: &PromptContext) -> Result<String> {
    if t.scene_kind != ctx.scene_kind {
        return Err(Error::SceneMismatch {
            template: t.scene_kind.to_string(),
            context: ctx.scene_kind.to_string(),
        });
    }
    let mut out = String::with_capacity(t.body.len() + 512);
    for piece in &t.pieces {
        match piece {
            Piece::Text(s) => out.push_str(s),
            Piece::Field(f) => out.push_str(&field(f, ctx)?),
        }
    }
    Ok(out)
}

/// Text of the first snippet on the main-object evidence line.
pub fn first_main_snippet(prompt: &str) -> Option<String> {
    let line = prompt
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(MAIN_EVIDENCE_MARKER))?;
    let first = line.trim().split("; ").next()?;
    let text = match first.rfind(" (") {
        Some(i) => &first[..i],
        None => first,
    };
    let text = text.trim();
    (!text.is_empty()).then(|| text.to_string())
}

/// Whether all four section markers occur, in order.
pub fn sections_in_order(rendered: &str) -> bool {
    let mut from = 0;
    for marker in SECTION_MARKERS {
        match rendered[from..].find(marker) {
            Some(i) => from += i + marker.len(),
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snip(text: &str, class: AttributeClass, sim: f64) -> PromptSnippet {
        PromptSnippet {
            text: text.into(),
            attribute_class: class,
            similarity: sim,
        }
    }

    fn spatial() -> SpatialInfo {
        SpatialInfo {
            bbox_extent: (50.0, 25.0),
            aspect_ratio: 2.0,
            area_fraction: 0.125,
            size_level: SizeLevel::Large,
            resolution: None,
            physical_size: None,
        }
    }

    fn ctx(scene: SceneKind) -> PromptContext {
        PromptContext {
            scene_kind: scene,
            scenario_text: default_scenario(scene).into(),
            spatial: spatial(),
            main_snippets: vec![
                snip("wheel", AttributeClass::ComponentAttribute, 0.8123),
                snip("road surface", AttributeClass::ContextualClue, 0.71),
            ],
            zoom_in_sections: vec![
                ZoomSection {
                    factor: 0.5,
                    snippets: vec![snip("handle", AttributeClass::ComponentAttribute, 0.6)],
                },
                ZoomSection {
                    factor: 0.75,
                    snippets: vec![snip("sharp edge", AttributeClass::ComponentAttribute, 0.55)],
                },
            ],
            zoom_out_sections: vec![ZoomSection {
                factor: 2.0,
                snippets: vec![snip(
                    "A person riding a bicycle",
                    AttributeClass::Relational,
                    0.5,
                )],
            }],
            vocabulary_hint: None,
            show_similarities: true,
        }
    }

    #[test]
    fn spatial_examples() {
        let m = ImageMeta::new("i", 100, 100, SceneKind::Natural);
        let b = BBox::new("i", [0.0, 0.0, 50.0, 25.0], 0.5, "t").unwrap();
        let size = crate::geometry::classify_size(&b, &m, &Default::default());
        let s = compute_spatial_info(&b, &m, &size);
        assert_eq!(s.bbox_extent, (50.0, 25.0));
        assert_eq!(s.aspect_ratio, 2.0);
        assert_eq!(s.area_fraction, 0.125);
        assert_eq!(s.physical_size, None);

        let sq = BBox::new("i", [10.0, 10.0, 30.0, 30.0], 0.5, "t").unwrap();
        assert_eq!(compute_spatial_info(&sq, &m, &size).aspect_ratio, 1.0);

        let rs = ImageMeta::new("i", 800, 800, SceneKind::RemoteSensing).with_resolution(0.5);
        let b = BBox::new("i", [0.0, 0.0, 20.0, 10.0], 0.5, "t").unwrap();
        let size = crate::geometry::classify_size(&b, &rs, &Default::default());
        let s = compute_spatial_info(&b, &rs, &size);
        assert_eq!(s.physical_size, Some((10.0, 5.0)));
    }

    #[test]
    fn minimal_template() {
        let t = PromptTemplate::new("min", SceneKind::Natural, "Main: {main_snippets}").unwrap();
        let mut c = ctx(SceneKind::Natural);
        c.main_snippets.truncate(1);
        assert_eq!(
            render_prompt(&t, &c).unwrap(),
            "Main: wheel (component_attribute, 0.812)"
        );
        c.show_similarities = false;
        assert_eq!(render_prompt(&t, &c).unwrap(), "Main: wheel (component_attribute)");
    }

    #[test]
    fn unknown_placeholder_is_named() {
        let err = PromptTemplate::new("x", SceneKind::Natural, "hi {nonexistent}").unwrap_err();
        assert!(matches!(&err, Error::UnknownPlaceholder(p) if p == "nonexistent"));
        assert!(err.to_string().contains("nonexistent"));
        let t = PromptTemplate::new("x", SceneKind::Natural, "{{literal}} {scene_kind}").unwrap();
        assert_eq!(render_prompt(&t, &ctx(SceneKind::Natural)).unwrap(), "{literal} natural");
    }

    #[test]
    fn scene_mismatch_and_missing_field() {
        let t = PromptTemplate::shipped(SceneKind::RemoteSensing);
        assert!(matches!(
            render_prompt(&t, &ctx(SceneKind::Natural)),
            Err(Error::SceneMismatch { .. })
        ));
        let mut c = ctx(SceneKind::RemoteSensing);
        c.main_snippets.clear();
        assert!(matches!(
            render_prompt(&t, &c),
            Err(Error::MissingField("main_snippets"))
        ));
    }

    #[test]
    fn shipped_templates() {
        let rs = PromptTemplate::shipped(SceneKind::RemoteSensing);
        assert!(rs.uses("resolution") && rs.uses("physical_size") && rs.uses("size_sentence"));
        let nat = PromptTemplate::shipped(SceneKind::Natural);
        assert!(nat.uses("zoom_out_sections") && nat.uses("main_snippets"));
        assert!(!nat.uses("resolution"));
        assert!(nat.body().contains("relations between the object and its surroundings"));
        for t in [&rs, &nat] {
            assert!(t.body().to_lowercase().contains("guess what"));
        }
    }

    #[test]
    fn unknown_resolution_sentinel() {
        let t = PromptTemplate::shipped(SceneKind::RemoteSensing);
        let out = render_prompt(&t, &ctx(SceneKind::RemoteSensing)).unwrap();
        assert!(out.contains("Ground resolution: unknown"));
        assert!(out.contains("physical size: unknown"));
        assert!(sections_in_order(&out));
        assert!(out.trim_end().ends_with("Category: <name>"));
    }

    #[test]
    fn load_template_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rs.txt");
        std::fs::write(&p, include_str!("../resources/template_remote_sensing.txt")).unwrap();
        let t = load_template(&p, SceneKind::RemoteSensing).unwrap();
        assert_eq!(t.template_id, "rs");
        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, "guess what {nonexistent}").unwrap();
        assert!(matches!(
            load_template(&bad, SceneKind::Natural),
            Err(Error::UnknownPlaceholder(_))
        ));
        let noframe = dir.path().join("plain.txt");
        std::fs::write(&noframe, "{main_snippets}").unwrap();
        assert!(load_template(&noframe, SceneKind::Natural).is_err());
    }

    #[test]
    fn closed_set_hint() {
        let t = PromptTemplate::shipped(SceneKind::Natural);
        let open = render_prompt(&t, &ctx(SceneKind::Natural)).unwrap();
        assert!(!open.contains("one of these categories"));
        let c = ctx(SceneKind::Natural).with_vocabulary_hint(vec!["car".into(), "dog".into()]);
        let closed = render_prompt(&t, &c).unwrap();
        assert!(closed.contains("one of these categories: car, dog."));
    }

    #[test]
    fn finds_first_main_snippet() {
        let t = PromptTemplate::shipped(SceneKind::Natural);
        let out = render_prompt(&t, &ctx(SceneKind::Natural)).unwrap();
        assert_eq!(first_main_snippet(&out).as_deref(), Some("wheel"));
        assert_eq!(first_main_snippet("nothing here"), None);
    }

    fn word() -> impl Strategy<Value = String> {
        "[a-z]{3,8}"
    }

    proptest! {
        #[test]
        fn rendering_is_pure_and_complete(
            words in prop::collection::hash_set(word(), 9..20),
            sims in prop::collection::vec(-1.0f64..1.0, 20),
            rs in any::<bool>(),
        ) {
            let scene = if rs { SceneKind::RemoteSensing } else { SceneKind::Natural };
            let t = PromptTemplate::shipped(scene);
            // tokens that cannot collide with template prose
            let words: Vec<String> = words.into_iter().map(|w| format!("zq{w}")).collect();
            let take = |n: usize, off: usize| -> Vec<PromptSnippet> {
                let mut v: Vec<PromptSnippet> = (off..off + n)
                    .map(|i| snip(&words[i], AttributeClass::Appearance, sims[i]))
                    .collect();
                v.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
                v
            };
            let c = PromptContext {
                main_snippets: take(3, 0),
                zoom_in_sections: vec![ZoomSection { factor: 0.5, snippets: take(3, 3) }],
                zoom_out_sections: vec![ZoomSection { factor: 2.0, snippets: take(3, 6) }],
                ..ctx(scene)
            };
            let a = render_prompt(&t, &c).unwrap();
            let b = render_prompt(&t, &c).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(sections_in_order(&a));
            for list in [&c.main_snippets, &c.zoom_in_sections[0].snippets, &c.zoom_out_sections[0].snippets] {
                let mut last = 0;
                for s in list.iter() {
                    prop_assert_eq!(a.matches(s.text.as_str()).count(), 1);
                    let pos = a.find(s.text.as_str()).unwrap();
                    prop_assert!(pos >= last);
                    last = pos;
                }
            }
        }
    }
}
