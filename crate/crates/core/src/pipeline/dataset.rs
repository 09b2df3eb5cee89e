use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::{Detection, GroundTruth};
use crate::geometry::{BBox, ImageMeta, SceneKind};

/// Image ids may be JSON numbers or strings; both become strings.
fn id_string(v: &Value, location: &str) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::parse(location, format!("image id must be a string or number, got {other}"))),
    }
}

#[derive(Deserialize)]
struct CocoImage {
    id: Value,
    width: u32,
    height: u32,
    #[serde(default)]
    file_name: Option<String>,
    #[serde(default)]
    scene_kind: Option<SceneKind>,
    #[serde(default)]
    resolution: Option<f64>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: Value,
    bbox: [f64; 4],
    category_id: Value,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: Value,
    name: String,
}

#[derive(Deserialize)]
struct CocoDocument {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub metas: Vec<ImageMeta>,
    pub ground_truths: Vec<GroundTruth>,
    /// Category names in document order.
    pub categories: Vec<String>,
    pub images_dir: Option<PathBuf>,
}

impl Dataset {
    pub fn meta(&self, image_id: &str) -> Option<&ImageMeta> {
        self.metas.iter().find(|m| m.image_id == image_id)
    }

    /// Path of an image file, when both a directory and a file name are known.
    pub fn image_path(&self, meta: &ImageMeta) -> Option<PathBuf> {
        Some(self.images_dir.as_ref()?.join(meta.file_name.as_ref()?))
    }
}

/// Reads a COCO-style document. Boxes `[x, y, w, h]` become corners; images
/// without a `scene_kind` get `default_scene`.
pub fn load_dataset(ann_path: &Path, images_dir: Option<&Path>, default_scene: SceneKind) -> Result<Dataset> {
    let loc = ann_path.display().to_string();
    let text = std::fs::read_to_string(ann_path).map_err(|e| Error::io(ann_path, e))?;
    let doc: CocoDocument = serde_json::from_str(&text).map_err(|e| Error::parse(&loc, e.to_string()))?;

    let mut metas = Vec::with_capacity(doc.images.len());
    let mut known = HashMap::new();
    for img in &doc.images {
        let id = id_string(&img.id, &loc)?;
        let meta = ImageMeta {
            image_id: id.clone(),
            width: img.width,
            height: img.height,
            scene_kind: img.scene_kind.unwrap_or(default_scene),
            resolution: img.resolution,
            file_name: img.file_name.clone(),
        };
        meta.validate()?;
        if known.insert(id.clone(), metas.len()).is_some() {
            return Err(Error::Dataset(format!("duplicate image id {id}")));
        }
        metas.push(meta);
    }

    let mut cats = HashMap::new();
    for c in &doc.categories {
        cats.insert(id_string(&c.id, &loc)?, c.name.clone());
    }

    let mut ground_truths = Vec::with_capacity(doc.annotations.len());
    for (i, a) in doc.annotations.iter().enumerate() {
        let image_id = id_string(&a.image_id, &loc)?;
        if !known.contains_key(&image_id) {
            return Err(Error::Dataset(format!(
                "annotation {i} references unknown image {image_id}"
            )));
        }
        let cat_id = id_string(&a.category_id, &loc)?;
        let category = cats.get(&cat_id).cloned().ok_or_else(|| {
            Error::Dataset(format!("annotation {i} references unknown category {cat_id}"))
        })?;
        let [x, y, w, h] = a.bbox;
        if !(w > 0.0 && h > 0.0 && x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Dataset(format!("annotation {i} has an empty or invalid box {:?}", a.bbox)));
        }
        ground_truths.push(GroundTruth {
            image_id,
            bbox: [x, y, x + w, y + h],
            category,
        });
    }

    Ok(Dataset {
        metas,
        ground_truths,
        categories: doc.categories.into_iter().map(|c| c.name).collect(),
        images_dir: images_dir.map(Path::to_path_buf),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalLine {
    image_id: Value,
    bbox: [f64; 4],
    score: f64,
    source: String,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

/// Proposals grouped by image id, in file order within each image. Each line
/// is `{image_id, bbox: [x1, y1, x2, y2], score, source}`.
pub fn load_proposals(path: &Path) -> Result<BTreeMap<String, Vec<BBox>>> {
    let mut out: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    for (n, line) in read_lines(path)? {
        let loc = format!("{}:{n}", path.display());
        let rec: ProposalLine = serde_json::from_str(&line).map_err(|e| Error::parse(&loc, e.to_string()))?;
        let id = id_string(&rec.image_id, &loc)?;
        let b = BBox::new(id.clone(), rec.bbox, rec.score, rec.source)
            .map_err(|e| Error::parse(&loc, e.to_string()))?;
        out.entry(id).or_default().push(b);
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaLine {
    image_id: Value,
    width: u32,
    height: u32,
    #[serde(default)]
    scene_kind: Option<SceneKind>,
    #[serde(default)]
    resolution: Option<f64>,
    #[serde(default)]
    file_name: Option<String>,
}

/// Line-delimited `{image_id, width, height, scene_kind?, resolution?, file_name?}`.
pub fn load_image_meta(path: &Path, default_scene: SceneKind) -> Result<Vec<ImageMeta>> {
    let mut metas: Vec<ImageMeta> = Vec::new();
    for (n, line) in read_lines(path)? {
        let loc = format!("{}:{n}", path.display());
        let rec: MetaLine = serde_json::from_str(&line).map_err(|e| Error::parse(&loc, e.to_string()))?;
        let meta = ImageMeta {
            image_id: id_string(&rec.image_id, &loc)?,
            width: rec.width,
            height: rec.height,
            scene_kind: rec.scene_kind.unwrap_or(default_scene),
            resolution: rec.resolution,
            file_name: rec.file_name,
        };
        meta.validate().map_err(|e| Error::parse(&loc, e.to_string()))?;
        if metas.iter().any(|m| m.image_id == meta.image_id) {
            return Err(Error::parse(&loc, format!("duplicate image id {}", meta.image_id)));
        }
        metas.push(meta);
    }
    Ok(metas)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            serde_json::from_str(&line).map_err(|e| Error::parse(format!("{}:{n}", path.display()), e.to_string()))
        })
        .collect()
}

/// One JSON object per line, each line terminated by `\n`.
pub fn detections_jsonl(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        out.push_str(&serde_json::to_string(d).expect("detection serializes"));
        out.push('\n');
    }
    out
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    std::fs::write(path, detections_jsonl(dets)).map_err(|e| Error::io(path, e))
}
