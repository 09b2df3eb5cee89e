//! Box arithmetic, class-agnostic proposal fusion and multi-scale crop planning.
//!
//! Boxes use continuous corner coordinates `[x1, y1, x2, y2]` in pixels. Two
//! boxes that only touch along an edge have zero intersection.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Natural,
    RemoteSensing,
}

impl SceneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::Natural => "natural",
            SceneKind::RemoteSensing => "remote_sensing",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(SceneKind::Natural),
            "remote_sensing" => Ok(SceneKind::RemoteSensing),
            other => Err(Error::Config(format!("unknown scene kind {other:?}"))),
        }
    }
}

/// An axis-aligned detection box with its confidence and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    pub source: String,
    pub image_id: String,
}

impl BBox {
    pub fn new(
        image_id: impl Into<String>,
        coords: [f64; 4],
        score: f64,
        source: impl Into<String>,
    ) -> Result<Self> {
        let [x1, y1, x2, y2] = coords;
        let b = BBox {
            x1,
            y1,
            x2,
            y2,
            score,
            source: source.into(),
            image_id: image_id.into(),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.coords();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinates {c:?}")));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::InvalidBox(format!(
                "degenerate extent {c:?} (need x1 < x2 and y1 < y2)"
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::InvalidBox(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    /// Same provenance, new extent.
    pub fn with_coords(&self, coords: [f64; 4]) -> Result<BBox> {
        BBox::new(self.image_id.clone(), coords, self.score, self.source.clone())
    }

    fn same_extent(&self, other: &BBox) -> bool {
        self.coords() == other.coords()
    }
}

pub fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_coords(&a.coords(), &b.coords())
}

/// IoU of two `[x1, y1, x2, y2]` arrays.
pub fn iou_coords(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub scene_kind: SceneKind,
    /// Ground-sample distance in meters per pixel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

impl ImageMeta {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, scene_kind: SceneKind) -> Self {
        ImageMeta {
            image_id: image_id.into(),
            width,
            height,
            scene_kind,
            resolution: None,
            file_name: None,
        }
    }

    pub fn with_resolution(mut self, meters_per_pixel: f64) -> Self {
        self.resolution = Some(meters_per_pixel);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Dataset(format!(
                "image {} has zero dimension {}x{}",
                self.image_id, self.width, self.height
            )));
        }
        if let Some(r) = self.resolution {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::Dataset(format!(
                    "image {} has non-positive resolution {r}",
                    self.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height)
    }
}

pub fn clip_to_image(b: &BBox, meta: &ImageMeta) -> Result<BBox> {
    let (w, h) = (f64::from(meta.width), f64::from(meta.height));
    if b.x2 <= 0.0 || b.y2 <= 0.0 || b.x1 >= w || b.y1 >= h {
        return Err(Error::OutsideImage {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            width: meta.width,
            height: meta.height,
        });
    }
    b.with_coords([
        b.x1.clamp(0.0, w),
        b.y1.clamp(0.0, h),
        b.x2.clamp(0.0, w),
        b.y2.clamp(0.0, h),
    ])
}

/// Descending score, then source, then coordinates, so equal scores order
/// deterministically.
fn score_order(a: &BBox, b: &BBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.source.cmp(&b.source))
        .then_with(|| {
            a.coords()
                .iter()
                .zip(b.coords().iter())
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Greedy non-maximum suppression. A box is suppressed when its IoU with an
/// already kept, higher-ranked box is strictly greater than `iou_threshold`.
pub fn nms(boxes: &[BBox], iou_threshold: f64) -> Vec<BBox> {
    let mut order: Vec<&BBox> = boxes.iter().collect();
    order.sort_by(|a, b| score_order(a, b));

    let mut kept: Vec<&BBox> = Vec::with_capacity(order.len());
    for cand in order {
        if kept.iter().all(|k| iou(k, cand) <= iou_threshold) {
            kept.push(cand);
        }
    }
    kept.into_iter().cloned().collect()
}

/// Class-agnostic boxes from one proposal network.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub source: String,
    pub boxes: Vec<BBox>,
}

/// Fuses several detectors' proposals: every box is relabelled with its set's
/// source and NMS runs over the concatenation.
pub fn merge_proposals(sets: &[ProposalSet], iou_threshold: f64) -> Vec<BBox> {
    let all: Vec<BBox> = sets
        .iter()
        .flat_map(|set| {
            set.boxes.iter().map(move |b| BBox {
                source: set.source.clone(),
                ..b.clone()
            })
        })
        .collect();
    nms(&all, iou_threshold)
}

/// Per-source min-max rescaling of scores into [0, 1]. Sets whose scores are
/// all equal are left untouched.
pub fn calibrate_scores(sets: &[ProposalSet]) -> Vec<ProposalSet> {
    sets.iter()
        .map(|set| {
            let lo = set.boxes.iter().map(|b| b.score).fold(f64::INFINITY, f64::min);
            let hi = set
                .boxes
                .iter()
                .map(|b| b.score)
                .fold(f64::NEG_INFINITY, f64::max);
            let boxes = if hi > lo {
                set.boxes
                    .iter()
                    .map(|b| BBox {
                        score: (b.score - lo) / (hi - lo),
                        ..b.clone()
                    })
                    .collect()
            } else {
                set.boxes.clone()
            };
            ProposalSet {
                source: set.source.clone(),
                boxes,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeLevel {
    Small,
    Medium,
    Large,
}

impl SizeLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            SizeLevel::Small => "small",
            SizeLevel::Medium => "medium",
            SizeLevel::Large => "large",
        }
    }
}

impl fmt::Display for SizeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeClass {
    pub level: SizeLevel,
    pub area_fraction: f64,
}

/// Fractions below `small_below` are small, above `large_above` large, and
/// everything in between (inclusive) medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeThresholds {
    pub small_below: f64,
    pub large_above: f64,
}

impl SizeThresholds {
    pub fn level(&self, fraction: f64) -> SizeLevel {
        if fraction < self.small_below {
            SizeLevel::Small
        } else if fraction > self.large_above {
            SizeLevel::Large
        } else {
            SizeLevel::Medium
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.small_below > 0.0 && self.small_below <= self.large_above && self.large_above < 1.0)
        {
            return Err(Error::Config(format!(
                "size thresholds must satisfy 0 < small_below <= large_above < 1, got {} / {}",
                self.small_below, self.large_above
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeThresholdTable {
    pub natural: SizeThresholds,
    pub remote_sensing: SizeThresholds,
}

impl Default for SizeThresholdTable {
    fn default() -> Self {
        SizeThresholdTable {
            natural: SizeThresholds {
                small_below: 0.01,
                large_above: 0.10,
            },
            remote_sensing: SizeThresholds {
                small_below: 0.001,
                large_above: 0.02,
            },
        }
    }
}

impl SizeThresholdTable {
    pub fn for_scene(&self, scene: SceneKind) -> &SizeThresholds {
        match scene {
            SceneKind::Natural => &self.natural,
            SceneKind::RemoteSensing => &self.remote_sensing,
        }
    }
}

pub fn classify_size(b: &BBox, meta: &ImageMeta, thresholds: &SizeThresholdTable) -> SizeClass {
    let area_fraction = (area(b) / meta.area()).min(1.0);
    SizeClass {
        level: thresholds.for_scene(meta.scene_kind).level(area_fraction),
        area_fraction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleRole {
    Primary,
    ZoomIn,
    ZoomOut,
}

impl ScaleRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ScaleRole::Primary => "primary",
            ScaleRole::ZoomIn => "zoom_in",
            ScaleRole::ZoomOut => "zoom_out",
        }
    }
}

impl fmt::Display for ScaleRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleEntry {
    pub role: ScaleRole,
    pub factor: f64,
}

/// Ordered views of one object: the primary view first, then zoom-ins, then
/// zoom-outs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalePlan {
    entries: Vec<ScaleEntry>,
}

impl ScalePlan {
    pub fn new(entries: Vec<ScaleEntry>) -> Result<Self> {
        let primaries: Vec<_> = entries
            .iter()
            .filter(|e| e.role == ScaleRole::Primary)
            .collect();
        if primaries.len() != 1 || primaries[0].factor != 1.0 {
            return Err(Error::Config(
                "a scale plan needs exactly one primary entry with factor 1.0".into(),
            ));
        }
        for (i, e) in entries.iter().enumerate() {
            let ok = e.factor.is_finite()
                && match e.role {
                    ScaleRole::Primary => true,
                    ScaleRole::ZoomIn => e.factor > 0.0 && e.factor < 1.0,
                    ScaleRole::ZoomOut => e.factor > 1.0,
                };
            if !ok {
                return Err(Error::Config(format!(
                    "{} factor {} out of range",
                    e.role, e.factor
                )));
            }
            if entries[..i]
                .iter()
                .any(|p| p.role == e.role && p.factor == e.factor)
            {
                return Err(Error::Config(format!(
                    "duplicate {} factor {}",
                    e.role, e.factor
                )));
            }
        }
        Ok(ScalePlan { entries })
    }

    pub fn primary_only() -> Self {
        ScalePlan {
            entries: vec![ScaleEntry {
                role: ScaleRole::Primary,
                factor: 1.0,
            }],
        }
    }

    pub fn entries(&self) -> &[ScaleEntry] {
        &self.entries
    }

    pub fn count(&self, role: ScaleRole) -> usize {
        self.entries.iter().filter(|e| e.role == role).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub zoom_in: Vec<f64>,
    pub zoom_out: Vec<f64>,
}

impl ScaleFactors {
    fn new(zoom_in: &[f64], zoom_out: &[f64]) -> Self {
        ScaleFactors {
            zoom_in: zoom_in.to_vec(),
            zoom_out: zoom_out.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelFactors {
    pub small: ScaleFactors,
    pub medium: ScaleFactors,
    pub large: ScaleFactors,
}

impl LevelFactors {
    pub fn for_level(&self, level: SizeLevel) -> &ScaleFactors {
        match level {
            SizeLevel::Small => &self.small,
            SizeLevel::Medium => &self.medium,
            SizeLevel::Large => &self.large,
        }
    }
}

/// Zoom factors per scene kind and size level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleTable {
    pub natural: LevelFactors,
    pub remote_sensing: LevelFactors,
}

impl Default for ScaleTable {
    fn default() -> Self {
        ScaleTable {
            natural: LevelFactors {
                small: ScaleFactors::new(&[0.6, 0.8], &[3.0]),
                medium: ScaleFactors::new(&[0.5, 0.75], &[2.0]),
                large: ScaleFactors::new(&[0.4, 0.6], &[1.5]),
            },
            remote_sensing: LevelFactors {
                small: ScaleFactors::new(&[0.5, 0.7], &[2.0, 4.0, 8.0]),
                medium: ScaleFactors::new(&[0.5, 0.7, 0.9], &[1.5, 2.5, 4.0]),
                large: ScaleFactors::new(&[0.4, 0.6, 0.8], &[1.3, 1.8]),
            },
        }
    }
}

impl ScaleTable {
    pub fn for_scene(&self, scene: SceneKind) -> &LevelFactors {
        match scene {
            SceneKind::Natural => &self.natural,
            SceneKind::RemoteSensing => &self.remote_sensing,
        }
    }

    /// Checks every (scene, level) entry by building its plan.
    pub fn validate(&self) -> Result<()> {
        for scene in [SceneKind::Natural, SceneKind::RemoteSensing] {
            for level in [SizeLevel::Small, SizeLevel::Medium, SizeLevel::Large] {
                plan_scales(
                    &SizeClass {
                        level,
                        area_fraction: 1.0,
                    },
                    scene,
                    self,
                )?;
            }
        }
        Ok(())
    }
}

/// Allowed (zoom-in, zoom-out) counts per scene kind.
fn view_counts(scene: SceneKind) -> (std::ops::RangeInclusive<usize>, std::ops::RangeInclusive<usize>) {
    match scene {
        SceneKind::Natural => (2..=2, 1..=1),
        SceneKind::RemoteSensing => (2..=3, 2..=3),
    }
}

pub fn plan_scales(size: &SizeClass, scene: SceneKind, table: &ScaleTable) -> Result<ScalePlan> {
    let factors = table.for_scene(scene).for_level(size.level);
    if factors.zoom_in.is_empty() || factors.zoom_out.is_empty() {
        return Err(Error::Config(format!(
            "empty zoom factor list for {scene}/{}",
            size.level
        )));
    }
    let (in_range, out_range) = view_counts(scene);
    if !in_range.contains(&factors.zoom_in.len()) || !out_range.contains(&factors.zoom_out.len()) {
        return Err(Error::Config(format!(
            "{scene}/{} needs {}-{} zoom-in and {}-{} zoom-out factors, got {} and {}",
            size.level,
            in_range.start(),
            in_range.end(),
            out_range.start(),
            out_range.end(),
            factors.zoom_in.len(),
            factors.zoom_out.len()
        )));
    }
    let mut entries = vec![ScaleEntry {
        role: ScaleRole::Primary,
        factor: 1.0,
    }];
    entries.extend(factors.zoom_in.iter().map(|&factor| ScaleEntry {
        role: ScaleRole::ZoomIn,
        factor,
    }));
    entries.extend(factors.zoom_out.iter().map(|&factor| ScaleEntry {
        role: ScaleRole::ZoomOut,
        factor,
    }));
    ScalePlan::new(entries)
}

/// Scales width and height by `factor` about the box center, then clips to
/// the image.
pub fn scale_box(b: &BBox, factor: f64, meta: &ImageMeta) -> Result<BBox> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Config(format!("scale factor {factor} must be positive")));
    }
    let (cx, cy) = b.center();
    let hw = b.width() / 2.0 * factor;
    let hh = b.height() / 2.0 * factor;
    let (w, h) = (f64::from(meta.width), f64::from(meta.height));
    let coords = [
        (cx - hw).clamp(0.0, w),
        (cy - hh).clamp(0.0, h),
        (cx + hw).clamp(0.0, w),
        (cy + hh).clamp(0.0, h),
    ];
    if !(coords[0] < coords[2] && coords[1] < coords[3]) {
        return Err(Error::DegenerateScale { factor });
    }
    b.with_coords(coords)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CropSpec {
    pub bbox: BBox,
    pub role: ScaleRole,
    pub factor: f64,
    pub crop_id: String,
}

/// Stable identifier for one view of an anchor box.
pub fn crop_id(anchor: &BBox, role: ScaleRole, factor: f64) -> String {
    format!(
        "{}/{:.2},{:.2},{:.2},{:.2}/{}@{:.2}",
        anchor.image_id, anchor.x1, anchor.y1, anchor.x2, anchor.y2, role, factor
    )
}

/// Crops for a plan together with, for every plan entry, the index of the
/// crop that covers it (entries whose clipped boxes coincide share a crop).
#[derive(Debug, Clone, PartialEq)]
pub struct CropLayout {
    pub crops: Vec<CropSpec>,
    pub entry_crop: Vec<usize>,
}

pub fn crop_layout(anchor: &BBox, plan: &ScalePlan, meta: &ImageMeta) -> Result<CropLayout> {
    let mut crops: Vec<CropSpec> = Vec::with_capacity(plan.entries().len());
    let mut entry_crop = Vec::with_capacity(plan.entries().len());
    for entry in plan.entries() {
        let scaled = scale_box(anchor, entry.factor, meta)?;
        match crops.iter().position(|c| c.bbox.same_extent(&scaled)) {
            Some(i) => entry_crop.push(i),
            None => {
                entry_crop.push(crops.len());
                crops.push(CropSpec {
                    bbox: scaled,
                    role: entry.role,
                    factor: entry.factor,
                    crop_id: crop_id(anchor, entry.role, entry.factor),
                });
            }
        }
    }
    Ok(CropLayout { crops, entry_crop })
}

pub fn make_crops(anchor: &BBox, plan: &ScalePlan, meta: &ImageMeta) -> Result<Vec<CropSpec>> {
    crop_layout(anchor, plan, meta).map(|l| l.crops)
}
