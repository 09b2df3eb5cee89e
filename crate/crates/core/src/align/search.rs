use serde::{Deserialize, Serialize};

use crate::align::provider::{embed_crops, embed_texts, EmbeddingProvider, ImageSource, TextItem};
use crate::align::{topk_soft_align, EmbeddingVector, SnippetMatch};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::geometry::{crop_layout, BBox, ImageMeta, ScalePlan, ScaleRole, SceneKind};

/// How many snippets each view keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopKConfig {
    pub primary: usize,
    pub zoom_in: usize,
    pub zoom_out: usize,
}

impl TopKConfig {
    pub fn uniform(k: usize) -> Self {
        TopKConfig {
            primary: k,
            zoom_in: k,
            zoom_out: k,
        }
    }

    pub fn k(&self, role: ScaleRole) -> usize {
        match role {
            ScaleRole::Primary => self.primary,
            ScaleRole::ZoomIn => self.zoom_in,
            ScaleRole::ZoomOut => self.zoom_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.primary == 0 || self.zoom_in == 0 || self.zoom_out == 0 {
            return Err(Error::Config("top-k values must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopKTable {
    pub natural: TopKConfig,
    pub remote_sensing: TopKConfig,
}

impl Default for TopKTable {
    /// Top-3 for every natural-scene view; remote sensing keeps Top-3 for the
    /// primary view and Top-5 for zoomed views.
    fn default() -> Self {
        TopKTable {
            natural: TopKConfig::uniform(3),
            remote_sensing: TopKConfig {
                primary: 3,
                zoom_in: 5,
                zoom_out: 5,
            },
        }
    }
}

impl TopKTable {
    pub fn for_scene(&self, scene: SceneKind) -> &TopKConfig {
        match scene {
            SceneKind::Natural => &self.natural,
            SceneKind::RemoteSensing => &self.remote_sensing,
        }
    }
}

/// Snippet embeddings, computed once per run and shared by every object.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookIndex {
    entries: Vec<(String, EmbeddingVector)>,
}

impl CodebookIndex {
    pub fn new(entries: Vec<(String, EmbeddingVector)>) -> Self {
        CodebookIndex { entries }
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }
}

pub fn embed_codebook(p: &dyn EmbeddingProvider, cb: &Codebook) -> Result<CodebookIndex> {
    let items: Vec<TextItem<'_>> = cb
        .snippets()
        .iter()
        .map(|s| TextItem {
            id: &s.snippet_id,
            text: &s.text,
        })
        .collect();
    let vecs = embed_texts(p, &items)?;
    Ok(CodebookIndex::new(
        cb.snippets()
            .iter()
            .map(|s| s.snippet_id.clone())
            .zip(vecs)
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoleMatches {
    pub role: ScaleRole,
    pub factor: f64,
    pub crop_id: String,
    pub matches: Vec<SnippetMatch>,
}

/// Top-K lists for every view of one object, in plan order. The primary
/// view's list is the main-object evidence; zoomed views are context.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleMatches {
    pub per_role: Vec<RoleMatches>,
}

impl ScaleMatches {
    pub fn anchor_matches(&self) -> &[SnippetMatch] {
        self.per_role
            .iter()
            .find(|r| r.role == ScaleRole::Primary)
            .map(|r| r.matches.as_slice())
            .unwrap_or(&[])
    }

    pub fn role(&self, role: ScaleRole) -> impl Iterator<Item = &RoleMatches> {
        self.per_role.iter().filter(move |r| r.role == role)
    }
}

/// Crops every view of `anchor`, embeds the distinct crops and soft-aligns
/// each view against the codebook independently.
pub fn search_object(
    anchor: &BBox,
    plan: &ScalePlan,
    meta: &ImageMeta,
    index: &CodebookIndex,
    provider: &dyn EmbeddingProvider,
    image: &ImageSource,
    k: &TopKConfig,
) -> Result<ScaleMatches> {
    let layout = crop_layout(anchor, plan, meta)?;
    let vecs = embed_crops(provider, image, &layout.crops)?;
    let per_role = plan
        .entries()
        .iter()
        .zip(&layout.entry_crop)
        .map(|(entry, &ci)| {
            Ok(RoleMatches {
                role: entry.role,
                factor: entry.factor,
                crop_id: layout.crops[ci].crop_id.clone(),
                matches: topk_soft_align(&vecs[ci], index.entries(), k.k(entry.role))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaleMatches { per_role })
}
