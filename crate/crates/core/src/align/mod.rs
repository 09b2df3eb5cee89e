//! Multi-scale visual-language search: cosine alignment between crop and
//! snippet embeddings, and per-view Top-K soft-alignment.

pub mod cache;
pub mod provider;
pub mod search;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{cache_read, cache_write, EmbeddingCache};
pub use provider::{
    embed_crops, embed_texts, EmbeddingProvider, FileCacheProvider, HttpEmbeddingProvider,
    ProviderKind, TextItem,
};
pub use search::{
    embed_codebook, search_object, CodebookIndex, RoleMatches, ScaleMatches, TopKConfig, TopKTable,
};

/// A finite embedding from a text or image encoder. Stored as the provider
/// returned it; normalization happens inside [`cosine`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        EmbeddingVector::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Components narrowed to f32, or `None` when any of them would lose
    /// precision.
    pub fn to_f32_exact(&self) -> Option<Vec<f32>> {
        self.0
            .iter()
            .map(|&v| {
                let n = v as f32;
                (f64::from(n) == v).then_some(n)
            })
            .collect()
    }

    /// Rounds every component to the nearest f32, the precision of cache files.
    pub fn rounded_to_f32(&self) -> Result<Self> {
        EmbeddingVector::new(self.0.iter().map(|&v| f64::from(v as f32)).collect())
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        EmbeddingVector::new(self.0.iter().map(|v| v * alpha).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let (nu, nv) = (norm(&u.0), norm(&v.0));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = u
        .0
        .iter()
        .zip(&v.0)
        .map(|(a, b)| a * b)
        .sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnippetMatch {
    pub snippet_id: String,
    pub similarity: f64,
}

/// Descending similarity, ties by ascending snippet id.
pub fn match_order(a: &SnippetMatch, b: &SnippetMatch) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.snippet_id.cmp(&b.snippet_id))
}

/// The `k` snippets most similar to `crop`, best first. Returns the whole
/// codebook, sorted, when it has fewer than `k` entries.
pub fn topk_soft_align(
    crop: &EmbeddingVector,
    codebook: &[(String, EmbeddingVector)],
    k: usize,
) -> Result<Vec<SnippetMatch>> {
    if k == 0 {
        return Err(Error::Config("top-k needs k >= 1".into()));
    }
    if codebook.is_empty() {
        return Err(Error::Codebook("cannot align against an empty codebook".into()));
    }
    let mut all = codebook
        .iter()
        .map(|(id, v)| {
            Ok(SnippetMatch {
                snippet_id: id.clone(),
                similarity: cosine(crop, v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, match_order);
        all.truncate(k);
    }
    all.sort_by(match_order);
    Ok(all)
}
