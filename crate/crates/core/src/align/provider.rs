//! Embedding providers: an offline `GWEMB1` cache keyed by snippet and crop
//! ids, or an HTTP embedding service.
//!
//! Service wire protocol:
//!
//! * `GET  /healthz` → `{"dim": D, "model": "..."}`
//! * `POST /v1/embed/text` with `{"texts": [...]}` → `{"dim": D, "vectors": [[...], ...]}`
//! * `POST /v1/embed/image` with `{"images_b64": [PNG...], "resize": 224}` → same shape

use std::collections::HashSet;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine;
use image::{imageops::FilterType, DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::align::{EmbeddingCache, EmbeddingVector};
use crate::error::{Error, Result};
use crate::geometry::{BBox, CropSpec};
use crate::sync::Semaphore;

/// Side length every crop is resized to before encoding.
pub const CROP_SIDE: u32 = 224;

/// Largest batch sent in one service request.
pub const MAX_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    FileCache,
    HttpService,
}

/// A text to embed. Cache providers look `id` up; services encode `text`.
#[derive(Debug, Clone, Copy)]
pub struct TextItem<'a> {
    pub id: &'a str,
    pub text: &'a str,
}

/// Lazily decoded image pixels, shared by all objects of one image.
#[derive(Debug, Default)]
pub struct ImageSource {
    path: Option<PathBuf>,
    decoded: OnceLock<std::result::Result<DynamicImage, String>>,
}

impl ImageSource {
    pub fn none() -> Self {
        ImageSource::default()
    }

    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        ImageSource {
            path: Some(path.into()),
            decoded: OnceLock::new(),
        }
    }

    pub fn from_image(img: DynamicImage) -> Self {
        let decoded = OnceLock::new();
        let _ = decoded.set(Ok(img));
        ImageSource {
            path: None,
            decoded,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn pixels(&self) -> Result<&DynamicImage> {
        let res = self.decoded.get_or_init(|| match &self.path {
            Some(p) => image::open(p).map_err(|e| format!("{}: {e}", p.display())),
            None => Err("no image available for pixel extraction".into()),
        });
        res.as_ref().map_err(|e| Error::Image(e.clone()))
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn dim(&self) -> usize;

    /// Identity string for run manifests.
    fn identity(&self) -> String;

    fn embed_texts(&self, items: &[TextItem<'_>]) -> Result<Vec<EmbeddingVector>>;

    fn embed_crops(&self, image: &ImageSource, crops: &[CropSpec]) -> Result<Vec<EmbeddingVector>>;
}

fn check_dims(p: &dyn EmbeddingProvider, vecs: &[EmbeddingVector], expected_len: usize) -> Result<()> {
    if vecs.len() != expected_len {
        return Err(Error::Provider(format!(
            "expected {expected_len} vectors, got {}",
            vecs.len()
        )));
    }
    for v in vecs {
        if v.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                actual: v.dim(),
            });
        }
    }
    Ok(())
}

/// One vector per text, in order.
pub fn embed_texts(p: &dyn EmbeddingProvider, items: &[TextItem<'_>]) -> Result<Vec<EmbeddingVector>> {
    if items.is_empty() {
        return Err(Error::Provider("no texts to embed".into()));
    }
    let vecs = p.embed_texts(items)?;
    check_dims(p, &vecs, items.len())?;
    Ok(vecs)
}

/// One vector per crop, in order. Crop ids must be unique within the call.
pub fn embed_crops(
    p: &dyn EmbeddingProvider,
    image: &ImageSource,
    crops: &[CropSpec],
) -> Result<Vec<EmbeddingVector>> {
    let mut seen = HashSet::new();
    for c in crops {
        if !seen.insert(c.crop_id.as_str()) {
            return Err(Error::Provider(format!("duplicate crop id {}", c.crop_id)));
        }
    }
    if crops.is_empty() {
        return Ok(Vec::new());
    }
    let vecs = p.embed_crops(image, crops)?;
    check_dims(p, &vecs, crops.len())?;
    Ok(vecs)
}

/// Serves vectors from a `GWEMB1` file; never touches pixels.
#[derive(Debug, Clone)]
pub struct FileCacheProvider {
    cache: EmbeddingCache,
    origin: String,
}

impl FileCacheProvider {
    pub fn new(cache: EmbeddingCache, origin: impl Into<String>) -> Self {
        FileCacheProvider {
            cache,
            origin: origin.into(),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        Ok(FileCacheProvider::new(
            EmbeddingCache::read(path)?,
            path.display().to_string(),
        ))
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl EmbeddingProvider for FileCacheProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::FileCache
    }

    fn dim(&self) -> usize {
        self.cache.dim()
    }

    fn identity(&self) -> String {
        let name = Path::new(&self.origin)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.origin.clone());
        format!("file_cache:{name} (dim {}, {} entries)", self.cache.dim(), self.cache.len())
    }

    fn embed_texts(&self, items: &[TextItem<'_>]) -> Result<Vec<EmbeddingVector>> {
        items.iter().map(|t| self.cache.lookup(t.id).cloned()).collect()
    }

    fn embed_crops(&self, _image: &ImageSource, crops: &[CropSpec]) -> Result<Vec<EmbeddingVector>> {
        crops
            .iter()
            .map(|c| self.cache.lookup(&c.crop_id).cloned())
            .collect()
    }
}

/// Extracts the pixels under `b` and resizes them to 224×224, ignoring the
/// crop's aspect ratio.
pub fn crop_pixels(img: &DynamicImage, b: &BBox) -> RgbImage {
    let (w, h) = (img.width(), img.height());
    let x0 = (b.x1.floor().max(0.0) as u32).min(w.saturating_sub(1));
    let y0 = (b.y1.floor().max(0.0) as u32).min(h.saturating_sub(1));
    let x1 = (b.x2.ceil() as u32).clamp(x0 + 1, w.max(x0 + 1));
    let y1 = (b.y2.ceil() as u32).clamp(y0 + 1, h.max(y0 + 1));
    let region = img.crop_imm(x0, y0, x1 - x0, y1 - y0).to_rgb8();
    image::imageops::resize(&region, CROP_SIDE, CROP_SIDE, FilterType::Triangle)
}

pub fn png_base64(img: &RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

#[derive(Debug, Deserialize)]
struct Health {
    dim: usize,
    model: String,
}

#[derive(Debug, Serialize)]
struct TextRequest<'a> {
    texts: Vec<&'a str>,
}

#[derive(Debug, Serialize)]
struct ImageRequest {
    images_b64: Vec<String>,
    resize: u32,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding service speaking the protocol above.
pub struct HttpEmbeddingProvider {
    base: String,
    http: reqwest::blocking::Client,
    dim: usize,
    model: String,
    in_flight: Semaphore,
}

impl HttpEmbeddingProvider {
    /// Probes `/healthz` to learn the model name and dimension.
    pub fn connect(base: &str, max_in_flight: usize, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Provider(format!("cannot build HTTP client: {e}")))?;
        let base = base.trim_end_matches('/').to_string();
        let resp = http
            .get(format!("{base}/healthz"))
            .send()
            .map_err(|e| Error::Provider(format!("health check failed: {e}")))?;
        if !resp.status().is_success() {
            return Err(Error::Provider(format!(
                "health check returned status {}",
                resp.status().as_u16()
            )));
        }
        let health: Health = resp
            .json()
            .map_err(|e| Error::Decode(format!("health response: {e}")))?;
        if health.dim == 0 {
            return Err(Error::Provider("service reports dimension 0".into()));
        }
        Ok(HttpEmbeddingProvider {
            base,
            http,
            dim: health.dim,
            model: health.model,
            in_flight: Semaphore::new(max_in_flight),
        })
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn post<B: Serialize>(&self, route: &str, body: &B, expected: usize) -> Result<Vec<EmbeddingVector>> {
        let _permit = self.in_flight.acquire();
        let resp = self
            .http
            .post(format!("{}{route}", self.base))
            .json(body)
            .send()
            .map_err(|e| Error::Provider(format!("{route}: {e}")))?;
        let status = resp.status().as_u16();
        if status >= 400 {
            return Err(Error::Provider(format!("{route}: status {status}")));
        }
        let parsed: EmbedResponse = resp
            .json()
            .map_err(|e| Error::Decode(format!("{route}: {e}")))?;
        if parsed.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: parsed.dim,
            });
        }
        if parsed.vectors.len() != expected {
            return Err(Error::Provider(format!(
                "{route}: expected {expected} vectors, got {}",
                parsed.vectors.len()
            )));
        }
        parsed.vectors.into_iter().map(EmbeddingVector::new).collect()
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::HttpService
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn identity(&self) -> String {
        format!("http_service:{} (dim {})", self.model, self.dim)
    }

    fn embed_texts(&self, items: &[TextItem<'_>]) -> Result<Vec<EmbeddingVector>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(MAX_BATCH) {
            let body = TextRequest {
                texts: chunk.iter().map(|t| t.text).collect(),
            };
            out.extend(self.post("/v1/embed/text", &body, chunk.len())?);
        }
        Ok(out)
    }

    fn embed_crops(&self, image: &ImageSource, crops: &[CropSpec]) -> Result<Vec<EmbeddingVector>> {
        let img = image.pixels()?;
        let mut out = Vec::with_capacity(crops.len());
        for chunk in crops.chunks(MAX_BATCH) {
            let images_b64 = chunk
                .iter()
                .map(|c| png_base64(&crop_pixels(img, &c.bbox)))
                .collect::<Result<Vec<_>>>()?;
            let body = ImageRequest {
                images_b64,
                resize: CROP_SIDE,
            };
            out.extend(self.post("/v1/embed/image", &body, chunk.len())?);
        }
        Ok(out)
    }
}
