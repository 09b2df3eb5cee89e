//! `GWEMB1` embedding cache files.
//!
//! Layout, all integers little-endian:
//!
//! | field   | size                                              |
//! |---------|---------------------------------------------------|
//! | magic   | 6 bytes, ASCII `GWEMB1`                            |
//! | version | u16, currently 1                                  |
//! | dim     | u32                                               |
//! | count   | u64                                               |
//! | records | `count` × { id_len: u16, id: UTF-8, dim × f32 }   |

use std::collections::HashMap;
use std::path::Path;

use crate::align::EmbeddingVector;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"GWEMB1";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 6 + 2 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    entries: Vec<(String, EmbeddingVector)>,
    index: HashMap<String, usize>,
}

impl EmbeddingCache {
    pub fn new(dim: usize, entries: Vec<(String, EmbeddingVector)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (id, v)) in entries.iter().enumerate() {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if id.len() > usize::from(u16::MAX) {
                return Err(Error::Cache(format!("id of {} bytes is too long", id.len())));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Cache(format!("duplicate id {id:?}")));
            }
        }
        Ok(EmbeddingCache {
            dim,
            entries,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, EmbeddingVector)] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.index.get(id).map(|&i| &self.entries[i].1)
    }

    pub fn lookup(&self, id: &str) -> Result<&EmbeddingVector> {
        self.get(id).ok_or_else(|| Error::CacheMiss(id.to_string()))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let dim32 = u32::try_from(self.dim)
            .map_err(|_| Error::Cache(format!("dimension {} too large", self.dim)))?;
        let mut out = Vec::with_capacity(HEADER_LEN + self.entries.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dim32.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (id, v) in &self.entries {
            let narrow = v.to_f32_exact().ok_or_else(|| {
                Error::Cache(format!(
                    "vector {id:?} has components that are not exactly representable as f32"
                ))
            })?;
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in narrow {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = |_| Error::Cache("truncated header".into());
        let magic = r.take(6).map_err(header)?;
        if magic != MAGIC {
            return Err(Error::Cache("bad magic (expected GWEMB1)".into()));
        }
        let version = r.u16().map_err(header)?;
        if version != VERSION {
            return Err(Error::Cache(format!("unsupported version {version}")));
        }
        let dim = r.u32().map_err(header)? as usize;
        let count = r.u64().map_err(header)?;
        if count > 0 && dim == 0 {
            return Err(Error::Cache("records present but dimension is 0".into()));
        }
        // each record needs at least 2 + 4*dim bytes
        let min_record = 2u64 + 4 * dim as u64;
        if count.saturating_mul(min_record) > (bytes.len() - HEADER_LEN) as u64 {
            return Err(Error::Cache(format!(
                "truncated record: header announces {count} records but the file is too short"
            )));
        }
        let mut entries = Vec::with_capacity(count as usize);
        for i in 0..count {
            let trunc = |_| Error::Cache(format!("truncated record {i} of {count}"));
            let id_len = r.u16().map_err(trunc)? as usize;
            let id = std::str::from_utf8(r.take(id_len).map_err(trunc)?)
                .map_err(|_| Error::Cache(format!("record {i}: id is not UTF-8")))?
                .to_string();
            let raw = r.take(4 * dim).map_err(trunc)?;
            let values: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let v = EmbeddingVector::from_f32(&values)
                .map_err(|e| Error::Cache(format!("record {i} ({id:?}): {e}")))?;
            entries.push((id, v));
        }
        if r.pos != bytes.len() {
            return Err(Error::Cache(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            )));
        }
        EmbeddingCache::new(dim, entries)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

struct Short;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], Short> {
        let end = self.pos.checked_add(n).ok_or(Short)?;
        let s = self.bytes.get(self.pos..end).ok_or(Short)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> std::result::Result<u16, Short> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> std::result::Result<u32, Short> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, Short> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Writes `entries` to `path`. The dimension is taken from the first entry;
/// an empty cache is written with dimension 0.
pub fn cache_write(path: &Path, entries: &[(String, EmbeddingVector)]) -> Result<()> {
    let dim = entries.first().map_or(0, |(_, v)| v.dim());
    EmbeddingCache::new(dim, entries.to_vec())?.write(path)
}

pub fn cache_read(path: &Path) -> Result<EmbeddingCache> {
    EmbeddingCache::read(path)
}
