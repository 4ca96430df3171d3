//! `PREM` embedding stores.
//!
//! Layout: magic `PREM`, version u32 = 1, dim u32, count u32, then per
//! record `{id_len u16, id UTF-8, f32 x dim}`, all little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PREM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self { id: id.into(), vector }
    }
}

/// Records with unique ids and one shared dimension, in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingStore {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.vector.len() != dim {
                return Err(Error::format(
                    0,
                    format!("record `{}` has dim {}, store dim is {dim}", r.id, r.vector.len()),
                ));
            }
            if r.id.len() > u16::MAX as usize {
                return Err(Error::format(0, format!("id of {} bytes is too long", r.id.len())));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::format(0, format!("duplicate id `{}`", r.id)));
            }
        }
        Ok(Self { dim, records, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.records.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.id.len() as u16).to_le_bytes());
            out.extend_from_slice(r.id.as_bytes());
            for v in &r.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<(usize, &[u8])> {
            if bytes.len() - pos < n {
                return Err(Error::format(bytes.len() as u64, format!("truncated while reading {what}")));
            }
            let at = pos;
            pos += n;
            Ok((at, &bytes[at..at + n]))
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let (_, magic) = take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {magic:?}, expected PREM")));
        }
        let (at, v) = take(4, "version")?;
        let version = u32_at(v);
        if version != VERSION {
            return Err(Error::format(at as u64, format!("unsupported version {version}")));
        }
        let dim = u32_at(take(4, "dim")?.1) as usize;
        let count = u32_at(take(4, "count")?.1) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2, "id length")?.1.try_into().unwrap()) as usize;
            let (at, raw) = take(len, "id")?;
            let id = std::str::from_utf8(raw)
                .map_err(|_| Error::format(at as u64, "id is not UTF-8"))?
                .to_string();
            let (_, raw) = take(4 * dim, "vector")?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(EmbeddingRecord { id, vector });
        }
        if pos != bytes.len() {
            return Err(Error::format(pos as u64, "trailing bytes after last record"));
        }
        let mut store = Self::new(records)?;
        store.dim = dim;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn save_embeddings(records: &[EmbeddingRecord], path: impl AsRef<Path>) -> Result<()> {
    EmbeddingStore::new(records.to_vec())?.save(path)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    Ok(EmbeddingStore::load(path)?.into_records())
}
