//! `PRCK` binary checkpoints.
//!
//! Layout: magic `PRCK`, version u32 = 1, tensor count u32, then per
//! tensor `{name_len u16, name, rank u32, dims u32 x rank, f32 LE values}`.
//! Architecture choices that do not show in tensor shapes are stored as
//! one-element `meta.*` tensors.

use std::path::Path;

use super::backbone::BackboneConfig;
use super::head::{HeadConfig, HeadKind};
use super::network::{ModelConfig, Network};
use super::pool::PoolMode;
use super::real::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PRCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.bytes.len() as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    fn scalar(&self, name: &str) -> Option<f32> {
        self.get(name).and_then(|t| t.values.first().copied())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let n: usize = t.shape.iter().product();
            if n != t.values.len() {
                return Err(Error::Shape(format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.values.len())));
            }
            let name_len = u16::try_from(t.name.len()).map_err(|_| Error::Argument(format!("tensor name too long: {}", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected PRCK"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::format(at as u64 + 2, "tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::format(r.pos as u64, format!("tensor {name} declares an impossible size")))?;
            let raw = r.take(4 * n, "values")?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after last tensor"));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Architecture recovered from tensor names, shapes and `meta.*` entries.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let need = |name: &str| self.get(name).ok_or_else(|| Error::Format {
            offset: 0,
            message: format!("checkpoint has no tensor {name}"),
        });
        let stem = need("backbone.stem.conv.weight")?;
        let mut stage_channels = Vec::new();
        while let Some(t) = self.get(&format!("backbone.stage{}.conv.weight", stage_channels.len())) {
            stage_channels.push(t.shape[0]);
        }
        let mut blocks_per_stage = 1;
        while self.get(&format!("backbone.stage0.block{blocks_per_stage}.conv.weight")).is_some() {
            blocks_per_stage += 1;
        }
        let pool_code = self.scalar("meta.pool_mode").unwrap_or(PoolMode::Gem.code() as f32);
        let pool = PoolMode::from_code(pool_code as u8)
            .ok_or_else(|| Error::format(0, format!("unknown pool mode code {pool_code}")))?;
        let classifier = need("head.classifier.weight")?;
        let (kind, embed_dim) = if let Some(r) = self.get("head.reduce.weight") {
            (HeadKind::Reduction, r.shape[0])
        } else if self.get("head.bn.weight").is_some() {
            (HeadKind::Bn, HeadConfig::default().embed_dim)
        } else {
            (HeadKind::Linear, HeadConfig::default().embed_dim)
        };
        Ok(ModelConfig {
            backbone: BackboneConfig {
                in_channels: stem.shape.get(1).copied().unwrap_or(0),
                stage_channels,
                blocks_per_stage,
            },
            pool,
            gem_p: self.scalar("gem.p").map_or(super::pool::DEFAULT_GEM_P, f64::from),
            head: HeadConfig {
                kind,
                embed_dim,
                num_classes: classifier.shape[0],
                dropout_p: self.scalar("meta.dropout_p").map_or(HeadConfig::default().dropout_p, f64::from),
            },
        })
    }
}

impl<T: Real> Network<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        self.clone().visit(&mut |name, t, _| {
            tensors.push(NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.f64() as f32).collect(),
            })
        });
        let meta = |name: &str, v: f32| NamedTensor {
            name: name.into(),
            shape: vec![1],
            values: vec![v],
        };
        tensors.push(meta("meta.pool_mode", self.config().pool.code() as f32));
        tensors.push(meta("meta.dropout_p", self.config().head.dropout_p as f32));
        Checkpoint { tensors }
    }

    /// Copies every tensor of this network's architecture from `ck`.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        self.visit(&mut |name, t, _| match ck.get(name) {
            None => missing.push(name.to_string()),
            Some(src) if src.shape != t.shape() => {
                mismatched.push(format!("{name} (checkpoint {:?}, model {:?})", src.shape, t.shape()))
            }
            Some(src) => {
                for (d, &s) in t.data_mut().iter_mut().zip(&src.values) {
                    *d = T::of(s as f64);
                }
            }
        });
        if !missing.is_empty() || !mismatched.is_empty() {
            let mut msg = String::from("checkpoint does not match the model");
            if !missing.is_empty() {
                msg += &format!("; missing tensors: {}", missing.join(", "));
            }
            if !mismatched.is_empty() {
                msg += &format!("; shape mismatches: {}", mismatched.join(", "));
            }
            return Err(Error::Config(msg));
        }
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = ck.model_config()?;
        let mut net = Network::new(&cfg, 0)?;
        net.load_checkpoint(ck)?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
