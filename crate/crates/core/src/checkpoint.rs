//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//! `"MGCK"`, `u32` version, `u32` byte length + UTF-8 config text, `u64`
//! iteration, `u32` blob count, then per blob: `u32` name length + UTF-8
//! name, `u32` rank, `rank x u32` extents, `f32` values.

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MGCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Fully resolved configuration the state belongs to.
    pub config: String,
    pub iteration: u64,
    /// Named tensors in write order.
    pub blobs: IndexMap<String, Tensor<f32>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Ingestion(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Ingestion("checkpoint string is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn new(config: String, iteration: u64) -> Self {
        Checkpoint {
            config,
            iteration,
            blobs: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.blobs.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.blobs
            .get(name)
            .ok_or_else(|| Error::Ingestion(format!("checkpoint has no tensor named {name:?}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Ingestion("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Ingestion(format!(
                "checkpoint version {version} is not supported (expected {VERSION})"
            )));
        }
        let config = r.string()?;
        let iteration = r.u64()?;
        let count = r.u32()? as usize;
        let mut blobs = IndexMap::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Ingestion("blob too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(&shape, data).map_err(|e| Error::Ingestion(format!("blob {name}: {e}")))?;
            blobs.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(Error::Ingestion("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            config,
            iteration,
            blobs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Ingestion(m) => Error::Ingestion(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
