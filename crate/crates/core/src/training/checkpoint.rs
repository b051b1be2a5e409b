//! Checkpoint container, little-endian throughout:
//!
//! ```text
//! magic     8 bytes "RATCKPT\0"
//! version   u32     1
//! config    u32 byte length, UTF-8 `key = value` lines (model then training keys)
//! step      u64     optimizer steps taken
//! cursor    u64 epoch, u64 batch index of the next batch
//! tensors   u32 count, then per tensor: u32 name length, name,
//!           u32 rank, rank × u32 dims, values as f64
//! moments   per tensor, in the same order: first moment, then second moment values
//! ```

use std::fs;
use std::path::Path;

use super::{BatchCursor, Moments, TrainConfig};
use crate::config::{apply_text, render};
use crate::model::{Model, ModelConfig, ParamStore, Variant};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RATCKPT\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub step: u64,
    pub cursor: BatchCursor,
    pub moments: Moments,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = render(&[&self.model.config, &self.train]);
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.cursor.epoch.to_le_bytes());
        out.extend_from_slice(&self.cursor.index.to_le_bytes());
        let params = &self.model.params;
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.names().iter().zip(params.tensors()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_values(&mut out, t.data());
        }
        for i in 0..params.len() {
            put_values(&mut out, &self.moments.m[i]);
            put_values(&mut out, &self.moments.v[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let mut model_cfg = ModelConfig::desk(0, Variant::Baseline, 0);
        let mut train = TrainConfig::desk();
        apply_text(text, &mut [&mut model_cfg, &mut train])?;
        let step = r.u64()?;
        let cursor = BatchCursor { epoch: r.u64()?, index: r.u64()? };
        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product();
            named.push((name, Tensor::new(shape, r.values(numel)?)?));
        }
        let params = ParamStore::from_named(named);
        let model = Model::from_params(model_cfg, params)?;
        let mut moments = Moments { m: Vec::new(), v: Vec::new() };
        for t in model.params.tensors() {
            moments.m.push(r.values(t.numel())?);
            moments.v.push(r.values(t.numel())?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { model, train, step, cursor, moments })
    }

    /// Write via a temporary file so an interrupted save never clobbers a good checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_values(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
