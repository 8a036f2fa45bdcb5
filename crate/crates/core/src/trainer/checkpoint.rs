//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "DGLFRMCK" | u32 version | u64 len, config JSON
//! | u64 nodes | u64 inputs | u64 step | u32 param count
//! | per param: u32 len, name | u32 ndim | u64 dims.. | f64 values..
//! | SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DGLFRMCK";
const DIGEST_LEN: usize = 32;

/// Trained parameters together with the configuration that produced them.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Optimizer steps taken before these parameters were stored.
    pub step: u64,
    pub model: Model,
}

impl Checkpoint {
    /// Errors unless the stored model has the given architecture.
    pub fn ensure_matches(&self, expected: &ModelConfig) -> Result<()> {
        let stored = &self.config.model;
        if stored != expected {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has variant {} with k={}, expected variant {} with k={} ({})",
                stored.variant,
                stored.k,
                expected.variant,
                expected.k,
                diff_fields(stored, expected)
            )));
        }
        Ok(())
    }

    /// Errors unless the checkpoint was trained on a graph of this size and
    /// input width.
    pub fn ensure_graph(&self, n_nodes: usize, d_in: usize) -> Result<()> {
        if self.model.n_nodes() != n_nodes || self.model.d_in() != d_in {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint expects {} nodes with {} inputs, graph has {} nodes with {}",
                self.model.n_nodes(),
                self.model.d_in(),
                n_nodes,
                d_in
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let cfg = serde_json::to_string(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        for x in [self.model.n_nodes() as u64, self.model.d_in() as u64, self.step] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Corrupt("missing checkpoint header".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        if bytes.len() < 12 + DIGEST_LEN {
            return Err(Error::Corrupt("file is truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt("checksum mismatch (truncated or modified file)".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let cfg_len = r.u64()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|e| Error::Corrupt(format!("config text: {e}")))?;
        let config: TrainConfig =
            serde_json::from_str(cfg_text).map_err(|e| Error::Corrupt(format!("config text: {e}")))?;
        let n_nodes = r.u64()? as usize;
        let d_in = r.u64()? as usize;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        // Parameter values are all overwritten below; the init RNG only
        // fixes shapes and order.
        let mut model = Model::new(config.model.clone(), n_nodes, d_in, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| Error::Corrupt(format!("stored config is invalid: {e}")))?;
        if count != model.params().len() {
            return Err(Error::Corrupt(format!(
                "{count} parameters stored, configuration defines {}",
                model.params().len()
            )));
        }
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Corrupt(format!("parameter name: {e}")))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let value = Tensor::new(shape, data).map_err(|e| Error::Corrupt(e.to_string()))?;
            model
                .set_param(&name, value)
                .map_err(|e| Error::Corrupt(e.to_string()))?;
        }
        if r.pos != body.len() {
            return Err(Error::Corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { config, step, model })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Corrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn diff_fields(a: &ModelConfig, b: &ModelConfig) -> String {
    let (ja, jb) = (serde_json::to_value(a).expect("serializes"), serde_json::to_value(b).expect("serializes"));
    let (Some(ma), Some(mb)) = (ja.as_object(), jb.as_object()) else {
        return String::new();
    };
    let fields: Vec<&str> = ma
        .iter()
        .filter(|(k, v)| mb.get(*k) != Some(v))
        .map(|(k, _)| k.as_str())
        .collect();
    format!("differing fields: {}", fields.join(", "))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
