//! `.chck` checkpoint files.
//!
//! ```text
//! "CHCK" | u16 version | u16 reserved | u32 meta length | meta JSON
//! u32 tensor count, then per tensor:
//!   u16 name length | name (UTF-8) | u32 rank | u32 extents | f64 values
//! ```
//!
//! All integers and floats are little-endian. Parameter tensors keep their
//! names (`backbone.*`, `clb.*`); optimizer velocities are stored as
//! `opt.v.<name>` and batch-norm statistics as `bn.running_mean` and
//! `bn.running_var`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::skeldata::{BatchNorm, Dims};
use crate::train::model::Model;
use crate::train::optim::SgdState;
use crate::train::run::TrainState;
use crate::train::{Normalizer, TrainConfig};

pub const CHCK_MAGIC: &[u8; 4] = b"CHCK";
pub const CHCK_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub config: TrainConfig,
    pub dims: Dims,
    pub num_classes: usize,
    pub classes: Vec<String>,
    pub epoch: usize,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: BTreeMap<String, Tensor>,
}

const VELOCITY: &str = "opt.v.";
const BN_MEAN: &str = "bn.running_mean";
const BN_VAR: &str = "bn.running_var";

impl Checkpoint {
    pub fn from_state(state: &TrainState, cfg: &TrainConfig, classes: &[String]) -> Checkpoint {
        let m = &state.model;
        let mut tensors = m.params.clone();
        for (k, v) in &state.opt.velocity {
            tensors.insert(format!("{VELOCITY}{k}"), v.clone());
        }
        if let Some(bn) = &m.bn {
            let vec = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).expect("finite statistics");
            tensors.insert(BN_MEAN.into(), vec(&bn.running_mean));
            tensors.insert(BN_VAR.into(), vec(&bn.running_var));
        }
        let mut config = cfg.clone();
        config.backbone = m.backbone.clone();
        Checkpoint {
            meta: CheckpointMeta {
                version: CHCK_VERSION as u32,
                config,
                dims: m.dims,
                num_classes: m.num_classes(),
                classes: classes.to_vec(),
                epoch: state.epoch,
                step: state.step,
            },
            tensors,
        }
    }

    /// Rebuilds the training state. Shapes are checked against a freshly
    /// initialized model of the recorded configuration.
    pub fn to_state(&self) -> Result<TrainState> {
        let meta = &self.meta;
        let mut model = Model::init(&meta.config, meta.dims, meta.num_classes)?;
        let mut velocity = BTreeMap::new();
        for (name, t) in &self.tensors {
            if let Some(p) = name.strip_prefix(VELOCITY) {
                velocity.insert(p.to_string(), t.clone());
            }
        }
        for (name, slot) in model.params.iter_mut() {
            let t = self.tensors.get(name).ok_or_else(|| Error::invalid(name.clone(), "missing from checkpoint"))?;
            if t.shape() != slot.shape() {
                return Err(Error::invalid(
                    name.clone(),
                    format!("checkpoint shape {:?}, model expects {:?}", t.shape(), slot.shape()),
                ));
            }
            *slot = t.clone();
            if let Some(v) = velocity.get(name) {
                if v.shape() != t.shape() {
                    return Err(Error::invalid(format!("{VELOCITY}{name}"), "shape differs from parameter"));
                }
            }
        }
        if let Some(extra) = velocity.keys().find(|k| !model.params.contains_key(*k)) {
            return Err(Error::invalid(format!("{VELOCITY}{extra}"), "velocity without parameter"));
        }
        if meta.config.normalizer == Normalizer::Batchnorm {
            let get = |n: &str| -> Result<Vec<f64>> {
                let t = self.tensors.get(n).ok_or_else(|| Error::invalid(n, "missing from checkpoint"))?;
                if t.shape() != [meta.dims.c] {
                    return Err(Error::invalid(n, format!("expected {} channels", meta.dims.c)));
                }
                Ok(t.data().to_vec())
            };
            let mut bn = BatchNorm::new(meta.dims.c);
            bn.running_mean = get(BN_MEAN)?;
            bn.running_var = get(BN_VAR)?;
            model.bn = Some(bn);
        }
        Ok(TrainState { model, opt: SgdState { velocity }, epoch: meta.epoch, step: meta.step })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(CHCK_MAGIC);
        buf.extend_from_slice(&CHCK_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u16.to_le_bytes());
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
        let mut r = Cursor { buf, pos: 0 };
        if r.take(4, "magic")? != CHCK_MAGIC {
            return Err(Error::Format { offset: 0, message: "bad magic, expected \"CHCK\"".into() });
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != CHCK_VERSION {
            return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
        }
        r.take(2, "reserved")?;
        let meta_len = r.u32("meta length")? as usize;
        let meta_at = r.pos;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "meta")?)
            .map_err(|e| Error::Format { offset: meta_at as u64, message: format!("meta: {e}") })?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let at = r.pos;
            let len = u16::from_le_bytes(r.array("name length")?) as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Format { offset: at as u64, message: "tensor name is not UTF-8".into() })?
                .to_string();
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank).map(|_| r.u32("extent").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data: Vec<f64> = r
                .take(n * 8, "tensor data")?
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Format { offset: at as u64, message: format!("tensor `{name}`: {e}") })?;
            tensors.insert(name, t);
        }
        if r.pos != buf.len() {
            return Err(Error::Format { offset: r.pos as u64, message: "trailing bytes".into() });
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!("truncated while reading {what} at offset {}", self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}
