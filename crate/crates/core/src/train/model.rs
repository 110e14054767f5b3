use std::collections::BTreeMap;

use crate::chase::{chase_shift, ClbParams, ClbVars, EntityPair};
use crate::derive_seed;
use crate::discrepancy::{mpmmd_loss, Kernel};
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Value};
use crate::skeldata::{
    augment_entity_permute, augment_random_shift, s2com_global, s2com_per_entity, stack, std_scale, unstack, BatchNorm,
    Dims, SkeletonSequence,
};
use crate::train::backbone::{backbone_forward, backbone_init};
use crate::train::{BackboneConfig, ClbConfig, Normalizer, TrainConfig};

/// Backbone plus whatever state the normalizer needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: Dims,
    pub normalizer: Normalizer,
    /// with `num_classes` resolved
    pub backbone: BackboneConfig,
    pub clb: Option<ClbConfig>,
    /// trainable tensors: `backbone.*` and, for chase, `clb.*`
    pub params: BTreeMap<String, Tensor>,
    pub bn: Option<BatchNorm>,
}

/// Tape handles from one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Value,
    /// input to the backbone after any learned shift
    pub x_hat: Value,
    pub params: BTreeMap<String, Value>,
}

fn map_batch(x: &Tensor, f: impl Fn(usize, &SkeletonSequence) -> Result<SkeletonSequence>) -> Result<Tensor> {
    let n = x.shape()[0];
    let seqs = unstack(x, &vec![0; n])?;
    let mapped = seqs.iter().enumerate().map(|(i, s)| f(i, s)).collect::<Result<Vec<_>>>()?;
    let s = x.shape();
    Ok(stack(mapped.iter(), Dims::new(s[1], s[2], s[3], s[4])).0)
}

impl Model {
    pub fn init(cfg: &TrainConfig, dims: Dims, num_classes: usize) -> Result<Model> {
        cfg.validate()?;
        dims.validate()?;
        let mut backbone = cfg.backbone.clone();
        match backbone.num_classes {
            Some(k) if k != num_classes => {
                return Err(Error::config(
                    "backbone.num_classes",
                    format!("configured {k} classes but the dataset has {num_classes}"),
                ))
            }
            _ => backbone.num_classes = Some(num_classes),
        }
        let mut params = backbone_init(&backbone, dims, derive_seed(cfg.seed, &[0]))?;
        let clb = (cfg.normalizer == Normalizer::Chase).then_some(cfg.clb);
        if let Some(c) = clb {
            let p = ClbParams::init(dims, c.c1, c.c2, c.seg, derive_seed(cfg.seed, &[1]))?;
            params.extend(p.named_tensors());
        }
        Ok(Model {
            dims,
            normalizer: cfg.normalizer,
            backbone,
            clb,
            params,
            bn: (cfg.normalizer == Normalizer::Batchnorm).then(|| BatchNorm::new(dims.c)),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.backbone.num_classes.unwrap_or(0)
    }

    pub fn clb_params(&self) -> Result<Option<ClbParams>> {
        self.clb.map(|c| ClbParams::from_named(self.dims, c.seg, &self.params)).transpose()
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 5 || s[1..] != self.dims.shape() {
            return Err(Error::Dimension(format!(
                "model expects (N, {}, {}, {}, {}), got {s:?}",
                self.dims.c, self.dims.t, self.dims.j, self.dims.e
            )));
        }
        Ok(())
    }

    /// Non-learned preprocessing in evaluation mode.
    pub fn prepare_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        match self.normalizer {
            Normalizer::Vanilla | Normalizer::Aug | Normalizer::Er | Normalizer::Chase => Ok(x.clone()),
            Normalizer::S2com => map_batch(x, |_, s| s2com_per_entity(s)),
            Normalizer::S2comGlobal => map_batch(x, |_, s| s2com_global(s)),
            Normalizer::S2comGlobalStd => map_batch(x, |_, s| std_scale(s)),
            Normalizer::Batchnorm => self
                .bn
                .as_ref()
                .ok_or_else(|| Error::Usage("batch normalization statistics missing".into()))?
                .forward_eval(x),
        }
    }

    /// Training-mode preprocessing; augmentations draw from `seed`, and batch
    /// normalization updates its running statistics.
    pub fn prepare_train(&mut self, x: &Tensor, seed: u64, aug_range: f64) -> Result<Tensor> {
        self.check_batch(x)?;
        match self.normalizer {
            Normalizer::Aug => map_batch(x, |i, s| augment_random_shift(s, aug_range, derive_seed(seed, &[i as u64]))),
            Normalizer::Er => map_batch(x, |i, s| augment_entity_permute(s, derive_seed(seed, &[i as u64]))),
            Normalizer::Batchnorm => self
                .bn
                .as_mut()
                .ok_or_else(|| Error::Usage("batch normalization statistics missing".into()))?
                .forward_train(x),
            _ => self.prepare_eval(x),
        }
    }

    /// Records all parameters as leaves, applies the learned shift if any,
    /// and runs the backbone on an already prepared batch.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Forward> {
        self.check_batch(x)?;
        let params: BTreeMap<String, Value> =
            self.params.iter().map(|(k, v)| (k.clone(), tape.param(v.clone()))).collect();
        let xv = tape.constant(x.clone());
        let x_hat = match self.clb_params()? {
            Some(p) => {
                let vars =
                    ClbVars { w1: params["clb.w1"], b: params["clb.b"], w2: params["clb.w2"], w3: params["clb.w3"] };
                chase_shift(tape, xv, &vars, &p)?.x_hat
            }
            None => xv,
        };
        let logits = backbone_forward(tape, x_hat, &params, &self.backbone)?;
        Ok(Forward { logits, x_hat, params })
    }

    /// Logits for a raw batch in evaluation mode.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let prepared = self.prepare_eval(x)?;
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, &prepared)?;
        Ok(tape.value(f.logits).clone())
    }

    /// The batch as the backbone sees it in evaluation mode.
    pub fn normalize_eval(&self, x: &Tensor) -> Result<Tensor> {
        let prepared = self.prepare_eval(x)?;
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, &prepared)?;
        Ok(tape.value(f.x_hat).clone())
    }
}

/// Settings of the pair-wise MMD term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdSettings {
    pub points_per_entity: usize,
    pub seed: u64,
    pub kernel: Kernel,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Value,
    pub cls: Value,
    pub mpmmd: Option<Value>,
}

/// `cross_entropy + lambda * mpmmd`. With no pairs, or `lambda = 0`, the
/// total is the classification loss node itself.
pub fn total_loss(
    tape: &mut Tape,
    logits: Value,
    labels: &[usize],
    x_hat: Value,
    pairs: &[EntityPair],
    lambda: f64,
    mmd: MmdSettings,
) -> Result<LossParts> {
    if !(lambda >= 0.0) {
        return Err(Error::config("lambda", format!("must be non-negative, got {lambda}")));
    }
    let cls = tape.cross_entropy(logits, labels)?;
    if pairs.is_empty() {
        return Ok(LossParts { total: cls, cls, mpmmd: None });
    }
    let m = mpmmd_loss(tape, x_hat, pairs, mmd.points_per_entity, mmd.seed, mmd.kernel)?;
    let total = if lambda == 0.0 {
        cls
    } else {
        let weighted = tape.scale(m, lambda)?;
        tape.add(cls, weighted)?
    };
    Ok(LossParts { total, cls, mpmmd: Some(m) })
}
