use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chase::sample_pairs;
use crate::derive_seed;
use crate::discrepancy::Kernel;
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor};
use crate::skeldata::{corrupt, stack, CorruptionConfig, Dataset};
use crate::train::model::{total_loss, MmdSettings, Model};
use crate::train::optim::{sgd_step, SgdState};
use crate::train::{Normalizer, TrainConfig};

// stream tags for derive_seed
const SHUFFLE: u64 = 10;
const AUGMENT: u64 = 11;
const PAIRS: u64 = 12;
const SUBSAMPLE: u64 = 13;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub cls_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpmmd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_acc: Option<f64>,
}

/// Everything needed to continue training exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub opt: SgdState,
    /// completed epochs
    pub epoch: usize,
    /// completed optimizer steps
    pub step: u64,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainState> {
        let classes = ds.num_classes();
        if classes == 0 {
            return Err(Error::Usage("training set has no classes".into()));
        }
        Ok(TrainState { model: Model::init(cfg, ds.dims, classes)?, opt: SgdState::new(), epoch: 0, step: 0 })
    }
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { op } => Error::Diverged { epoch, message: format!("non-finite value in `{op}`") },
        other => other,
    }
}

struct EpochSums {
    loss: f64,
    cls: f64,
    mpmmd: f64,
    count: usize,
}

fn run_epoch(state: &mut TrainState, ds: &Dataset, cfg: &TrainConfig, epoch: usize) -> Result<EpochSums> {
    let lr = cfg.lr_at(epoch);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SHUFFLE, epoch as u64])));
    let entities = ds.dims.e;
    let use_pairs = state.model.normalizer == Normalizer::Chase && entities >= 2;
    let mut sums = EpochSums { loss: 0.0, cls: 0.0, mpmmd: 0.0, count: 0 };
    for chunk in order.chunks(cfg.batch_size) {
        if state.model.normalizer == Normalizer::Batchnorm && chunk.len() < 2 {
            continue;
        }
        let step = state.step;
        let (x, labels) = ds.batch(chunk);
        let x = state.model.prepare_train(&x, derive_seed(cfg.seed, &[AUGMENT, step]), cfg.aug_range)?;
        let mut tape = Tape::new();
        let fwd = state.model.forward(&mut tape, &x)?;
        let pairs = if use_pairs {
            sample_pairs(entities, cfg.pairs_per_batch, derive_seed(cfg.seed, &[PAIRS, step]))?
        } else {
            Vec::new()
        };
        let mmd = MmdSettings {
            points_per_entity: cfg.points_per_entity,
            seed: derive_seed(cfg.seed, &[SUBSAMPLE, step]),
            kernel: Kernel::Median,
        };
        let parts = total_loss(&mut tape, fwd.logits, &labels, fwd.x_hat, &pairs, cfg.lambda, mmd)?;
        let total = tape.value(parts.total).item();
        if !total.is_finite() {
            return Err(Error::NonFinite { op: "total_loss" });
        }
        tape.backward(parts.total)?;
        let grads: BTreeMap<String, Tensor> = fwd
            .params
            .iter()
            .map(|(name, &v)| {
                let g = tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (name.clone(), g)
            })
            .collect();
        sgd_step(&mut state.model.params, &grads, &mut state.opt, lr, cfg.momentum)?;
        state.step += 1;
        let n = chunk.len() as f64;
        sums.loss += n * total;
        sums.cls += n * tape.value(parts.cls).item();
        if let Some(m) = parts.mpmmd {
            sums.mpmmd += n * tape.value(m).item();
        }
        sums.count += chunk.len();
    }
    Ok(sums)
}

/// Trains from `state` (fresh or resumed) up to `cfg.epochs`, calling
/// `on_epoch` after every epoch. Every random draw derives from the seed and
/// the epoch or step counter, so a resumed run continues the uninterrupted
/// trajectory exactly.
pub fn train<F>(
    ds: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut state: TrainState,
    mut on_epoch: F,
) -> Result<TrainState>
where
    F: FnMut(&EpochMetrics, &TrainState) -> Result<()>,
{
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if ds.dims != state.model.dims {
        return Err(Error::config(
            "train_path",
            format!("dataset shape {:?} differs from model shape {:?}", ds.dims.shape(), state.model.dims.shape()),
        ));
    }
    if let Some(t) = test {
        if t.dims != ds.dims {
            return Err(Error::config("test_path", "test set shape differs from training set"));
        }
    }
    if state.model.normalizer != cfg.normalizer {
        return Err(Error::config("normalizer", "differs from the model being trained"));
    }
    for epoch in state.epoch..cfg.epochs {
        let sums = run_epoch(&mut state, ds, cfg, epoch).map_err(diverged(epoch))?;
        let denom = sums.count.max(1) as f64;
        let eval_acc = test.map(|t| evaluate(&state.model, t, None)).transpose().map_err(diverged(epoch))?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: sums.loss / denom,
            cls_loss: sums.cls / denom,
            mpmmd: (state.model.normalizer == Normalizer::Chase && ds.dims.e >= 2).then(|| sums.mpmmd / denom),
            eval_acc,
        };
        state.epoch = epoch + 1;
        on_epoch(&metrics, &state)?;
    }
    Ok(state)
}

/// Index of the largest logit per row, first on ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::Dimension(format!(
            "accuracy needs [N, K] logits for {} labels, got {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let hits = argmax_rows(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Top-1 accuracy on `ds`. A corruption, when given, is applied to sample `i`
/// with seed `derive_seed(corruption.seed, [i])`.
pub fn evaluate(model: &Model, ds: &Dataset, corruption: Option<&CorruptionConfig>) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Usage("evaluation set is empty".into()));
    }
    if let Some(c) = corruption {
        c.validate()?;
    }
    let indices: Vec<usize> = (0..ds.len()).collect();
    let hits = indices
        .par_chunks(256)
        .map(|chunk| -> Result<usize> {
            let samples = chunk
                .iter()
                .map(|&i| match corruption {
                    Some(c) => {
                        corrupt(&ds.samples[i], &CorruptionConfig { seed: derive_seed(c.seed, &[i as u64]), ..*c })
                    }
                    None => Ok(ds.samples[i].clone()),
                })
                .collect::<Result<Vec<_>>>()?;
            let (x, labels) = stack(samples.iter(), ds.dims);
            let logits = model.predict(&x)?;
            Ok(argmax_rows(&logits).iter().zip(&labels).filter(|(p, l)| p == l).count())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(hits as f64 / ds.len() as f64)
}

/// Accuracy under two noise levels and two masking levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionTable {
    pub clean: f64,
    /// `(sigma, accuracy)` with masking off
    pub noise: Vec<(f64, f64)>,
    /// `(mask probability, accuracy)` with noise off
    pub mask: Vec<(f64, f64)>,
}

pub const NOISE_LEVELS: [f64; 2] = [1e-3, 1e-2];
pub const MASK_LEVELS: [f64; 2] = [1e-2, 1e-1];

pub fn corruption_table(model: &Model, ds: &Dataset, seed: u64) -> Result<CorruptionTable> {
    let at = |noise_sigma: f64, mask_prob: f64| {
        evaluate(model, ds, Some(&CorruptionConfig { noise_sigma, mask_prob, seed }))
    };
    Ok(CorruptionTable {
        clean: evaluate(model, ds, None)?,
        noise: NOISE_LEVELS.iter().map(|&s| Ok((s, at(s, 0.0)?))).collect::<Result<_>>()?,
        mask: MASK_LEVELS.iter().map(|&p| Ok((p, at(0.0, p)?))).collect::<Result<_>>()?,
    })
}
