use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::chase::SegmentSpec;
use crate::error::{Error, Result};

/// How sequences are normalized before the backbone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    #[default]
    Vanilla,
    /// each entity to its own center of mass
    S2com,
    /// all entities by the sample's center of mass
    S2comGlobal,
    /// global centering plus per-channel scaling
    S2comGlobalStd,
    Batchnorm,
    /// random global translation at training time
    Aug,
    /// random entity order at training time
    Er,
    Chase,
}

impl Normalizer {
    pub const ALL: [Normalizer; 8] = [
        Normalizer::Vanilla,
        Normalizer::S2com,
        Normalizer::S2comGlobal,
        Normalizer::S2comGlobalStd,
        Normalizer::Batchnorm,
        Normalizer::Aug,
        Normalizer::Er,
        Normalizer::Chase,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Normalizer::Vanilla => "vanilla",
            Normalizer::S2com => "s2com",
            Normalizer::S2comGlobal => "s2com_global",
            Normalizer::S2comGlobalStd => "s2com_global_std",
            Normalizer::Batchnorm => "batchnorm",
            Normalizer::Aug => "aug",
            Normalizer::Er => "er",
            Normalizer::Chase => "chase",
        }
    }
}

impl std::fmt::Display for Normalizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Normalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Normalizer::ALL.into_iter().find(|n| n.name() == s).ok_or_else(|| {
            let names: Vec<_> = Normalizer::ALL.iter().map(|n| n.name()).collect();
            Error::config("normalizer", format!("unknown normalizer `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

/// Shared per-entity MLP over the flattened `(C, T, J)` input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneConfig {
    pub hidden_widths: Vec<usize>,
    pub feature_dim: usize,
    /// inferred from the training set when absent
    pub num_classes: Option<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig { hidden_widths: vec![64], feature_dim: 64, num_classes: None }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.hidden_widths.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("backbone.hidden_widths[{k}]"), "width must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("backbone.feature_dim", "must be positive"));
        }
        if self.num_classes == Some(0) {
            return Err(Error::config("backbone.num_classes", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClbConfig {
    pub c1: usize,
    pub c2: usize,
    pub seg: SegmentSpec,
}

impl Default for ClbConfig {
    fn default() -> Self {
        ClbConfig { c1: 16, c2: 4, seg: SegmentSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub decay_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// weight of the pair-wise MMD term
    pub lambda: f64,
    /// entity pairs sampled per batch
    #[serde(alias = "m")]
    pub pairs_per_batch: usize,
    pub points_per_entity: usize,
    pub seed: u64,
    pub normalizer: Normalizer,
    /// translation range for `aug`
    pub aug_range: f64,
    pub clb: ClbConfig,
    pub backbone: BackboneConfig,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            lr_decay_epochs: vec![20, 25],
            decay_rate: 0.1,
            epochs: 30,
            batch_size: 32,
            lambda: 0.1,
            pairs_per_batch: 1,
            points_per_entity: 256,
            seed: 0,
            normalizer: Normalizer::Vanilla,
            aug_range: 1.0,
            clb: ClbConfig::default(),
            backbone: BackboneConfig::default(),
            train_path: None,
            test_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("lr", self.lr)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        positive("decay_rate", self.decay_rate)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be finite and non-negative, got {}", self.lambda)));
        }
        if self.pairs_per_batch == 0 {
            return Err(Error::config("pairs_per_batch", "must be at least 1"));
        }
        if self.points_per_entity == 0 {
            return Err(Error::config("points_per_entity", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.normalizer == Normalizer::Batchnorm && self.batch_size < 2 {
            return Err(Error::config("batch_size", "batch normalization needs batches of at least 2"));
        }
        if !(self.aug_range >= 0.0 && self.aug_range.is_finite()) {
            return Err(Error::config("aug_range", "must be finite and non-negative"));
        }
        self.backbone.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr * self.decay_rate.powi(decays as i32)
    }
}
