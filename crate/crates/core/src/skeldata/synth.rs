//! Seeded synthetic multi-entity actions.
//!
//! The class of a sample is the angular sector of the displacement from the
//! first entity's centroid to the second's. On top of that relative geometry,
//! the whole sample is dropped at an absolute position drawn around a
//! split-specific center, so raw coordinates carry a train/test shift and the
//! entities' pooled point distributions differ. Centering each entity on its
//! own center of mass removes the displacement, and with it the label.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::skeldata::{Dataset, Dims, SkeletonSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// training samples per class
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub channels: usize,
    pub frames: usize,
    pub joints: usize,
    pub entities: usize,
    /// Per-entity centers of the absolute offset distribution. `None` picks a
    /// split-dependent default shared by all entities.
    pub entity_offset_means: Option<OffsetMeans>,
    /// standard deviation of the per-sample absolute offset
    pub offset_spread: f64,
    pub relative_geometry_scale: f64,
    pub motion_noise: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffsetMeans {
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 4,
            samples_per_class: 500,
            test_samples_per_class: 125,
            channels: 2,
            frames: 8,
            joints: 5,
            entities: 2,
            entity_offset_means: None,
            offset_spread: 0.75,
            relative_geometry_scale: 1.0,
            motion_noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn dims(&self) -> Dims {
        Dims::new(self.channels, self.frames, self.joints, self.entities)
    }

    pub fn offset_means(&self) -> OffsetMeans {
        self.entity_offset_means.clone().unwrap_or_else(|| {
            let center =
                |xy: [f64; 2]| -> Vec<f64> { (0..self.channels).map(|c| if c < 2 { xy[c] } else { 0.0 }).collect() };
            OffsetMeans {
                train: vec![center([3.0, 1.5]); self.entities],
                test: vec![center([-2.0, 3.0]); self.entities],
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least 2 classes"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class", "must be at least 1"));
        }
        if self.test_samples_per_class == 0 {
            return Err(Error::config("test_samples_per_class", "must be at least 1"));
        }
        if !(2..=3).contains(&self.channels) {
            return Err(Error::config("channels", "must be 2 or 3"));
        }
        if self.frames == 0 || self.joints == 0 {
            return Err(Error::config("frames", "frames and joints must be at least 1"));
        }
        if self.entities < 2 {
            return Err(Error::config("entities", "relative geometry needs at least 2 entities"));
        }
        for (name, v) in [
            ("offset_spread", self.offset_spread),
            ("relative_geometry_scale", self.relative_geometry_scale),
            ("motion_noise", self.motion_noise),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        let means = self.offset_means();
        for (split, m) in [("train", &means.train), ("test", &means.test)] {
            if m.len() != self.entities {
                return Err(Error::config(
                    format!("entity_offset_means.{split}"),
                    format!("expected {} entities, got {}", self.entities, m.len()),
                ));
            }
            for (e, v) in m.iter().enumerate() {
                if v.len() != self.channels || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config(
                        format!("entity_offset_means.{split}[{e}]"),
                        format!("expected {} finite coordinates", self.channels),
                    ));
                }
            }
        }
        if means.train == means.test {
            return Err(Error::config("entity_offset_means", "train and test centers must differ"));
        }
        // relative offsets between entities must agree across splits, otherwise
        // the label-bearing displacement itself would shift
        for e in 1..self.entities {
            for c in 0..self.channels {
                let rel_train = means.train[e][c] - means.train[0][c];
                let rel_test = means.test[e][c] - means.test[0][c];
                if (rel_train - rel_test).abs() > 1e-12 {
                    return Err(Error::config(
                        format!("entity_offset_means.test[{e}][{c}]"),
                        "relative entity offsets must match between train and test",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes).map(|k| format!("direction-{k}")).collect()
    }
}

/// Generates `(train, test)`. Every sample's randomness derives from
/// `(seed, split, index)` alone, so output does not depend on thread count.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let means = cfg.offset_means();
    let train = generate_split(cfg, 0, cfg.samples_per_class, &means.train)?;
    let test = generate_split(cfg, 1, cfg.test_samples_per_class, &means.test)?;
    Ok((train, test))
}

fn generate_split(cfg: &SynthConfig, split: u64, per_class: usize, centers: &[Vec<f64>]) -> Result<Dataset> {
    let dims = cfg.dims();
    let n = per_class * cfg.num_classes;
    let samples = (0..n)
        .into_par_iter()
        .map(|i| generate_sample(cfg, dims, centers, derive_seed(cfg.seed, &[split, i as u64]), i % cfg.num_classes))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(dims, samples, cfg.class_names())?;
    ds.generator = Some(serde_json::to_value(cfg)?);
    ds.seed = Some(cfg.seed);
    Ok(ds)
}

/// Direction of the class sector center, in radians.
pub(crate) fn class_angle(class: usize, num_classes: usize) -> f64 {
    (class as f64 + 0.5) * 2.0 * PI / num_classes as f64
}

fn generate_sample(
    cfg: &SynthConfig,
    dims: Dims,
    centers: &[Vec<f64>],
    seed: u64,
    class: usize,
) -> Result<SkeletonSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_sector = PI / cfg.num_classes as f64;
    let angle = class_angle(class, cfg.num_classes) + rng.random_range(-0.6..0.6) * half_sector;
    let radius = cfg.relative_geometry_scale * 2f64.sqrt() * rng.random_range(0.8..1.2);
    let displacement = [radius * angle.cos(), radius * angle.sin()];

    let unit = Normal::new(0.0, 1.0).expect("valid");
    let global: Vec<f64> = (0..dims.c).map(|_| cfg.offset_spread * unit.sample(&mut rng)).collect();
    let phase = rng.random_range(0.0..2.0 * PI);

    let mut data = vec![0.0; dims.len()];
    for e in 0..dims.e {
        let frac = e as f64 / (dims.e - 1) as f64;
        let (dir, len) = body_axis(e, dims.e);
        for t in 0..dims.t {
            let swing = 0.15 * len * (2.0 * PI * t as f64 / dims.t as f64 + phase).sin();
            for j in 0..dims.j {
                let s = if dims.j > 1 { j as f64 / (dims.j - 1) as f64 - 0.5 } else { 0.0 };
                // joint along the body axis, bending perpendicular to it over time
                let bend = swing * (s + 0.5);
                let body = [s * len * dir[0] - bend * dir[1], s * len * dir[1] + bend * dir[0]];
                for c in 0..dims.c {
                    let planar = if c < 2 { displacement[c] * frac + body[c] } else { 0.0 };
                    let noise = cfg.motion_noise * unit.sample(&mut rng);
                    let v = centers[e][c] + global[c] + planar + noise;
                    // stored at f32 precision so files round-trip exactly
                    data[dims.offset(c, t, j, e)] = v as f32 as f64;
                }
            }
        }
    }
    SkeletonSequence::from_raw(dims, data, class)
}

/// Entities differ in body orientation and size so that the late-fusion
/// average can tell them apart.
fn body_axis(e: usize, entities: usize) -> ([f64; 2], f64) {
    let angle = PI / 2.0 + e as f64 * PI / 3.0;
    let len = 0.6 * (1.0 - 0.5 * e as f64 / (entities - 1).max(1) as f64);
    ([angle.cos(), angle.sin()], len)
}
