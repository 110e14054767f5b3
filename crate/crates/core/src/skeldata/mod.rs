//! Skeleton sequences, datasets and the transforms applied to them before
//! any learned component sees the data.

mod augment;
mod bones;
mod io;
mod normalize;
mod synth;

pub use augment::{augment_entity_permute, augment_random_shift, corrupt, CorruptionConfig};
pub use bones::{khop_bones, GraphPrior};
pub use io::{load_dataset, manifest_path, save_dataset, DatasetManifest, CHSK_MAGIC, CHSK_VERSION, HEADER_LEN};
pub use normalize::{s2com_global, s2com_per_entity, std_scale, BatchNorm};
pub use synth::{synth_generate, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Extents of a sequence: channels, frames, joints, entities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub c: usize,
    pub t: usize,
    pub j: usize,
    pub e: usize,
}

impl Dims {
    pub fn new(c: usize, t: usize, j: usize, e: usize) -> Self {
        Dims { c, t, j, e }
    }

    /// Number of points `T * J * E`.
    pub fn points(&self) -> usize {
        self.t * self.j * self.e
    }

    pub fn len(&self) -> usize {
        self.c * self.points()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c, self.t, self.j, self.e]
    }

    pub fn offset(&self, c: usize, t: usize, j: usize, e: usize) -> usize {
        ((c * self.t + t) * self.j + j) * self.e + e
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.c) {
            return Err(Error::invalid("dims.c", format!("channel count must be 2 or 3, got {}", self.c)));
        }
        for (name, v) in [("dims.t", self.t), ("dims.j", self.j), ("dims.e", self.e)] {
            if v == 0 {
                return Err(Error::invalid(name, "extent must be at least 1"));
            }
        }
        Ok(())
    }
}

/// One multi-entity action: coordinates laid out `(C, T, J, E)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    coords: Tensor,
    pub label: usize,
    pub valid_frames: usize,
}

impl SkeletonSequence {
    pub fn new(coords: Tensor, label: usize) -> Result<Self> {
        let valid_frames = coords.shape().get(1).copied().unwrap_or(0);
        let seq = SkeletonSequence { coords, label, valid_frames };
        validate(&seq)?;
        Ok(seq)
    }

    /// Builds from raw row-major data, reporting the first bad coordinate by
    /// its `(c, t, j, e)` path.
    pub fn from_raw(dims: Dims, data: Vec<f64>, label: usize) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::invalid(
                "coords",
                format!("expected {} values for {:?}, got {}", dims.len(), dims.shape(), data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(coord_path(dims, pos), format!("non-finite value {}", data[pos])));
        }
        SkeletonSequence::new(Tensor::new(dims.shape().to_vec(), data)?, label)
    }

    pub fn with_valid_frames(mut self, valid_frames: usize) -> Result<Self> {
        self.valid_frames = valid_frames;
        validate(&self)?;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        let s = self.coords.shape();
        Dims::new(s[0], s[1], s[2], s[3])
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn data(&self) -> &[f64] {
        self.coords.data()
    }

    pub fn at(&self, c: usize, t: usize, j: usize, e: usize) -> f64 {
        self.coords.data()[self.dims().offset(c, t, j, e)]
    }

    /// Same label and frame count, new coordinates of identical shape.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        let mut out = SkeletonSequence::from_raw(self.dims(), data, self.label)?;
        out.valid_frames = self.valid_frames;
        Ok(out)
    }

    /// Point `(t, j, e)` as a `C`-vector.
    pub fn point(&self, t: usize, j: usize, e: usize) -> Vec<f64> {
        let d = self.dims();
        (0..d.c).map(|c| self.data()[d.offset(c, t, j, e)]).collect()
    }
}

fn coord_path(dims: Dims, pos: usize) -> String {
    let e = pos % dims.e;
    let j = (pos / dims.e) % dims.j;
    let t = (pos / (dims.e * dims.j)) % dims.t;
    let c = pos / dims.points();
    format!("coords[{c},{t},{j},{e}]")
}

/// Checks every invariant of a sequence.
pub fn validate(x: &SkeletonSequence) -> Result<()> {
    let shape = x.coords.shape();
    if shape.len() != 4 {
        return Err(Error::invalid("coords", format!("expected rank 4 (C, T, J, E), got {shape:?}")));
    }
    let dims = Dims::new(shape[0], shape[1], shape[2], shape[3]);
    dims.validate()?;
    if let Some(pos) = x.coords.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(coord_path(dims, pos), "non-finite value"));
    }
    if x.valid_frames > dims.t {
        return Err(Error::invalid("valid_frames", format!("{} exceeds frame count {}", x.valid_frames, dims.t)));
    }
    Ok(())
}

/// A labelled collection of equally shaped sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: Dims,
    pub samples: Vec<SkeletonSequence>,
    pub classes: Vec<String>,
    /// generator configuration echo, if synthetic
    pub generator: Option<serde_json::Value>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(dims: Dims, samples: Vec<SkeletonSequence>, classes: Vec<String>) -> Result<Self> {
        dims.validate()?;
        for (i, s) in samples.iter().enumerate() {
            if s.dims() != dims {
                return Err(Error::invalid(
                    format!("samples[{i}]"),
                    format!("shape {:?} differs from dataset shape {:?}", s.dims().shape(), dims.shape()),
                ));
            }
            if !classes.is_empty() && s.label >= classes.len() {
                return Err(Error::invalid(
                    format!("samples[{i}].label"),
                    format!("label {} out of range for {} classes", s.label, classes.len()),
                ));
            }
        }
        Ok(Dataset { dims, samples, classes, generator: None, seed: None })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        if self.classes.is_empty() {
            self.samples.iter().map(|s| s.label + 1).max().unwrap_or(0)
        } else {
            self.classes.len()
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Stacks the selected samples into an `(N, C, T, J, E)` tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        stack(indices.iter().map(|&i| &self.samples[i]), self.dims)
    }

    /// Applies `f` to every sample, keeping metadata.
    pub fn map_samples(&self, f: impl Fn(usize, &SkeletonSequence) -> Result<SkeletonSequence>) -> Result<Self> {
        let samples = self.samples.iter().enumerate().map(|(i, s)| f(i, s)).collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples, ..self.clone() })
    }
}

/// Stacks sequences of shape `dims` into `(N, C, T, J, E)`.
pub fn stack<'a>(samples: impl Iterator<Item = &'a SkeletonSequence>, dims: Dims) -> (Tensor, Vec<usize>) {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        data.extend_from_slice(s.data());
        labels.push(s.label);
    }
    let n = labels.len();
    let shape = vec![n, dims.c, dims.t, dims.j, dims.e];
    (Tensor::from_parts(shape, data), labels)
}

/// Splits an `(N, C, T, J, E)` tensor back into sequences.
pub fn unstack(batch: &Tensor, labels: &[usize]) -> Result<Vec<SkeletonSequence>> {
    let s = batch.shape();
    if s.len() != 5 || s[0] != labels.len() {
        return Err(Error::Dimension(format!("expected (N, C, T, J, E) batch, got {s:?}")));
    }
    let dims = Dims::new(s[1], s[2], s[3], s[4]);
    let per = dims.len();
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| SkeletonSequence::from_raw(dims, batch.data()[i * per..(i + 1) * per].to_vec(), l))
        .collect()
}
