//! Non-learned origin and scale normalizers used as baselines.

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::skeldata::{Dims, SkeletonSequence};

/// Moves each entity's origin to its own spatiotemporal center of mass.
/// Inter-entity offsets are lost.
pub fn s2com_per_entity(x: &SkeletonSequence) -> Result<SkeletonSequence> {
    let d = x.dims();
    let src = x.data();
    let mut out = src.to_vec();
    let n = (d.t * d.j) as f64;
    for c in 0..d.c {
        for e in 0..d.e {
            let mut mean = 0.0;
            for t in 0..d.t {
                for j in 0..d.j {
                    mean += src[d.offset(c, t, j, e)];
                }
            }
            mean /= n;
            for t in 0..d.t {
                for j in 0..d.j {
                    out[d.offset(c, t, j, e)] -= mean;
                }
            }
        }
    }
    x.with_data(out)
}

/// Moves the origin to the center of mass over all frames, joints and entities.
pub fn s2com_global(x: &SkeletonSequence) -> Result<SkeletonSequence> {
    let d = x.dims();
    let u = d.points();
    let out = x
        .data()
        .chunks(u)
        .flat_map(|channel| {
            let mean = channel.iter().sum::<f64>() / u as f64;
            channel.iter().map(move |v| v - mean)
        })
        .collect();
    x.with_data(out)
}

/// Global centering followed by division by the per-channel (population)
/// standard deviation.
pub fn std_scale(x: &SkeletonSequence) -> Result<SkeletonSequence> {
    let centered = s2com_global(x)?;
    let u = x.dims().points();
    let mut out = centered.data().to_vec();
    for (c, channel) in out.chunks_mut(u).enumerate() {
        let std = (channel.iter().map(|v| v * v).sum::<f64>() / u as f64).sqrt();
        if std < 1e-12 {
            return Err(Error::Degenerate(format!("channel {c} has zero standard deviation")));
        }
        channel.iter_mut().for_each(|v| *v /= std);
    }
    centered.with_data(out)
}

/// Per-channel batch standardization over `(batch, T, J, E)` without an
/// affine part, with running statistics for evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm { running_mean: vec![0.0; channels], running_var: vec![1.0; channels], momentum: 0.1, eps: 1e-5 }
    }

    /// Normalizes an `(N, C, T, J, E)` batch with its own statistics and
    /// folds them into the running estimates (unbiased variance).
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<Tensor> {
        let (n, dims) = batch_dims(batch)?;
        if n < 2 {
            return Err(Error::Usage(format!(
                "batch normalization in training mode needs at least 2 samples, got {n}"
            )));
        }
        let count = (n * dims.points()) as f64;
        let mut out = batch.data().to_vec();
        for c in 0..dims.c {
            let values = || channel_values(batch.data(), n, dims, c);
            let mean = values().sum::<f64>() / count;
            let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
            let denom = (var + self.eps).sqrt();
            for_channel_mut(&mut out, n, dims, c, |v| (v - mean) / denom);
            let unbiased = var * count / (count - 1.0);
            self.running_mean[c] = (1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean;
            self.running_var[c] = (1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased;
        }
        Tensor::new(batch.shape().to_vec(), out)
    }

    /// Normalizes with the stored running statistics only.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<Tensor> {
        let (n, dims) = batch_dims(batch)?;
        if dims.c != self.running_mean.len() {
            return Err(Error::Dimension(format!(
                "batch has {} channels, statistics have {}",
                dims.c,
                self.running_mean.len()
            )));
        }
        let mut out = batch.data().to_vec();
        for c in 0..dims.c {
            let (mean, denom) = (self.running_mean[c], (self.running_var[c] + self.eps).sqrt());
            for_channel_mut(&mut out, n, dims, c, |v| (v - mean) / denom);
        }
        Tensor::new(batch.shape().to_vec(), out)
    }
}

fn batch_dims(batch: &Tensor) -> Result<(usize, Dims)> {
    let s = batch.shape();
    if s.len() != 5 {
        return Err(Error::Dimension(format!("expected (N, C, T, J, E) batch, got {s:?}")));
    }
    Ok((s[0], Dims::new(s[1], s[2], s[3], s[4])))
}

fn channel_values(data: &[f64], n: usize, dims: Dims, c: usize) -> impl Iterator<Item = f64> + '_ {
    let u = dims.points();
    (0..n).flat_map(move |i| data[(i * dims.c + c) * u..][..u].iter().copied())
}

fn for_channel_mut(data: &mut [f64], n: usize, dims: Dims, c: usize, f: impl Fn(f64) -> f64) {
    let u = dims.points();
    for i in 0..n {
        data[(i * dims.c + c) * u..][..u].iter_mut().for_each(|v| *v = f(*v));
    }
}
