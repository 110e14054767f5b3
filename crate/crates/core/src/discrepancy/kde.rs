use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Points attributed to one entity, `n x C`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    points: Tensor,
}

impl SampleSet {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.rank() != 2 || points.shape()[1] == 0 {
            return Err(Error::Dimension(format!("sample set must be [n, C], got {:?}", points.shape())));
        }
        if points.shape()[0] < 2 {
            return Err(Error::Usage(format!("sample set needs at least 2 points, got {}", points.shape()[0])));
        }
        Ok(SampleSet { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension("ragged sample rows".into()));
        }
        SampleSet::new(Tensor::new(vec![rows.len(), c], rows.concat())?)
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.dim();
        &self.points.data()[i * c..(i + 1) * c]
    }

    /// Sample standard deviation per dimension.
    pub fn std(&self) -> Vec<f64> {
        let (n, c) = (self.len(), self.dim());
        (0..c)
            .map(|d| {
                let mean = (0..n).map(|i| self.row(i)[d]).sum::<f64>() / n as f64;
                let ss: f64 = (0..n).map(|i| (self.row(i)[d] - mean).powi(2)).sum();
                (ss / (n - 1) as f64).sqrt()
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Scott,
    Silverman,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdeConfig {
    pub bandwidth_rule: BandwidthRule,
    pub grid_points_per_dim: usize,
    /// padding beyond the data range, in bandwidths
    pub grid_padding: f64,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig { bandwidth_rule: BandwidthRule::Scott, grid_points_per_dim: 64, grid_padding: 3.0 }
    }
}

impl KdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points_per_dim < 16 {
            return Err(Error::config(
                "kde.grid_points_per_dim",
                format!("must be at least 16, got {}", self.grid_points_per_dim),
            ));
        }
        if !(self.grid_padding >= 0.0 && self.grid_padding.is_finite()) {
            return Err(Error::config("kde.grid_padding", "must be finite and non-negative"));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth_rule {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("kde.bandwidth_rule", format!("fixed bandwidth must be positive, got {h}")));
            }
        }
        Ok(())
    }

    /// Per-dimension bandwidths for `set`.
    pub fn bandwidths(&self, set: &SampleSet) -> Result<Vec<f64>> {
        let (n, d) = (set.len() as f64, set.dim() as f64);
        let factor = match self.bandwidth_rule {
            BandwidthRule::Fixed(h) => return Ok(vec![h; set.dim()]),
            BandwidthRule::Scott => n.powf(-1.0 / (d + 4.0)),
            BandwidthRule::Silverman => (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0)),
        };
        let std = set.std();
        if let Some(k) = std.iter().position(|&s| s < 1e-12) {
            return Err(Error::Degenerate(format!(
                "sample set has zero spread along dimension {k}; use a fixed bandwidth"
            )));
        }
        Ok(std.iter().map(|s| s * factor).collect())
    }
}

/// Regular grid of `points` cells per dimension; cell `k` along dimension
/// `d` spans `[lo_d + k step_d, lo_d + (k + 1) step_d)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub step: Vec<f64>,
    pub points: usize,
}

impl Grid {
    /// Bounding box of all sets, padded by `padding` times the largest
    /// bandwidth seen along each dimension.
    pub fn covering(sets: &[&SampleSet], bandwidths: &[Vec<f64>], padding: f64, points: usize) -> Result<Grid> {
        let c = sets.first().ok_or_else(|| Error::Usage("grid needs at least one set".into()))?.dim();
        if sets.iter().any(|s| s.dim() != c) {
            return Err(Error::Dimension("sample sets differ in dimension".into()));
        }
        let mut lo = vec![f64::INFINITY; c];
        let mut hi = vec![f64::NEG_INFINITY; c];
        for s in sets {
            for i in 0..s.len() {
                for (d, &v) in s.row(i).iter().enumerate() {
                    lo[d] = lo[d].min(v);
                    hi[d] = hi[d].max(v);
                }
            }
        }
        let mut step = vec![0.0; c];
        for d in 0..c {
            let h = bandwidths.iter().map(|b| b[d]).fold(0.0, f64::max);
            lo[d] -= padding * h;
            hi[d] += padding * h;
            if hi[d] <= lo[d] {
                return Err(Error::Degenerate(format!("empty grid extent along dimension {d}")));
            }
            step[d] = (hi[d] - lo[d]) / points as f64;
        }
        Ok(Grid { lo, step, points })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn cells(&self) -> usize {
        self.points.pow(self.dim() as u32)
    }
}

/// Probability masses on a shared support.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDist {
    /// `None` for plain probability vectors
    pub grid: Option<Grid>,
    pub mass: Vec<f64>,
}

impl DiscreteDist {
    /// Wraps a probability vector; entries must be non-negative and sum to 1.
    pub fn from_probs(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() || mass.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Usage("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!("probabilities sum to {total}, expected 1")));
        }
        Ok(DiscreteDist { grid: None, mass })
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub(crate) fn check_support(&self, other: &DiscreteDist) -> Result<()> {
        if self.grid != other.grid || self.mass.len() != other.mass.len() {
            return Err(Error::Usage("distributions are defined on different supports".into()));
        }
        Ok(())
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Gaussian-kernel density of `set` integrated exactly over each grid cell,
/// renormalized to total mass 1 over the grid.
pub fn kde_on_grid(set: &SampleSet, bandwidths: &[f64], grid: &Grid) -> Result<DiscreteDist> {
    let c = grid.dim();
    if set.dim() != c || bandwidths.len() != c {
        return Err(Error::Dimension(format!("set of dimension {} on a {c}-d grid", set.dim())));
    }
    let g = grid.points;
    let mut mass = vec![0.0; grid.cells()];
    let mut axis = vec![vec![0.0; g]; c];
    let mut cell = vec![0.0; grid.cells()];
    for i in 0..set.len() {
        let row = set.row(i);
        for d in 0..c {
            let (h, lo, step) = (bandwidths[d], grid.lo[d], grid.step[d]);
            let mut prev = normal_cdf((lo - row[d]) / h);
            for (k, slot) in axis[d].iter_mut().enumerate() {
                let next = normal_cdf((lo + (k + 1) as f64 * step - row[d]) / h);
                *slot = next - prev;
                prev = next;
            }
        }
        // separable outer product, last dimension fastest
        cell[..g].copy_from_slice(&axis[0]);
        let mut len = g;
        for a in &axis[1..] {
            for k in (0..len).rev() {
                let base = cell[k];
                for (m, &w) in a.iter().enumerate() {
                    cell[k * g + m] = base * w;
                }
            }
            len *= g;
        }
        for (acc, &v) in mass.iter_mut().zip(&cell[..len]) {
            *acc += v;
        }
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("no kernel mass falls on the grid".into()));
    }
    mass.iter_mut().for_each(|m| *m /= total);
    Ok(DiscreteDist { grid: Some(grid.clone()), mass })
}

/// Density of one set on a grid anchored to its own range.
pub fn kde_estimate(set: &SampleSet, cfg: &KdeConfig) -> Result<DiscreteDist> {
    cfg.validate()?;
    let h = cfg.bandwidths(set)?;
    let grid = Grid::covering(&[set], std::slice::from_ref(&h), cfg.grid_padding, cfg.grid_points_per_dim)?;
    kde_on_grid(set, &h, &grid)
}

/// Densities of two sets on the grid covering both.
pub fn kde_pair(a: &SampleSet, b: &SampleSet, cfg: &KdeConfig) -> Result<(DiscreteDist, DiscreteDist)> {
    cfg.validate()?;
    let (ha, hb) = (cfg.bandwidths(a)?, cfg.bandwidths(b)?);
    let grid = Grid::covering(&[a, b], &[ha.clone(), hb.clone()], cfg.grid_padding, cfg.grid_points_per_dim)?;
    Ok((kde_on_grid(a, &ha, &grid)?, kde_on_grid(b, &hb, &grid)?))
}
