//! Implicit convex-hull constrained adaptive shift.
//!
//! For a sample with points `p_1..p_U` (columns of `X`, `C x U`) the shift
//! vector is `p* = X softmax(W)`. Softmax weights are strictly positive and
//! sum to one, so `p*` is a convex combination of the sample's own points and
//! the shifted sequence `X - p* 1^T` has its origin inside the open convex
//! hull of the skeleton. `W` is produced per sample by the coefficient
//! learning block in [`clb`].

mod clb;
mod ichas;
mod pairs;
mod params;

pub use clb::{
    chase_forward, chase_shift, clb_coefficients, clb_forward, ChaseOutput, ClbParams, ClbVars, ShiftCoefficients,
};
pub use ichas::{ichas_fixed, ichas_tape, jacobian_fixed_w};
pub use pairs::{all_pairs, sample_pairs, EntityPair};
pub use params::{check_block_dims, check_count_dims, flop_count, param_count, FlopReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeldata::Dims;

/// Number of segments along `(T, J, E)`; each segment gets its own shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub t_seg: usize,
    pub j_seg: usize,
    pub e_seg: usize,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        SegmentSpec { t_seg: 1, j_seg: 1, e_seg: 1 }
    }
}

impl SegmentSpec {
    pub fn new(t_seg: usize, j_seg: usize, e_seg: usize) -> Self {
        SegmentSpec { t_seg, j_seg, e_seg }
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.t_seg, self.j_seg, self.e_seg]
    }

    /// Total segment count `S = T' J' E'`.
    pub fn count(&self) -> usize {
        self.t_seg * self.j_seg * self.e_seg
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        for (name, seg, full) in
            [("seg.t", self.t_seg, dims.t), ("seg.j", self.j_seg, dims.j), ("seg.e", self.e_seg, dims.e)]
        {
            if seg == 0 || full % seg != 0 {
                return Err(Error::config(name, format!("segment count {seg} does not divide extent {full}")));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for SegmentSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::config("seg", format!("expected `t,j,e`, got `{s}`")))?;
        match parts.as_slice() {
            &[t, j, e] => Ok(SegmentSpec::new(t, j, e)),
            _ => Err(Error::config("seg", format!("expected three comma-separated counts, got `{s}`"))),
        }
    }
}
