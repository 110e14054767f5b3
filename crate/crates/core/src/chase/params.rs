use serde::Serialize;

use crate::chase::SegmentSpec;
use crate::error::{Error, Result};
use crate::skeldata::Dims;

/// Shape constraints of the coefficient block: valid dims and segment grid,
/// and `U >= C1 > C2 >= 1`.
pub fn check_block_dims(dims: Dims, c1: usize, c2: usize, seg: SegmentSpec) -> Result<()> {
    dims.validate()?;
    seg.validate(dims)?;
    let u = dims.points();
    if c2 == 0 || c1 <= c2 || c1 > u {
        return Err(Error::config("clb.c1", format!("need U >= C1 > C2 >= 1, got U={u}, C1={c1}, C2={c2}")));
    }
    Ok(())
}

/// What counting needs: every extent and width at least 1 and a segment grid
/// that divides the sequence. Looser than [`check_block_dims`], so degenerate
/// shapes can still be accounted for.
pub fn check_count_dims(dims: Dims, c1: usize, c2: usize, seg: SegmentSpec) -> Result<()> {
    for (name, v) in [("c", dims.c), ("t", dims.t), ("j", dims.j), ("e", dims.e), ("c1", c1), ("c2", c2)] {
        if v == 0 {
            return Err(Error::config(name, "must be at least 1"));
        }
    }
    seg.validate(dims)
}

/// Trainable parameters of the coefficient block: `W1`, `b`, `W2`, `W3`.
pub fn param_count(dims: Dims, c1: usize, c2: usize) -> usize {
    c1 * dims.c + c1 + c2 * c1 + dims.points() * c2
}

/// Per-stage floating point operation estimate for one sample, counting a
/// multiply-accumulate as two operations and `exp`, add and divide as one
/// each inside the softmax.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub conv1: u64,
    pub pool: u64,
    pub conv2: u64,
    pub relu: u64,
    pub conv3: u64,
    pub softmax: u64,
    pub shift_vector: u64,
    pub subtract: u64,
    pub total: u64,
    pub convention: &'static str,
}

pub fn flop_count(dims: Dims, c1: usize, c2: usize, seg: SegmentSpec) -> FlopReport {
    let (c, u, s) = (dims.c as u64, dims.points() as u64, seg.count() as u64);
    let (c1, c2) = (c1 as u64, c2 as u64);
    let conv1 = 2 * c1 * c * u + c1 * u;
    let pool = c1 * u + c1 * s;
    let conv2 = 2 * c2 * c1 * s;
    let relu = c2 * s;
    let conv3 = 2 * u * c2 * s;
    let softmax = 3 * u * s;
    let shift_vector = 2 * c * u * s;
    let subtract = c * u;
    FlopReport {
        conv1,
        pool,
        conv2,
        relu,
        conv3,
        softmax,
        shift_vector,
        subtract,
        total: conv1 + pool + conv2 + relu + conv3 + softmax + shift_vector + subtract,
        convention: "MAC2",
    }
}
