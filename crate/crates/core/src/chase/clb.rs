//! Coefficient learning block and the batched shift it drives.
//!
//! `W = W3 relu(W2 pool(W1 X + b))`: a pointwise channel-affine map, block
//! mean pooling down to the segment grid, a reducing channel map, a rectifier
//! and an expanding map producing `U` raw coefficients per segment. Softmax
//! over the `U` axis, taken independently per segment column, turns them into
//! convex weights.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chase::{check_block_dims, SegmentSpec};
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Value};
use crate::skeldata::Dims;

#[derive(Clone, Debug, PartialEq)]
pub struct ClbParams {
    pub dims: Dims,
    pub c1: usize,
    pub c2: usize,
    pub seg: SegmentSpec,
    /// `C1 x C`
    pub w1: Tensor,
    /// `C1`
    pub b: Tensor,
    /// `C2 x C1`
    pub w2: Tensor,
    /// `U x C2`
    pub w3: Tensor,
}

impl ClbParams {
    /// He-uniform `W1` and `W2`, zero bias and `W3`. With `W3 = 0` every
    /// coefficient column is uniform, so training starts from the sample's
    /// center of mass over all `U` points, for every segment. `W2` must not
    /// start at zero as well: with both zero every gradient of the block
    /// vanishes.
    pub fn init(dims: Dims, c1: usize, c2: usize, seg: SegmentSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / dims.c as f64).sqrt();
        let w1 = (0..c1 * dims.c).map(|_| rng.random_range(-bound..bound)).collect();
        let bound2 = (6.0 / c1.max(1) as f64).sqrt();
        let w2 = (0..c2 * c1).map(|_| rng.random_range(-bound2..bound2)).collect();
        let params = ClbParams {
            dims,
            c1,
            c2,
            seg,
            w1: Tensor::new(vec![c1, dims.c], w1)?,
            b: Tensor::zeros(&[c1]),
            w2: Tensor::new(vec![c2, c1], w2)?,
            w3: Tensor::zeros(&[dims.points(), c2]),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        check_block_dims(self.dims, self.c1, self.c2, self.seg)?;
        let u = self.dims.points();
        for (name, t, shape) in [
            ("clb.w1", &self.w1, vec![self.c1, self.dims.c]),
            ("clb.b", &self.b, vec![self.c1]),
            ("clb.w2", &self.w2, vec![self.c2, self.c1]),
            ("clb.w3", &self.w3, vec![u, self.c2]),
        ] {
            if t.shape() != shape.as_slice() {
                return Err(Error::config(name, format!("expected shape {shape:?}, got {:?}", t.shape())));
            }
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        vec![
            ("clb.w1".into(), self.w1.clone()),
            ("clb.b".into(), self.b.clone()),
            ("clb.w2".into(), self.w2.clone()),
            ("clb.w3".into(), self.w3.clone()),
        ]
    }

    /// Rebuilds from named tensors; `C1` and `C2` are read off the shapes.
    pub fn from_named(dims: Dims, seg: SegmentSpec, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let get = |name: &str| tensors.get(name).cloned().ok_or_else(|| Error::config(name, "missing tensor"));
        let w1 = get("clb.w1")?;
        let w2 = get("clb.w2")?;
        let (c1, c2) = (w1.shape()[0], w2.shape()[0]);
        let params = ClbParams { dims, c1, c2, seg, w1, b: get("clb.b")?, w2, w3: get("clb.w3")? };
        params.validate()?;
        Ok(params)
    }

    /// Records the parameters as trainable leaves.
    pub fn on_tape(&self, tape: &mut Tape) -> ClbVars {
        ClbVars {
            w1: tape.param(self.w1.clone()),
            b: tape.param(self.b.clone()),
            w2: tape.param(self.w2.clone()),
            w3: tape.param(self.w3.clone()),
        }
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b.len() + self.w2.len() + self.w3.len()
    }
}

/// Tape handles of the block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct ClbVars {
    pub w1: Value,
    pub b: Value,
    pub w2: Value,
    pub w3: Value,
}

impl ClbVars {
    pub fn all(&self) -> [Value; 4] {
        [self.w1, self.b, self.w2, self.w3]
    }
}

/// Raw coefficients and their softmax, both `U x S`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftCoefficients {
    pub w: Tensor,
    pub alpha_tilde: Tensor,
}

fn batch_shape(tape: &Tape, x: Value, dims: Dims) -> Result<usize> {
    let s = tape.shape(x);
    if s.len() != 5 || s[1..] != dims.shape() {
        return Err(Error::Dimension(format!(
            "expected (N, {}, {}, {}, {}) input, got {s:?}",
            dims.c, dims.t, dims.j, dims.e
        )));
    }
    Ok(s[0])
}

/// Raw coefficients `W` of shape `(N, U, S)` for a batch `(N, C, T, J, E)`.
pub fn clb_coefficients(tape: &mut Tape, x: Value, vars: &ClbVars, params: &ClbParams) -> Result<Value> {
    let dims = params.dims;
    let n = batch_shape(tape, x, dims)?;
    let (u, s) = (dims.points(), params.seg.count());
    let flat = tape.reshape(x, &[n, dims.c, u])?;
    let lifted = tape.matmul(vars.w1, flat)?;
    let bias = tape.reshape(vars.b, &[params.c1, 1])?;
    let lifted = tape.add(lifted, bias)?;
    let grid = tape.reshape(lifted, &[n, params.c1, dims.t, dims.j, dims.e])?;
    let pooled = tape.segment_mean_pool(grid, params.seg.as_array())?;
    let pooled = tape.reshape(pooled, &[n, params.c1, s])?;
    let squeezed = tape.matmul(vars.w2, pooled)?;
    let gated = tape.relu(squeezed)?;
    tape.matmul(vars.w3, gated)
}

/// Handles produced by [`chase_shift`].
#[derive(Clone, Copy, Debug)]
pub struct ChaseOutput {
    /// shifted batch `(N, C, T, J, E)`
    pub x_hat: Value,
    /// raw coefficients `(N, U, S)`
    pub w: Value,
    /// convex weights `(N, U, S)`
    pub alpha: Value,
    /// per-segment shift vectors `(N, C, S)`
    pub p_star: Value,
}

/// Full shift of a batch: coefficients, per-segment convex combination of all
/// `U` points, broadcast of each segment's vector over its block, subtraction.
pub fn chase_shift(tape: &mut Tape, x: Value, vars: &ClbVars, params: &ClbParams) -> Result<ChaseOutput> {
    params.seg.validate(params.dims)?;
    let dims = params.dims;
    let n = batch_shape(tape, x, dims)?;
    let w = clb_coefficients(tape, x, vars, params)?;
    let alpha = tape.softmax(w, 1)?;
    let flat = tape.reshape(x, &[n, dims.c, dims.points()])?;
    let p_star = tape.matmul(flat, alpha)?;
    let seg = params.seg;
    let cells = tape.reshape(p_star, &[n, dims.c, seg.t_seg, seg.j_seg, seg.e_seg])?;
    let spread = tape.segment_broadcast(cells, [dims.t, dims.j, dims.e])?;
    let x_hat = tape.sub(x, spread)?;
    Ok(ChaseOutput { x_hat, w, alpha, p_star })
}

/// Coefficients for a single `(C, T, J, E)` sequence.
pub fn clb_forward(x: &Tensor, params: &ClbParams) -> Result<ShiftCoefficients> {
    params.validate()?;
    let d = params.dims;
    let mut tape = Tape::new();
    let xv = tape.constant(
        x.reshape(&[1, d.c, d.t, d.j, d.e])
            .map_err(|_| Error::Dimension(format!("expected {:?} sequence, got {:?}", d.shape(), x.shape())))?,
    );
    let vars = params.on_tape(&mut tape);
    let w = clb_coefficients(&mut tape, xv, &vars, params)?;
    let alpha = tape.softmax(w, 1)?;
    let shape = [d.points(), params.seg.count()];
    Ok(ShiftCoefficients { w: tape.value(w).reshape(&shape)?, alpha_tilde: tape.value(alpha).reshape(&shape)? })
}

/// Shifts a `(N, C, T, J, E)` batch with frozen parameters.
pub fn chase_forward(x: &Tensor, params: &ClbParams) -> Result<Tensor> {
    params.validate()?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = params.on_tape(&mut tape);
    let out = chase_shift(&mut tape, xv, &vars, params)?;
    Ok(tape.value(out.x_hat).clone())
}
