use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Value};

/// Fixed-coefficient shift on a tape: `p* = X softmax(W)`, `X_hat = X - p* 1^T`.
///
/// `x` is `C x U`, `w` is `U x 1`. Returns `(x_hat, p_star)`.
pub fn ichas_tape(tape: &mut Tape, x: Value, w: Value) -> Result<(Value, Value)> {
    let (sx, sw) = (tape.shape(x).to_vec(), tape.shape(w).to_vec());
    if sx.len() != 2 || sw != [sx[1], 1] {
        return Err(Error::Dimension(format!("shift expects X [C, U] and W [U, 1], got {sx:?} and {sw:?}")));
    }
    let alpha = tape.softmax(w, 0)?;
    let p_star = tape.matmul(x, alpha)?;
    let x_hat = tape.sub(x, p_star)?;
    Ok((x_hat, p_star))
}

/// Tensor-level convenience around [`ichas_tape`].
pub fn ichas_fixed(x: &Tensor, w: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let (x_hat, p_star) = ichas_tape(&mut tape, xv, wv)?;
    Ok((tape.value(x_hat).clone(), tape.value(p_star).clone()))
}

/// Closed-form Jacobian of the fixed-`W` shift with respect to one
/// coordinate row of `X`: `I - 1 softmax(W)^T`, a `U x U` matrix with entry
/// `(j, k)` equal to `d x_hat_j / d x_k`.
pub fn jacobian_fixed_w(w: &Tensor) -> Result<Tensor> {
    let u = w.len();
    if w.shape() != [u] && w.shape() != [u, 1] {
        return Err(Error::Dimension(format!("expected W of shape [U] or [U, 1], got {:?}", w.shape())));
    }
    let max = w.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = w.data().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut data = vec![0.0; u * u];
    for row in 0..u {
        for col in 0..u {
            let delta = if row == col { 1.0 } else { 0.0 };
            data[row * u + col] = delta - exps[col] / total;
        }
    }
    Tensor::new(vec![u, u], data)
}
