use serde::Serialize;

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Value};

/// Gradients smaller than this in magnitude are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// flat index of the worst coordinate
    pub worst_index: usize,
    pub eps: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Value) -> Result<Value>,
{
    grad_check_with(f, x, eps, tol, |g| g)
}

/// Like [`grad_check`] but passes the analytic gradient through `tamper`
/// before comparing. Used to exercise the failure path of the checker.
pub fn grad_check_with<F, G>(f: F, x: &Tensor, eps: f64, tol: f64, tamper: G) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Value) -> Result<Value>,
    G: FnOnce(Vec<f64>) -> Vec<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Usage(format!("eps must be positive, got {eps}")));
    }
    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let out = f(&mut tape, leaf)?;
    tape.backward(out)?;
    let analytic = tamper(tape.grad(leaf).map(Tensor::into_data).unwrap_or_else(|| vec![0.0; x.len()]));

    let eval = |data: Vec<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(Tensor::new(x.shape().to_vec(), data)?);
        let y = f(&mut t, v)?;
        Ok(t.value(y).item())
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst_index: 0, eps, tol, passed: true };
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        plus[i] += eps;
        let mut minus = x.data().to_vec();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}

/// Views `shape.product()` consecutive elements of a flat value starting at
/// `offset`. Lets one packed leaf stand for several parameters.
pub fn slice(tape: &mut Tape, flat: Value, offset: usize, shape: &[usize]) -> Result<Value> {
    let n: usize = shape.iter().product();
    tape.gather(flat, (offset..offset + n).collect(), shape)
}
