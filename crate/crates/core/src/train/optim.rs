use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// SGD with Nesterov momentum:
/// `v <- mu v + g`, `p <- p - lr (g + mu v)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SgdState {
    pub velocity: BTreeMap<String, Tensor>,
}

impl SgdState {
    pub fn new() -> Self {
        SgdState::default()
    }
}

/// Updates every entry of `params` in place. Each parameter needs a gradient
/// of the same shape.
pub fn sgd_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    for (name, p) in params.iter() {
        match grads.get(name) {
            Some(g) if g.shape() == p.shape() => {}
            Some(g) => {
                return Err(Error::Dimension(format!(
                    "gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )))
            }
            None => return Err(Error::Usage(format!("no gradient for parameter `{name}`"))),
        }
    }
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let v = state.velocity.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
        let mut vd = v.data().to_vec();
        let mut pd = p.data().to_vec();
        for ((vi, pi), gi) in vd.iter_mut().zip(pd.iter_mut()).zip(g.data()) {
            *vi = momentum * *vi + gi;
            *pi -= lr * (gi + momentum * *vi);
        }
        *v = Tensor::new(g.shape().to_vec(), vd).map_err(|_| Error::NonFinite { op: "sgd_step" })?;
        *p = Tensor::new(g.shape().to_vec(), pd).map_err(|_| Error::NonFinite { op: "sgd_step" })?;
    }
    Ok(())
}
