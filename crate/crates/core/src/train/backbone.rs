use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Value};
use crate::skeldata::Dims;
use crate::train::BackboneConfig;

fn layer_widths(cfg: &BackboneConfig) -> Vec<usize> {
    cfg.hidden_widths.iter().copied().chain([cfg.feature_dim]).collect()
}

fn classes(cfg: &BackboneConfig) -> Result<usize> {
    cfg.num_classes.ok_or_else(|| Error::config("backbone.num_classes", "not resolved"))
}

/// Fresh backbone parameters: He-uniform extractor layers, a uniform
/// `1/sqrt(fan_in)` head, zero biases.
pub fn backbone_init(cfg: &BackboneConfig, dims: Dims, seed: u64) -> Result<BTreeMap<String, Tensor>> {
    cfg.validate()?;
    let k = classes(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |shape: [usize; 2], bound: f64| {
        let data = (0..shape[0] * shape[1]).map(|_| rng.random_range(-bound..bound)).collect();
        Tensor::new(shape.to_vec(), data)
    };
    let mut out = BTreeMap::new();
    let mut fan_in = dims.c * dims.t * dims.j;
    for (l, &w) in layer_widths(cfg).iter().enumerate() {
        out.insert(format!("backbone.layer{l}.w"), uniform([fan_in, w], (6.0 / fan_in as f64).sqrt())?);
        out.insert(format!("backbone.layer{l}.b"), Tensor::zeros(&[w]));
        fan_in = w;
    }
    out.insert("backbone.head.w".into(), uniform([fan_in, k], 1.0 / (fan_in as f64).sqrt())?);
    out.insert("backbone.head.b".into(), Tensor::zeros(&[k]));
    Ok(out)
}

/// Late fusion: every entity's `(C, T, J)` slice goes through the same MLP,
/// features are averaged over entities, and a linear head gives `(N, K)`
/// logits.
pub fn backbone_forward(
    tape: &mut Tape,
    x: Value,
    params: &BTreeMap<String, Value>,
    cfg: &BackboneConfig,
) -> Result<Value> {
    let s = tape.shape(x).to_vec();
    if s.len() != 5 {
        return Err(Error::Dimension(format!("backbone expects (N, C, T, J, E), got {s:?}")));
    }
    let (n, e, flat) = (s[0], s[4], s[1] * s[2] * s[3]);
    let get =
        |name: String| params.get(&name).copied().ok_or_else(|| Error::config(name, "missing backbone parameter"));
    let per_entity = tape.permute(x, &[0, 4, 1, 2, 3])?;
    let mut h = tape.reshape(per_entity, &[n * e, flat])?;
    for l in 0..layer_widths(cfg).len() {
        let w = get(format!("backbone.layer{l}.w"))?;
        if tape.shape(w)[0] != tape.shape(h)[1] {
            return Err(Error::Dimension(format!(
                "layer {l} expects {} inputs, got {}",
                tape.shape(w)[0],
                tape.shape(h)[1]
            )));
        }
        let b = get(format!("backbone.layer{l}.b"))?;
        let z = tape.matmul(h, w)?;
        let z = tape.add(z, b)?;
        h = tape.relu(z)?;
    }
    let f = tape.shape(h)[1];
    let grouped = tape.reshape(h, &[n, e, f])?;
    let pooled = tape.mean_axis(grouped, 1)?;
    let logits = tape.matmul(pooled, get("backbone.head.w".into())?)?;
    tape.add(logits, get("backbone.head.b".into())?)
}
