//! Finite-difference gate over every differentiable operation and the full
//! training objective.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::chase::{all_pairs, chase_shift, ClbParams, ClbVars, SegmentSpec};
use crate::discrepancy::{median_bandwidth, mmd_sq, mpmmd_loss, Kernel};
use crate::error::{Error, Result};
use crate::numcore::{grad_check_with, slice, GradCheckReport, Tape, Tensor, Value};
use crate::skeldata::Dims;
use crate::train::backbone::{backbone_forward, backbone_init};
use crate::train::model::{total_loss, MmdSettings};
use crate::train::BackboneConfig;

/// Names of the checks in the order they run.
pub const GATE_OPS: [&str; 25] = [
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "exp",
    "matmul",
    "matmul_batched",
    "softmax",
    "sum",
    "mean",
    "sum_axis",
    "mean_axis",
    "reshape",
    "gather",
    "permute",
    "segment_mean_pool",
    "segment_broadcast",
    "cross_entropy",
    "sq_dist",
    "mmd_sq",
    "mpmmd",
    "chase_shift",
    "backbone",
    "end_to_end",
];

#[derive(Clone, Debug, Serialize)]
pub struct GateCheck {
    pub op: String,
    #[serde(flatten)]
    pub report: GradCheckReport,
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite")
}

/// Keeps every entry at least `gap` away from zero, clear of kinks.
fn away_from_zero(t: Tensor, gap: f64) -> Tensor {
    t.map(|v| if v.abs() < gap { v.signum() * gap + v } else { v }).expect("finite")
}

/// `sum(y * probe)` with a fixed random probe, so that every output
/// coordinate contributes with a different weight.
fn probe_sum(tape: &mut Tape, y: Value, seed: u64) -> Result<Value> {
    let probe = tape.constant(random(tape.shape(y), seed));
    let p = tape.mul(y, probe)?;
    tape.sum(p)
}

type Objective = Box<dyn Fn(&mut Tape, Value) -> Result<Value>>;

fn end_to_end() -> Result<(Objective, Tensor)> {
    let dims = Dims::new(2, 4, 3, 2);
    let seg = SegmentSpec::new(2, 1, 1);
    let backbone = BackboneConfig { hidden_widths: vec![6], feature_dim: 5, num_classes: Some(3) };
    // random values everywhere, so no parameter sits at its zero init
    let mut shapes: BTreeMap<String, Vec<usize>> =
        backbone_init(&backbone, dims, 0)?.into_iter().map(|(k, v)| (k, v.shape().to_vec())).collect();
    let clb = ClbParams::init(dims, 4, 2, seg, 0)?;
    shapes.extend(clb.named_tensors().into_iter().map(|(k, v)| (k, v.shape().to_vec())));
    let total: usize = shapes.values().map(|s| s.iter().product::<usize>()).sum();
    let packed = random(&[total], 101).map(|v| 0.8 * v)?;

    let x = random(&[2, 2, 4, 3, 2], 102).map(|v| 2.0 * v)?;
    let labels = vec![1, 2];

    // the trainer holds the median width fixed within a step; use its value here
    let unpack = move |tape: &mut Tape, flat: Value, shapes: &BTreeMap<String, Vec<usize>>| {
        let mut offset = 0;
        let mut vals = BTreeMap::new();
        for (name, shape) in shapes {
            vals.insert(name.clone(), slice(tape, flat, offset, shape)?);
            offset += shape.iter().product::<usize>();
        }
        Ok::<_, Error>(vals)
    };
    let shift = move |tape: &mut Tape, vals: &BTreeMap<String, Value>, clb: &ClbParams, x: &Tensor| {
        let vars = ClbVars { w1: vals["clb.w1"], b: vals["clb.b"], w2: vals["clb.w2"], w3: vals["clb.w3"] };
        let xv = tape.constant(x.clone());
        Ok::<_, Error>(chase_shift(tape, xv, &vars, clb)?.x_hat)
    };
    let sigma = {
        let mut tape = Tape::new();
        let flat = tape.constant(packed.clone());
        let vals = unpack(&mut tape, flat, &shapes)?;
        let x_hat = shift(&mut tape, &vals, &clb, &x)?;
        let h = tape.value(x_hat);
        let rows = |e: usize| {
            let mut out = Vec::new();
            for n in 0..2 {
                for t in 0..4 {
                    for j in 0..3 {
                        for c in 0..2 {
                            out.push(h.get(&[n, c, t, j, e]));
                        }
                    }
                }
            }
            Tensor::new(vec![24, 2], out).expect("finite")
        };
        median_bandwidth(&rows(0), &rows(1))
    };
    let f = move |tape: &mut Tape, flat: Value| {
        let vals = unpack(tape, flat, &shapes)?;
        let x_hat = shift(tape, &vals, &clb, &x)?;
        let logits = backbone_forward(tape, x_hat, &vals, &backbone)?;
        let mmd = MmdSettings { points_per_entity: 256, seed: 0, kernel: Kernel::Fixed(sigma) };
        Ok(total_loss(tape, logits, &labels, x_hat, &all_pairs(2), 0.1, mmd)?.total)
    };
    Ok((Box::new(f), packed))
}

fn objective(op: &str) -> Result<(Objective, Tensor)> {
    let f: Objective = match op {
        "add" | "sub" | "mul" => {
            let other = random(&[2, 3, 4], 1);
            let op = op.to_string();
            Box::new(move |tape, v| {
                let b = tape.constant(other.clone());
                let y = match op.as_str() {
                    "add" => tape.add(b, v)?,
                    "sub" => tape.sub(b, v)?,
                    _ => tape.mul(b, v)?,
                };
                probe_sum(tape, y, 2)
            })
        }
        "scale" => Box::new(|tape, v| {
            let y = tape.scale(v, -1.7)?;
            probe_sum(tape, y, 3)
        }),
        "relu" => Box::new(|tape, v| {
            let y = tape.relu(v)?;
            probe_sum(tape, y, 4)
        }),
        "exp" => Box::new(|tape, v| {
            let y = tape.exp(v)?;
            probe_sum(tape, y, 5)
        }),
        "matmul" => Box::new(|tape, v| {
            let b = tape.constant(random(&[3, 5], 6));
            let y = tape.matmul(v, b)?;
            probe_sum(tape, y, 7)
        }),
        "matmul_batched" => Box::new(|tape, v| {
            let a = tape.constant(random(&[4, 3], 8));
            let y = tape.matmul(a, v)?;
            probe_sum(tape, y, 9)
        }),
        "softmax" => Box::new(|tape, v| {
            let y = tape.softmax(v, 1)?;
            probe_sum(tape, y, 10)
        }),
        "sum" => Box::new(|tape, v| {
            let sq = tape.mul(v, v)?;
            tape.sum(sq)
        }),
        "mean" => Box::new(|tape, v| {
            let sq = tape.mul(v, v)?;
            tape.mean(sq)
        }),
        "sum_axis" => Box::new(|tape, v| {
            let y = tape.sum_axis(v, 1)?;
            let sq = tape.mul(y, y)?;
            probe_sum(tape, sq, 11)
        }),
        "mean_axis" => Box::new(|tape, v| {
            let y = tape.mean_axis(v, 2)?;
            let sq = tape.mul(y, y)?;
            probe_sum(tape, sq, 12)
        }),
        "reshape" => Box::new(|tape, v| {
            let y = tape.reshape(v, &[4, 6])?;
            let sq = tape.mul(y, y)?;
            probe_sum(tape, sq, 13)
        }),
        "gather" => Box::new(|tape, v| {
            // repeated indices accumulate
            let y = tape.gather(v, vec![0, 5, 5, 23, 7, 0], &[2, 3])?;
            let sq = tape.mul(y, y)?;
            probe_sum(tape, sq, 14)
        }),
        "permute" => Box::new(|tape, v| {
            let y = tape.permute(v, &[2, 0, 1])?;
            let sq = tape.mul(y, y)?;
            probe_sum(tape, sq, 15)
        }),
        "segment_mean_pool" => Box::new(|tape, v| {
            let y = tape.segment_mean_pool(v, [2, 1, 2])?;
            let sq = tape.mul(y, y)?;
            probe_sum(tape, sq, 16)
        }),
        "segment_broadcast" => Box::new(|tape, v| {
            let y = tape.segment_broadcast(v, [4, 3, 2])?;
            let sq = tape.mul(y, y)?;
            probe_sum(tape, sq, 17)
        }),
        "cross_entropy" => Box::new(|tape, v| tape.cross_entropy(v, &[2, 0, 1])),
        "sq_dist" => Box::new(|tape, v| {
            let b = tape.constant(random(&[5, 3], 18));
            let y = tape.sq_dist(v, b)?;
            probe_sum(tape, y, 19)
        }),
        "mmd_sq" => Box::new(|tape, v| {
            let b = tape.constant(random(&[5, 3], 20).map(|x| x + 0.5)?);
            mmd_sq(tape, v, b, Kernel::Fixed(0.9))
        }),
        "mpmmd" => Box::new(|tape, v| mpmmd_loss(tape, v, &all_pairs(3), 256, 0, Kernel::Fixed(1.1))),
        "chase_shift" => {
            let dims = Dims::new(2, 4, 3, 2);
            let mut clb = ClbParams::init(dims, 4, 2, SegmentSpec::new(2, 1, 2), 21)?;
            clb.b = random(&[4], 22);
            clb.w3 = random(&[24, 2], 23);
            Box::new(move |tape, v| {
                let vars = clb.on_tape(tape);
                let out = chase_shift(tape, v, &vars, &clb)?;
                probe_sum(tape, out.x_hat, 24)
            })
        }
        "backbone" => {
            let cfg = BackboneConfig { hidden_widths: vec![6, 5], feature_dim: 4, num_classes: Some(3) };
            let params = backbone_init(&cfg, Dims::new(2, 4, 3, 2), 25)?;
            Box::new(move |tape, v| {
                let vals = params.iter().map(|(k, t)| (k.clone(), tape.constant(t.clone()))).collect();
                let y = backbone_forward(tape, v, &vals, &cfg)?;
                tape.cross_entropy(y, &[0, 2])
            })
        }
        "end_to_end" => return end_to_end(),
        other => return Err(Error::Usage(format!("unknown gradient check `{other}`"))),
    };
    let x = match op {
        "relu" => away_from_zero(random(&[3, 4], 40), 0.05),
        "matmul" | "sq_dist" | "mmd_sq" => random(&[4, 3], 41),
        "matmul_batched" => random(&[2, 3, 5], 42),
        "softmax" => random(&[3, 4, 2], 43).map(|v| 3.0 * v)?,
        "cross_entropy" => random(&[3, 4], 44),
        "mpmmd" => random(&[2, 2, 2, 3, 3], 45),
        "segment_mean_pool" => random(&[2, 4, 3, 2], 46),
        "segment_broadcast" => random(&[2, 2, 3, 1], 47),
        "chase_shift" | "backbone" => random(&[2, 2, 4, 3, 2], 48).map(|v| 2.0 * v)?,
        _ => random(&[2, 3, 4], 49),
    };
    Ok((f, x))
}

/// Runs every check in [`GATE_OPS`]. `sabotage` names one check whose
/// analytic gradient is deliberately scaled before comparison, to exercise
/// the failure path.
pub fn gradient_gate(eps: f64, tol: f64, sabotage: Option<&str>) -> Result<Vec<GateCheck>> {
    if let Some(s) = sabotage {
        if !GATE_OPS.contains(&s) {
            return Err(Error::Usage(format!("unknown gradient check `{s}`")));
        }
    }
    GATE_OPS
        .iter()
        .map(|&op| {
            let (f, x) = objective(op)?;
            let broken = sabotage == Some(op);
            let report = grad_check_with(f, &x, eps, tol, |g| {
                if broken {
                    g.into_iter().map(|v| 1.5 * v + 0.1).collect()
                } else {
                    g
                }
            })?;
            Ok(GateCheck { op: op.to_string(), report })
        })
        .collect()
}
