use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut tape = Tape::new();
    let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(p).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    let msg = tape.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("and"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let b = random(&[3, 3], 7);
    let a = random(&[3, 3], 8);
    let r = grad_check(
        |tape, x| {
            let bv = tape.constant(b.clone());
            let p = tape.matmul(x, bv)?;
            tape.sum(p)
        },
        &a,
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn batched_matmul_with_shared_operand() {
    let w = random(&[4, 3], 1);
    let x = random(&[2, 3, 5], 2);
    let mut tape = Tape::new();
    let wv = tape.constant(w.clone());
    let xv = tape.constant(x.clone());
    let y = tape.matmul(wv, xv).unwrap();
    assert_eq!(tape.shape(y), &[2, 4, 5]);
    let got = tape.value(y).get(&[1, 2, 3]);
    let want: f64 = (0..3).map(|k| w.get(&[2, k]) * x.get(&[1, k, 3])).sum();
    assert_relative_eq!(got, want, epsilon = 1e-14);

    for (shared_left, seed) in [(true, 3u64), (false, 4)] {
        let r = grad_check(
            |tape, v| {
                let other = tape.constant(random(&[2, 3, 3], seed));
                let p = if shared_left { tape.matmul(v, other)? } else { tape.matmul(other, v)? };
                let sq = tape.mul(p, p)?;
                tape.sum(sq)
            },
            &random(&[3, 3], 9),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[0.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[2], &[0.0, 3f64.ln()]));
    let y = tape.softmax(x, 0).unwrap();
    assert_relative_eq!(tape.value(y).data()[0], 0.25, epsilon = 1e-15);
    assert_relative_eq!(tape.value(y).data()[1], 0.75, epsilon = 1e-15);
}

#[test]
fn softmax_gradient_along_each_axis() {
    let weights = random(&[2, 3, 4], 11);
    for axis in 0..3 {
        let r = grad_check(
            |tape, v| {
                let s = tape.softmax(v, axis)?;
                let w = tape.constant(weights.clone());
                let p = tape.mul(s, w)?;
                tape.sum(p)
            },
            &random(&[2, 3, 4], 12 + axis as u64),
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed, "axis {axis}: {r:?}");
    }
}

#[test]
fn softmax_positive_and_normalized_on_wide_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let len = rng.random_range(1..20);
        let mag = 10f64.powf(rng.random_range(-2.0..3.0));
        let data: Vec<f64> = (0..len).map(|_| rng.random_range(-mag..mag)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(data).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        let out = tape.value(y).data();
        // strictly positive except where exp underflows beyond f64 range
        assert!(out.iter().all(|&p| p >= 0.0 && p <= 1.0));
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn elementwise_examples_and_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = tape.relu(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[1.0, 1.0]));
    let d = tape.sub(a, b).unwrap();
    assert_eq!(tape.value(d).data(), &[0.0, 1.0]);

    let c = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.add(a, c), Err(crate::Error::Dimension(_))));
}

#[test]
fn relu_gradient_is_indicator_with_zero_at_origin() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[4], &[-1.0, 0.0, 0.5, 2.0]));
    let r = tape.relu(x).unwrap();
    let s = tape.sum(r).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0, 1.0, 1.0]);

    // finite differences away from the kink
    let away = t(&[4], &[-1.0, -0.3, 0.5, 2.0]);
    let rep = grad_check(
        |tp, v| {
            let r = tp.relu(v)?;
            tp.sum(r)
        },
        &away,
        1e-5,
        1e-6,
    )
    .unwrap();
    assert!(rep.passed);
}

#[test]
fn broadcast_gradients_reduce_over_stretched_axes() {
    let big = random(&[2, 3, 4], 21);
    for (seed, shape) in [(22u64, vec![3, 1]), (23, vec![4]), (24, vec![1, 3, 4])] {
        for op in 0..3 {
            let r = grad_check(
                |tape, v| {
                    let b = tape.constant(big.clone());
                    let y = match op {
                        0 => tape.add(b, v)?,
                        1 => tape.sub(b, v)?,
                        _ => tape.mul(b, v)?,
                    };
                    let sq = tape.mul(y, y)?;
                    tape.sum(sq)
                },
                &random(&shape, seed),
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(r.passed, "op {op} shape {shape:?}: {r:?}");
        }
    }
}

#[test]
fn segment_pool_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2, 1, 1], &[2.0, 4.0]));
    let p = tape.segment_mean_pool(x, [1, 1, 1]).unwrap();
    assert_eq!(tape.value(p).data(), &[3.0]);

    let x = tape.constant(t(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]));
    let p = tape.segment_mean_pool(x, [2, 1, 1]).unwrap();
    assert_eq!(tape.value(p).data(), &[1.5, 3.5]);

    let r = random(&[3, 4, 6, 2], 5);
    let x = tape.constant(r.clone());
    let p = tape.segment_mean_pool(x, [1, 1, 1]).unwrap();
    for c in 0..3 {
        let mean = r.data()[c * 48..(c + 1) * 48].iter().sum::<f64>() / 48.0;
        assert_relative_eq!(tape.value(p).data()[c], mean, epsilon = 1e-14);
    }

    let bad = tape.constant(Tensor::zeros(&[1, 3, 1, 1]));
    assert!(matches!(tape.segment_mean_pool(bad, [2, 1, 1]), Err(crate::Error::Config { .. })));
}

#[test]
fn segment_pool_blocks_follow_row_major_cells() {
    // T=4, J=2, E=2 pooled to (2, 1, 2): cell (ct, 0, ce) averages t in block ct, all j, entity ce
    let data: Vec<f64> = (0..16).map(f64::from).collect();
    let mut tape = Tape::new();
    let x = tape.constant(t(&[4, 2, 2], &data));
    let p = tape.segment_mean_pool(x, [2, 1, 2]).unwrap();
    let at = |tt: usize, j: usize, e: usize| data[(tt * 2 + j) * 2 + e];
    let mut want = vec![];
    for ct in 0..2 {
        for ce in 0..2 {
            let mut s = 0.0;
            for tt in ct * 2..ct * 2 + 2 {
                for j in 0..2 {
                    s += at(tt, j, ce);
                }
            }
            want.push(s / 4.0);
        }
    }
    assert_eq!(tape.value(p).data(), want.as_slice());

    let b = tape.segment_broadcast(p, [4, 2, 2]).unwrap();
    for tt in 0..4 {
        for j in 0..2 {
            for e in 0..2 {
                assert_eq!(tape.value(b).get(&[tt, j, e]), want[(tt / 2) * 2 + e]);
            }
        }
    }
}

#[test]
fn segment_pool_conserves_gradient_mass() {
    let mut tape = Tape::new();
    let x = tape.param(random(&[2, 4, 6, 2], 31));
    let p = tape.segment_mean_pool(x, [2, 3, 1]).unwrap();
    let w = tape.constant(random(&[2, 2, 3, 1], 32));
    let y = tape.mul(p, w).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    // d s / d p is w, so output gradient mass is sum(w)
    let out_mass = random(&[2, 2, 3, 1], 32).sum();
    assert_relative_eq!(tape.grad(x).unwrap().sum(), out_mass, epsilon = 1e-12);
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::zeros(&[3, 4]));
    let ce = tape.cross_entropy(l, &[0, 1, 3]).unwrap();
    assert_relative_eq!(tape.value(ce).item(), 4f64.ln(), epsilon = 1e-15);

    let l = tape.constant(t(&[1, 2], &[10.0, -10.0]));
    let ce = tape.cross_entropy(l, &[0]).unwrap();
    // ln(1 + e^-20)
    assert_relative_eq!(tape.value(ce).item(), (-20f64).exp().ln_1p(), max_relative = 1e-12);
    assert_relative_eq!(tape.value(ce).item(), 2.061_153_6e-9, max_relative = 1e-6);

    let l = tape.constant(Tensor::zeros(&[1, 2]));
    assert!(matches!(tape.cross_entropy(l, &[2]), Err(crate::Error::Index(_))));

    let r = grad_check(|tp, v| tp.cross_entropy(v, &[2, 0]), &random(&[2, 3], 41), 1e-5, 1e-6).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    tape.backward(x).unwrap();
    assert_eq!(tape.grad(x).unwrap().item(), 1.0);

    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let y = tape.sum(sq).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);

    // diamond: y = a*x + a*x with a reused on both paths
    let mut tape = Tape::new();
    let a = tape.param(Tensor::scalar(1.5));
    let xs = tape.constant(Tensor::scalar(4.0));
    let p1 = tape.mul(a, xs).unwrap();
    let p2 = tape.mul(a, xs).unwrap();
    let y = tape.add(p1, p2).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(a).unwrap().item(), 8.0);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(crate::Error::Usage(_))));
}

#[test]
fn backward_is_repeatable_bit_for_bit() {
    let mut tape = Tape::new();
    let w = tape.param(random(&[4, 3], 51));
    let x = tape.constant(random(&[3, 5], 52));
    let y = tape.matmul(w, x).unwrap();
    let s = tape.softmax(y, 0).unwrap();
    let r = tape.relu(s).unwrap();
    let out = tape.sum(r).unwrap();
    tape.backward(out).unwrap();
    let first = tape.grad(w).unwrap();
    tape.zero_grad();
    tape.backward(out).unwrap();
    assert_eq!(first.data(), tape.grad(w).unwrap().data());
}

#[test]
fn non_finite_results_are_rejected() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::scalar(1000.0));
    assert!(matches!(tape.exp(x), Err(crate::Error::NonFinite { op: "exp" })));
}

#[test]
fn structural_ops_have_exact_gradients() {
    let x = random(&[2, 3, 4], 61);
    let cases: Vec<(&str, Box<dyn Fn(&mut Tape, Value) -> crate::Result<Value>>)> = vec![
        (
            "reshape",
            Box::new(|tp, v| {
                let r = tp.reshape(v, &[6, 4])?;
                let w = tp.constant(random(&[6, 4], 1));
                let p = tp.mul(r, w)?;
                tp.sum(p)
            }),
        ),
        (
            "permute",
            Box::new(|tp, v| {
                let r = tp.permute(v, &[2, 0, 1])?;
                let w = tp.constant(random(&[4, 2, 3], 2));
                let p = tp.mul(r, w)?;
                tp.sum(p)
            }),
        ),
        (
            "sum_axis",
            Box::new(|tp, v| {
                let r = tp.sum_axis(v, 1)?;
                let sq = tp.mul(r, r)?;
                tp.sum(sq)
            }),
        ),
        (
            "mean_axis",
            Box::new(|tp, v| {
                let r = tp.mean_axis(v, 2)?;
                let sq = tp.mul(r, r)?;
                tp.mean(sq)
            }),
        ),
        (
            "exp",
            Box::new(|tp, v| {
                let r = tp.exp(v)?;
                tp.sum(r)
            }),
        ),
        (
            "scale",
            Box::new(|tp, v| {
                let r = tp.scale(v, -2.5)?;
                let sq = tp.mul(r, r)?;
                tp.sum(sq)
            }),
        ),
    ];
    for (name, f) in cases {
        let r = grad_check(f, &x, 1e-5, 1e-6).unwrap();
        assert!(r.passed, "{name}: {r:?}");
    }
}

#[test]
fn sq_dist_values_and_gradient() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]));
    let b = tape.constant(t(&[1, 2], &[3.0, 4.0]));
    let d = tape.sq_dist(a, b).unwrap();
    assert_eq!(tape.value(d).data(), &[25.0, 13.0]);

    let other = random(&[5, 3], 71);
    let r = grad_check(
        |tp, v| {
            let o = tp.constant(other.clone());
            let d1 = tp.sq_dist(v, o)?;
            let d2 = tp.sq_dist(o, v)?;
            let s = tp.add(d1, d1)?;
            let k = tp.scale(s, -0.5)?;
            let e = tp.exp(k)?;
            let m1 = tp.mean(e)?;
            let m2 = tp.mean(d2)?;
            tp.add(m1, m2)
        },
        &random(&[4, 3], 72),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_shift_invariant(data in prop::collection::vec(-50.0f64..50.0, 1..16), c in -100.0f64..100.0) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(data.clone()).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        let xs = tape.constant(Tensor::from_vec(data.iter().map(|v| v + c).collect()).unwrap());
        let ys = tape.softmax(xs, 0).unwrap();
        prop_assert!(tape.value(y).max_abs_diff(tape.value(ys)) < 1e-12);
    }

    #[test]
    fn pooled_gradient_is_uniform(seed in 0u64..1000) {
        let mut tape = Tape::new();
        let x = tape.param(random(&[2, 4, 2, 2], seed));
        let p = tape.segment_mean_pool(x, [2, 2, 1]).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(x).unwrap();
        prop_assert!(g.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
