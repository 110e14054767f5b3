use proptest::prelude::*;

use chase_core::chase::{chase_forward, clb_forward, ichas_fixed, ClbParams, SegmentSpec};
use chase_core::discrepancy::{avg_kld, bd, hd, jsd, mmd_sq_value, DiscreteDist, Kernel};
use chase_core::numcore::Tensor;
use chase_core::skeldata::{
    augment_entity_permute, augment_random_shift, corrupt, khop_bones, s2com_global, s2com_per_entity,
    CorruptionConfig, Dims, GraphPrior, SkeletonSequence,
};
use chase_core::train::{sgd_step, SgdState};

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (2usize..=3, 1usize..=4, 1usize..=5, 1usize..=3).prop_map(|(c, t, j, e)| Dims::new(c, t, j, e))
}

fn sequence() -> impl Strategy<Value = SkeletonSequence> {
    dims_strategy().prop_flat_map(|d| {
        prop::collection::vec(-50.0f64..50.0, d.len())
            .prop_map(move |data| SkeletonSequence::from_raw(d, data, 0).unwrap())
    })
}

fn pairwise(x: &SkeletonSequence, e: usize) -> Vec<f64> {
    let d = x.dims();
    let pts: Vec<Vec<f64>> =
        (0..d.t).flat_map(|t| (0..d.j).map(move |j| (t, j))).map(|(t, j)| x.point(t, j, e)).collect();
    let mut out = Vec::new();
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            out.push(pts[a].iter().zip(&pts[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt());
        }
    }
    out
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..12).prop_map(|mut v| {
        v[0] += 1e-3;
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centering_keeps_intra_entity_distances(x in sequence()) {
        for f in [s2com_per_entity, s2com_global] {
            let y = f(&x).unwrap();
            for e in 0..x.dims().e {
                prop_assert!(close(&pairwise(&x, e), &pairwise(&y, e), 1e-9));
            }
            let twice = f(&y).unwrap();
            prop_assert!(close(y.data(), twice.data(), 1e-9));
        }
    }

    #[test]
    fn global_centering_ignores_translation(x in sequence(), shift in prop::collection::vec(-100.0f64..100.0, 3)) {
        let d = x.dims();
        let moved: Vec<f64> = x.data().iter().enumerate().map(|(i, v)| v + shift[i / (d.t * d.j * d.e)]).collect();
        let a = s2com_global(&x).unwrap();
        let b = s2com_global(&x.with_data(moved).unwrap()).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() <= 1e-9));
    }

    #[test]
    fn deep_bones_are_identity(x in sequence(), extra in 1usize..4) {
        let prior = GraphPrior::chain(x.dims().j);
        let y = khop_bones(&x, &prior, prior.depth() + extra).unwrap();
        prop_assert_eq!(y.data(), x.data());
    }

    #[test]
    fn randomized_ops_are_pure_in_seed(x in sequence(), seed in any::<u64>()) {
        prop_assert_eq!(augment_random_shift(&x, 1.0, seed).unwrap(), augment_random_shift(&x, 1.0, seed).unwrap());
        prop_assert_eq!(augment_entity_permute(&x, seed).unwrap(), augment_entity_permute(&x, seed).unwrap());
        let cfg = CorruptionConfig { noise_sigma: 0.1, mask_prob: 0.2, seed };
        prop_assert_eq!(corrupt(&x, &cfg).unwrap(), corrupt(&x, &cfg).unwrap());
        let identity = CorruptionConfig { noise_sigma: 0.0, mask_prob: 0.0, seed };
        let same = corrupt(&x, &identity).unwrap();
        prop_assert_eq!(same.data(), x.data());
    }

    #[test]
    fn shift_stays_in_coordinate_bounds(
        c in 1usize..=3,
        u in 1usize..=64,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..c * u).map(|_| rng.random_range(-10.0..10.0)).collect();
        let w: Vec<f64> = (0..u).map(|_| rng.random_range(-8.0..8.0)).collect();
        let (_, p) = ichas_fixed(&Tensor::new(vec![c, u], x.clone()).unwrap(), &Tensor::new(vec![u, 1], w).unwrap()).unwrap();
        for ch in 0..c {
            let row = &x[ch * u..(ch + 1) * u];
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p.data()[ch] >= lo - 1e-12 && p.data()[ch] <= hi + 1e-12);
        }
    }

    #[test]
    fn uniform_coefficients_give_centroid(c in 1usize..=3, u in 1usize..=64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..c * u).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (_, p) = ichas_fixed(&Tensor::new(vec![c, u], x.clone()).unwrap(), &Tensor::zeros(&[u, 1])).unwrap();
        for ch in 0..c {
            let com = x[ch * u..(ch + 1) * u].iter().sum::<f64>() / u as f64;
            prop_assert!((p.data()[ch] - com).abs() <= 1e-12 * (1.0 + com.abs()) + 1e-12);
        }
    }

    #[test]
    fn fixed_coefficients_ignore_translation(
        c in 1usize..=3, u in 1usize..=32, t in prop::collection::vec(-100.0f64..100.0, 3), seed in any::<u64>()
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..c * u).map(|_| rng.random_range(-10.0..10.0)).collect();
        let w = Tensor::new(vec![u, 1], (0..u).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let moved: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + t[i / u]).collect();
        let (a, _) = ichas_fixed(&Tensor::new(vec![c, u], x).unwrap(), &w).unwrap();
        let (b, _) = ichas_fixed(&Tensor::new(vec![c, u], moved).unwrap(), &w).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-9);
    }

    #[test]
    fn single_segment_block_matches_fixed_shift(x in sequence(), seed in any::<u64>()) {
        let d = x.dims();
        prop_assume!(d.points() >= 3);
        let mut p = ClbParams::init(d, 3, 2, SegmentSpec::default(), seed).unwrap();
        p.w3 = Tensor::full(&[d.points(), 2], 0.3);
        p.b = Tensor::full(&[3], 0.5);
        let coeffs = clb_forward(x.coords(), &p).unwrap();
        let batched = chase_forward(&x.coords().reshape(&[1, d.c, d.t, d.j, d.e]).unwrap(), &p).unwrap();
        let (direct, _) = ichas_fixed(&x.coords().reshape(&[d.c, d.points()]).unwrap(), &coeffs.w).unwrap();
        prop_assert_eq!(batched.data(), direct.data());
    }

    #[test]
    fn mmd_is_nonnegative_symmetric_and_zero_on_self(
        a in prop::collection::vec(-5.0f64..5.0, 6..30),
        b in prop::collection::vec(-5.0f64..5.0, 6..30),
    ) {
        let ta = Tensor::new(vec![a.len() / 2, 2], a[..a.len() / 2 * 2].to_vec()).unwrap();
        let tb = Tensor::new(vec![b.len() / 2, 2], b[..b.len() / 2 * 2].to_vec()).unwrap();
        for k in [Kernel::Median, Kernel::Fixed(0.7)] {
            let ab = mmd_sq_value(&ta, &tb, k).unwrap();
            prop_assert!(ab >= -1e-12);
            prop_assert_eq!(ab.to_bits(), mmd_sq_value(&tb, &ta, k).unwrap().to_bits());
            prop_assert!(mmd_sq_value(&ta, &ta, k).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(p in distribution(), q in distribution()) {
        let n = p.len().min(q.len());
        let renorm = |v: &[f64]| { let s: f64 = v[..n].iter().sum(); v[..n].iter().map(|x| x / s).collect::<Vec<_>>() };
        let (p, q) = (DiscreteDist::from_probs(renorm(&p)).unwrap(), DiscreteDist::from_probs(renorm(&q)).unwrap());
        for f in [avg_kld, jsd, bd, hd] {
            prop_assert_eq!(f(&p, &q).unwrap().to_bits(), f(&q, &p).unwrap().to_bits());
        }
        prop_assert!(jsd(&p, &q).unwrap() <= std::f64::consts::LN_2);
        prop_assert!(hd(&p, &q).unwrap() <= 1.0);
    }

    #[test]
    fn zero_momentum_is_gradient_descent(p0 in -10.0f64..10.0, g in -10.0f64..10.0, lr in 1e-4f64..1.0) {
        let mut params = std::collections::BTreeMap::from([("w".to_string(), Tensor::scalar(p0))]);
        let grads = std::collections::BTreeMap::from([("w".to_string(), Tensor::scalar(g))]);
        sgd_step(&mut params, &grads, &mut SgdState::new(), lr, 0.0).unwrap();
        prop_assert_eq!(params["w"].item(), p0 - lr * g);
    }
}
