use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeldata::SkeletonSequence;

/// Adds one uniform vector from `[-range, range]^C` to every point.
pub fn augment_random_shift(x: &SkeletonSequence, range: f64, seed: u64) -> Result<SkeletonSequence> {
    if !(range >= 0.0) {
        return Err(Error::config("range", format!("must be non-negative, got {range}")));
    }
    if range == 0.0 {
        return Ok(x.clone());
    }
    let d = x.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d.c).map(|_| rng.random_range(-range..=range)).collect();
    let u = d.points();
    let out = x.data().iter().enumerate().map(|(i, v)| v + shift[i / u]).collect();
    x.with_data(out)
}

/// Applies a uniformly random permutation to the entity axis.
pub fn augment_entity_permute(x: &SkeletonSequence, seed: u64) -> Result<SkeletonSequence> {
    let d = x.dims();
    let mut perm: Vec<usize> = (0..d.e).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    permute_entities(x, &perm)
}

/// Output entity `k` is input entity `perm[k]`.
pub(crate) fn permute_entities(x: &SkeletonSequence, perm: &[usize]) -> Result<SkeletonSequence> {
    let d = x.dims();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for c in 0..d.c {
        for t in 0..d.t {
            for j in 0..d.j {
                for (k, &from) in perm.iter().enumerate() {
                    out[d.offset(c, t, j, k)] = src[d.offset(c, t, j, from)];
                }
            }
        }
    }
    x.with_data(out)
}

/// Test-time noise and joint masking.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub noise_sigma: f64,
    pub mask_prob: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config(
                "noise_sigma",
                format!("must be finite and non-negative, got {}", self.noise_sigma),
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::config("mask_prob", format!("must lie in [0, 1], got {}", self.mask_prob)));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.noise_sigma == 0.0 && self.mask_prob == 0.0
    }
}

/// Adds i.i.d. `N(0, sigma^2)` noise to every coordinate, then zeroes each
/// `(t, j, e)` joint independently with probability `mask_prob`.
pub fn corrupt(x: &SkeletonSequence, cfg: &CorruptionConfig) -> Result<SkeletonSequence> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok(x.clone());
    }
    let d = x.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = x.data().to_vec();
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        out.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    if cfg.mask_prob > 0.0 {
        for t in 0..d.t {
            for j in 0..d.j {
                for e in 0..d.e {
                    if rng.random_bool(cfg.mask_prob) {
                        for c in 0..d.c {
                            out[d.offset(c, t, j, e)] = 0.0;
                        }
                    }
                }
            }
        }
    }
    x.with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeldata::Dims;

    fn seq(dims: Dims, seed: u64) -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        SkeletonSequence::from_raw(dims, data, 1).unwrap()
    }

    fn all_points(x: &SkeletonSequence) -> Vec<Vec<f64>> {
        let d = x.dims();
        let mut pts = vec![];
        for t in 0..d.t {
            for j in 0..d.j {
                for e in 0..d.e {
                    pts.push(x.point(t, j, e));
                }
            }
        }
        pts
    }

    #[test]
    fn random_shift_contract() {
        let x = seq(Dims::new(3, 4, 3, 2), 1);
        assert_eq!(augment_random_shift(&x, 0.0, 9).unwrap(), x);
        let a = augment_random_shift(&x, 2.0, 9).unwrap();
        assert_eq!(a, augment_random_shift(&x, 2.0, 9).unwrap());
        assert_ne!(a, x);
        let (p, q) = (all_points(&x), all_points(&a));
        for i in 0..p.len() {
            for k in 0..p.len() {
                let dist = |v: &Vec<Vec<f64>>| v[i].iter().zip(&v[k]).map(|(s, t)| (s - t).powi(2)).sum::<f64>();
                assert!((dist(&p) - dist(&q)).abs() < 1e-9);
            }
        }
        assert!(augment_random_shift(&x, -1.0, 0).is_err());
    }

    #[test]
    fn entity_permutation_contract() {
        let single = seq(Dims::new(2, 3, 2, 1), 2);
        assert_eq!(augment_entity_permute(&single, 5).unwrap(), single);

        let x = seq(Dims::new(2, 3, 2, 2), 3);
        let swapped = permute_entities(&x, &[1, 0]).unwrap();
        assert_eq!(swapped.point(2, 1, 0), x.point(2, 1, 1));
        assert_eq!(swapped.point(0, 0, 1), x.point(0, 0, 0));

        let x = seq(Dims::new(2, 3, 2, 4), 4);
        let entity = |s: &SkeletonSequence, e: usize| -> Vec<u64> {
            let d = s.dims();
            let mut v = vec![];
            for t in 0..d.t {
                for j in 0..d.j {
                    v.extend(s.point(t, j, e).iter().map(|f| f.to_bits()));
                }
            }
            v
        };
        for seed in 0..10 {
            let p = augment_entity_permute(&x, seed).unwrap();
            let mut before: Vec<_> = (0..4).map(|e| entity(&x, e)).collect();
            let mut after: Vec<_> = (0..4).map(|e| entity(&p, e)).collect();
            before.sort();
            after.sort();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn corruption_identity_and_full_mask() {
        let x = seq(Dims::new(3, 4, 5, 2), 5);
        let id = CorruptionConfig { noise_sigma: 0.0, mask_prob: 0.0, seed: 1 };
        assert_eq!(corrupt(&x, &id).unwrap(), x);
        let full = CorruptionConfig { noise_sigma: 0.1, mask_prob: 1.0, seed: 1 };
        assert!(corrupt(&x, &full).unwrap().data().iter().all(|&v| v == 0.0));
        let bad = CorruptionConfig { noise_sigma: 0.0, mask_prob: 1.5, seed: 1 };
        assert!(corrupt(&x, &bad).is_err());
    }

    #[test]
    fn mask_fraction_matches_probability() {
        // 10^5 joints: 100 frames x 500 joints x 2 entities
        let dims = Dims::new(2, 100, 500, 2);
        let x = SkeletonSequence::from_raw(dims, vec![1.0; dims.len()], 0).unwrap();
        let cfg = CorruptionConfig { noise_sigma: 0.0, mask_prob: 0.1, seed: 77 };
        let y = corrupt(&x, &cfg).unwrap();
        let masked = y.data()[..dims.points()].iter().filter(|&&v| v == 0.0).count();
        let frac = masked as f64 / dims.points() as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }

    #[test]
    fn noise_has_requested_scale() {
        let dims = Dims::new(2, 50, 50, 2);
        let x = SkeletonSequence::from_raw(dims, vec![0.0; dims.len()], 0).unwrap();
        let cfg = CorruptionConfig { noise_sigma: 0.01, mask_prob: 0.0, seed: 3 };
        let y = corrupt(&x, &cfg).unwrap();
        let var = y.data().iter().map(|v| v * v).sum::<f64>() / dims.len() as f64;
        assert!((var.sqrt() - 0.01).abs() < 5e-4);
    }
}
