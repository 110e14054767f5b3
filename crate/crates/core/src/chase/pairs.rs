use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unordered entity pair with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityPair {
    pub i: usize,
    pub j: usize,
}

impl EntityPair {
    pub fn new(i: usize, j: usize) -> Result<Self> {
        if i >= j {
            return Err(Error::Usage(format!("entity pair needs i < j, got ({i}, {j})")));
        }
        Ok(EntityPair { i, j })
    }
}

impl std::fmt::Display for EntityPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}", self.i, self.j)
    }
}

/// All `E(E-1)/2` pairs in lexicographic order.
pub fn all_pairs(entities: usize) -> Vec<EntityPair> {
    (0..entities).flat_map(|i| (i + 1..entities).map(move |j| EntityPair { i, j })).collect()
}

/// `m` pairs drawn uniformly with replacement.
pub fn sample_pairs(entities: usize, m: usize, seed: u64) -> Result<Vec<EntityPair>> {
    if entities < 2 {
        return Err(Error::Usage(format!("pair sampling needs at least 2 entities, got {entities}")));
    }
    if m == 0 {
        return Err(Error::Usage("pair sampling needs M >= 1".into()));
    }
    let pool = all_pairs(entities);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}
