use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chase::EntityPair;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Value};

/// Gaussian RBF `exp(-d^2 / (2 sigma^2))` with a fixed or data-driven width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Fixed(f64),
    /// median pooled pairwise distance, recomputed per call
    #[default]
    Median,
}

impl Kernel {
    pub fn bandwidth(&self, a: &Tensor, b: &Tensor) -> f64 {
        match *self {
            Kernel::Fixed(s) => s,
            Kernel::Median => median_bandwidth(a, b),
        }
    }
}

/// Median of all pairwise distances among the rows of `a` and `b` pooled;
/// 1.0 when that median is zero or there is only one point.
pub fn median_bandwidth(a: &Tensor, b: &Tensor) -> f64 {
    let c = a.shape()[1];
    let rows: Vec<&[f64]> = a.data().chunks_exact(c).chain(b.data().chunks_exact(c)).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(rows[i].iter().zip(rows[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let k = d.len();
    let med = if k % 2 == 1 { d[k / 2].sqrt() } else { 0.5 * (d[k / 2 - 1].sqrt() + d[k / 2].sqrt()) };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

fn canonical_order(a: &Tensor, b: &Tensor) -> Ordering {
    a.shape().cmp(b.shape()).then_with(|| {
        a.data().iter().zip(b.data()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    })
}

/// Biased squared MMD between the rows of `a` (`n x c`) and `b` (`m x c`).
///
/// The bandwidth is treated as a constant. The cross term is always computed
/// in a canonical argument order so that swapping the sets gives a bitwise
/// identical value.
pub fn mmd_sq(tape: &mut Tape, a: Value, b: Value, kernel: Kernel) -> Result<Value> {
    let (sa, sb) = (tape.shape(a).to_vec(), tape.shape(b).to_vec());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::Dimension(format!("mmd expects [n, c] and [m, c] sets, got {sa:?} and {sb:?}")));
    }
    if sa[0] == 0 || sb[0] == 0 {
        return Err(Error::Usage("mmd of an empty sample set".into()));
    }
    let (a, b) = if canonical_order(tape.value(a), tape.value(b)) == Ordering::Greater { (b, a) } else { (a, b) };
    let sigma = kernel.bandwidth(tape.value(a), tape.value(b));
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config("kernel.sigma", format!("bandwidth must be positive, got {sigma}")));
    }
    let gamma = -1.0 / (2.0 * sigma * sigma);
    let mut kmean = |x: Value, y: Value| -> Result<Value> {
        let d = tape.sq_dist(x, y)?;
        let s = tape.scale(d, gamma)?;
        let k = tape.exp(s)?;
        tape.mean(k)
    };
    let kaa = kmean(a, a)?;
    let kbb = kmean(b, b)?;
    let kab = kmean(a, b)?;
    let within = tape.add(kaa, kbb)?;
    let cross = tape.scale(kab, -2.0)?;
    tape.add(within, cross)
}

/// Tensor-level squared MMD.
pub fn mmd_sq_value(a: &Tensor, b: &Tensor, kernel: Kernel) -> Result<f64> {
    let mut tape = Tape::new();
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let v = mmd_sq(&mut tape, av, bv, kernel)?;
    Ok(tape.value(v).item())
}

/// Reported MMD: square root of the clamped V-statistic.
pub fn mmd(a: &Tensor, b: &Tensor, kernel: Kernel) -> Result<f64> {
    Ok(mmd_sq_value(a, b, kernel)?.max(0.0).sqrt())
}

/// Row indices of entity `e`'s points in an `(N, C, T, J, E)` batch viewed as
/// a flat buffer, one `C`-row per `(n, t, j)`.
pub(crate) fn entity_point_index(shape: &[usize], e: usize) -> Vec<usize> {
    let (n, c, t, j, ne) = (shape[0], shape[1], shape[2], shape[3], shape[4]);
    let mut idx = Vec::with_capacity(n * t * j * c);
    for s in 0..n {
        for tt in 0..t {
            for jj in 0..j {
                for cc in 0..c {
                    idx.push((((s * c + cc) * t + tt) * j + jj) * ne + e);
                }
            }
        }
    }
    idx
}

/// Seeded subsample without replacement of `k` of `n` rows, in ascending
/// order; all rows when `n <= k`.
pub(crate) fn subsample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, n, k).into_vec();
    rows.sort_unstable();
    rows
}

/// Mini-batch pair-wise MMD: the mean of squared MMD over `pairs`, where the
/// points of entity `e` are pooled over batch, frames and joints, then
/// subsampled to `points_per_entity` rows with a stream derived from
/// `(seed, e)`. Subsampling depends only on the entity, so a pair's value is
/// the same wherever it occurs in `pairs`.
pub fn mpmmd_loss(
    tape: &mut Tape,
    x_hat: Value,
    pairs: &[EntityPair],
    points_per_entity: usize,
    seed: u64,
    kernel: Kernel,
) -> Result<Value> {
    let shape = tape.shape(x_hat).to_vec();
    if shape.len() != 5 {
        return Err(Error::Dimension(format!("expected (N, C, T, J, E) batch, got {shape:?}")));
    }
    let (c, e) = (shape[1], shape[4]);
    if e < 2 {
        return Err(Error::Usage(format!("pair-wise MMD needs at least 2 entities, got {e}")));
    }
    if pairs.is_empty() {
        return Err(Error::Usage("pair-wise MMD needs at least one pair".into()));
    }
    if points_per_entity == 0 {
        return Err(Error::Usage("points_per_entity must be positive".into()));
    }
    if let Some(p) = pairs.iter().find(|p| p.i >= p.j || p.j >= e) {
        return Err(Error::Index(format!("pair {p} invalid for {e} entities")));
    }
    let mut sets: BTreeMap<usize, Value> = BTreeMap::new();
    let mut entity_set = |tape: &mut Tape, ent: usize| -> Result<Value> {
        if let Some(&v) = sets.get(&ent) {
            return Ok(v);
        }
        let all = entity_point_index(&shape, ent);
        let rows = subsample_rows(all.len() / c, points_per_entity, derive_seed(seed, &[ent as u64]));
        let index: Vec<usize> = rows.iter().flat_map(|&r| all[r * c..(r + 1) * c].iter().copied()).collect();
        let v = tape.gather(x_hat, index, &[rows.len(), c])?;
        sets.insert(ent, v);
        Ok(v)
    };
    let mut total: Option<Value> = None;
    for p in pairs {
        let a = entity_set(tape, p.i)?;
        let b = entity_set(tape, p.j)?;
        let m = mmd_sq(tape, a, b, kernel)?;
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    tape.scale(total.expect("pairs nonempty"), 1.0 / pairs.len() as f64)
}
