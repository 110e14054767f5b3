use crate::discrepancy::DiscreteDist;
use crate::error::Result;

/// Floor applied to cell masses before logarithms in the KL terms.
pub const PROB_FLOOR: f64 = 1e-12;

fn kl_floored(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let (a, b) = (a.max(PROB_FLOOR), b.max(PROB_FLOOR));
            a * (a / b).ln()
        })
        .sum()
}

/// Symmetrized KL divergence `(KL(P||Q) + KL(Q||P)) / 2`.
pub fn avg_kld(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.check_support(q)?;
    let (a, b) = (kl_floored(&p.mass, &q.mass), kl_floored(&q.mass, &p.mass));
    Ok((0.5 * (a + b)).max(0.0))
}

/// Jensen-Shannon divergence in nats, with `0 ln 0 = 0`.
pub fn jsd(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.check_support(q)?;
    let half = |x: &[f64], y: &[f64]| -> f64 {
        x.iter().zip(y).filter(|(&a, _)| a > 0.0).map(|(&a, &b)| a * (a / (0.5 * (a + b))).ln()).sum()
    };
    let v = 0.5 * half(&p.mass, &q.mass) + 0.5 * half(&q.mass, &p.mass);
    Ok(v.clamp(0.0, std::f64::consts::LN_2))
}

/// Bhattacharyya distance `-ln sum sqrt(P Q)`.
pub fn bd(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.check_support(q)?;
    let bc: f64 = p.mass.iter().zip(&q.mass).map(|(a, b)| (a * b).sqrt()).sum();
    Ok((-bc.max(PROB_FLOOR).ln()).max(0.0))
}

/// Hellinger distance `sqrt(sum (sqrt P - sqrt Q)^2) / sqrt 2`.
pub fn hd(p: &DiscreteDist, q: &DiscreteDist) -> Result<f64> {
    p.check_support(q)?;
    let s: f64 = p.mass.iter().zip(&q.mass).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    Ok((s.sqrt() / std::f64::consts::SQRT_2).min(1.0))
}
