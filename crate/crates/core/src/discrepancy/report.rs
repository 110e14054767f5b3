use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chase::{all_pairs, EntityPair};
use crate::derive_seed;
use crate::discrepancy::mmd::subsample_rows;
use crate::discrepancy::{avg_kld, bd, hd, jsd, kde_pair, mmd, KdeConfig, Kernel, SampleSet};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::skeldata::Dataset;

pub const METRICS: [&str; 5] = ["avg_kld", "jsd", "bd", "hd", "mmd"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub repetitions: usize,
    pub points_per_entity: usize,
    pub kde: KdeConfig,
    pub kernel: Kernel,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig { repetitions: 30, points_per_entity: 256, kde: KdeConfig::default(), kernel: Kernel::Median }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        Stat { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: EntityPair,
    pub avg_kld: Stat,
    pub jsd: Stat,
    pub bd: Stat,
    pub hd: Stat,
    pub mmd: Stat,
}

impl PairReport {
    pub fn metric(&self, name: &str) -> Option<Stat> {
        match name {
            "avg_kld" => Some(self.avg_kld),
            "jsd" => Some(self.jsd),
            "bd" => Some(self.bd),
            "hd" => Some(self.hd),
            "mmd" => Some(self.mmd),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub normalizer: String,
    pub repetitions: usize,
    pub points_per_entity: usize,
    pub pairs: Vec<PairReport>,
}

impl DiscrepancyReport {
    /// Mean of a metric's per-pair means.
    pub fn mean_over_pairs(&self, metric: &str) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.pairs.iter().map(|p| p.metric(metric).map(|s| s.mean)).collect();
        let vals = vals?;
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,metric,mean,std\n");
        for p in &self.pairs {
            for m in METRICS {
                let s = p.metric(m).expect("known metric");
                writeln!(out, "{},{m},{},{}", p.pair, s.mean, s.std).expect("string write");
            }
        }
        out
    }

    /// Writes `<run_id>.discrepancy.csv` and `<run_id>.discrepancy.json`.
    pub fn write(&self, dir: &Path, run_id: &str) -> Result<(PathBuf, PathBuf)> {
        let csv = dir.join(format!("{run_id}.discrepancy.csv"));
        let json = dir.join(format!("{run_id}.discrepancy.json"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        fs::write(&json, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&json, e))?;
        Ok((csv, json))
    }
}

/// Per-entity point pools `rows x C` gathered from valid frames of every
/// sample after normalization.
fn entity_pools<F>(ds: &Dataset, normalize: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let d = ds.dims;
    let mut pools = vec![Vec::new(); d.e];
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(256) {
        let (x, _) = ds.batch(chunk);
        let y = normalize(&x)?;
        if y.shape() != x.shape() {
            return Err(Error::Dimension(format!("normalizer changed shape {:?} to {:?}", x.shape(), y.shape())));
        }
        for (k, &i) in chunk.iter().enumerate() {
            for t in 0..ds.samples[i].valid_frames {
                for j in 0..d.j {
                    for (e, pool) in pools.iter_mut().enumerate() {
                        for c in 0..d.c {
                            pool.push(y.get(&[k, c, t, j, e]));
                        }
                    }
                }
            }
        }
    }
    Ok(pools)
}

fn subsample(pool: &[f64], c: usize, k: usize, seed: u64) -> Result<SampleSet> {
    let rows = subsample_rows(pool.len() / c, k, seed);
    let data = rows.iter().flat_map(|&r| pool[r * c..(r + 1) * c].iter().copied()).collect();
    SampleSet::new(Tensor::new(vec![rows.len(), c], data)?)
}

/// Normalizes `ds` with `normalize`, then for each repetition draws
/// `points_per_entity` points per entity and evaluates all metrics on every
/// entity pair. Repetitions run in parallel and are aggregated in order.
pub fn report<F>(ds: &Dataset, label: &str, normalize: F, cfg: &ReportConfig, seed: u64) -> Result<DiscrepancyReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if ds.is_empty() {
        return Err(Error::Usage("discrepancy report of an empty dataset".into()));
    }
    if ds.dims.e < 2 {
        return Err(Error::Usage(format!("discrepancy needs at least 2 entities, got {}", ds.dims.e)));
    }
    if cfg.repetitions == 0 || cfg.points_per_entity < 2 {
        return Err(Error::config("report", "need repetitions >= 1 and points_per_entity >= 2"));
    }
    cfg.kde.validate()?;
    let c = ds.dims.c;
    let pools = entity_pools(ds, &normalize)?;
    let pairs = all_pairs(ds.dims.e);
    let per_rep: Vec<Vec<[f64; 5]>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<Vec<[f64; 5]>> {
            let sets = pools
                .iter()
                .enumerate()
                .map(|(e, pool)| subsample(pool, c, cfg.points_per_entity, derive_seed(seed, &[rep as u64, e as u64])))
                .collect::<Result<Vec<_>>>()?;
            pairs
                .iter()
                .map(|p| {
                    let (a, b) = (&sets[p.i], &sets[p.j]);
                    let (pd, qd) = kde_pair(a, b, &cfg.kde)?;
                    Ok([
                        avg_kld(&pd, &qd)?,
                        jsd(&pd, &qd)?,
                        bd(&pd, &qd)?,
                        hd(&pd, &qd)?,
                        mmd(a.points(), b.points(), cfg.kernel)?,
                    ])
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let pairs = pairs
        .iter()
        .enumerate()
        .map(|(k, &pair)| {
            let stat = |m: usize| Stat::of(&per_rep.iter().map(|r| r[k][m]).collect::<Vec<_>>());
            PairReport { pair, avg_kld: stat(0), jsd: stat(1), bd: stat(2), hd: stat(3), mmd: stat(4) }
        })
        .collect();
    Ok(DiscrepancyReport {
        normalizer: label.to_string(),
        repetitions: cfg.repetitions,
        points_per_entity: cfg.points_per_entity,
        pairs,
    })
}
