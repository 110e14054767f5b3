//! Two-sample discrepancy between entity distributions.
//!
//! [`mmd_sq`] and [`mpmmd_loss`] are differentiable and used as a training
//! penalty. The KDE metrics (symmetrized KL, Jensen-Shannon, Bhattacharyya,
//! Hellinger) and the reported MMD are evaluation-only and feed
//! [`DiscrepancyReport`].

mod kde;
mod metrics;
mod mmd;
mod report;

pub use kde::{kde_estimate, kde_on_grid, kde_pair, BandwidthRule, DiscreteDist, Grid, KdeConfig, SampleSet};
pub use metrics::{avg_kld, bd, hd, jsd, PROB_FLOOR};
pub use mmd::{median_bandwidth, mmd, mmd_sq, mmd_sq_value, mpmmd_loss, Kernel};
pub use report::{report, DiscrepancyReport, PairReport, ReportConfig, Stat, METRICS};
