//! Sample-adaptive origin shifting for multi-entity skeleton sequences.
//!
//! The shift subtracts from every point a learned convex combination of all
//! points of the sample, so the new origin always lies inside the open convex
//! hull of the skeleton. Coefficients come from a small squeeze-and-excite
//! style block and are trained jointly with a classifier plus a mini-batch
//! pair-wise MMD penalty between entity distributions.
//!
//! Modules:
//! - [`numcore`]: tensors and reverse-mode differentiation
//! - [`skeldata`]: sequences, datasets, baseline normalizers, corruptions
//! - [`chase`]: the hull-constrained shift and its coefficient block
//! - [`discrepancy`]: MMD objective and KDE-based discrepancy metrics
//! - [`train`]: backbone, optimizer, training loop, checkpoints

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chase;
pub mod discrepancy;
pub mod error;
pub mod numcore;
pub mod skeldata;
pub mod train;

pub use error::{Error, Result};

/// Deterministic 64-bit seed derivation for independent random streams.
pub fn derive_seed(seed: u64, stream: &[u64]) -> u64 {
    // splitmix64 over the stream words
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &w in stream {
        z = z.wrapping_add(w.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
