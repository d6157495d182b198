//! Triplet losses over part-based embeddings, with hardness-exclusion gating.
//!
//! A training batch holds `p` identities with `k` sequences each. Pair
//! distances are part-averaged Euclidean distances between the `[parts, dim]`
//! embedding matrices of two samples. Three variants are provided:
//!
//! - batch-all: every valid (anchor, positive, negative) triple contributes
//!   `relu(d_ap - d_an + margin)`, normalized by the count of strictly
//!   positive terms;
//! - batch-hard: per anchor only the hardest positive (max `d_ap`) and
//!   hardest negative (min `d_an`) form one term, averaged over anchors;
//! - hardness-exclusion: batch-all, but a triple is dropped whenever its
//!   anchor-positive distance exceeds the gate threshold
//!   `d = d_mean + alpha * (d_max - d_mean)`, where `d_mean`/`d_max` are
//!   statistics of all anchor-positive pair distances in the batch. The
//!   boundary is inclusive (`H(0) = 1`), so `alpha = 1` reproduces batch-all
//!   exactly.
//!
//! The gating direction is deliberate: instead of mining hard triplets, the
//! hardest positives are assumed to come from corrupted silhouettes and are
//! excluded from the objective.

pub mod kernel;

use thiserror::Error;

pub use kernel::{TripletConfig, TripletDiagnostics, TripletVariant};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("no anchor-positive pairs in batch")]
    EmptyBatch,
    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
}

/// Batch-level statistics that define the hardness-exclusion threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateStats {
    pub d_mean: f64,
    pub d_max: f64,
    pub alpha: f64,
    pub threshold: f64,
}

/// Computes `d = d_mean + alpha * (d_max - d_mean)` over the given
/// anchor-positive distances.
pub fn gate_threshold(ap_distances: &[f64], alpha: f64) -> Result<GateStats, LossError> {
    if ap_distances.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LossError::BadAlpha(alpha));
    }
    let d_mean = ap_distances.iter().sum::<f64>() / ap_distances.len() as f64;
    let d_max = ap_distances.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(GateStats { d_mean, d_max, alpha, threshold: d_mean + alpha * (d_max - d_mean) })
}

/// Hardness-exclusion triplet loss of a `[B, parts, dim]` embedding batch.
pub fn he_triplet<E: Scalar>(
    embeddings: &Tensor<E>,
    labels: &[usize],
    margin: f64,
    alpha: f64,
) -> (f64, TripletDiagnostics) {
    let cfg = TripletConfig { variant: TripletVariant::HardnessExclusion, margin, alpha };
    let out = kernel::triplet_forward(embeddings, labels, &cfg);
    (out.loss, out.diagnostics)
}

/// Batch-all triplet loss (no gating).
pub fn batch_all_triplet<E: Scalar>(
    embeddings: &Tensor<E>,
    labels: &[usize],
    margin: f64,
) -> (f64, TripletDiagnostics) {
    let cfg = TripletConfig { variant: TripletVariant::BatchAll, margin, alpha: 1.0 };
    let out = kernel::triplet_forward(embeddings, labels, &cfg);
    (out.loss, out.diagnostics)
}

/// Batch-hard triplet loss: hardest positive and hardest negative per anchor.
pub fn batch_hard_triplet<E: Scalar>(
    embeddings: &Tensor<E>,
    labels: &[usize],
    margin: f64,
) -> (f64, TripletDiagnostics) {
    let cfg = TripletConfig { variant: TripletVariant::BatchHard, margin, alpha: 1.0 };
    let out = kernel::triplet_forward(embeddings, labels, &cfg);
    (out.loss, out.diagnostics)
}
