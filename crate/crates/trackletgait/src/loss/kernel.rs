//! Shared forward/gradient kernel for the triplet-loss variants.
//!
//! Distances are computed in `f64` regardless of the embedding element type.
//! Gate decisions and hard-example selections are treated as constants of the
//! backward pass (the Heaviside step and max/min selections have zero
//! derivative almost everywhere), so gradients flow only through the
//! distances of the selected terms.

use super::gate_threshold;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripletVariant {
    HardnessExclusion,
    BatchAll,
    BatchHard,
}

impl TripletVariant {
    pub fn name(self) -> &'static str {
        match self {
            TripletVariant::HardnessExclusion => "he",
            TripletVariant::BatchAll => "batch_all",
            TripletVariant::BatchHard => "batch_hard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "he" => Some(TripletVariant::HardnessExclusion),
            "batch_all" => Some(TripletVariant::BatchAll),
            "batch_hard" => Some(TripletVariant::BatchHard),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TripletConfig {
    pub variant: TripletVariant,
    pub margin: f64,
    pub alpha: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig { variant: TripletVariant::HardnessExclusion, margin: 0.2, alpha: 2.0 / 3.0 }
    }
}

/// Batch facts reported alongside the loss value.
#[derive(Debug, Clone, Copy)]
pub struct TripletDiagnostics {
    /// Label-valid (anchor, positive, negative) triples in the batch.
    pub valid_triplets: usize,
    /// Terms that were strictly positive after mining/gating.
    pub active_terms: usize,
    /// Unordered anchor-positive pairs excluded by the gate.
    pub gated_pairs: usize,
    /// All unordered anchor-positive pairs.
    pub total_pairs: usize,
    /// Gate statistics (hardness-exclusion variant only).
    pub gate: Option<super::GateStats>,
    /// True when the batch has no valid triples at all.
    pub degenerate: bool,
}

impl TripletDiagnostics {
    /// Fraction of anchor-positive pairs the gate removed.
    pub fn excluded_pair_fraction(&self) -> f64 {
        if self.total_pairs == 0 {
            0.0
        } else {
            self.gated_pairs as f64 / self.total_pairs as f64
        }
    }
}

pub struct TripletOutput<E> {
    pub loss: f64,
    pub grad: Tensor<E>,
    pub diagnostics: TripletDiagnostics,
}

/// Part-averaged pairwise Euclidean distances, plus the per-part distances
/// kept for the gradient chain.
fn pairwise_distances<E: Scalar>(x: &Tensor<E>, b: usize, parts: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0f64; b * b];
    let mut per_part = vec![0.0f64; b * b * parts];
    for i in 0..b {
        for j in i + 1..b {
            let mut acc = 0.0;
            for p in 0..parts {
                let xi = &x.data()[(i * parts + p) * dim..][..dim];
                let xj = &x.data()[(j * parts + p) * dim..][..dim];
                let mut sq = 0.0f64;
                for (&a, &c) in xi.iter().zip(xj) {
                    let d = a.as_f64() - c.as_f64();
                    sq += d * d;
                }
                let d = sq.sqrt();
                per_part[(i * b + j) * parts + p] = d;
                per_part[(j * b + i) * parts + p] = d;
                acc += d;
            }
            let d = acc / parts as f64;
            mean[i * b + j] = d;
            mean[j * b + i] = d;
        }
    }
    (mean, per_part)
}

pub fn triplet_forward<E: Scalar>(x: &Tensor<E>, labels: &[usize], cfg: &TripletConfig) -> TripletOutput<E> {
    let (b, parts, dim) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (dist, per_part) = pairwise_distances(x, b, parts, dim);

    // Unordered anchor-positive pair distances feed the gate statistics.
    let mut ap: Vec<f64> = Vec::new();
    for i in 0..b {
        for j in i + 1..b {
            if labels[i] == labels[j] {
                ap.push(dist[i * b + j]);
            }
        }
    }
    let total_pairs = ap.len();

    let gate = match cfg.variant {
        TripletVariant::HardnessExclusion => gate_threshold(&ap, cfg.alpha).ok(),
        _ => None,
    };
    let threshold = gate.map(|g| g.threshold).unwrap_or(f64::INFINITY);
    let gated_pairs = match gate {
        Some(g) => ap.iter().filter(|&&d| d > g.threshold).count(),
        None => 0,
    };

    // pair_coef[i * b + j] collects d(dist[i,j]) coefficients of the loss.
    let mut pair_coef = vec![0.0f64; b * b];
    let mut valid_triplets = 0usize;
    let mut active_terms = 0usize;
    let mut loss;

    match cfg.variant {
        TripletVariant::HardnessExclusion | TripletVariant::BatchAll => {
            let mut sum = 0.0f64;
            for a in 0..b {
                for p in 0..b {
                    if p == a || labels[p] != labels[a] {
                        continue;
                    }
                    let d_ap = dist[a * b + p];
                    // Inclusive boundary: H(0) = 1, so alpha = 1 keeps every pair.
                    let open = d_ap <= threshold;
                    for n in 0..b {
                        if labels[n] == labels[a] {
                            continue;
                        }
                        valid_triplets += 1;
                        if !open {
                            continue;
                        }
                        let term = d_ap - dist[a * b + n] + cfg.margin;
                        if term > 0.0 {
                            active_terms += 1;
                            sum += term;
                            pair_coef[a * b + p] += 1.0;
                            pair_coef[a * b + n] -= 1.0;
                        }
                    }
                }
            }
            loss = if active_terms > 0 { sum / active_terms as f64 } else { 0.0 };
            if active_terms > 0 {
                let inv = 1.0 / active_terms as f64;
                for c in pair_coef.iter_mut() {
                    *c *= inv;
                }
            }
        }
        TripletVariant::BatchHard => {
            let mut anchors = 0usize;
            let mut sum = 0.0f64;
            let mut selections: Vec<(usize, usize, usize)> = Vec::new();
            for a in 0..b {
                let mut hardest_pos: Option<(usize, f64)> = None;
                let mut hardest_neg: Option<(usize, f64)> = None;
                for o in 0..b {
                    if o == a {
                        continue;
                    }
                    let d = dist[a * b + o];
                    if labels[o] == labels[a] {
                        if hardest_pos.map_or(true, |(_, best)| d > best) {
                            hardest_pos = Some((o, d));
                        }
                    } else if hardest_neg.map_or(true, |(_, best)| d < best) {
                        hardest_neg = Some((o, d));
                    }
                }
                if let (Some((p, dp)), Some((n, dn))) = (hardest_pos, hardest_neg) {
                    anchors += 1;
                    valid_triplets += 1;
                    let term = dp - dn + cfg.margin;
                    if term > 0.0 {
                        active_terms += 1;
                        sum += term;
                        selections.push((a, p, n));
                    }
                }
            }
            loss = if anchors > 0 { sum / anchors as f64 } else { 0.0 };
            if anchors > 0 {
                let inv = 1.0 / anchors as f64;
                for (a, p, n) in selections {
                    pair_coef[a * b + p] += inv;
                    pair_coef[a * b + n] -= inv;
                }
            }
        }
    }

    let degenerate = valid_triplets == 0;
    if degenerate {
        loss = 0.0;
    }

    // Chain through d(i,j) = mean_p ||x_i,p - x_j,p||.
    let mut grad = vec![E::zero(); x.numel()];
    let part_norm = 1.0 / parts as f64;
    for i in 0..b {
        for j in 0..b {
            let coef = pair_coef[i * b + j];
            if coef == 0.0 {
                continue;
            }
            for p in 0..parts {
                let d = per_part[(i * b + j) * parts + p];
                if d == 0.0 {
                    continue;
                }
                let scale = coef * part_norm / d;
                let (lo, hi) = ((i * parts + p) * dim, (j * parts + p) * dim);
                for k in 0..dim {
                    let diff = (x.data()[lo + k].as_f64() - x.data()[hi + k].as_f64()) * scale;
                    grad[lo + k] = grad[lo + k] + E::from_f64(diff);
                    grad[hi + k] = grad[hi + k] - E::from_f64(diff);
                }
            }
        }
    }

    TripletOutput {
        loss,
        grad: Tensor::new(x.shape().to_vec(), grad),
        diagnostics: TripletDiagnostics {
            valid_triplets,
            active_terms,
            gated_pairs,
            total_pairs,
            gate,
            degenerate,
        },
    }
}
