//! Evaluation metrics: gallery/probe retrieval (rank-n, mAP), foreground
//! pixel-rate traces, the AIFV dataset-variability score, and half-gait-cycle
//! estimation.
//!
//! AIFV (average inter-frame variation) is the dataset mean of each
//! sequence's `max - min` foreground pixel rate, where a pixel counts as
//! foreground iff its value is strictly above 0.5. Constant sequences score
//! 0; wilder, less periodic footage scores higher.

use thiserror::Error;

use crate::dataset::SilhouetteFrame;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("empty gallery or probe set")]
    EmptyEval,
}

/// Fraction of pixels strictly above 0.5.
pub fn pixel_rate(frame: &SilhouetteFrame) -> f64 {
    let fg = frame.pixels.iter().filter(|&&p| p > 0.5).count();
    fg as f64 / (frame.h * frame.w) as f64
}

/// Per-frame foreground pixel rates of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelRateTrace {
    pub rates: Vec<f64>,
}

impl PixelRateTrace {
    pub fn from_frames(frames: &[SilhouetteFrame]) -> Self {
        PixelRateTrace { rates: frames.iter().map(pixel_rate).collect() }
    }

    pub fn range(&self) -> f64 {
        let max = self.rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.rates.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Average inter-frame variation: mean over sequences of the per-sequence
/// pixel-rate range.
pub fn aifv(traces: &[PixelRateTrace]) -> Result<f64, MetricsError> {
    if traces.is_empty() || traces.iter().any(|t| t.rates.is_empty()) {
        return Err(MetricsError::EmptyDataset);
    }
    Ok(traces.iter().map(PixelRateTrace::range).sum::<f64>() / traces.len() as f64)
}

/// Result of a half-cycle estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfCycle {
    /// Dominant period in frames.
    pub period: usize,
    /// False when the trace shows no usable periodicity.
    pub valid: bool,
    /// Normalized autocorrelation at the chosen lag.
    pub strength: f64,
}

/// Minimum and maximum candidate lags for the half-cycle search.
pub const HALF_CYCLE_LAGS: (usize, usize) = (4, 40);
/// Minimum normalized autocorrelation for a valid estimate.
pub const HALF_CYCLE_MIN_STRENGTH: f64 = 0.1;

/// Dominant period of the mean-subtracted trace: the lag in `[4, 40]` with the
/// highest normalized autocorrelation among local maxima. The estimate is
/// flagged invalid when the trace has no variance or the best peak is weaker
/// than 0.1.
pub fn half_cycle_stats(trace: &PixelRateTrace) -> HalfCycle {
    let n = trace.rates.len();
    assert!(n >= 8, "trace must have at least 8 frames");
    let mean = trace.rates.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.rates.iter().map(|r| r - mean).collect();
    let energy: f64 = centered.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return HalfCycle { period: 0, valid: false, strength: 0.0 };
    }

    let autocorr = |lag: usize| -> f64 {
        if lag >= n {
            return f64::NEG_INFINITY;
        }
        let mut acc = 0.0;
        for i in 0..n - lag {
            acc += centered[i] * centered[i + lag];
        }
        acc / energy
    };

    let (lo, hi) = HALF_CYCLE_LAGS;
    let hi = hi.min(n.saturating_sub(2));
    let mut best: Option<(usize, f64)> = None;
    for lag in lo..=hi {
        let r = autocorr(lag);
        // local maximum against immediate neighbors
        if autocorr(lag.saturating_sub(1).max(1)) <= r || lag == lo {
            if r >= autocorr(lag + 1) && best.map_or(true, |(_, b)| r > b) {
                best = Some((lag, r));
            }
        }
    }
    match best {
        Some((lag, r)) if r >= HALF_CYCLE_MIN_STRENGTH => HalfCycle { period: lag, valid: true, strength: r },
        Some((lag, r)) => HalfCycle { period: lag, valid: false, strength: r },
        None => HalfCycle { period: 0, valid: false, strength: 0.0 },
    }
}

/// One enrolled or query item: a `[parts, dim]` embedding with identity.
#[derive(Debug, Clone)]
pub struct EvalItem<E: Scalar> {
    pub embedding: Tensor<E>,
    pub subject_id: String,
    pub sequence_id: String,
}

/// Retrieval quality over a gallery/probe split.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rank_1: f64,
    pub rank_5: f64,
    pub rank_10: f64,
    pub mean_ap: f64,
    /// Probes skipped because their identity never appears in the gallery.
    pub skipped_probes: usize,
    pub evaluated_probes: usize,
    /// Per-probe `(subject_id, sequence_id, rank of first correct match,
    /// average precision)`.
    pub details: Vec<(String, String, usize, f64)>,
}

/// Part-summed Euclidean distance between two `[parts, dim]` embeddings.
fn embedding_distance<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> f64 {
    let parts = a.shape()[0];
    let dim = a.shape()[1];
    let mut total = 0.0f64;
    for p in 0..parts {
        let mut sq = 0.0f64;
        for k in 0..dim {
            let d = a.data()[p * dim + k].as_f64() - b.data()[p * dim + k].as_f64();
            sq += d * d;
        }
        total += sq.sqrt();
    }
    total
}

/// Ranks the gallery for every probe by ascending part-summed Euclidean
/// distance and reports rank-n accuracy and mean average precision.
///
/// Gallery items sharing the probe's exact (subject, sequence) identity are
/// excluded from its ranking. Probes whose subject never appears in the
/// gallery are excluded from the averages and counted in the report.
pub fn evaluate<E: Scalar>(gallery: &[EvalItem<E>], probes: &[EvalItem<E>]) -> Result<EvalReport, MetricsError> {
    if gallery.is_empty() || probes.is_empty() {
        return Err(MetricsError::EmptyEval);
    }
    let mut hits = [0usize; 3]; // rank-1, rank-5, rank-10
    let mut ap_sum = 0.0f64;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut details = Vec::with_capacity(probes.len());

    for probe in probes {
        let mut ranked: Vec<(f64, usize)> = gallery
            .iter()
            .enumerate()
            .filter(|(_, g)| {
                !(g.subject_id == probe.subject_id && g.sequence_id == probe.sequence_id)
            })
            .map(|(i, g)| (embedding_distance(&g.embedding, &probe.embedding), i))
            .collect();
        let relevant = ranked
            .iter()
            .filter(|&&(_, i)| gallery[i].subject_id == probe.subject_id)
            .count();
        if relevant == 0 {
            skipped += 1;
            continue;
        }
        ranked.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

        let mut first_correct = 0usize;
        let mut correct_so_far = 0usize;
        let mut ap = 0.0f64;
        for (rank0, &(_, i)) in ranked.iter().enumerate() {
            if gallery[i].subject_id == probe.subject_id {
                correct_so_far += 1;
                ap += correct_so_far as f64 / (rank0 + 1) as f64;
                if first_correct == 0 {
                    first_correct = rank0 + 1;
                }
            }
        }
        ap /= relevant as f64;

        evaluated += 1;
        ap_sum += ap;
        if first_correct <= 1 {
            hits[0] += 1;
        }
        if first_correct <= 5 {
            hits[1] += 1;
        }
        if first_correct <= 10 {
            hits[2] += 1;
        }
        details.push((probe.subject_id.clone(), probe.sequence_id.clone(), first_correct, ap));
    }

    if evaluated == 0 {
        return Err(MetricsError::EmptyEval);
    }
    let pct = |h: usize| 100.0 * h as f64 / evaluated as f64;
    Ok(EvalReport {
        rank_1: pct(hits[0]),
        rank_5: pct(hits[1]),
        rank_10: pct(hits[2]),
        mean_ap: 100.0 * ap_sum / evaluated as f64,
        skipped_probes: skipped,
        evaluated_probes: evaluated,
        details,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{self, SynthConfig};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame_with_rate(k: usize, total: usize, w: usize) -> SilhouetteFrame {
        let h = total / w;
        let mut pixels = vec![0.0f32; total];
        for p in pixels.iter_mut().take(k) {
            *p = 1.0;
        }
        SilhouetteFrame::new(h, w, pixels)
    }

    #[test]
    fn pixel_rate_extremes() {
        assert_eq!(pixel_rate(&SilhouetteFrame::zeros(4, 4)), 0.0);
        assert_eq!(pixel_rate(&frame_with_rate(16, 16, 4)), 1.0);
        assert_eq!(pixel_rate(&frame_with_rate(8, 16, 4)), 0.5);
    }

    #[test]
    fn pixel_rate_uses_strict_threshold() {
        let half = SilhouetteFrame::new(2, 2, vec![0.5; 4]);
        assert_eq!(pixel_rate(&half), 0.0);
    }

    #[test]
    fn aifv_of_constant_sequences_is_zero() {
        let t = PixelRateTrace { rates: vec![0.3; 10] };
        assert_eq!(aifv(&[t.clone(), t]).unwrap(), 0.0);
    }

    #[test]
    fn aifv_averages_ranges() {
        let a = PixelRateTrace { rates: vec![0.2, 0.25, 0.3] }; // range 0.1
        let b = PixelRateTrace { rates: vec![0.1, 0.4, 0.25] }; // range 0.3
        assert_relative_eq!(aifv(&[a, b]).unwrap(), 0.2, epsilon = 1e-9);
    }

    #[test]
    fn aifv_empty_errors() {
        assert_eq!(aifv(&[]).unwrap_err(), MetricsError::EmptyDataset);
    }

    #[test]
    fn aifv_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut traces: Vec<PixelRateTrace> = (0..6)
            .map(|_| PixelRateTrace { rates: (0..20).map(|_| rng.gen_range(0.0..1.0)).collect() })
            .collect();
        let baseline = aifv(&traces).unwrap();
        // shuffle sequences and frames
        traces.reverse();
        for t in traces.iter_mut() {
            t.rates.reverse();
            t.rates.rotate_left(7);
        }
        assert_relative_eq!(aifv(&traces).unwrap(), baseline, epsilon = 1e-15);
    }

    #[test]
    fn half_cycle_of_sinusoid() {
        let period = 14.0f64;
        let rates: Vec<f64> =
            (0..120).map(|t| 0.3 + 0.05 * (2.0 * std::f64::consts::PI * t as f64 / period).sin()).collect();
        let est = half_cycle_stats(&PixelRateTrace { rates });
        assert!(est.valid);
        assert!((est.period as f64 - period).abs() <= 1.0, "period {}", est.period);
    }

    #[test]
    fn half_cycle_of_square_wave() {
        let rates: Vec<f64> = (0..120).map(|t| if (t / 6) % 2 == 0 { 0.25 } else { 0.35 }).collect();
        let est = half_cycle_stats(&PixelRateTrace { rates });
        assert!(est.valid);
        assert!((est.period as i64 - 12).unsigned_abs() <= 1, "period {}", est.period);
    }

    #[test]
    fn half_cycle_of_constant_trace_is_invalid() {
        let est = half_cycle_stats(&PixelRateTrace { rates: vec![0.25; 50] });
        assert!(!est.valid);
    }

    #[test]
    fn synthetic_subjects_with_different_strides_measure_differently() {
        // Find two subjects whose configured half cycles differ by >= 3 frames
        // and check the measured periods preserve the ordering.
        let cfg = SynthConfig::new(8, 1, 96, 11);
        let seqs = synth::generate(&cfg);
        let mut measured: Vec<(f64, f64)> = Vec::new();
        for (i, (seq, _)) in seqs.iter().enumerate() {
            let expected = synth::subject_half_cycle(&cfg, i);
            let est = half_cycle_stats(&PixelRateTrace::from_frames(&seq.frames));
            if est.valid {
                measured.push((expected, est.period as f64));
            }
        }
        assert!(measured.len() >= 4, "most walkers should have measurable periodicity");
        let (lo, hi) = (
            measured.iter().cloned().fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a }),
            measured.iter().cloned().fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a }),
        );
        assert!(hi.0 - lo.0 >= 3.0, "seed should produce distinct strides");
        assert!(
            hi.1 > lo.1,
            "longer configured stride must measure longer: {lo:?} vs {hi:?}"
        );
        // measured periods track the configured half cycle within 2 frames
        for &(expected, got) in &measured {
            assert!((expected - got).abs() <= 2.0, "expected {expected}, measured {got}");
        }
    }

    fn item(embedding: Vec<f64>, parts: usize, subject: &str, sequence: &str) -> EvalItem<f64> {
        let dim = embedding.len() / parts;
        EvalItem {
            embedding: Tensor::new(vec![parts, dim], embedding),
            subject_id: subject.into(),
            sequence_id: sequence.into(),
        }
    }

    #[test]
    fn self_retrieval_is_perfect_with_distinct_sequence_ids() {
        let gallery: Vec<EvalItem<f64>> = (0..5)
            .map(|i| item(vec![i as f64, 0.0], 1, &format!("s{i}"), "g"))
            .collect();
        let probes: Vec<EvalItem<f64>> = (0..5)
            .map(|i| item(vec![i as f64, 0.0], 1, &format!("s{i}"), "p"))
            .collect();
        let report = evaluate(&gallery, &probes).unwrap();
        assert_eq!(report.rank_1, 100.0);
        assert_eq!(report.mean_ap, 100.0);
        assert_eq!(report.skipped_probes, 0);
    }

    #[test]
    fn rank_three_match_scores_one_third_ap() {
        // gallery: three wrong-but-closer items? No: one relevant at rank 3.
        let gallery = vec![
            item(vec![1.0], 1, "other_a", "g0"),
            item(vec![2.0], 1, "other_b", "g1"),
            item(vec![3.0], 1, "target", "g2"),
        ];
        let probes = vec![item(vec![0.0], 1, "target", "p0")];
        let report = evaluate(&gallery, &probes).unwrap();
        assert_eq!(report.rank_1, 0.0);
        assert_eq!(report.rank_5, 100.0);
        assert_eq!(report.rank_10, 100.0);
        assert_relative_eq!(report.mean_ap, 100.0 / 3.0, epsilon = 1e-9);
        assert_eq!(report.details[0].2, 3);
    }

    #[test]
    fn probe_without_gallery_identity_is_skipped() {
        let gallery = vec![item(vec![0.0], 1, "a", "g0")];
        let probes = vec![item(vec![0.0], 1, "a", "p"), item(vec![1.0], 1, "missing", "p")];
        let report = evaluate(&gallery, &probes).unwrap();
        assert_eq!(report.skipped_probes, 1);
        assert_eq!(report.evaluated_probes, 1);
    }

    #[test]
    fn exact_sequence_matches_are_excluded() {
        // The only gallery item shares the probe's (subject, sequence) pair, so
        // nothing remains to rank against.
        let gallery = vec![item(vec![0.0], 1, "a", "same")];
        let probes = vec![item(vec![0.0], 1, "a", "same")];
        assert_eq!(evaluate(&gallery, &probes).unwrap_err(), MetricsError::EmptyEval);
    }

    #[test]
    fn random_embeddings_score_near_chance() {
        // g identities x 1 gallery item, random probes: expected rank-1 is
        // about 100/g percent.
        let g = 10usize;
        let trials = 10_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut rank1_hits = 0usize;
        let per_batch = 50;
        for _ in 0..trials / per_batch {
            let gallery: Vec<EvalItem<f64>> = (0..g)
                .map(|i| {
                    let e: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    item(e, 1, &format!("s{i}"), "g")
                })
                .collect();
            let probes: Vec<EvalItem<f64>> = (0..per_batch)
                .map(|j| {
                    let e: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    item(e, 1, &format!("s{}", j % g), "p")
                })
                .collect();
            let report = evaluate(&gallery, &probes).unwrap();
            rank1_hits += (report.rank_1 / 100.0 * report.evaluated_probes as f64).round() as usize;
        }
        let rate = rank1_hits as f64 / trials as f64;
        let expected = 1.0 / g as f64;
        assert!((rate - expected).abs() < 0.02, "rank-1 rate {rate} vs chance {expected}");
    }

    #[test]
    fn ranking_is_invariant_under_rigid_transforms() {
        // Same orthogonal transform (permutation + sign flips) plus a common
        // translation applied to every embedding preserves all rankings.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dim = 6;
        let make = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..2 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let gallery: Vec<EvalItem<f64>> =
            (0..8).map(|i| item(make(&mut rng), 2, &format!("s{}", i % 4), &format!("g{i}"))).collect();
        let probes: Vec<EvalItem<f64>> =
            (0..6).map(|i| item(make(&mut rng), 2, &format!("s{}", i % 4), &format!("p{i}"))).collect();
        let base = evaluate(&gallery, &probes).unwrap();

        let perm: Vec<usize> = vec![3, 0, 5, 1, 4, 2];
        let signs: Vec<f64> = vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0];
        let shift: Vec<f64> = (0..dim).map(|i| i as f64 * 0.37 - 1.0).collect();
        let transform = |it: &EvalItem<f64>| -> EvalItem<f64> {
            let mut e = vec![0.0; 2 * dim];
            for p in 0..2 {
                for j in 0..dim {
                    e[p * dim + j] = signs[j] * it.embedding.data()[p * dim + perm[j]] + shift[j];
                }
            }
            EvalItem {
                embedding: Tensor::new(vec![2, dim], e),
                subject_id: it.subject_id.clone(),
                sequence_id: it.sequence_id.clone(),
            }
        };
        let gallery_t: Vec<_> = gallery.iter().map(transform).collect();
        let probes_t: Vec<_> = probes.iter().map(transform).collect();
        let moved = evaluate(&gallery_t, &probes_t).unwrap();
        assert_eq!(base.rank_1, moved.rank_1);
        assert_eq!(base.rank_5, moved.rank_5);
        assert_relative_eq!(base.mean_ap, moved.mean_ap, epsilon = 1e-9);
    }

    #[test]
    fn rank_n_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let gallery: Vec<EvalItem<f64>> = (0..20)
            .map(|i| {
                let e: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                item(e, 1, &format!("s{}", i % 10), &format!("g{i}"))
            })
            .collect();
        let probes: Vec<EvalItem<f64>> = (0..10)
            .map(|i| {
                let e: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                item(e, 1, &format!("s{i}"), &format!("p{i}"))
            })
            .collect();
        let r = evaluate(&gallery, &probes).unwrap();
        assert!(r.rank_1 <= r.rank_5 && r.rank_5 <= r.rank_10);
        assert!((0.0..=100.0).contains(&r.mean_ap));
    }
}
