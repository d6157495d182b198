//! Temporal sampling of frame indices for training.
//!
//! Three strategies over a sequence of `M` frames, all producing exactly `N`
//! indices (1-based):
//!
//! - consecutive: one run of `N` adjacent frames from a random start;
//! - random-frame: `N` independent uniform draws with replacement;
//! - random-tracklet: a tracklet length `l` is drawn from a configured
//!   distribution, then `N / l` tracklets of `l` frames (step `s`) are sampled
//!   from independent random starts and concatenated.
//!
//! Random-tracklet sampling generalizes the other two: the `{l = N}`
//! distribution reproduces consecutive sampling and `{l = 1}` reproduces
//! random-frame sampling, start-for-start in law.
//!
//! Sequences too short for a tracklet (`M < (l-1)s + 1`) are extended
//! cyclically: indices wrap around modulo `M`, so every sequence is usable
//! while temporal adjacency is preserved across the wrap.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("tracklet length {l} does not divide the sample budget {n}")]
    LengthDoesNotDivide { l: usize, n: usize },
    #[error("length distribution is empty")]
    EmptyDistribution,
    #[error("length probabilities sum to {sum}, expected 1")]
    BadProbabilitySum { sum: f64 },
    #[error("invalid probability {p} for length {l}")]
    BadProbability { l: usize, p: f64 },
    #[error("cannot parse length distribution entry {0:?}, expected l:p")]
    ParseEntry(String),
}

/// Which strategy produced a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Consecutive,
    RandomFrame,
    RandomTracklet,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Consecutive => "cs",
            Strategy::RandomFrame => "rfs",
            Strategy::RandomTracklet => "rts",
        }
    }
}

/// One sampled tracklet: `len` frames from `start`, advancing `step` each time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackletSpec {
    pub start: usize,
    pub len: usize,
    pub step: usize,
}

/// The frame-index multiset for one training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingPlan {
    pub indices: Vec<usize>,
    pub tracklets: Vec<TrackletSpec>,
    pub strategy: Strategy,
}

/// Probability mass over tracklet lengths; every length must divide `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthDistribution {
    entries: Vec<(usize, f64)>,
}

impl LengthDistribution {
    pub fn new(mut entries: Vec<(usize, f64)>) -> Result<Self, SamplingError> {
        if entries.is_empty() {
            return Err(SamplingError::EmptyDistribution);
        }
        for &(l, p) in &entries {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(SamplingError::BadProbability { l, p });
            }
        }
        let sum: f64 = entries.iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SamplingError::BadProbabilitySum { sum });
        }
        entries.sort_by_key(|&(l, _)| l);
        Ok(LengthDistribution { entries })
    }

    /// A point mass on a single length.
    pub fn fixed(l: usize) -> Self {
        LengthDistribution { entries: vec![(l, 1.0)] }
    }

    /// Parses `"8:0.2,16:0.3,32:0.5"`.
    pub fn parse(text: &str) -> Result<Self, SamplingError> {
        let mut entries = Vec::new();
        for part in text.split(',') {
            let part = part.trim();
            let (l, p) = part
                .split_once(':')
                .ok_or_else(|| SamplingError::ParseEntry(part.to_string()))?;
            let l: usize = l.trim().parse().map_err(|_| SamplingError::ParseEntry(part.to_string()))?;
            let p: f64 = p.trim().parse().map_err(|_| SamplingError::ParseEntry(part.to_string()))?;
            entries.push((l, p));
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn validate_divides(&self, n: usize) -> Result<(), SamplingError> {
        for &(l, _) in &self.entries {
            if l == 0 || n % l != 0 {
                return Err(SamplingError::LengthDoesNotDivide { l, n });
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(l, p) in &self.entries {
            acc += p;
            if u < acc {
                return l;
            }
        }
        self.entries.last().unwrap().0
    }
}

/// Indices of one tracklet under the cyclic extension rule (1-based, within `[1, m]`).
fn tracklet_indices(m: usize, spec: TrackletSpec) -> Vec<usize> {
    (0..spec.len)
        .map(|j| (spec.start - 1 + j * spec.step) % m + 1)
        .collect()
}

/// Draws a tracklet start so the whole tracklet fits when possible; otherwise
/// any start is allowed and indices wrap cyclically.
fn draw_start(m: usize, len: usize, step: usize, rng: &mut impl Rng) -> usize {
    let span = (len - 1) * step + 1;
    if span <= m {
        rng.gen_range(1..=m - span + 1)
    } else {
        rng.gen_range(1..=m)
    }
}

fn sample_tracklets(
    m: usize,
    n: usize,
    l: usize,
    step: usize,
    strategy: Strategy,
    rng: &mut impl Rng,
) -> SamplingPlan {
    let count = n / l;
    let mut indices = Vec::with_capacity(n);
    let mut tracklets = Vec::with_capacity(count);
    for _ in 0..count {
        let spec = TrackletSpec { start: draw_start(m, l, step, rng), len: l, step };
        indices.extend(tracklet_indices(m, spec));
        tracklets.push(spec);
    }
    SamplingPlan { indices, tracklets, strategy }
}

/// Consecutive sampling: `N` adjacent frames from a uniformly random start.
pub fn sample_cs(m: usize, n: usize, rng: &mut impl Rng) -> SamplingPlan {
    assert!(m >= 1 && n >= 1);
    sample_tracklets(m, n, n, 1, Strategy::Consecutive, rng)
}

/// Random frame sampling: `N` independent uniform draws with replacement.
pub fn sample_rfs(m: usize, n: usize, rng: &mut impl Rng) -> SamplingPlan {
    assert!(m >= 1 && n >= 1);
    sample_tracklets(m, n, 1, 1, Strategy::RandomFrame, rng)
}

/// Random tracklet sampling: draw `l` from `dist`, then concatenate `N / l`
/// independently started tracklets of length `l` and step `step`.
pub fn sample_rts(
    m: usize,
    n: usize,
    dist: &LengthDistribution,
    step: usize,
    rng: &mut impl Rng,
) -> Result<SamplingPlan, SamplingError> {
    assert!(m >= 1 && n >= 1 && step >= 1);
    dist.validate_divides(n)?;
    let l = dist.draw(rng);
    Ok(sample_tracklets(m, n, l, step, Strategy::RandomTracklet, rng))
}
