//! Synthetic silhouette sequences: parameterized articulated stick-figure
//! walkers rendered to binary 64x44 frames.
//!
//! Each subject draws its own body proportions, stride period, and swing
//! amplitudes; each sequence of a subject adds start-phase and walking-speed
//! jitter (plus optional occlusion bars), so sequences of one subject are
//! similar but never identical. All geometry runs in Q16 fixed point with a
//! table-driven sine and Bresenham rasterization, so output is byte-identical
//! across platforms for a fixed seed.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    DataError, DatasetManifest, ManifestEntry, SilhouetteFrame, SilhouetteSequence, Split, FRAME_H,
    FRAME_W,
};

/// Quarter-wave sine table: `sin(i * pi / 128) * 65536` for `i` in `0..=64`.
const SIN_Q16: [i32; 65] = [
    0, 1608, 3216, 4821, 6424, 8022, 9616, 11204,
    12785, 14359, 15924, 17479, 19024, 20557, 22078, 23586,
    25080, 26558, 28020, 29466, 30893, 32303, 33692, 35062,
    36410, 37736, 39040, 40320, 41576, 42806, 44011, 45190,
    46341, 47464, 48559, 49624, 50660, 51665, 52639, 53581,
    54491, 55368, 56212, 57022, 57798, 58538, 59244, 59914,
    60547, 61145, 61705, 62228, 62714, 63162, 63572, 63944,
    64277, 64571, 64827, 65043, 65220, 65358, 65457, 65516,
    65536,
];

/// Sine of an angle in Q16 turns (65536 = one full turn), Q16 result.
fn sin_q16(angle: i64) -> i64 {
    let a = angle.rem_euclid(65536) as u32;
    let quadrant = a >> 14;
    let u = (a & 0x3fff) as usize; // position within the quarter, 14 bits
    let fold = match quadrant {
        0 | 2 => u,
        _ => 0x4000 - u,
    };
    let idx = fold >> 8;
    let frac = (fold & 0xff) as i64;
    let lo = SIN_Q16[idx] as i64;
    let hi = SIN_Q16[(idx + 1).min(64)] as i64;
    let v = lo + (((hi - lo) * frac) >> 8);
    if quadrant >= 2 { -v } else { v }
}

fn cos_q16(angle: i64) -> i64 {
    sin_q16(angle + 16384)
}

fn round_px(v: i64) -> i64 {
    (v + 32768) >> 16
}

struct Canvas {
    data: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Canvas { data: vec![0; FRAME_H * FRAME_W] }
    }

    fn dot(&mut self, x: i64, y: i64, r: i64) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && px < FRAME_W as i64 && py >= 0 && py < FRAME_H as i64 {
                    self.data[py as usize * FRAME_W + px as usize] = 1;
                }
            }
        }
    }

    /// Thick segment via Bresenham with a disc stamped at every step.
    fn segment(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, r: i64) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.dot(x, y, r);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct SubjectParams {
    stride_period: i64,     // frames per full gait cycle
    leg_len: i64,           // px
    torso_len: i64,         // px
    torso_halfwidth: i64,   // px
    head_r: i64,            // px
    arm_len: i64,           // px
    leg_amp: i64,           // Q16 turns
    arm_amp: i64,           // Q16 turns
}

impl SubjectParams {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        SubjectParams {
            stride_period: rng.gen_range(16..=28),
            leg_len: rng.gen_range(24..=30),
            torso_len: rng.gen_range(13..=18),
            torso_halfwidth: rng.gen_range(2..=4),
            head_r: rng.gen_range(3..=5),
            arm_len: rng.gen_range(15..=20),
            leg_amp: rng.gen_range(3932..=7209),  // 0.06 .. 0.11 turns
            arm_amp: rng.gen_range(2621..=5243),  // 0.04 .. 0.08 turns
        }
    }

    /// The dominant period of the foreground pixel-rate signal is half the
    /// stride period (legs pass each other twice per cycle).
    pub fn half_cycle_frames(&self) -> f64 {
        self.stride_period as f64 / 2.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub subjects: usize,
    pub sequences_per_subject: usize,
    pub frames_per_sequence: usize,
    pub seed: u64,
    /// Per-frame probability of an occlusion bar erasing part of the
    /// silhouette; 0 disables corruption.
    pub occlusion_prob: f64,
}

impl SynthConfig {
    pub fn new(subjects: usize, sequences_per_subject: usize, frames_per_sequence: usize, seed: u64) -> Self {
        assert!(subjects >= 1 && sequences_per_subject >= 1 && frames_per_sequence >= 1);
        SynthConfig { subjects, sequences_per_subject, frames_per_sequence, seed, occlusion_prob: 0.0 }
    }

    pub fn with_occlusion(mut self, prob: f64) -> Self {
        self.occlusion_prob = prob;
        self
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over a combined word
    let mut z = seed ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn render_frame(p: &SubjectParams, phase: i64, bob: i64, occlusion: Option<(bool, i64, i64)>) -> SilhouetteFrame {
    let mut canvas = Canvas::new();
    let cx = (FRAME_W / 2) as i64;
    let ground = (FRAME_H - 2) as i64;

    let hip_y = ground - p.leg_len + bob;
    let neck_y = hip_y - p.torso_len;
    let head_cy = neck_y - p.head_r - 1;
    let shoulder_y = neck_y + 2;

    let hip = (cx << 16, hip_y << 16);
    let shoulder = (cx << 16, shoulder_y << 16);

    // Legs swing in antiphase; arms are in antiphase with their same-side leg.
    let leg_theta = (p.leg_amp * sin_q16(phase)) >> 16;
    let arm_theta = (p.arm_amp * sin_q16(phase + 32768)) >> 16;

    for sign in [1i64, -1] {
        let theta = sign * leg_theta;
        let foot_x = hip.0 + p.leg_len * sin_q16(theta);
        let foot_y = hip.1 + p.leg_len * cos_q16(theta);
        canvas.segment(round_px(hip.0), round_px(hip.1), round_px(foot_x), round_px(foot_y), 1);

        let a_theta = sign * arm_theta;
        let hand_x = shoulder.0 + p.arm_len * sin_q16(a_theta);
        let hand_y = shoulder.1 + p.arm_len * cos_q16(a_theta);
        canvas.segment(
            round_px(shoulder.0),
            round_px(shoulder.1),
            round_px(hand_x),
            round_px(hand_y),
            1,
        );
    }

    canvas.segment(cx, hip_y, cx, neck_y, p.torso_halfwidth);
    canvas.dot(cx, head_cy, p.head_r);

    if let Some((horizontal, pos, size)) = occlusion {
        if horizontal {
            for y in pos..(pos + size).min(FRAME_H as i64) {
                for x in 0..FRAME_W {
                    canvas.data[y as usize * FRAME_W + x] = 0;
                }
            }
        } else {
            for y in 0..FRAME_H {
                for x in pos..(pos + size).min(FRAME_W as i64) {
                    canvas.data[y * FRAME_W + x as usize] = 0;
                }
            }
        }
    }

    SilhouetteFrame::new(FRAME_H, FRAME_W, canvas.data.into_iter().map(f32::from).collect())
}

/// Generates all sequences with their suggested split: the last sequence of
/// every subject becomes the probe (when a subject has more than one), the
/// rest are training data. Deterministic for a fixed config.
pub fn generate(cfg: &SynthConfig) -> Vec<(SilhouetteSequence, Split)> {
    let mut out = Vec::with_capacity(cfg.subjects * cfg.sequences_per_subject);
    for subject in 0..cfg.subjects {
        let mut subject_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, subject as u64, 0xa11ce));
        let params = SubjectParams::draw(&mut subject_rng);
        for seq in 0..cfg.sequences_per_subject {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, subject as u64, 0xb0b + seq as u64));
            let phase0: i64 = rng.gen_range(0..65536);
            // walking-speed jitter: +-10% on the stride period
            let jitter_q16: i64 = rng.gen_range(58982..=72090);
            let period_q16 = (params.stride_period << 16) * jitter_q16 >> 16;
            let dphase = (65536i64 << 16) / period_q16;
            let bob_amp: i64 = rng.gen_range(0..=1);

            let mut frames = Vec::with_capacity(cfg.frames_per_sequence);
            for t in 0..cfg.frames_per_sequence {
                let phase = phase0 + dphase * t as i64;
                // body rises twice per stride
                let bob = bob_amp * sin_q16(2 * phase).signum();
                let occlusion = if cfg.occlusion_prob > 0.0 && rng.gen_bool(cfg.occlusion_prob) {
                    let horizontal = rng.gen_bool(2.0 / 3.0);
                    if horizontal {
                        let size = rng.gen_range(10..=22);
                        let pos = rng.gen_range(0..FRAME_H as i64 - size);
                        Some((true, pos, size))
                    } else {
                        let size = rng.gen_range(8..=16);
                        let pos = rng.gen_range(0..FRAME_W as i64 - size);
                        Some((false, pos, size))
                    }
                } else {
                    None
                };
                frames.push(render_frame(&params, phase, bob, occlusion));
            }
            let split = if cfg.sequences_per_subject > 1 && seq == cfg.sequences_per_subject - 1 {
                Split::Probe
            } else {
                Split::Train
            };
            out.push((
                SilhouetteSequence {
                    subject_id: format!("s{subject:03}"),
                    sequence_id: format!("q{seq:02}"),
                    frames,
                },
                split,
            ));
        }
    }
    out
}

/// Subject walker parameters, exposed for tests that check the generated
/// periodicity against the configured stride.
pub fn subject_half_cycle(cfg: &SynthConfig, subject: usize) -> f64 {
    let mut subject_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, subject as u64, 0xa11ce));
    SubjectParams::draw(&mut subject_rng).half_cycle_frames()
}

/// Manifest files produced by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct WrittenDataset {
    pub root: PathBuf,
    /// All sequences with their split column.
    pub manifest: PathBuf,
    /// Training sequences only (doubles as the gallery for toy retrieval).
    pub gallery: PathBuf,
    /// Held-out probe sequences.
    pub probe: PathBuf,
}

/// Renders the dataset to `root/<subject>/<sequence>/<frame>.png` plus
/// `manifest.tsv`, `gallery.tsv`, and `probe.tsv`.
pub fn write_dataset(cfg: &SynthConfig, root: &Path) -> Result<WrittenDataset, DataError> {
    let sequences = generate(cfg);
    let mut entries = Vec::new();
    for (seq, split) in &sequences {
        let rel = PathBuf::from(&seq.subject_id).join(&seq.sequence_id);
        super::save_sequence(seq, &root.join(&rel))?;
        entries.push(ManifestEntry {
            subject_id: seq.subject_id.clone(),
            sequence_id: seq.sequence_id.clone(),
            frame_count: seq.len(),
            rel_path: rel,
            split: *split,
        });
    }
    let manifest = DatasetManifest { root: root.to_path_buf(), entries };
    let manifest_path = root.join("manifest.tsv");
    manifest.write(&manifest_path)?;

    let gallery = DatasetManifest {
        root: root.to_path_buf(),
        entries: manifest.split_entries(Split::Train).cloned().collect(),
    };
    let gallery_path = root.join("gallery.tsv");
    gallery.write(&gallery_path)?;

    let probe = DatasetManifest {
        root: root.to_path_buf(),
        entries: manifest.split_entries(Split::Probe).cloned().collect(),
    };
    let probe_path = root.join("probe.tsv");
    probe.write(&probe_path)?;

    Ok(WrittenDataset {
        root: root.to_path_buf(),
        manifest: manifest_path,
        gallery: gallery_path,
        probe: probe_path,
    })
}
