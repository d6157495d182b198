//! Silhouette sequence datasets: on-disk layout, loading with
//! pedestrian-centering normalization, manifests, and a synthetic generator.
//!
//! On-disk layout: `root/<subject_id>/<sequence_id>/<frame index>.png` (or
//! `.pgm`), 8-bit grayscale, frame indices zero-padded. A manifest is a
//! line-oriented text file, one entry per line:
//!
//! ```text
//! subject_id <TAB> sequence_id <TAB> frame_count <TAB> relative_path <TAB> split
//! ```
//!
//! with `split` one of `train`, `gallery`, `probe`, and paths relative to the
//! manifest file's directory.

mod normalize;
pub mod synth;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use normalize::normalize_frame;

/// Height of every normalized frame.
pub const FRAME_H: usize = 64;
/// Width of every normalized frame.
pub const FRAME_W: usize = 44;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("no frame images found in {0}")]
    EmptySequence(PathBuf),
    #[error("cannot decode {file}: {reason}")]
    Decode { file: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} line {line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },
    #[error("duplicate (subject, sequence) pair {0}/{1}")]
    DuplicateEntry(String, String),
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}

/// One grayscale frame with luminance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteFrame {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
}

impl SilhouetteFrame {
    pub fn new(h: usize, w: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), h * w);
        SilhouetteFrame { h, w, pixels }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        SilhouetteFrame { h, w, pixels: vec![0.0; h * w] }
    }

    /// Thresholded copy with pixels in `{0, 1}`; a pixel is foreground iff
    /// strictly above `threshold`.
    pub fn binarize(&self, threshold: f32) -> SilhouetteFrame {
        assert!(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0, 1)");
        SilhouetteFrame {
            h: self.h,
            w: self.w,
            pixels: self.pixels.iter().map(|&p| if p > threshold { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Ordered frames of one walking instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SilhouetteSequence {
    pub subject_id: String,
    pub sequence_id: String,
    pub frames: Vec<SilhouetteFrame>,
}

impl SilhouetteSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Gallery,
    Probe,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Gallery => "gallery",
            Split::Probe => "probe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "gallery" => Some(Split::Gallery),
            "probe" => Some(Split::Probe),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub sequence_id: String,
    pub frame_count: usize,
    pub rel_path: PathBuf,
    pub split: Split,
}

/// Parsed manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |reason: String| DataError::Manifest {
                path: path.to_path_buf(),
                line: lineno + 1,
                reason,
            };
            if fields.len() != 5 {
                return Err(bad(format!("expected 5 tab-separated fields, got {}", fields.len())));
            }
            let frame_count: usize =
                fields[2].parse().map_err(|_| bad(format!("bad frame count {:?}", fields[2])))?;
            let split =
                Split::parse(fields[4]).ok_or_else(|| bad(format!("unknown split {:?}", fields[4])))?;
            if !seen.insert((fields[0].to_string(), fields[1].to_string())) {
                return Err(DataError::DuplicateEntry(fields[0].to_string(), fields[1].to_string()));
            }
            entries.push(ManifestEntry {
                subject_id: fields[0].to_string(),
                sequence_id: fields[1].to_string(),
                frame_count,
                rel_path: PathBuf::from(fields[3]),
                split,
            });
        }
        Ok(DatasetManifest { root, entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.subject_id,
                e.sequence_id,
                e.frame_count,
                e.rel_path.display(),
                e.split
            ));
        }
        fs::write(path, out).map_err(io_err(path))
    }

    /// Entries of one split, in manifest order.
    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.rel_path)
    }
}

fn frame_index_of(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    stem.parse().ok()
}

/// Loads one sequence directory: frames sorted by zero-padded index, each
/// decoded as 8-bit grayscale and normalized to 64x44 with
/// pedestrian-centering (vertical crop to the foreground box, horizontal
/// centering on the foreground centroid, scale, and zero padding).
pub fn load_sequence(dir: &Path, subject_id: &str, sequence_id: &str) -> Result<SilhouetteSequence, DataError> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png") | Some("pgm")) {
            if let Some(idx) = frame_index_of(&path) {
                files.push((idx, path));
            }
        }
    }
    if files.is_empty() {
        return Err(DataError::EmptySequence(dir.to_path_buf()));
    }
    files.sort();

    let mut frames = Vec::with_capacity(files.len());
    for (_, file) in files {
        let img = image::open(&file)
            .map_err(|e| DataError::Decode { file: file.clone(), reason: e.to_string() })?
            .into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels: Vec<f32> = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        let raw = SilhouetteFrame::new(h, w, pixels);
        frames.push(normalize_frame(&raw));
    }
    Ok(SilhouetteSequence {
        subject_id: subject_id.to_string(),
        sequence_id: sequence_id.to_string(),
        frames,
    })
}

/// Writes a sequence as zero-padded 8-bit grayscale PNGs.
pub fn save_sequence(seq: &SilhouetteSequence, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        let buf: Vec<u8> = frame.pixels.iter().map(|&p| (p * 255.0).round() as u8).collect();
        let img = image::GrayImage::from_raw(frame.w as u32, frame.h as u32, buf)
            .expect("frame buffer matches dimensions");
        let path = dir.join(format!("{i:04}.png"));
        img.save(&path)
            .map_err(|e| DataError::Decode { file: path.clone(), reason: e.to_string() })?;
    }
    Ok(())
}

/// One fully loaded split: sequences with their labels.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub sequences: Vec<SilhouetteSequence>,
}

impl LoadedDataset {
    /// Loads every entry of `split` (or all entries when `None`).
    pub fn load(manifest: &DatasetManifest, split: Option<Split>) -> Result<Self, DataError> {
        let mut sequences = Vec::new();
        for entry in &manifest.entries {
            if split.is_some_and(|s| s != entry.split) {
                continue;
            }
            sequences.push(load_sequence(
                &manifest.resolve(entry),
                &entry.subject_id,
                &entry.sequence_id,
            )?);
        }
        Ok(LoadedDataset { sequences })
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in &self.sequences {
            if seen.insert(s.subject_id.clone()) {
                out.push(s.subject_id.clone());
            }
        }
        out
    }
}
