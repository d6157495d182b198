//! Gait recognition from silhouette sequences.
//!
//! The pipeline: silhouette sequences are sampled into fixed-size frame stacks
//! (consecutive, random-frame, or random-tracklet sampling), pushed through a
//! pseudo-3D convolutional backbone whose spatial downsampling is a lossless
//! Haar wavelet transform, pooled into per-part embeddings, and trained with a
//! hardness-exclusion triplet loss plus cross-entropy. Retrieval quality is
//! measured with rank-n/mAP over a gallery/probe split, and dataset
//! variability with the average inter-frame variation of foreground pixel
//! rates.
//!
//! Everything runs on a small built-in tensor/autodiff core; no GPU or
//! external ML framework is involved. See the `book/` directory for a guided
//! tour with runnable snippets.

pub mod autodiff;
pub mod dataset;
pub mod haar;
pub mod loss;
pub mod metrics;
pub mod sampling;
pub mod tensor;

pub use tensor::{Scalar, Tensor};
