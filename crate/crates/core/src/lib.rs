//! Hierarchical shifted-window transformer for binned sequence-assay
//! prediction, with exact multiply-add accounting and attention-map capture.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: dense tensors, a reverse-mode tape, seeded RNG, gradient
//!   checking, and the multiply-add counter that backs the complexity
//!   benchmark.
//! - [`attention`]: scaled dot-product multi-head attention with optional
//!   per-head weight capture, window partitioning, and a dense reference
//!   implementation used as a test oracle.
//! - [`swin`]: the 1-D shifted-window block (windowed pass, shifted pass,
//!   pairwise token merge).
//! - [`model`]: the full stacked model (embed, shifted-window blocks, crop,
//!   final dense transformer block, per-track heads) plus checkpoints and the
//!   closed-form operation count.
//! - [`data`]: one-hot DNA ingestion, read binning, synthetic task
//!   generation, the dataset container format, and splits.
//! - [`train`]: Poisson loss, Adam with cosine annealing, per-track Pearson
//!   evaluation with group reporting, and the training loop.
//! - [`atlas`]: extraction, serialization, and SVG rendering of the captured
//!   attention maps.

pub mod atlas;
pub mod attention;
pub(crate) mod binio;
pub mod data;
pub mod error;
pub mod model;
pub mod swin;
pub mod tensor;
pub mod train;

pub use error::{ContainerError, Error, Result};
pub use tensor::{DType, MaddClass, MaddCounts, Rng, Tape, Tensor};
