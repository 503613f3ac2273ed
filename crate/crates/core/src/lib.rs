//! Colorization of grayscale microscopy images in CIELAB space.
//!
//! A grayscale input is treated as the L channel of a LAB image and a network
//! predicts the missing A and B chroma channels. Two routes are provided:
//!
//! - [`eecnn`]: an encoder / fusion / decoder network trained on a dataset of
//!   colorful images, with a global embedding from a frozen classifier.
//! - [`nstcnn`]: the same network fitted on a single colorful reference image
//!   and then applied to the grayscale content image.
//!
//! [`prepost`] holds the edge-guided and threshold-based region tools and the
//! "same luminance, same chroma" post-process; [`analysis`] the HSV
//! inspection helpers and the real-vs-predicted survey metric.

pub mod analysis;
pub mod checkpoint;
pub mod colorspace;
pub mod dataset;
pub mod eecnn;
mod error;
pub mod nstcnn;
mod plane;
pub mod prepost;
pub mod trainer;

pub use colorspace::{ChromaMap, HsvImage, LabImage, RgbImage};
pub use eecnn::{EeCnn, EeCnnConfig, EmbeddingProvider, ModelWeights};
pub use error::{Error, Result};
pub use nstcnn::{ReferenceSpec, TransferJob};
pub use plane::Plane;
pub use prepost::{EdgeMap, RegionMask};
