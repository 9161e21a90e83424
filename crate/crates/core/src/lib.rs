//! Interpretable Laplacian-pyramid dehazing at desk scale.
//!
//! An image is split into a Laplacian pyramid. A small U-Net dehazes the
//! low-frequency residual, a second low-rank U-Net predicts a shared
//! modulation tensor `K` that rescales every high-frequency band, and the
//! pyramid is collapsed again. Tucker reconstruction of the low-band output
//! acts as a denoiser and as a training regularizer.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod hazesynth;
pub mod imageio;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod pyramid;
pub mod tensor;
pub mod training;
pub mod tucker;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use network::{DehazeModel, ModelConfig};
pub use pyramid::Pyramid;
pub use tensor::{Element, Tensor};
pub use training::{Pair, TrainConfig};
pub use tucker::TuckerConfig;
