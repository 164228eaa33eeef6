//! Unsupervised landmark discovery from unpaired marked/unmarked image sets.
//!
//! A predefined landmark template is deformed per image by a small CNN and
//! composited onto the input through a differentiable soft renderer. Training
//! is adversarial (least-squares patch discriminators on both domains) with
//! cycle consistency and a spring-potential regularizer that preserves the
//! template's spatial structure. No landmark annotations are used anywhere.
//!
//! The crate ships:
//! - [`template`]: the landmark template format (points, semantic lines,
//!   spring edges) and its deformation.
//! - [`renderer`]: the differentiable soft rasterizer with analytic gradients.
//! - [`autodiff`]: a minimal reverse-mode tape over `ndarray`, generic over
//!   the scalar type.
//! - [`networks`]: the deformation encoder, residual generator and patch
//!   discriminators.
//! - [`losses`], [`optim`], [`training`]: the full objective, Adam, and the
//!   alternating training loop with checkpointing and deterministic resume.
//! - [`data`]: unpaired dataset loading and the synthetic benchmark generator
//!   with ground-truth landmarks.
//! - [`eval`]: landmark error and temporal-jitter metrics.
//!
//! The `genlmk` binary exposes `synth`, `train`, `infer`, `overlay`, `eval`
//! and `template validate` subcommands.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod renderer;
pub mod scalar;
pub mod template;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used for training and inference.
pub type Real = f32;
/// Tensor over the training scalar.
pub type RTensor = autodiff::Tensor<Real>;
