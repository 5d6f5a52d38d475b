//! Invertible linear embeddings for video extrapolation.
//!
//! Frames are mapped through an invertible affine-coupling network into a
//! latent space where a stable linear time-invariant system explains the
//! whole sequence. Training maximizes the exact likelihood; prediction
//! rolls the linear system forward and decodes.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`linalg`], [`tape`]: dense arrays, Cholesky/ridge solves
//!   and a reverse-mode tape with adjoints for each primitive.
//! - [`flow`]: the coupling-layer network with its log-determinant.
//! - [`lti`]: the block-rotation state matrix, observability stacks,
//!   initial-state inference and rollouts.
//! - [`model`], [`train`]: the sequence objective and its optimizer.
//! - [`data`], [`metrics`]: bouncing-sprite sequences, PSNR and SSIM.
//! - [`config`], [`checkpoint`], [`pgm`], [`commands`]: file formats and
//!   the operations behind the `ile` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod linalg;
pub mod lti;
pub mod metrics;
pub mod model;
pub mod pgm;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{Sequence, SpriteConfig};
pub use error::{IleError, Result};
pub use flow::FlowNetwork;
pub use lti::{JnfParams, ObservationMatrix, StateMatrix};
pub use metrics::EvalReport;
pub use model::{IleConfig, IleModel, LossBreakdown, Trainable};
pub use tensor::Tensor;
pub use train::{TrainState, Trainer};
