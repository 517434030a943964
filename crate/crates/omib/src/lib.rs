//! Desk-scale laboratory for optimal multimodal information-bottleneck
//! training.
//!
//! The crate bundles everything a two- or three-modality bottleneck
//! experiment needs end to end:
//!
//! - [`tensor`]: a per-step tape autodiff engine over dense f64 tensors,
//!   with [`optim`] (Adam) and [`gradcheck`] (finite-difference oracle).
//! - [`nn`]: MLP encoders and heads, VAE heads with reparameterization,
//!   single-head cross-attention fusion, KL and cross-entropy kernels.
//! - [`synth`]: seeded Gaussian benchmark generators with recorded
//!   sub-vector layout, oracle feature views, and bit-exact file round-trips.
//! - [`mine`]: neural mutual-information estimation (Donsker-Varadhan),
//!   entropy as self-information, and the regularization-weight bounds
//!   computed from those estimates.
//! - [`model`] / [`train`]: the two-phase training procedure itself —
//!   warm-up of the task-relevance branches, then joint main training of
//!   the fusion block with a dynamically rebalanced per-modality weight.
//! - [`metrics`]: accuracy, rank-based AUC, matched-threshold F1.
//! - [`commands`]: the `gen`/`bounds`/`train`/`sweep`/`table1` experiment
//!   driver used by the `omib` binary; every command is a pure function of
//!   its flags, config files, and seed.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod commands;
pub mod error;
pub mod gradcheck;
pub mod mat;
pub mod metrics;
pub mod mine;
pub mod model;
pub mod nn;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
