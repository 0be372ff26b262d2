//! Saliency detection network built around globally perceived, per-feature
//! fusion weights, plus the standard saliency evaluation metric battery.
//!
//! The crate is organized as:
//! - [`tensor`] / [`ops`]: a small dense-tensor engine with reverse-mode
//!   differentiation (NCHW, row-major; `f32` for training, `f64` for
//!   gradient checking),
//! - [`pr`]: the perception-and-regulation block (three perception
//!   strategies, softmax-coupled weights, weighted fusion),
//! - [`ieo`]: the eye-observation module (quadrant partition search,
//!   peripheral-vision attention, foveal/peripheral/original fusion),
//! - [`network`]: backbone, FPN/GGS decoders and the full assembled model,
//! - [`training`]: BCE + consistency losses, SGD with momentum, poly
//!   schedule, augmentation, training loop,
//! - [`metrics`]: MAE, F-measures, weighted F, S-measure, E-measure, PR
//!   curves, large/small-object split,
//! - [`io`]: PGM/PPM codec, dataset ingestion, checkpoints, weight-stats
//!   export,
//! - [`gradcheck`]: central finite-difference verification used by the
//!   `gradcheck` CLI command and the test suite.

pub mod error;
pub mod gradcheck;
pub mod ieo;
pub mod io;
pub mod layers;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod pr;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Grads, Init, Param, ParamStore, Tape, Tensor};
