//! Guided depth super-resolution with scene priors (RGB, surface normals,
//! semantics): patch-similarity propagation, mutual guided filtering with
//! predicted per-pixel kernels, and a small training harness on synthetic
//! scenes.

pub mod autodiff;
pub mod cli;
pub mod embedding;
pub mod error;
pub mod io;
pub mod model;
pub mod nn;
pub mod propagation;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
