//! Fully hyperbolic convolutional networks in the Lorentz model.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`] and [`autograd`]: dense arrays and a tape-based reverse-mode
//!   differentiator.
//! * [`manifold`]: closed-form hyperboloid geometry.
//! * [`layers`]: Lorentz convolution, batch normalization, MLR, residual and
//!   activation layers, plus Euclidean counterparts.
//! * [`models`]: declarative model configs and presets.
//! * [`data`]: synthetic wrapped mixtures and IDX image loading.
//! * [`training`]: optimizers, loops, metrics, checkpoints.
//! * [`experiment`]: configs, run directories, and the command-line driver.

pub mod autograd;
pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod manifold;
pub mod models;
pub mod real;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
