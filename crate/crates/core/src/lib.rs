//! ContrastForge core: a self-contained engine for multi-contrast MR phantom
//! synthesis with conditional adversarial training.
//!
//! The crate is organized bottom-up:
//! tensors and tape autodiff ([`tensor`], [`tape`], [`conv`]), optimization
//! ([`optim`]), networks and losses ([`nn`], [`losses`]), the phantom data
//! pipeline ([`phantom`], [`volume`], [`dataset`]), training orchestration
//! ([`config`], [`trainer`]), and evaluation ([`metrics`], [`baseline`],
//! [`report`]). Binary file formats live in [`io`].
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the default and the on-disk representation are double precision.

pub mod baseline;
pub mod config;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod grad_check;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod phantom;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod trainer;
pub mod util;
pub mod volume;

pub use config::{Precision, TrainConfig, TrainMode};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use volume::{Contrast, Volume};

/// Default-precision tensor (f64).
pub type Tensor = tensor::Tensor<f64>;
/// Single-precision tensor for the precision escape hatch.
pub type Tensor32 = tensor::Tensor<f32>;
/// Default-precision tape.
pub type Tape = tape::Tape<f64>;
/// Single-precision tape.
pub type Tape32 = tape::Tape<f32>;
/// Default-precision parameter set.
pub type ParamSet = nn::ParamSet<f64>;
