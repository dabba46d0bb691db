//! Training library for 6-zone key-fob localization from 48 precomputed
//! UWB channel features: a small reverse-mode autodiff engine, the RBF
//! layer family with cascaded widths, denoising multi-head models,
//! white-box evasion attacks, and the data pipeline around them.

pub mod attacks;
pub mod data;
pub mod diffcore;
mod error;
pub mod layers;
pub mod losses;
pub mod models;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
