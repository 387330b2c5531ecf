#[cfg(feature = "cli")]
pub mod cli;
pub mod control;
pub mod dynamics;
pub mod experiments;
pub mod error;
pub mod operators;
pub mod parallel;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod symmetry;

pub use error::{Error, Result};
