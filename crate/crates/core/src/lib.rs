//! Vision-transformer regression of lung severity scores from chest
//! radiographs, with score-aware augmentation, training and evaluation.

pub mod augmentation;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod model;
pub mod scalar;
pub mod seeds;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
