//! Single-view guided assembly of unlabeled part point clouds.

pub mod ablation;
pub mod assignment;
pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod eval;
pub mod export;
pub mod dataset;
mod error;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod parts;
pub mod run;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
