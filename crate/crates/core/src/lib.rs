//! Sparse PCA process monitoring that learns operating modes one after another.
//!
//! The first mode is fitted with a sparse-PCA solver; later modes are fitted
//! from new data plus the previous model, with each loading pulled towards
//! its predecessor by an importance weight accumulated during optimisation.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod continual;
pub mod data;
pub mod datagen;
pub mod error;
pub mod monitor;
pub mod scenario;
pub mod solver;
pub mod store;

pub use config::PipelineConfig;
pub use continual::{train_first_mode, update_model, ModeData, ModeModel};
pub use data::DataMatrix;
pub use error::{Error, Result};
pub use store::ModelArchive;
