//! Differentiable volume rendering on voxel grids with distribution-based
//! depth regularization for dynamic scenes filmed with little camera motion.

// `!(x > 0.0)` deliberately rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ddr;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grad;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod losses;
pub mod render;
pub mod rng;
pub mod scene;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
