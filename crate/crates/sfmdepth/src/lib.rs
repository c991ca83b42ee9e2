//! Dataset IO, depth network, training and evaluation on top of
//! `sfmdepth-core`.

pub use sfmdepth_core as core;

pub mod array;
pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod colormap;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gendata;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
