//! Geometry, sparse supervision, losses and synthetic scenes for training
//! single-image depth networks from structure-from-motion output.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod camera;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod layers;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod pair;
pub mod recon;
pub mod sampling;
pub mod schedule;
pub mod sparse;
pub mod synthetic;

/// Frame identifier; frames are ordered by id in video order.
pub type FrameId = u32;

pub use camera::{relative_transform, CameraIntrinsics, CameraPose, RelativeTransform};
pub use error::{Error, Result};
pub use grid::Grid;
pub use layers::DepthMap;
pub use recon::SfmReconstruction;
