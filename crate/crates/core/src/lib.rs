//! Gaussian splat scene model and everything that operates on it directly:
//! per-primitive math, the differentiable tile rasterizer, the optimizer,
//! COLMAP pose import with trajectory metrics, image metrics and the
//! on-disk model formats.

pub mod camera;
pub mod error;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod pose;
pub mod raster;
pub mod sh;
pub mod splat;
pub mod store;
pub mod synthetic;
pub mod train;

pub use camera::{CameraIntrinsics, PoseSE3};
pub use error::{Error, Result};
pub use image::Image;
pub use splat::{Gaussian3D, SplatCloud, Tiling};
