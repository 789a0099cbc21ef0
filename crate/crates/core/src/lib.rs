//! Animatable, compositable Gaussian-splat head scenes.
//!
//! The crate covers mesh-driven Gaussian animation, a tiled CPU splatting
//! renderer with priority compositing and an analytic backward pass,
//! closed-form head/background alignment, masked appearance fitting and
//! multi-view person labeling.

pub mod align;
pub mod animate;
pub mod bundle;
pub mod camera;
pub mod config;
pub mod error;
pub mod head;
pub mod imageio;
pub mod math;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod selfcheck;
pub mod tools;
pub mod track;

pub use camera::CameraRig;
pub use error::{Error, Result};
