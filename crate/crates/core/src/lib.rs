//! Grouped 4D Gaussian splatting on the CPU.
//!
//! The crate covers the scene model (splats attached to keyframed rigid
//! groups), a deterministic forward rasterizer with alpha-blended depth,
//! graph-based group splitting, elliptical clustering of erroneous pixels,
//! cross-view error diagnosis with splat addition / foreground splitting,
//! and the image metrics used to score the result.
//!
//! Quaternions are `nalgebra::Quaternion<f64>`; wherever they cross a
//! serialization boundary they are written in `(w, x, y, z)` order.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod correction;
pub mod grouping;
pub mod image;
pub mod metrics;
pub mod render;
pub mod temporal;
pub mod types;

pub use image::{Image, RgbImage, ScalarImage};
pub use types::{Camera, Group, Mat3, Quat, Scene, Splat, Vec2, Vec3};
