//! Hybrid 3D body estimation on a synthetic articulated body.
//!
//! The crate is organised the way the estimation pipeline flows:
//!
//! - [`body_model`]: procedural symmetric body, linear blend skinning, joint regression.
//! - [`uv_atlas`]: per-segment UV islands, barycentric texel lookup, part segmentation, flip map.
//! - [`dense_maps`]: weak-perspective z-buffer rendering of IUV/joint/location/displacement maps,
//!   synthetic occlusion, warping from image space to UV space.
//! - [`nn`]: residual MLP with batch norm, dropout, exact backprop and Adam.
//! - [`ik`]: joint aggregation, inpaint/refine net, GIK-Net, Levenberg-Marquardt IK, training.
//! - [`uv_fusion`]: fusion of dense evidence with the reposed template in UV space and final inference.
//! - [`losses`]: every training objective plus MPJPE / PA-MPJPE / MPVE.
//! - [`pipeline`]: synthetic samples, the full estimator and its metrics.
//! - [`io`]: `UVB1` tensor container, OBJ export, key=value run configuration.
//! - [`commands`]: the end-to-end commands behind the `bodyfuse` binary.

// `!(x > 0.0)` is deliberate: it rejects NaN as well as non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod body_model;
pub mod commands;
pub mod dense_maps;
pub mod error;
pub mod grid;
pub mod ik;
pub mod io;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod rotation;
pub mod uv_atlas;
pub mod uv_fusion;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Number of joints in the kinematic tree (24 x 3 axis-angle pose values).
pub const NUM_KIN_JOINTS: usize = 24;
/// Number of shape coefficients.
pub const NUM_BETAS: usize = 10;
/// Number of LSP evaluation joints, which is also the number of body parts.
pub const NUM_LSP_JOINTS: usize = 14;

/// Derive an independent 64-bit seed from a base seed and a stream key.
///
/// Used wherever several random streams hang off one configured seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
