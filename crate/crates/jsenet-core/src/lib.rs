//! Joint semantic segmentation and semantic edge detection for 3D point clouds.
//!
//! The crate is organized around a small reverse-mode tensor engine
//! ([`tensor`]), point-cloud geometry ([`geometry`]), ground-truth edge
//! labelling ([`labels`]), rigid kernel-point convolution ([`kpconv`]), the
//! edge-map-generation operator ([`edgegen`]), the supervision losses
//! ([`losses`]), the two-stream network with joint refinement ([`model`]),
//! evaluation metrics ([`metrics`]), and the training / voting-inference
//! drivers ([`train`], [`voting`]).
//!
//! Everything here is `no_std`-compatible (with `alloc`); file formats and
//! the command line live in the companion `jsenet` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod edgegen;
pub mod error;
pub mod fdcheck;
pub mod geometry;
pub mod kpconv;
pub mod labels;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod synthetic;
pub mod tensor;
pub mod train;
pub mod voting;

/// Scalar type used for tensor data and geometry. 64-bit by default so the
/// gradient suites run at full precision; the `f32` feature switches the
/// whole crate to 32-bit storage for cheaper training.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// True when the crate was built with the `f32` feature.
#[cfg(not(feature = "f32"))]
pub const REAL_IS_F32: bool = false;
#[cfg(feature = "f32")]
pub const REAL_IS_F32: bool = true;

pub use error::CoreError;
pub use tensor::Tensor;
