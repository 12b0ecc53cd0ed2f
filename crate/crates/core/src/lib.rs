//! Radiance fields whose appearance lives on the unit sphere, restyled by
//! tuning a single prompt tensor inside a frozen 2D stylizer.

pub mod checks;
pub mod cubemap;
pub mod diff;
pub mod eval;
pub mod error;
pub mod geom;
pub mod io;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod stylizer;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type Tensor32 = diff::Tensor<f32>;
/// Gradient-check precision.
pub type Tensor64 = diff::Tensor<f64>;
pub type ParamSet32 = diff::ParamSet<f32>;
pub type ParamSet64 = diff::ParamSet<f64>;
