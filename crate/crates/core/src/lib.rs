//! Block-wise NormalFloat quantization for streaming transformer KV caches.
//!
//! The crate bundles the pieces needed to run a 4-bit quantized KV cache at
//! desk scale and to check that the design actually holds up:
//!
//! - [`codebook`]: NormalFloat codebooks built from normal-distribution
//!   quantiles (plus a uniform comparator grid).
//! - [`codec`]: block-wise absmax quantize/dequantize with nibble-packed
//!   indices and per-block f32 scales.
//! - [`cache`]: the append-only per-layer key/value store and its padded
//!   materialization for compute.
//! - [`attention`]: multi-head prefill and decode against the quantized
//!   cache, with padding masked out of the softmax.
//! - [`normality`]: standardization, Q-Q points and the D'Agostino-Pearson
//!   normality test that motivate the quantile codebook.
//! - [`memory`]: the footprint model relating cache bytes to model weights.
//! - [`bench`]: seeded codec-error and decode-divergence benchmarks.
//! - [`io`]: the `.nqt` tensor format, raw f32 tensors and cache snapshots.
//!
//! Numeric kernels are generic over the scalar type via [`Scalar`]; block
//! scales are always stored as IEEE-754 f32 so files round-trip bit-exactly
//! regardless of the compute type.

pub mod attention;
pub mod bench;
pub mod cache;
pub mod codebook;
pub mod codec;
mod error;
pub mod io;
pub mod matrix;
pub mod memory;
pub mod normal;
pub mod normality;
pub mod rng;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};

use num_traits::{Float, NumCast};

/// Floating-point scalar the numeric kernels are generic over: f32 or f64.
pub trait Scalar: Float + NumCast + Debug + Display + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 converts to any float scalar")
    }

    fn from_f32(x: f32) -> Self {
        <Self as NumCast>::from(x).expect("f32 converts to any float scalar")
    }

    fn from_usize(n: usize) -> Self {
        <Self as NumCast>::from(n).expect("usize converts to any float scalar")
    }

    /// Lossy narrowing to the f32 storage width used for block scales.
    fn as_f32(self) -> f32 {
        self.to_f32().expect("float scalars convert to f32")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float scalars convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type Matrix32 = matrix::Matrix<f32>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type Codebook32 = codebook::Codebook<f32>;
pub type Codebook64 = codebook::Codebook<f64>;
pub type KvCache32 = cache::KvCache<f32>;
pub type KvCache64 = cache::KvCache<f64>;
