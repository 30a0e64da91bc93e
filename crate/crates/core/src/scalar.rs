//! Scalar abstraction: the numeric type used for continuous variable values.
//!
//! All continuous-domain math (tolerance comparisons, normalized distances,
//! grid quantization, the benchmark dynamics) is generic over [`Scalar`], so
//! logs recorded in `f32` and `f64` are both first-class. Discrete values are
//! stored as exact tokens and never pass through this trait.

use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar for continuous variable values: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Display
    + Debug
    + FromStr
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` literals (domain bounds,
    /// tolerances, CLI parameters).
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Canonical bit pattern for exact-equality hashing, widened to 64 bits.
    fn canonical_bits(self) -> u64;
}

impl Scalar for f64 {
    fn canonical_bits(self) -> u64 {
        self.to_bits()
    }
}

impl Scalar for f32 {
    fn canonical_bits(self) -> u64 {
        (self as f64).to_bits()
    }
}
