//! Floating-point scalar abstraction.
//!
//! Training defaults to `f32`; gradient checks and distribution identities run
//! in `f64`, where finite differences have enough headroom.

use ndarray::LinalgScalar;
use num_traits::Float;
use std::fmt::{Debug, Display};

use crate::numerics::special;

/// Declared element type of a tensor, used by the checkpoint container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Dtype {
    pub fn byte_width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// Scalar element type for all differentiable computation.
pub trait Scalar:
    Float
    + LinalgScalar
    + std::ops::AddAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Natural log of the gamma function.
    fn lgamma(self) -> Self {
        Self::from_f64(special::ln_gamma(self.as_f64()))
    }

    /// Digamma (derivative of `lgamma`).
    fn digamma(self) -> Self {
        Self::from_f64(special::digamma(self.as_f64()))
    }

    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_bytes_slice(b: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_bytes_slice(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().expect("4-byte f32"))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le_bytes_slice(b: &[u8]) -> Self {
        f64::from_le_bytes(b.try_into().expect("8-byte f64"))
    }
}
