//! Floating-point abstraction so networks can train in f32 and be
//! verified in f64 with the same code paths.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};

/// Element type of network parameters and activations.
///
/// Gate parameters are always kept in f64; this trait only governs the
/// dense tensor math.
pub trait Scalar:
    Float
    + NumAssignOps
    + LinalgScalar
    + ScalarOperand
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Name recorded in checkpoint manifests ("f32" / "f64").
    const DTYPE: &'static str;
    const BYTES: usize;

    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
    /// Append the little-endian bytes of `x` to `out`.
    fn push_le(x: Self, out: &mut Vec<u8>);
    /// Decode one value from little-endian bytes (`bytes.len() == BYTES`).
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
    fn push_le(x: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
    fn push_le(x: Self, out: &mut Vec<u8>) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}
