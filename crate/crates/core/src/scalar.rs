//! Floating-point abstraction for the numeric stack.
//!
//! Everything differentiable is generic over [`Scalar`] so the same code runs
//! in 32-bit (training default) and 64-bit (test/verification default). Only
//! `f32` and `f64` implement it; the trait carries exactly the operations the
//! kernels need plus little-endian serialization for the on-disk formats.

use std::fmt::{Debug, Display};
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Element type tag used by serialized tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
{
    const DTYPE: Dtype;
    const ZERO: Self;
    const ONE: Self;
    /// Bytes per element in little-endian serialized form.
    const WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite_s(self) -> bool;
    fn abs_s(self) -> Self;
    fn sqrt_s(self) -> Self;
    fn exp_s(self) -> Self;
    fn ln_s(self) -> Self;
    fn neg_infinity() -> Self;
    fn max_s(self, other: Self) -> Self;

    fn write_le(self, out: &mut Vec<u8>);
    /// Reads one element from the start of `bytes` (must hold `WIDTH` bytes).
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const WIDTH: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite_s(self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn abs_s(self) -> Self {
        self.abs()
    }
    #[inline]
    fn sqrt_s(self) -> Self {
        self.sqrt()
    }
    #[inline]
    fn exp_s(self) -> Self {
        self.exp()
    }
    #[inline]
    fn ln_s(self) -> Self {
        self.ln()
    }
    #[inline]
    fn neg_infinity() -> Self {
        f32::NEG_INFINITY
    }
    #[inline]
    fn max_s(self, other: Self) -> Self {
        self.max(other)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const WIDTH: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite_s(self) -> bool {
        self.is_finite()
    }
    #[inline]
    fn abs_s(self) -> Self {
        self.abs()
    }
    #[inline]
    fn sqrt_s(self) -> Self {
        self.sqrt()
    }
    #[inline]
    fn exp_s(self) -> Self {
        self.exp()
    }
    #[inline]
    fn ln_s(self) -> Self {
        self.ln()
    }
    #[inline]
    fn neg_infinity() -> Self {
        f64::NEG_INFINITY
    }
    #[inline]
    fn max_s(self, other: Self) -> Self {
        self.max(other)
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}
