//! Scalar abstraction: every kernel is generic over [`Real`], implemented for
//! `f32` and `f64`.

use std::fmt;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps};

/// Floating-point scalar for all numerical kernels.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssignOps
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Conversion from an `f64` constant. Panics only if the target type
    /// cannot represent any finite approximation, which does not happen for
    /// `f32`/`f64`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must convert to Real")
    }

    /// Widening (or identity) conversion to `f64` for reporting.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
