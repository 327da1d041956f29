//! Scalar abstraction for the numeric kernels.
//!
//! Everything that is plain math (training, quantization, link-rate laws) is
//! written against [`Scalar`] so it works at `f32` or `f64`; the pipeline
//! instantiates it at [`crate::Real`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable by the numeric kernels.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and RNG draws.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + Sum
        + Default
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    fn generic_mean<S: Scalar>(xs: &[S]) -> S {
        let n = S::from_usize(xs.len()).unwrap();
        xs.iter().copied().sum::<S>() / n
    }

    #[test]
    fn works_for_both_widths() {
        assert_eq!(generic_mean(&[1.0f32, 2.0, 3.0]), 2.0f32);
        assert_eq!(generic_mean(&[1.0f64, 2.0, 3.0]), 2.0f64);
    }
}
