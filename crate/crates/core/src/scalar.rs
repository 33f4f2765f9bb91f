//! Scalar abstraction shared by the numeric modules.
//!
//! Everything that touches model math is generic over [`Scalar`]; the engine
//! runs in `f32` and the reference paths in `f64`.

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and initialization.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every supported scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

pub(crate) fn all_finite<'a, F: Scalar>(mut it: impl Iterator<Item = &'a F>) -> bool {
    it.all(|v| v.is_finite())
}
