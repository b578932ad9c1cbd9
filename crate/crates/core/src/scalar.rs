//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate (volumes, tensors, losses, distance
//! transforms) is generic over [`Real`] so the same code runs at storage
//! precision (`f32`, matching the on-disk formats) and at verification
//! precision (`f64`, required by the finite-difference tolerances).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless-as-possible conversion from `f64` (panics never; rounds for `f32`).
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to Real")
    }

    /// Widening conversion to `f64`.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
