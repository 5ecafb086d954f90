//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! Linear algebra goes through nalgebra's [`RealField`]; conversions to and
//! from `f64` literals go through num-traits. Both `f32` and `f64` qualify.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fmt::{Debug, Display};

pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Serialize + DeserializeOwned + Debug + Display + Send + Sync + 'static
{
    /// Type name recorded in model files.
    const NAME: &'static str;

    /// Machine epsilon of the type.
    const EPS: f64;

    /// Converts an `f64` literal. Panics only for non-representable values,
    /// which cannot happen for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Larger of `tol` and a small multiple of machine epsilon, so that
    /// tolerances written for `f64` stay meaningful in `f32`.
    #[inline]
    fn tol(tol: f64) -> Self {
        Self::lit(tol.max(64.0 * Self::EPS))
    }

    #[inline]
    fn is_finite_val(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const EPS: f64 = f32::EPSILON as f64;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const EPS: f64 = f64::EPSILON;
}
