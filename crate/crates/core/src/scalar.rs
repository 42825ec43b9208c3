//! Scalar abstraction shared by every numeric routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the registration pipeline can run on (`f32` or `f64`).
///
/// Arithmetic and transcendental functions come from [`RealField`]; literal
/// conversion goes through `num-traits`.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + 'static {
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Converts degrees to radians.
    #[inline]
    fn deg_to_rad(deg: Self) -> Self {
        deg * Self::pi() / Self::lit(180.0)
    }

    /// Converts radians to degrees.
    #[inline]
    fn rad_to_deg(rad: Self) -> Self {
        rad * Self::lit(180.0) / Self::pi()
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
