use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the numerics are written against.
///
/// Math functions come from [`RealField`]; conversions to and from `f64`
/// literals go through num-traits.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Default + serde::Serialize + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics only for non-representable input,
    /// which cannot happen for `f32`/`f64`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon.
    #[inline]
    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals_round_trip() {
        assert_eq!(f64::lit(0.25), 0.25);
        assert_eq!(f32::lit(0.25), 0.25f32);
        assert_eq!(f32::from_usize_lossy(7), 7.0);
        assert_eq!(2.5f32.as_f64(), 2.5);
        assert_eq!(f64::eps(), f64::EPSILON);
    }
}
