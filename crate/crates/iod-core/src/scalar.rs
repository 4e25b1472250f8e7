//! Scalar abstraction for the numeric code.
//!
//! Every loss, clustering, and evaluation routine is written against [`Real`]
//! so it can run in `f32` or `f64`. The crate root exports `f64` aliases for
//! the common types; `f64` is what the simulator and CLI use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar usable throughout the crate.
///
/// The `'static + Send + Sync` bounds keep the types usable inside `ndarray`
/// products and `rayon` closures without further ceremony.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for constants and config values.
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant must convert")
    }

    /// Lossy conversion to `f64`, for reporting.
    #[inline]
    fn to64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }

    /// Conversion from a count.
    #[inline]
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("count must be representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}
