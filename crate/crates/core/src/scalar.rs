//! Scalar abstraction for the numeric core.
//!
//! The solver, objectives and spectral routines are generic over the
//! floating point type; the wire formats and samplers are fixed to `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: f32 or f64.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
    /// Convert from a `usize` count (row counts, sample budgets).
    fn from_count(c: usize) -> Self {
        Self::from_usize(c).expect("count representable")
    }

    /// Lossy conversion to f64, for reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 convertible")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Compensated (Kahan) accumulator. Streams can have 1e8 terms and the
/// row-profile tests assert 1e-12 relative order-independence.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<S: Scalar> {
    sum: S,
    carry: S,
}

impl<S: Scalar> Default for KahanSum<S> {
    fn default() -> Self {
        Self {
            sum: S::zero(),
            carry: S::zero(),
        }
    }
}

impl<S: Scalar> KahanSum<S> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: S) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> S {
        self.sum
    }
}
