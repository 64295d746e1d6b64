//! The numeric carrier abstraction.
//!
//! Problem right-hand sides and objectives are written once, generically over
//! a [`Carrier`]: plain `f64` for point evaluation, [`Interval`] for verified
//! range enclosures, and [`Tangent<C>`](crate::ad::Tangent) towers for forward
//! derivatives. Closure under `Tangent` is what lets the same objective code
//! produce values, gradients, Hessians, and interval Hessians without being
//! rewritten.

use crate::interval::Interval;
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic contract shared by every scalar type the solver evaluates over.
///
/// `Div` and `ln` are total in signature but partial for intervals: a
/// zero-containing divisor or non-positive log argument is a domain violation
/// and panics (checked variants live on [`Interval`] itself). The built-in
/// problems use neither.
pub trait Carrier:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Lifts an exact constant into the carrier.
    fn constant(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powi(self, n: i32) -> Self;
}

impl Carrier for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

impl Carrier for Interval {
    fn constant(v: f64) -> Self {
        Interval::point(v)
    }
    fn sin(self) -> Self {
        Interval::sin(self)
    }
    fn cos(self) -> Self {
        Interval::cos(self)
    }
    fn exp(self) -> Self {
        Interval::exp(self)
    }
    /// # Panics
    /// On a non-positive argument; see [`Interval::try_ln`].
    fn ln(self) -> Self {
        self.try_ln().unwrap_or_else(|e| panic!("interval ln: {e}"))
    }
    fn powi(self, n: i32) -> Self {
        Interval::powi(self, n)
    }
}

/// A scalar objective `h(x, y)`, evaluable over any carrier.
///
/// Implemented as a trait rather than a closure so one definition can be
/// instantiated at every carrier the solver needs (rank-2 polymorphism).
pub trait Objective {
    fn objective<C: Carrier>(&self, x: &[C], y: &[C]) -> C;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn objective<C: Carrier>(&self, x: &[C], y: &[C]) -> C {
        (**self).objective(x, y)
    }
}

/// Lifts a slice of `f64` into degenerate carrier values.
pub fn lift<C: Carrier>(vs: &[f64]) -> Vec<C> {
    vs.iter().map(|&v| C::constant(v)).collect()
}
