//! Outward-rounded interval arithmetic over `f64`.
//!
//! Every operation returns an interval guaranteed to contain the exact real
//! result for all points of its operands (the inclusion property). Endpoints
//! are computed with ordinary round-to-nearest arithmetic and then pushed
//! outward by ULP steps — one step for the rational operations, two for the
//! transcendental ones whose library implementations are not correctly
//! rounded, n for `powi(n)`. This trades a sliver of tightness for not having
//! to touch the FPU rounding mode, and it keeps every operation branch-free
//! enough to sit in the inner loop of a branch-and-bound search.
//!
//! There are no empty or unbounded intervals here: constructors insist on
//! finite, ordered endpoints, and partial operations (`try_div`, `try_ln`)
//! report domain violations as errors instead of widening to ±∞.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use thiserror::Error;

/// Domain and invariant violations for interval operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    /// Endpoints out of order or not finite.
    #[error("invalid interval endpoints [{lo}, {hi}]")]
    InvalidEndpoints { lo: f64, hi: f64 },
    /// Division by an interval containing zero.
    #[error("division by zero-containing interval {divisor}")]
    DivisorContainsZero { divisor: Interval },
    /// Logarithm of an interval that is not strictly positive.
    #[error("logarithm of non-positive interval {argument}")]
    NonPositiveLog { argument: Interval },
    /// Bisection of a single point.
    #[error("cannot bisect degenerate interval at {at}")]
    DegenerateBisect { at: f64 },
}

/// A closed interval `[lo, hi]` with finite, ordered endpoints.
#[derive(Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    /// Builds `[lo, hi]`.
    ///
    /// # Panics
    /// If `lo > hi` or either endpoint is non-finite. Use [`Interval::checked`]
    /// for untrusted input.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(
            lo <= hi && lo.is_finite() && hi.is_finite(),
            "invalid interval endpoints [{lo}, {hi}]"
        );
        Interval { lo, hi }
    }

    /// Fallible constructor for untrusted endpoints.
    pub fn checked(lo: f64, hi: f64) -> Result<Self, IntervalError> {
        if lo <= hi && lo.is_finite() && hi.is_finite() {
            Ok(Interval { lo, hi })
        } else {
            Err(IntervalError::InvalidEndpoints { lo, hi })
        }
    }

    /// The degenerate interval `[v, v]`.
    pub fn point(v: f64) -> Self {
        Interval::new(v, v)
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    /// `hi - lo`, rounded up whenever the subtraction is inexact so the result
    /// never under-reports the true width.
    pub fn width(self) -> f64 {
        let w = self.hi - self.lo;
        if self.lo + w == self.hi {
            w
        } else {
            w.next_up()
        }
    }

    /// A representable point inside the interval, close to the center.
    pub fn midpoint(self) -> f64 {
        (0.5 * self.lo + 0.5 * self.hi).clamp(self.lo, self.hi)
    }

    /// Largest absolute value over the interval.
    pub fn mag(self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn contains_zero(self) -> bool {
        self.contains(0.0)
    }

    pub fn is_subset_of(self, other: Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// Intersection, or `None` when the intervals are disjoint.
    pub fn intersect(self, other: Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| Interval::new(lo, hi))
    }

    /// Smallest interval containing both operands.
    pub fn hull(self, other: Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// Splits at the midpoint; the halves overlap only at the split point.
    pub fn bisect(self) -> Result<(Interval, Interval), IntervalError> {
        if self.lo == self.hi {
            return Err(IntervalError::DegenerateBisect { at: self.lo });
        }
        let mut m = self.midpoint();
        if m <= self.lo {
            m = self.lo.next_up().min(self.hi);
        }
        Ok((Interval::new(self.lo, m), Interval::new(m, self.hi)))
    }

    /// Checked division; errors when the divisor contains zero.
    pub fn try_div(self, rhs: Interval) -> Result<Interval, IntervalError> {
        if rhs.contains_zero() {
            return Err(IntervalError::DivisorContainsZero { divisor: rhs });
        }
        let q = [
            self.lo / rhs.lo,
            self.lo / rhs.hi,
            self.hi / rhs.lo,
            self.hi / rhs.hi,
        ];
        let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Interval::new(lo.next_down(), hi.next_up()))
    }

    /// Checked natural logarithm; requires `lo > 0`.
    pub fn try_ln(self) -> Result<Interval, IntervalError> {
        if self.lo <= 0.0 {
            return Err(IntervalError::NonPositiveLog { argument: self });
        }
        Ok(Interval::new(
            step_down(self.lo.ln(), 2),
            step_up(self.hi.ln(), 2),
        ))
    }

    /// Exponential. Panics if the upper endpoint overflows `f64`.
    pub fn exp(self) -> Interval {
        let lo = step_down(self.lo.exp(), 2).max(0.0);
        let hi = step_up(self.hi.exp(), 2);
        assert!(hi.is_finite(), "interval exp overflow at {}", self.hi);
        Interval::new(lo, hi)
    }

    /// Sine over the interval, exact ±1 whenever a critical point is enclosed.
    pub fn sin(self) -> Interval {
        if self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let (slo, shi) = (self.lo.sin(), self.hi.sin());
        let mut lo = step_down(slo.min(shi), 2);
        let mut hi = step_up(slo.max(shi), 2);
        if contains_phase(self.lo, self.hi, FRAC_PI_2) {
            hi = 1.0;
        }
        if contains_phase(self.lo, self.hi, -FRAC_PI_2) {
            lo = -1.0;
        }
        Interval::new(lo.max(-1.0), hi.min(1.0))
    }

    /// Cosine over the interval, exact ±1 whenever a critical point is enclosed.
    pub fn cos(self) -> Interval {
        if self.width() >= TAU {
            return Interval::new(-1.0, 1.0);
        }
        let (clo, chi) = (self.lo.cos(), self.hi.cos());
        let mut lo = step_down(clo.min(chi), 2);
        let mut hi = step_up(clo.max(chi), 2);
        if contains_phase(self.lo, self.hi, 0.0) {
            hi = 1.0;
        }
        if contains_phase(self.lo, self.hi, PI) {
            lo = -1.0;
        }
        Interval::new(lo.max(-1.0), hi.min(1.0))
    }

    /// Integer power. `n == 0` gives `[1, 1]`; even powers of zero-straddling
    /// intervals bottom out at exactly 0. Negative exponents go through the
    /// reciprocal and panic when the base contains zero.
    pub fn powi(self, n: i32) -> Interval {
        match n {
            0 => Interval::new(1.0, 1.0),
            _ if n < 0 => Interval::point(1.0)
                .try_div(self.powi(-n))
                .expect("negative power of zero-containing interval"),
            _ => {
                let steps = n.unsigned_abs();
                let even = n % 2 == 0;
                if even && self.contains_zero() {
                    Interval::new(0.0, step_up(self.mag().powi(n), steps))
                } else {
                    // Monotone on this base: odd power anywhere, or even power
                    // of a sign-definite base.
                    let (a, b) = if even && self.hi <= 0.0 {
                        (self.hi, self.lo)
                    } else {
                        (self.lo, self.hi)
                    };
                    Interval::new(step_down(a.powi(n), steps), step_up(b.powi(n), steps))
                }
            }
        }
    }
}

/// n ULP steps toward −∞.
fn step_down(v: f64, n: u32) -> f64 {
    let mut v = v;
    for _ in 0..n {
        v = v.next_down();
    }
    v
}

/// n ULP steps toward +∞.
fn step_up(v: f64, n: u32) -> f64 {
    let mut v = v;
    for _ in 0..n {
        v = v.next_up();
    }
    v
}

/// Does `[lo, hi]` contain a point `phase + 2πk` for integer k?
///
/// The quotient is rounded, so points within a few ULPs of an endpoint may be
/// misclassified; the callers' two-ULP inflation absorbs the (quadratically
/// small) range error near trig extrema.
fn contains_phase(lo: f64, hi: f64, phase: f64) -> bool {
    let k = ((lo - phase) / TAU).ceil();
    phase + k * TAU <= hi
}

impl std::ops::Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::new((self.lo + rhs.lo).next_down(), (self.hi + rhs.hi).next_up())
    }
}

impl std::ops::Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::new((self.lo - rhs.hi).next_down(), (self.hi - rhs.lo).next_up())
    }
}

impl std::ops::Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let p = [
            self.lo * rhs.lo,
            self.lo * rhs.hi,
            self.hi * rhs.lo,
            self.hi * rhs.hi,
        ];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo.next_down(), hi.next_up())
    }
}

/// Unchecked operator form of [`Interval::try_div`].
///
/// # Panics
/// When the divisor contains zero.
impl std::ops::Div for Interval {
    type Output = Interval;
    fn div(self, rhs: Interval) -> Interval {
        self.try_div(rhs)
            .unwrap_or_else(|e| panic!("interval division: {e}"))
    }
}

impl std::ops::Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

impl From<f64> for Interval {
    fn from(v: f64) -> Self {
        Interval::point(v)
    }
}

impl fmt::Display for Interval {
    /// Renders `[lo, hi]` with 17 significant digits (lossless for `f64`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.16e}, {:.16e}]", self.lo, self.hi)
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}
