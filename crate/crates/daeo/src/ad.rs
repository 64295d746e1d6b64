//! Forward-mode automatic differentiation.
//!
//! [`Tangent<S>`] pairs a value with one directional derivative and is itself
//! a [`Carrier`], so tangents nest: `Tangent<Tangent<S>>` carries a second
//! derivative (the classical hyper-dual construction). Drivers below seed one
//! direction per pass — cheap and allocation-free at the problem sizes this
//! solver targets (a handful of optimization variables).
//!
//! Derivatives are exact up to rounding: no truncation error, and when `S` is
//! an interval the chain rule inherits the inclusion property, giving verified
//! derivative enclosures.

use crate::carrier::{lift, Carrier, Objective};
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value plus one directional derivative over the carrier `S`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent<S> {
    pub value: S,
    pub deriv: S,
}

impl<S: Carrier> Tangent<S> {
    /// A tangent with zero derivative (treats `v` as a constant).
    pub fn constant(v: S) -> Self {
        Tangent {
            value: v,
            deriv: S::constant(0.0),
        }
    }

    /// A tangent seeded as the active direction.
    pub fn seed(v: S) -> Self {
        Tangent {
            value: v,
            deriv: S::constant(1.0),
        }
    }
}

impl<S: Carrier> Add for Tangent<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Tangent {
            value: self.value + rhs.value,
            deriv: self.deriv + rhs.deriv,
        }
    }
}

impl<S: Carrier> Sub for Tangent<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Tangent {
            value: self.value - rhs.value,
            deriv: self.deriv - rhs.deriv,
        }
    }
}

impl<S: Carrier> Mul for Tangent<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Tangent {
            value: self.value * rhs.value,
            deriv: self.deriv * rhs.value + self.value * rhs.deriv,
        }
    }
}

impl<S: Carrier> Div for Tangent<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        Tangent {
            value: self.value / rhs.value,
            deriv: (self.deriv * rhs.value - self.value * rhs.deriv) / (rhs.value * rhs.value),
        }
    }
}

impl<S: Carrier> Neg for Tangent<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Tangent {
            value: -self.value,
            deriv: -self.deriv,
        }
    }
}

impl<S: Carrier> Carrier for Tangent<S> {
    fn constant(v: f64) -> Self {
        Tangent::constant(S::constant(v))
    }
    fn sin(self) -> Self {
        Tangent {
            value: self.value.sin(),
            deriv: self.deriv * self.value.cos(),
        }
    }
    fn cos(self) -> Self {
        Tangent {
            value: self.value.cos(),
            deriv: -(self.deriv * self.value.sin()),
        }
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        Tangent {
            value: e,
            deriv: self.deriv * e,
        }
    }
    fn ln(self) -> Self {
        Tangent {
            value: self.value.ln(),
            deriv: self.deriv / self.value,
        }
    }
    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::constant(S::constant(1.0));
        }
        Tangent {
            value: self.value.powi(n),
            deriv: S::constant(f64::from(n)) * self.deriv * self.value.powi(n - 1),
        }
    }
}

/// Symmetric matrix with packed lower-triangular storage.
///
/// `get(i, j)` and `get(j, i)` read the same slot, so symmetry is exact by
/// construction — bitwise, not merely within rounding.
#[derive(Clone, Debug)]
pub struct SymMatrix<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Copy> SymMatrix<S> {
    /// Builds from a callback invoked once per lower-triangular entry (j ≤ i).
    pub fn from_fn_lower(n: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        SymMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        self.data[i * (i + 1) / 2 + j]
    }
}

/// Value, gradient, and Hessian of an objective in the optimization variables.
#[derive(Clone, Debug)]
pub struct SecondOrder<S> {
    pub value: S,
    pub grad: Vec<S>,
    pub hess: SymMatrix<S>,
}

/// Gradient of `h` in the `y` variables at `(x, y)`, one tangent pass per
/// component.
pub fn gradient_y<C: Carrier>(h: &impl Objective, x: &[C], y: &[C]) -> Vec<C> {
    (0..y.len()).map(|j| partial_y(h, x, y, j).deriv).collect()
}

/// Value and `y`-gradient in `y.len()` passes.
pub fn value_and_gradient_y<C: Carrier>(h: &impl Objective, x: &[C], y: &[C]) -> (C, Vec<C>) {
    let mut grad = Vec::with_capacity(y.len());
    let mut value = None;
    for j in 0..y.len() {
        let t = partial_y(h, x, y, j);
        value.get_or_insert(t.value);
        grad.push(t.deriv);
    }
    let value = value.unwrap_or_else(|| h.objective(x, y));
    (value, grad)
}

fn partial_y<C: Carrier>(h: &impl Objective, x: &[C], y: &[C], j: usize) -> Tangent<C> {
    let xt: Vec<Tangent<C>> = x.iter().map(|&v| Tangent::constant(v)).collect();
    let yt: Vec<Tangent<C>> = y
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == j {
                Tangent::seed(v)
            } else {
                Tangent::constant(v)
            }
        })
        .collect();
    h.objective(&xt, &yt)
}

/// Hessian `∂²h/∂y∂y` at `(x, y)` via tangent-over-tangent, one pass per
/// lower-triangular entry.
pub fn hessian_yy<C: Carrier>(h: &impl Objective, x: &[C], y: &[C]) -> SymMatrix<C> {
    let xt: Vec<Tangent<Tangent<C>>> = x
        .iter()
        .map(|&v| Tangent::constant(Tangent::constant(v)))
        .collect();
    SymMatrix::from_fn_lower(y.len(), |i, j| {
        let yt: Vec<Tangent<Tangent<C>>> = y
            .iter()
            .enumerate()
            .map(|(a, &v)| Tangent {
                value: Tangent {
                    value: v,
                    deriv: C::constant(if a == j { 1.0 } else { 0.0 }),
                },
                deriv: Tangent {
                    value: C::constant(if a == i { 1.0 } else { 0.0 }),
                    deriv: C::constant(0.0),
                },
            })
            .collect();
        h.objective(&xt, &yt).deriv.deriv
    })
}

/// Mixed block `∂²h/∂y∂x`: entry `[i][j]` is `∂²h/∂y_i∂x_j` (n_y rows, n_x
/// columns).
pub fn hessian_xy<C: Carrier>(h: &impl Objective, x: &[C], y: &[C]) -> Vec<Vec<C>> {
    (0..y.len())
        .map(|i| {
            (0..x.len())
                .map(|j| {
                    let xt: Vec<Tangent<Tangent<C>>> = x
                        .iter()
                        .enumerate()
                        .map(|(b, &v)| Tangent {
                            value: Tangent::constant(v),
                            deriv: Tangent {
                                value: C::constant(if b == j { 1.0 } else { 0.0 }),
                                deriv: C::constant(0.0),
                            },
                        })
                        .collect();
                    let yt: Vec<Tangent<Tangent<C>>> = y
                        .iter()
                        .enumerate()
                        .map(|(a, &v)| Tangent {
                            value: Tangent {
                                value: v,
                                deriv: C::constant(if a == i { 1.0 } else { 0.0 }),
                            },
                            deriv: Tangent::constant(C::constant(0.0)),
                        })
                        .collect();
                    h.objective(&xt, &yt).deriv.deriv
                })
                .collect()
        })
        .collect()
}

/// Value, `y`-gradient, and `y`-Hessian together.
pub fn second_order_y<C: Carrier>(h: &impl Objective, x: &[C], y: &[C]) -> SecondOrder<C> {
    let (value, grad) = value_and_gradient_y(h, x, y);
    SecondOrder {
        value,
        grad,
        hess: hessian_yy(h, x, y),
    }
}

/// A vector-valued map `R^m → R^m`, evaluable over any carrier. Implemented by
/// the integrator's step residual; differentiated by [`jacobian`].
pub trait VectorFn {
    fn dim(&self) -> usize;
    fn eval<C: Carrier>(&self, u: &[C], out: &mut Vec<C>);
}

/// Residual value and dense Jacobian at `u`, one tangent pass per column.
// The column index drives both the seeding position and the write target, so
// a range loop is the natural shape here.
#[allow(clippy::needless_range_loop)]
pub fn jacobian(f: &impl VectorFn, u: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = f.dim();
    let mut value = vec![0.0; m];
    let mut jac = vec![vec![0.0; u.len()]; m];
    let mut out: Vec<Tangent<f64>> = Vec::with_capacity(m);
    for j in 0..u.len() {
        let ut: Vec<Tangent<f64>> = u
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if i == j {
                    Tangent::seed(v)
                } else {
                    Tangent::constant(v)
                }
            })
            .collect();
        out.clear();
        f.eval(&ut, &mut out);
        for (i, t) in out.iter().enumerate() {
            jac[i][j] = t.deriv;
            if j == 0 {
                value[i] = t.value;
            }
        }
    }
    if u.is_empty() {
        let mut out0: Vec<f64> = Vec::with_capacity(m);
        f.eval(&lift::<f64>(&[]), &mut out0);
        value.copy_from_slice(&out0);
    }
    (value, jac)
}
