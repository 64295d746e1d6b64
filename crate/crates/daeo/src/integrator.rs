//! Implicit trapezoidal stepping of the combined system.
//!
//! One step advances the differential state together with *every* tracked
//! minimizer: the unknown vector stacks `x` and one `y` block per record, and
//! the residual couples the trapezoidal rule for `x' = f(x, y*)` with the
//! first-order optimality condition `∂h/∂y = 0` at each record. Solving them
//! simultaneously keeps each `y` pinned to its minimizer at the new time
//! without a separate inner optimization loop.
//!
//! Newton starts from an explicit Euler predictor for `x` and an
//! implicit-function-theorem drift predictor for each `y`, and the same drift
//! bound grows each record's `slack` — the allowance the tracking solver uses
//! to decide when a fresh global search is due.

use crate::ad::{gradient_y, hessian_xy, hessian_yy, jacobian, VectorFn};
use crate::carrier::Carrier;
use crate::optimizer::OptimizerSet;
use crate::problem::{Problem, SolverConfig};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Full solver state at one time: differential variables plus the tracked
/// minimizer set.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub t: f64,
    pub x: Vec<f64>,
    pub optimizers: OptimizerSet,
}

/// Failure of the implicit-function drift computation.
#[derive(Debug, Error)]
pub enum DriftError {
    #[error(
        "minimizer Hessian is singular to working precision \
         (condition estimate {cond_estimate:.3e}), no drift direction"
    )]
    SingularHessian { cond_estimate: f64 },
}

/// Failures of one implicit step.
#[derive(Debug, Error)]
pub enum StepError {
    #[error("implicit step at t = {t} did not converge (residual {residual:.3e})")]
    NewtonDiverged { t: f64, residual: f64 },
    #[error("singular step Jacobian at t = {t}")]
    SingularJacobian { t: f64 },
}

/// Time derivative of a tracked minimizer along the flow, from the implicit
/// function theorem applied to `∂h/∂y(x, y(x)) = 0`:
/// `ẏ = −(∂²h/∂y∂y)⁻¹ (∂²h/∂y∂x) ẋ`.
// Negated float comparison is deliberate: a NaN singular value must take the
// error branch.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn drift<P: Problem>(
    problem: &P,
    x: &[f64],
    y: &[f64],
    xdot: &[f64],
) -> Result<Vec<f64>, DriftError> {
    let n_y = y.len();
    let h = hessian_yy(problem, x, y);
    let mixed = hessian_xy(problem, x, y);
    let hm = DMatrix::from_fn(n_y, n_y, |i, j| h.get(i, j));
    let rhs = DVector::from_fn(n_y, |i, _| {
        -mixed[i].iter().zip(xdot).map(|(m, v)| m * v).sum::<f64>()
    });
    let svd = hm.svd(true, true);
    let s_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let s_min = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(s_min > 1e-12 * s_max) {
        return Err(DriftError::SingularHessian {
            cond_estimate: if s_min > 0.0 {
                s_max / s_min
            } else {
                f64::INFINITY
            },
        });
    }
    let sol = svd.solve(&rhs, 0.0).expect("svd factors were requested");
    Ok(sol.as_slice().to_vec())
}

/// Trapezoidal residual for `x` stacked with the optimality residual of every
/// tracked minimizer. The `x` rows use the dynamics evaluated at the record
/// that was the global minimizer when the step began; event correction deals
/// with changes of that identity afterwards.
struct CombinedResidual<'a, P: Problem> {
    problem: &'a P,
    x_prev: &'a [f64],
    f_prev: &'a [f64],
    star: usize,
    n_records: usize,
    n_y: usize,
    dt: f64,
}

impl<P: Problem> VectorFn for CombinedResidual<'_, P> {
    fn dim(&self) -> usize {
        self.x_prev.len() + self.n_records * self.n_y
    }

    fn eval<C: Carrier>(&self, u: &[C], out: &mut Vec<C>) {
        let n_x = self.x_prev.len();
        let x_new = &u[..n_x];
        let y_star = &u[n_x + self.star * self.n_y..n_x + (self.star + 1) * self.n_y];
        let f_new = self.problem.dynamics(x_new, y_star);
        let half_dt = C::constant(0.5 * self.dt);
        for i in 0..n_x {
            out.push(
                C::constant(self.x_prev[i]) - x_new[i]
                    + half_dt * (C::constant(self.f_prev[i]) + f_new[i]),
            );
        }
        for r in 0..self.n_records {
            let y_r = &u[n_x + r * self.n_y..n_x + (r + 1) * self.n_y];
            out.extend(gradient_y(self.problem, x_new, y_r));
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One implicit step of size `dt`; see [`step_with_stats`].
pub fn step<P: Problem>(
    problem: &P,
    state: &SolverState,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<SolverState, StepError> {
    step_with_stats(problem, state, dt, cfg).map(|(s, _)| s)
}

/// One implicit step of size `dt`, also reporting how many Newton iterations
/// it took. The record set keeps its order and enclosures; points, values,
/// and slack are advanced, and the global index moves only to a record that
/// is *strictly* better (ties never flip the star).
pub fn step_with_stats<P: Problem>(
    problem: &P,
    state: &SolverState,
    dt: f64,
    cfg: &SolverConfig,
) -> Result<(SolverState, u32), StepError> {
    let n_x = state.x.len();
    let n_y = problem.dim_y();
    let records = &state.optimizers.records;
    let star = state.optimizers.star;
    let f_prev = problem.dynamics(&state.x, state.optimizers.star_point());

    // Drift predictors; a singular Hessian just means we seed that block with
    // a standing start and let Newton (or, failing that, a forced refresh in
    // the outer loop) sort it out.
    let drifts: Vec<Option<Vec<f64>>> = records
        .iter()
        .map(|r| drift(problem, &state.x, &r.point, &f_prev).ok())
        .collect();

    let mut u: Vec<f64> = Vec::with_capacity(n_x + records.len() * n_y);
    u.extend(state.x.iter().zip(&f_prev).map(|(x, f)| x + dt * f));
    for (rec, d) in records.iter().zip(&drifts) {
        for j in 0..n_y {
            let v = d.as_ref().map_or(0.0, |d| d[j]);
            u.push(rec.point[j] + dt * v);
        }
    }

    let residual = CombinedResidual {
        problem,
        x_prev: &state.x,
        f_prev: &f_prev,
        star,
        n_records: records.len(),
        n_y,
        dt,
    };
    let m = residual.dim();
    let mut out: Vec<f64> = Vec::with_capacity(m);
    let eval_norm = |u: &[f64], out: &mut Vec<f64>| -> f64 {
        out.clear();
        residual.eval(u, out);
        inf_norm(out)
    };

    let mut norm = eval_norm(&u, &mut out);
    let mut iters = 0u32;
    while norm > cfg.newton_tol {
        if iters >= cfg.newton_max_iter {
            return Err(StepError::NewtonDiverged {
                t: state.t,
                residual: norm,
            });
        }
        let (r, jac) = jacobian(&residual, &u);
        let jm = DMatrix::from_fn(m, m, |i, j| jac[i][j]);
        let rv = DVector::from_column_slice(&r);
        let Some(delta) = jm.lu().solve(&(-rv)) else {
            return Err(StepError::SingularJacobian { t: state.t });
        };
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial: Vec<f64> = u
                .iter()
                .zip(delta.iter())
                .map(|(v, d)| v + damping * d)
                .collect();
            let trial_norm = eval_norm(&trial, &mut out);
            if trial_norm < norm {
                u = trial;
                norm = trial_norm;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        iters += 1;
        if !accepted {
            return Err(StepError::NewtonDiverged {
                t: state.t,
                residual: norm,
            });
        }
    }

    let mut next = state.clone();
    next.t = state.t + dt;
    next.x = u[..n_x].to_vec();
    for (idx, rec) in next.optimizers.records.iter_mut().enumerate() {
        rec.point = u[n_x + idx * n_y..n_x + (idx + 1) * n_y].to_vec();
        rec.value = problem.objective(&next.x, &rec.point);
        let rate = drifts[idx].as_ref().map_or(0.0, |d| inf_norm(d));
        rec.slack += 2.0 * rate * dt;
    }
    let values: Vec<f64> = next.optimizers.records.iter().map(|r| r.value).collect();
    let mut best = star;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    next.optimizers.star = best;
    Ok((next, iters))
}
