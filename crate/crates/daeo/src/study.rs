//! Convergence and timing studies built on top of the solver.
//!
//! The convergence study runs the solver across a ladder of step sizes with
//! event correction on and off, measures final-state and event-time errors
//! against a reference, and fits log–log slopes. The reference is the
//! analytic solution when the problem has one; otherwise a high-accuracy
//! oracle integrates the switched system with classic RK4 at a small
//! fraction of the finest step, locating every switch by bisection. The
//! oracle shares no code path with the trapezoidal solver, so the comparison
//! stays meaningful.

use crate::ad::{gradient_y, hessian_yy};
use crate::events::EventError;
use crate::optimizer::global_search;
use crate::problem::{Mode, Problem, ProblemSpec, SolverConfig};
use crate::solver::{solve, SolveError};
use serde::Serialize;
use std::time::Instant;

/// Measured errors for one step size of the convergence ladder.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    /// Max-norm error of x(t_end) with event correction enabled.
    pub error_with_events: f64,
    /// Max-norm error of x(t_end) with event correction disabled.
    pub error_without_events: f64,
    /// |τ − τ_ref| for the first event, when both runs produce one.
    pub tau_error: Option<f64>,
}

/// Fitted log–log slopes over the ladder; `None` when fewer than two usable
/// points remain after filtering.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Slopes {
    pub with_events: Option<f64>,
    pub without_events: Option<f64>,
    pub tau: Option<f64>,
}

/// Least-squares slope of ln(error) against ln(dt).
///
/// Points with a non-positive or non-finite coordinate are skipped (a zero
/// error has no logarithm; it means the measurement hit a tolerance floor).
/// Returns `None` when fewer than two valid points remain or all step sizes
/// coincide.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(d, e)| *d > 0.0 && *e > 0.0 && d.is_finite() && e.is_finite())
        .map(|(d, e)| (d.ln(), e.ln()))
        .collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let num: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if den == 0.0 {
        return None;
    }
    Some(num / den)
}

/// A high-accuracy endpoint and event list to measure errors against.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub x_end: Vec<f64>,
    pub event_times: Vec<f64>,
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()))
}

/// Runs the ladder and fits slopes. Event-time errors at or below ten times
/// the event tolerance are excluded from the tau fit: past that floor the
/// measurement reflects the root finder's stopping rule, not the step size.
pub fn convergence_study<P: Problem>(
    spec: &ProblemSpec<P>,
    base: &SolverConfig,
    dts: &[f64],
) -> Result<(Vec<ConvergenceRow>, Slopes), SolveError> {
    if dts.is_empty() {
        let empty = Slopes {
            with_events: None,
            without_events: None,
            tau: None,
        };
        return Ok((Vec::new(), empty));
    }
    let reference = resolve_reference(spec, base, dts)?;
    let mut rows = Vec::with_capacity(dts.len());
    for &dt in dts {
        let mut with_cfg = base.clone();
        with_cfg.dt = dt;
        with_cfg.mode = Mode::TrackingWithEvents;
        let mut without_cfg = base.clone();
        without_cfg.dt = dt;
        without_cfg.mode = Mode::TrackingNoEvents;

        let with_run = solve(spec, &with_cfg)?;
        let without_run = solve(spec, &without_cfg)?;
        let tau_error = match (with_run.events.first(), reference.event_times.first()) {
            (Some(event), Some(&tau_ref)) => Some((event.tau - tau_ref).abs()),
            _ => None,
        };
        rows.push(ConvergenceRow {
            dt,
            error_with_events: inf_dist(&with_run.final_state.x, &reference.x_end),
            error_without_events: inf_dist(&without_run.final_state.x, &reference.x_end),
            tau_error,
        });
    }

    let with_points: Vec<(f64, f64)> = rows.iter().map(|r| (r.dt, r.error_with_events)).collect();
    let without_points: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.dt, r.error_without_events))
        .collect();
    let tau_floor = 10.0 * base.event_tol;
    let tau_points: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.tau_error.map(|e| (r.dt, e)))
        .filter(|(_, e)| *e > tau_floor)
        .collect();
    let slopes = Slopes {
        with_events: fit_loglog_slope(&with_points),
        without_events: fit_loglog_slope(&without_points),
        tau: fit_loglog_slope(&tau_points),
    };
    Ok((rows, slopes))
}

/// Analytic reference when available, RK4 oracle otherwise.
fn resolve_reference<P: Problem>(
    spec: &ProblemSpec<P>,
    cfg: &SolverConfig,
    dts: &[f64],
) -> Result<ReferenceSolution, SolveError> {
    if let Some(x_end) = spec.problem.reference(spec.t_end) {
        return Ok(ReferenceSolution {
            x_end,
            event_times: spec.problem.reference_event_times(),
        });
    }
    let dt_min = dts.iter().copied().fold(f64::INFINITY, f64::min);
    rk4_reference(spec, dt_min / 100.0, cfg)
}

/// Oracle-side Newton polish: returns the minimizer of `y ↦ h(x, y)` near
/// `y0`, or `None` when the iteration fails to converge — the signature of a
/// minimizer that no longer exists at this `x`.
fn polish<P: Problem>(problem: &P, x: &[f64], y0: &[f64]) -> Option<Vec<f64>> {
    const TOL: f64 = 1e-13;
    let n = y0.len();
    let norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let mut y = y0.to_vec();
    let mut gnorm = norm(&gradient_y(problem, x, &y));
    for _ in 0..80 {
        if gnorm <= TOL {
            return Some(y);
        }
        let g = gradient_y(problem, x, &y);
        let h = hessian_yy(problem, x, &y);
        let hm = nalgebra::DMatrix::from_fn(n, n, |i, j| h.get(i, j));
        let gv = nalgebra::DVector::from_column_slice(&g);
        let delta = hm.lu().solve(&(-gv))?;
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial: Vec<f64> = y
                .iter()
                .zip(delta.iter())
                .map(|(v, d)| v + damping * d)
                .collect();
            let trial_norm = norm(&gradient_y(problem, x, &trial));
            if trial_norm < gnorm {
                y = trial;
                gnorm = trial_norm;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    // Ran out of iterations: accept only a near-converged point.
    if gnorm <= 1e-11 {
        return Some(y);
    }
    None
}

fn is_minimum<P: Problem>(problem: &P, x: &[f64], y: &[f64]) -> bool {
    let n = y.len();
    let h = hessian_yy(problem, x, y);
    let hm = nalgebra::DMatrix::from_fn(n, n, |i, j| h.get(i, j));
    nalgebra::Cholesky::new(hm).is_some()
}

/// One classic RK4 step of size `s`, following the star's branch: each stage
/// re-polishes the minimizer at the stage's x before evaluating `f`.
fn rk4_step<P: Problem>(problem: &P, x0: &[f64], y_star: &[f64], s: f64) -> Option<Vec<f64>> {
    let shift = |base: &[f64], scale: f64, k: &[f64]| -> Vec<f64> {
        base.iter().zip(k).map(|(b, v)| b + scale * v).collect()
    };
    let k1 = problem.dynamics(x0, y_star);
    let x2 = shift(x0, s / 2.0, &k1);
    let y2 = polish(problem, &x2, y_star)?;
    let k2 = problem.dynamics(&x2, &y2);
    let x3 = shift(x0, s / 2.0, &k2);
    let y3 = polish(problem, &x3, y_star)?;
    let k3 = problem.dynamics(&x3, &y3);
    let x4 = shift(x0, s, &k3);
    let y4 = polish(problem, &x4, y_star)?;
    let k4 = problem.dynamics(&x4, &y4);
    Some(
        x0.iter()
            .enumerate()
            .map(|(i, &x)| x + s / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect(),
    )
}

const RESCAN_EVERY: u64 = 100;
const MAX_FLIPS_PER_STEP: u32 = 16;
/// Event times are bisected down to this width.
const EVENT_TIME_TOL: f64 = 1e-12;

struct OracleBranches {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    star: usize,
}

impl OracleBranches {
    fn from_search<P: Problem>(
        problem: &P,
        x: &[f64],
        spec: &ProblemSpec<P>,
        cfg: &SolverConfig,
    ) -> Result<Self, SolveError> {
        let set = global_search(problem, x, &spec.y_domain, cfg)?;
        Ok(OracleBranches {
            points: set.records.iter().map(|r| r.point.clone()).collect(),
            values: set.records.iter().map(|r| r.value).collect(),
            star: set.star,
        })
    }

    /// Appends any freshly found minimizer that no tracked branch covers.
    fn absorb_births<P: Problem>(
        &mut self,
        problem: &P,
        x: &[f64],
        spec: &ProblemSpec<P>,
        cfg: &SolverConfig,
    ) -> Result<(), SolveError> {
        let fresh = global_search(problem, x, &spec.y_domain, cfg)?;
        for rec in &fresh.records {
            let known = self.points.iter().any(|p| inf_dist(p, &rec.point) <= 1e-4);
            if !known {
                self.points.push(rec.point.clone());
                self.values.push(rec.value);
            }
        }
        Ok(())
    }
}

/// Every branch re-polished at a trial `x`, kept in the original index
/// space: `points[i]` is `None` when branch `i` has no minimizer there any
/// more. Dead branches carry an infinite value so they never win an argmin.
struct MovedBranches {
    points: Vec<Option<Vec<f64>>>,
    values: Vec<f64>,
}

fn move_branches<P: Problem>(problem: &P, branches: &OracleBranches, x: &[f64]) -> MovedBranches {
    let mut points = Vec::with_capacity(branches.points.len());
    let mut values = Vec::with_capacity(branches.points.len());
    for y0 in &branches.points {
        match polish(problem, x, y0).filter(|y| is_minimum(problem, x, y)) {
            Some(y) => {
                values.push(problem.objective(x, &y));
                points.push(Some(y));
            }
            None => {
                values.push(f64::INFINITY);
                points.push(None);
            }
        }
    }
    MovedBranches { points, values }
}

/// Drops dead branches and renumbers the star. The star branch is kept even
/// when its polish failed, falling back to its pre-step point, so the oracle
/// never loses the trajectory it is following.
fn compact(branches: &OracleBranches, moved: MovedBranches, star_origin: usize) -> OracleBranches {
    let MovedBranches {
        points: slots,
        values: moved_values,
    } = moved;
    let mut points = Vec::with_capacity(slots.len());
    let mut values = Vec::with_capacity(slots.len());
    let mut star = 0;
    for (idx, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(y) => {
                if idx == star_origin {
                    star = points.len();
                }
                values.push(moved_values[idx]);
                points.push(y);
            }
            None if idx == star_origin => {
                star = points.len();
                values.push(branches.values[idx]);
                points.push(branches.points[idx].clone());
            }
            None => {}
        }
    }
    OracleBranches {
        points,
        values,
        star,
    }
}

/// Integrates the switched system with classic RK4 at step `h`, following
/// every local minimizer by pointwise Newton polishing and locating each
/// change of the global minimizer by bisection. Independent of the
/// trapezoidal solve path, this serves as the error reference for problems
/// without an analytic solution.
pub fn rk4_reference<P: Problem>(
    spec: &ProblemSpec<P>,
    h: f64,
    cfg: &SolverConfig,
) -> Result<ReferenceSolution, SolveError> {
    assert!(h > 0.0, "oracle step must be positive");
    let problem = &spec.problem;
    let span = spec.t_end - spec.t0;
    let n = (span / h).ceil().max(1.0) as u64;
    let h = span / n as f64;

    let mut branches = OracleBranches::from_search(problem, &spec.x0, spec, cfg)?;
    let mut x = spec.x0.clone();
    let mut event_times = Vec::new();

    for step_idx in 0..n {
        let t_start = spec.t0 + step_idx as f64 * h;
        if step_idx > 0 && step_idx % RESCAN_EVERY == 0 {
            branches.absorb_births(problem, &x, spec, cfg)?;
        }

        let mut used = 0.0;
        let mut flips = 0;
        while used < h {
            let remaining = h - used;
            let star_y = branches.points[branches.star].clone();
            let Some(x_new) = rk4_step(problem, &x, &star_y, remaining) else {
                // The star's polish failed mid-stage: recover with a fresh
                // search and retry the sub-step once.
                branches = OracleBranches::from_search(problem, &x, spec, cfg)?;
                flips += 1;
                if flips > MAX_FLIPS_PER_STEP {
                    return Err(EventError::SplitOverflow { depth: flips }.into());
                }
                continue;
            };

            let moved = move_branches(problem, &branches, &x_new);
            let star_idx = branches.star;
            let k_min = argmin_values(&moved.values);
            if k_min == star_idx || moved.values[k_min] >= moved.values[star_idx] {
                x = x_new;
                used = h;
                branches = compact(&branches, moved, star_idx);
                continue;
            }

            // The global minimizer changed identity inside this sub-step:
            // bisect the crossing time of the frozen-star probe.
            let probe = |s: f64| -> Option<f64> {
                if s == 0.0 {
                    return Some(branches.values[star_idx] - branches.values[k_min]);
                }
                let xs = rk4_step(problem, &x, &star_y, s)?;
                let yi = polish(problem, &xs, &branches.points[star_idx])?;
                let yk = polish(problem, &xs, &branches.points[k_min])?;
                Some(problem.objective(&xs, &yi) - problem.objective(&xs, &yk))
            };
            let mut lo = 0.0_f64;
            let mut hi = remaining;
            if probe(0.0).unwrap_or(1.0) >= 0.0 {
                // Tie already at the sub-step start: switch without width.
                hi = 0.0;
            }
            while hi - lo > EVENT_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                // A failed probe means the frozen branch is past its life;
                // the crossing must be earlier.
                match probe(mid) {
                    Some(g) if g < 0.0 => lo = mid,
                    _ => hi = mid,
                }
            }
            let s_tau = 0.5 * (lo + hi);
            if s_tau > 0.0 {
                if let Some(x_tau) = rk4_step(problem, &x, &star_y, s_tau) {
                    x = x_tau;
                }
            }
            let at_tau = move_branches(problem, &branches, &x);
            branches = compact(&branches, at_tau, k_min);
            event_times.push(t_start + used + s_tau);
            used += s_tau.max(EVENT_TIME_TOL);
            flips += 1;
            if flips > MAX_FLIPS_PER_STEP {
                return Err(EventError::SplitOverflow { depth: flips }.into());
            }
        }
    }
    Ok(ReferenceSolution {
        x_end: x,
        event_times,
    })
}

fn argmin_values(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Median wall-clock time and work counters for one (dt, mode) cell.
#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub dt: f64,
    pub mode: Mode,
    pub median_ms: f64,
    pub steps: u64,
    pub events: usize,
    pub global_search_calls: u64,
}

/// Times full solves over the (dt, mode) grid: one untimed warmup run per
/// cell, then `reps` measured runs reduced to their median.
pub fn bench<P: Problem>(
    spec: &ProblemSpec<P>,
    base: &SolverConfig,
    dts: &[f64],
    modes: &[Mode],
    reps: usize,
) -> Result<Vec<BenchRow>, SolveError> {
    let reps = reps.max(1);
    let mut rows = Vec::with_capacity(dts.len() * modes.len());
    for &dt in dts {
        for &mode in modes {
            let mut cfg = base.clone();
            cfg.dt = dt;
            cfg.mode = mode;
            solve(spec, &cfg)?; // warmup
            let mut times_ms = Vec::with_capacity(reps);
            let mut last = None;
            for _ in 0..reps {
                let start = Instant::now();
                let solution = solve(spec, &cfg)?;
                times_ms.push(start.elapsed().as_secs_f64() * 1e3);
                last = Some(solution);
            }
            times_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median_ms = if reps % 2 == 1 {
                times_ms[reps / 2]
            } else {
                0.5 * (times_ms[reps / 2 - 1] + times_ms[reps / 2])
            };
            let solution = last.expect("reps >= 1");
            rows.push(BenchRow {
                dt,
                mode,
                median_ms,
                steps: solution.counters.steps,
                events: solution.events.len(),
                global_search_calls: solution.counters.global_search_calls,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{builtin_problem, SIMPLE_TAU1};

    #[test]
    fn slope_fit_recovers_exact_quadratic() {
        let points: Vec<(f64, f64)> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&d| (d, 3.0 * d * d))
            .collect();
        let slope = fit_loglog_slope(&points).unwrap();
        assert!((slope - 2.0).abs() < 1e-12, "slope = {slope}");
    }

    #[test]
    fn slope_fit_needs_two_valid_points() {
        assert!(fit_loglog_slope(&[]).is_none());
        assert!(fit_loglog_slope(&[(0.1, 1e-3)]).is_none());
        // Zero errors are filtered out, leaving a single valid point.
        assert!(fit_loglog_slope(&[(0.1, 0.0), (0.05, 1e-3)]).is_none());
        // Identical step sizes give a degenerate fit.
        assert!(fit_loglog_slope(&[(0.1, 1e-2), (0.1, 1e-3)]).is_none());
    }

    #[test]
    fn convergence_ladder_on_simple_problem() {
        let spec = builtin_problem("simple").unwrap();
        let base = SolverConfig::default();
        let dts = [0.25, 0.125, 0.0625];
        let (rows, slopes) = convergence_study(&spec, &base, &dts).unwrap();
        assert_eq!(rows.len(), 3);

        // Hand-computed values for the exact discrete trajectories at
        // dt = 1/4: with events the endpoint error is 2.941e-3, without
        // (the switch waits for the t = 0.25 grid point) it is 1.788e-2,
        // and the located event misses ln(2)/3 by 8.83e-3.
        assert!(
            (rows[0].error_with_events - 2.941e-3).abs() < 2e-4,
            "with-events error at dt=0.25: {}",
            rows[0].error_with_events
        );
        assert!(
            (rows[0].error_without_events - 1.788e-2).abs() < 2e-4,
            "without-events error at dt=0.25: {}",
            rows[0].error_without_events
        );
        let tau_err = rows[0].tau_error.expect("one event at dt=0.25");
        assert!((tau_err - 8.827e-3).abs() < 2e-4, "tau error: {tau_err}");

        let with = slopes.with_events.expect("three valid points");
        assert!((1.5..=2.6).contains(&with), "with-events slope: {with}");
        let tau = slopes.tau.expect("tau errors well above the floor");
        assert!(tau >= 1.5, "tau slope: {tau}");
        assert!(slopes.without_events.is_some());
    }

    #[test]
    fn rk4_oracle_matches_analytic_simple_solution() {
        let spec = builtin_problem("simple").unwrap();
        let cfg = SolverConfig::default();
        let oracle = rk4_reference(&spec, 1e-4, &cfg).unwrap();
        let exact = spec.problem.reference(spec.t_end).unwrap();
        assert!(
            inf_dist(&oracle.x_end, &exact) <= 1e-8,
            "oracle endpoint error: {}",
            inf_dist(&oracle.x_end, &exact)
        );
        assert_eq!(oracle.event_times.len(), 1);
        let tau = oracle.event_times[0];
        assert!(
            (tau - SIMPLE_TAU1).abs() <= 1e-9,
            "oracle event time error: {}",
            (tau - SIMPLE_TAU1).abs()
        );
    }

    #[test]
    fn rk4_oracle_completes_on_robust_problem() {
        let spec = builtin_problem("robust").unwrap();
        let cfg = SolverConfig::default();
        let oracle = rk4_reference(&spec, 2e-4, &cfg).unwrap();
        assert!(oracle.x_end.iter().all(|v| v.is_finite()));
        for pair in oracle.event_times.windows(2) {
            assert!(pair[0] < pair[1], "event times must increase");
        }
    }

    #[test]
    fn bench_grid_reports_counters() {
        let spec = builtin_problem("simple").unwrap();
        let base = SolverConfig::default();
        let rows = bench(
            &spec,
            &base,
            &[0.1],
            &[Mode::TrackingWithEvents, Mode::AlwaysGlobalOptimize],
            2,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!(row.median_ms >= 0.0);
            assert_eq!(row.steps, 10);
        }
        // Re-optimizing every step must do strictly more verified searches.
        assert!(rows[1].global_search_calls > rows[0].global_search_calls);
    }
}
