//! The sequential solver loop: track, step, correct, re-certify.
//!
//! The run starts from one verified global search, then advances with
//! implicit trapezoidal steps that carry every tracked minimizer along.
//! After each step the event machinery corrects any change of the global
//! minimizer's identity. Fresh global searches happen on the configured
//! cadence, whenever a record outruns its drift allowance, as a retry after
//! a failed step, and once more after the final step.

use crate::ad::{gradient_y, hessian_yy};
use crate::events::{detect_and_correct, EventError, EventRecord};
use crate::integrator::{step_with_stats, SolverState, StepError};
use crate::optimizer::{argmin, global_search, OptimError, OptimizerSet};
use crate::problem::{ConfigError, Mode, Problem, ProblemSpec, SolverConfig};
use serde::Serialize;
use thiserror::Error;

/// Work counters for one run.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Counters {
    /// Macro time steps taken (event sub-steps not included).
    pub steps: u64,
    /// Newton iterations across all macro steps.
    pub newton_iters: u64,
    /// Verified global searches, including the initial and final ones.
    pub global_search_calls: u64,
}

/// One output sample: a step end or a located event time.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub y_star: Vec<f64>,
    pub optimizer_count: usize,
    pub event: bool,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct Solution {
    pub points: Vec<TrajectoryPoint>,
    pub events: Vec<EventRecord>,
    pub counters: Counters,
    pub final_state: SolverState,
}

/// Any failure a run can surface.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Event(#[from] EventError),
}

impl SolveError {
    /// True for the event-inconsistency failure, which callers report
    /// separately from ordinary solver breakdowns.
    pub fn is_event_inconsistency(&self) -> bool {
        matches!(self, SolveError::Event(EventError::Inconsistent { .. }))
    }
}

fn sample(state: &SolverState, event: bool) -> TrajectoryPoint {
    TrajectoryPoint {
        t: state.t,
        x: state.x.clone(),
        y_star: state.optimizers.star_point().to_vec(),
        optimizer_count: state.optimizers.len(),
        event,
    }
}

/// A record whose point has escaped its enclosure by more than the
/// accumulated drift allowance was tracked into a different basin; the set
/// must be re-certified.
fn slack_violated(set: &OptimizerSet) -> bool {
    set.records.iter().any(|r| {
        r.enclosure
            .iter()
            .zip(&r.point)
            .any(|(e, &p)| p < e.lo() - r.slack || p > e.hi() + r.slack)
    })
}

/// Re-runs the global search at the current state and matches the fresh
/// records onto the old ordering (each old record claims the nearest
/// unclaimed fresh one) so record indices keep meaning across the refresh.
/// Old records with no fresh counterpart die; newly appeared minimizers are
/// appended.
fn refresh<P: Problem>(
    problem: &P,
    state: &mut SolverState,
    spec: &ProblemSpec<P>,
    cfg: &SolverConfig,
    counters: &mut Counters,
) -> Result<(), SolveError> {
    let fresh = global_search(problem, &state.x, &spec.y_domain, cfg)?;
    counters.global_search_calls += 1;
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()))
    };
    let mut claimed = vec![false; fresh.records.len()];
    let mut records = Vec::with_capacity(fresh.records.len());
    for old in &state.optimizers.records {
        let nearest = fresh
            .records
            .iter()
            .enumerate()
            .filter(|(b, _)| !claimed[*b])
            .min_by(|(_, r), (_, s)| {
                dist(&old.point, &r.point)
                    .partial_cmp(&dist(&old.point, &s.point))
                    .unwrap()
            });
        if let Some((b, rec)) = nearest {
            claimed[b] = true;
            records.push(rec.clone());
        }
    }
    for (b, rec) in fresh.records.iter().enumerate() {
        if !claimed[b] {
            records.push(rec.clone());
        }
    }
    let star = argmin(&records);
    state.optimizers = OptimizerSet { records, star };
    Ok(())
}

/// Does this record's optimality block still have a minimizer near `y0` once
/// `x` has moved? Standalone damped Newton on `∂h/∂y = 0`, then a positive
/// definiteness check so a minimizer that merged into a saddle counts as gone.
fn block_survives<P: Problem>(problem: &P, x: &[f64], y0: &[f64], cfg: &SolverConfig) -> bool {
    let n = y0.len();
    let mut y = y0.to_vec();
    let norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
    let mut gnorm = norm(&gradient_y(problem, x, &y));
    for _ in 0..cfg.newton_max_iter {
        if gnorm <= cfg.newton_tol {
            let h = hessian_yy(problem, x, &y);
            let hm = nalgebra::DMatrix::from_fn(n, n, |i, j| h.get(i, j));
            return nalgebra::Cholesky::new(hm).is_some();
        }
        let g = gradient_y(problem, x, &y);
        let h = hessian_yy(problem, x, &y);
        let hm = nalgebra::DMatrix::from_fn(n, n, |i, j| h.get(i, j));
        let gv = nalgebra::DVector::from_column_slice(&g);
        let Some(delta) = hm.lu().solve(&(-gv)) else {
            return false;
        };
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
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
            return false;
        }
    }
    false
}

/// Drops tracked records whose minimizer no longer exists at the predicted
/// end of the step — a fold annihilates a minimizer mid-step, its optimality
/// residual then has no root, and the combined Newton cannot converge until
/// the dead record is removed. The star is never dropped. Returns `None`
/// when nothing could be pruned.
fn prune_dead_records<P: Problem>(
    problem: &P,
    state: &SolverState,
    dt: f64,
    cfg: &SolverConfig,
) -> Option<SolverState> {
    let f_prev = problem.dynamics(&state.x, state.optimizers.star_point());
    let x_pred: Vec<f64> = state
        .x
        .iter()
        .zip(&f_prev)
        .map(|(x, f)| x + dt * f)
        .collect();
    let star = state.optimizers.star;
    let keep: Vec<bool> = state
        .optimizers
        .records
        .iter()
        .enumerate()
        .map(|(r, rec)| r == star || block_survives(problem, &x_pred, &rec.point, cfg))
        .collect();
    if keep.iter().all(|&k| k) {
        return None;
    }
    let records: Vec<_> = state
        .optimizers
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(rec, _)| rec.clone())
        .collect();
    let new_star = keep[..star].iter().filter(|&&k| k).count();
    let mut pruned = state.clone();
    pruned.optimizers = OptimizerSet {
        records,
        star: new_star,
    };
    Some(pruned)
}

/// Integrates the problem over its time window under `cfg`.
pub fn solve<P: Problem>(
    spec: &ProblemSpec<P>,
    cfg: &SolverConfig,
) -> Result<Solution, SolveError> {
    cfg.validate_for(spec)?;
    let problem = &spec.problem;
    let span = spec.t_end - spec.t0;
    let n_steps = ((span / cfg.dt) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    // Stop tolerance covers the floating-point drift of summing n_steps
    // increments while staying far below one step.
    let stop_tol = span * 1e-12_f64.max(span / cfg.dt * 1e-15);

    let mut counters = Counters::default();
    let mut state = SolverState {
        t: spec.t0,
        x: spec.x0.clone(),
        optimizers: global_search(problem, &spec.x0, &spec.y_domain, cfg)?,
    };
    counters.global_search_calls = 1;

    let mut points = vec![sample(&state, false)];
    let mut events: Vec<EventRecord> = Vec::new();

    let mut i: u64 = 0;
    while state.t < spec.t_end - stop_tol {
        i += 1;
        if i > n_steps + 8 {
            break; // sliver guard: never spin on floating-point crumbs
        }
        let period_due =
            cfg.reopt_period > 0 && i.is_multiple_of(u64::from(cfg.reopt_period)) && i < n_steps;
        if period_due || cfg.mode == Mode::AlwaysGlobalOptimize {
            refresh(problem, &mut state, spec, cfg, &mut counters)?;
        }
        let dt_eff = cfg.dt.min(spec.t_end - state.t);

        // A failed step gets two repairs before the error surfaces, both
        // aimed at stale tracking: a forced re-certification at the step
        // start, and then pruning of records whose minimizer annihilates
        // inside the step (a fold leaves that optimality block rootless, so
        // no amount of re-searching at the old x can help).
        let (mut next, iters) = match step_with_stats(problem, &state, dt_eff, cfg) {
            Ok(v) => v,
            Err(_) => {
                refresh(problem, &mut state, spec, cfg, &mut counters)?;
                match step_with_stats(problem, &state, dt_eff, cfg) {
                    Ok(v) => v,
                    Err(e) => match prune_dead_records(problem, &state, dt_eff, cfg) {
                        Some(pruned) => {
                            state = pruned;
                            step_with_stats(problem, &state, dt_eff, cfg)?
                        }
                        None => return Err(e.into()),
                    },
                }
            }
        };
        counters.newton_iters += u64::from(iters);

        let mut refresh_after = false;
        if slack_violated(&next.optimizers) {
            refresh(problem, &mut state, spec, cfg, &mut counters)?;
            let (redone, iters2) = step_with_stats(problem, &state, dt_eff, cfg)?;
            counters.newton_iters += u64::from(iters2);
            next = redone;
            // Still violated from a certified start: accept the step but
            // re-certify immediately so the stale set cannot propagate.
            refresh_after = slack_violated(&next.optimizers);
        }
        counters.steps += 1;

        if cfg.mode.events_enabled() {
            let (states, mut evs) = detect_and_correct(problem, &state, next, cfg)?;
            for s in &states {
                let is_event = evs.iter().any(|e| e.tau == s.t);
                points.push(sample(s, is_event));
            }
            events.append(&mut evs);
            state = states
                .into_iter()
                .next_back()
                .expect("at least the final state");
        } else {
            points.push(sample(&next, false));
            state = next;
        }

        if refresh_after {
            refresh(problem, &mut state, spec, cfg, &mut counters)?;
        }
    }

    // Closing certification: the final reported state is always backed by a
    // fresh verified search.
    refresh(problem, &mut state, spec, cfg, &mut counters)?;
    if let Some(last) = points.last_mut() {
        last.y_star = state.optimizers.star_point().to_vec();
        last.optimizer_count = state.optimizers.len();
    }

    Ok(Solution {
        points,
        events,
        counters,
        final_state: state,
    })
}
