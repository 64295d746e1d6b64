//! Detection and correction of global-minimizer jumps.
//!
//! Between consecutive accepted states the identity of the global minimizer
//! can change: two tracked minimizers swap order in objective value. The
//! dynamics switch at that instant, and integrating across it blindly costs
//! an O(dt) local error. This module locates the jump time τ as the root of
//! the event function `H(s) = h(x(s), yᵢ(s)) − h(x(s), yₖ(s))` along the
//! *discrete* partial-step map (so the corrected trajectory is exactly the
//! trapezoidal solution of the switched system), splits the step there, and
//! restarts integration with the new identity.

use crate::carrier::Objective;
use crate::integrator::{step, SolverState, StepError};
use crate::problem::{Problem, SolverConfig};
use serde::Serialize;
use thiserror::Error;

/// Maximum number of corrected sub-steps within one macro step.
const MAX_EVENT_DEPTH: u32 = 32;

/// One located and corrected minimizer jump.
#[derive(Clone, Debug, Serialize)]
pub struct EventRecord {
    /// Jump time.
    pub tau: f64,
    /// Record index holding the global minimum before the jump.
    pub from_index: usize,
    /// Record index holding it afterwards.
    pub to_index: usize,
    /// Differential state at the jump.
    pub x_at_tau: Vec<f64>,
    /// Event-function residual left by the root finder.
    pub residual_h: f64,
}

/// Event-handling failures.
#[derive(Debug, Error)]
pub enum EventError {
    #[error(
        "the global minimizer changed (record {from_index} -> {to_index} by t = {t}) \
         but no tracked pair's event function changes sign across the step; \
         the new optimum was not tracked on both sides"
    )]
    Inconsistent {
        t: f64,
        from_index: usize,
        to_index: usize,
    },
    #[error("event location stalled on [{t_lo}, {t_hi}] without meeting tolerance")]
    LocationFailure { t_lo: f64, t_hi: f64 },
    #[error("more than {depth} minimizer jumps inside a single step")]
    SplitOverflow { depth: u32 },
    #[error(transparent)]
    Step(#[from] StepError),
}

/// `h(x, y_a) − h(x, y_b)`: positive once `y_b` holds the smaller value.
pub fn event_function<P: Objective>(problem: &P, x: &[f64], y_a: &[f64], y_b: &[f64]) -> f64 {
    problem.objective(x, y_a) - problem.objective(x, y_b)
}

fn pair_value(state: &SolverState, i: usize, k: usize) -> f64 {
    state.optimizers.records[i].value - state.optimizers.records[k].value
}

/// Checks a completed step for minimizer jumps and corrects them.
///
/// Returns the accepted states in time order — one per located jump plus the
/// final state at `next.t` — together with the corresponding event records.
/// When no jump (or only a grazing touch smaller than
/// `cfg.min_event_size`) occurred, the result is just `next` unchanged.
pub fn detect_and_correct<P: Problem>(
    problem: &P,
    prev: &SolverState,
    next: SolverState,
    cfg: &SolverConfig,
) -> Result<(Vec<SolverState>, Vec<EventRecord>), EventError> {
    detect_inner(problem, prev, next, cfg, 0)
}

fn detect_inner<P: Problem>(
    problem: &P,
    prev: &SolverState,
    next: SolverState,
    cfg: &SolverConfig,
    depth: u32,
) -> Result<(Vec<SolverState>, Vec<EventRecord>), EventError> {
    let i = prev.optimizers.star;
    let j = next.optimizers.star;
    if i == j {
        return Ok((vec![next], Vec::new()));
    }
    if depth >= MAX_EVENT_DEPTH {
        return Err(EventError::SplitOverflow {
            depth: MAX_EVENT_DEPTH,
        });
    }

    // Sign-changing pairs: the old optimum i loses to k somewhere inside.
    let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
    for k in 0..next.optimizers.records.len() {
        if k == i {
            continue;
        }
        let ga = pair_value(prev, i, k);
        let gb = pair_value(&next, i, k);
        if ga < 0.0 && gb > 0.0 {
            candidates.push((k, ga, gb));
        }
    }
    if candidates.is_empty() {
        return Err(EventError::Inconsistent {
            t: next.t,
            from_index: i,
            to_index: j,
        });
    }
    candidates.retain(|&(_, ga, gb)| gb - ga >= cfg.min_event_size);
    if candidates.is_empty() {
        // Grazing: the swap is real but the swing is below the event floor,
        // so the identities just switch at the step boundary.
        return Ok((vec![next], Vec::new()));
    }

    let mut earliest: Option<(f64, SolverState, f64, usize)> = None;
    for &(k, ga, gb) in &candidates {
        let (tau, state_tau, res) = locate(problem, prev, &next, i, k, ga, gb, cfg)?;
        if earliest.as_ref().is_none_or(|(t, ..)| tau < *t) {
            earliest = Some((tau, state_tau, res, k));
        }
    }
    let (tau, mut state_tau, residual_h, k) = earliest.expect("candidates is non-empty");

    // The switch of identity is the point of the whole exercise: from τ on,
    // the dynamics follow record k even though the two values tie at τ.
    state_tau.optimizers.star = k;
    let event = EventRecord {
        tau,
        from_index: i,
        to_index: k,
        x_at_tau: state_tau.x.clone(),
        residual_h,
    };

    let dt_rest = next.t - tau;
    if dt_rest <= 0.0 {
        return Ok((vec![state_tau], vec![event]));
    }
    let rest = step(problem, &state_tau, dt_rest, cfg)?;
    let (mut states, mut events) = detect_inner(problem, &state_tau, rest, cfg, depth + 1)?;
    states.insert(0, state_tau);
    events.insert(0, event);
    Ok((states, events))
}

/// Safeguarded secant/bisection root finding of the pair event function along
/// the discrete partial-step map `s ↦ step(prev, s − prev.t)`.
#[allow(clippy::too_many_arguments)]
fn locate<P: Problem>(
    problem: &P,
    prev: &SolverState,
    next: &SolverState,
    i: usize,
    k: usize,
    ga: f64,
    gb: f64,
    cfg: &SolverConfig,
) -> Result<(f64, SolverState, f64), EventError> {
    let (mut a, mut ga) = (prev.t, ga);
    let (mut b, mut gb) = (next.t, gb);
    for _ in 0..200 {
        let span = b - a;
        // Secant proposal, forced into the middle 80% of the bracket so a
        // flat stretch cannot stall progress.
        let mut s = b - gb * span / (gb - ga);
        if !(s > a + 0.1 * span && s < b - 0.1 * span) {
            s = a + 0.5 * span;
        }
        let state_s = step(problem, prev, s - prev.t, cfg)?;
        let gs = pair_value(&state_s, i, k);
        if gs.abs() <= cfg.event_tol || span <= cfg.event_tol {
            return Ok((s, state_s, gs));
        }
        if gs < 0.0 {
            (a, ga) = (s, gs);
        } else {
            (b, gb) = (s, gs);
        }
    }
    Err(EventError::LocationFailure { t_lo: a, t_hi: b })
}
