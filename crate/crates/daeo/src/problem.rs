//! Problem definitions and solver configuration.
//!
//! A [`Problem`] bundles the dynamics `x' = f(x, y*)` with the objective
//! `h(x, y)` whose global minimizer supplies `y*`. Both are written once over
//! a generic [`Carrier`], so the same definition feeds point evaluation,
//! verified interval bounds, and every derivative order the solver needs.

use crate::carrier::{Carrier, Objective};
use crate::interval::Interval;
use crate::optimizer::SearchBox;
use serde::Serialize;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

/// A DAEO system: dynamics plus embedded objective.
pub trait Problem: Objective {
    fn dim_x(&self) -> usize;
    fn dim_y(&self) -> usize;

    /// Right-hand side `f(x, y)` of `x' = f(x, y*)`.
    fn dynamics<C: Carrier>(&self, x: &[C], y: &[C]) -> Vec<C>;

    /// Analytic solution at time `t`, when one is known.
    fn reference(&self, _t: f64) -> Option<Vec<f64>> {
        None
    }

    /// Known exact event times, earliest first.
    fn reference_event_times(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<T: Problem + ?Sized> Problem for &T {
    fn dim_x(&self) -> usize {
        (**self).dim_x()
    }
    fn dim_y(&self) -> usize {
        (**self).dim_y()
    }
    fn dynamics<C: Carrier>(&self, x: &[C], y: &[C]) -> Vec<C> {
        (**self).dynamics(x, y)
    }
    fn reference(&self, t: f64) -> Option<Vec<f64>> {
        (**self).reference(t)
    }
    fn reference_event_times(&self) -> Vec<f64> {
        (**self).reference_event_times()
    }
}

/// A problem plus its initial data and search domain.
#[derive(Clone, Debug)]
pub struct ProblemSpec<P: Problem> {
    pub problem: P,
    pub name: String,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub t_end: f64,
    pub y_domain: SearchBox,
}

/// Scalar linear dynamics with a double-well objective; the global minimizer
/// jumps between y = −1 and y = +1 as x crosses 1/2.
#[derive(Clone, Copy, Debug)]
pub struct SimpleProblem;

impl Objective for SimpleProblem {
    // h(x, y) = (1 − y²)² − (x − ½)·sin(πy/2)
    fn objective<C: Carrier>(&self, x: &[C], y: &[C]) -> C {
        let one = C::constant(1.0);
        let well = (one - y[0].powi(2)).powi(2);
        let tilt =
            (x[0] - C::constant(0.5)) * (y[0] * C::constant(std::f64::consts::FRAC_PI_2)).sin();
        well - tilt
    }
}

/// First event time of [`SimpleProblem`]: x(t) = e^{−3t} reaches 1/2.
pub const SIMPLE_TAU1: f64 = 0.231_049_060_186_648_43; // ln(2)/3

impl Problem for SimpleProblem {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        1
    }
    // x' = −(2 + y*)·x
    fn dynamics<C: Carrier>(&self, x: &[C], y: &[C]) -> Vec<C> {
        vec![-((C::constant(2.0) + y[0]) * x[0])]
    }
    // Decays as e^{−3t} while y* = +1, then as e^{−t}·(1/2)^{2/3} after the
    // minimizer jumps to −1 at t = ln(2)/3.
    fn reference(&self, t: f64) -> Option<Vec<f64>> {
        let tau = 2.0_f64.ln() / 3.0;
        let x = if t < tau {
            (-3.0 * t).exp()
        } else {
            (-t + (2.0 / 3.0) * 0.5_f64.ln()).exp()
        };
        Some(vec![x])
    }
    fn reference_event_times(&self) -> Vec<f64> {
        vec![2.0_f64.ln() / 3.0]
    }
}

/// Dynamics driven directly by the minimizer of a rippled parabola; the
/// population of local minimizers changes as x moves, stressing
/// re-optimization and event handling.
#[derive(Clone, Copy, Debug)]
pub struct RobustProblem;

impl Objective for RobustProblem {
    // h(x, y) = (x − y)² + sin(5y)
    fn objective<C: Carrier>(&self, x: &[C], y: &[C]) -> C {
        (x[0] - y[0]).powi(2) + (y[0] * C::constant(5.0)).sin()
    }
}

impl Problem for RobustProblem {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        1
    }
    // x' = y*
    fn dynamics<C: Carrier>(&self, _x: &[C], y: &[C]) -> Vec<C> {
        vec![y[0]]
    }
}

/// Any built-in problem, dispatching statically per variant.
#[derive(Clone, Copy, Debug)]
pub enum BuiltinProblem {
    Simple(SimpleProblem),
    Robust(RobustProblem),
}

impl Objective for BuiltinProblem {
    fn objective<C: Carrier>(&self, x: &[C], y: &[C]) -> C {
        match self {
            BuiltinProblem::Simple(p) => p.objective(x, y),
            BuiltinProblem::Robust(p) => p.objective(x, y),
        }
    }
}

impl Problem for BuiltinProblem {
    fn dim_x(&self) -> usize {
        match self {
            BuiltinProblem::Simple(p) => p.dim_x(),
            BuiltinProblem::Robust(p) => p.dim_x(),
        }
    }
    fn dim_y(&self) -> usize {
        match self {
            BuiltinProblem::Simple(p) => p.dim_y(),
            BuiltinProblem::Robust(p) => p.dim_y(),
        }
    }
    fn dynamics<C: Carrier>(&self, x: &[C], y: &[C]) -> Vec<C> {
        match self {
            BuiltinProblem::Simple(p) => p.dynamics(x, y),
            BuiltinProblem::Robust(p) => p.dynamics(x, y),
        }
    }
    fn reference(&self, t: f64) -> Option<Vec<f64>> {
        match self {
            BuiltinProblem::Simple(p) => p.reference(t),
            BuiltinProblem::Robust(p) => p.reference(t),
        }
    }
    fn reference_event_times(&self) -> Vec<f64> {
        match self {
            BuiltinProblem::Simple(p) => p.reference_event_times(),
            BuiltinProblem::Robust(p) => p.reference_event_times(),
        }
    }
}

/// Looks up a built-in problem by name (`"simple"` or `"robust"`).
pub fn builtin_problem(name: &str) -> Result<ProblemSpec<BuiltinProblem>, ConfigError> {
    match name {
        "simple" => Ok(ProblemSpec {
            problem: BuiltinProblem::Simple(SimpleProblem),
            name: name.to_string(),
            x0: vec![1.0],
            t0: 0.0,
            t_end: 1.0,
            y_domain: SearchBox::new(vec![Interval::new(-2.0, 2.0)]),
        }),
        "robust" => Ok(ProblemSpec {
            problem: BuiltinProblem::Robust(RobustProblem),
            name: name.to_string(),
            x0: vec![1.0],
            t0: 0.0,
            t_end: 2.0,
            y_domain: SearchBox::new(vec![Interval::new(-5.0, 5.0)]),
        }),
        _ => Err(ConfigError::UnknownProblem {
            name: name.to_string(),
        }),
    }
}

/// Solver operating mode. Serializes with the same tokens the command line
/// and config files accept: `events`, `no-events`, `always-opt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Track minimizers step to step and locate/correct jump events.
    #[serde(rename = "events")]
    TrackingWithEvents,
    /// Track minimizers but switch dynamics only at step boundaries.
    #[serde(rename = "no-events")]
    TrackingNoEvents,
    /// Run the global search every step (events still corrected).
    #[serde(rename = "always-opt")]
    AlwaysGlobalOptimize,
}

impl Mode {
    pub fn events_enabled(self) -> bool {
        matches!(self, Mode::TrackingWithEvents | Mode::AlwaysGlobalOptimize)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::TrackingWithEvents => "events",
            Mode::TrackingNoEvents => "no-events",
            Mode::AlwaysGlobalOptimize => "always-opt",
        })
    }
}

impl FromStr for Mode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "events" => Ok(Mode::TrackingWithEvents),
            "no-events" => Ok(Mode::TrackingNoEvents),
            "always-opt" => Ok(Mode::AlwaysGlobalOptimize),
            _ => Err(ConfigError::BadValue {
                key: "mode".into(),
                value: s.into(),
            }),
        }
    }
}

/// All tolerances, the step size, and the mode flags in one place.
#[derive(Clone, Debug, Serialize)]
pub struct SolverConfig {
    /// Time step (must be positive and smaller than the integration window).
    pub dt: f64,
    /// Convergence threshold on the max-norm of the implicit step residual.
    pub newton_tol: f64,
    /// Iteration cap for every damped Newton loop.
    pub newton_max_iter: u32,
    /// Boxes at or below this width are recorded instead of split or narrowed.
    pub opt_width_tol: f64,
    /// Termination tolerance for event-time root finding.
    pub event_tol: f64,
    /// Minimum swing of the event function across a step for a detected
    /// argmin change to count as a genuine jump (grazing guard).
    pub min_event_size: f64,
    /// Re-run the global search every this many steps (0 = only at the ends).
    pub reopt_period: u32,
    pub mode: Mode,
    /// Prune boxes whose objective lower bound exceeds the incumbent; keeps
    /// only the global minimizer instead of every local one.
    pub global_only: bool,
    /// Resource cap on the branch-and-bound work list.
    pub max_worklist: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.1,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            opt_width_tol: 1e-8,
            event_tol: 1e-10,
            min_event_size: 1e-4,
            reopt_period: 0,
            mode: Mode::TrackingWithEvents,
            global_only: false,
            max_worklist: 1_000_000,
        }
    }
}

impl SolverConfig {
    /// Checks internal consistency (positivity of tolerances and step size).
    pub fn validate(&self) -> Result<(), ConfigError> {
        fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    what: format!("{key} must be positive and finite, got {v}"),
                })
            }
        }
        positive("dt", self.dt)?;
        positive("newton_tol", self.newton_tol)?;
        positive("opt_width_tol", self.opt_width_tol)?;
        positive("event_tol", self.event_tol)?;
        positive("min_event_size", self.min_event_size)?;
        if self.newton_max_iter == 0 {
            return Err(ConfigError::Invalid {
                what: "newton_max_iter must be at least 1".into(),
            });
        }
        if self.max_worklist == 0 {
            return Err(ConfigError::Invalid {
                what: "max_worklist must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Checks the step size against a problem's integration window.
    // Negated float comparison is deliberate: a NaN window must fail validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate_for<P: Problem>(&self, spec: &ProblemSpec<P>) -> Result<(), ConfigError> {
        self.validate()?;
        if !(self.dt < spec.t_end - spec.t0) {
            return Err(ConfigError::Invalid {
                what: format!(
                    "dt = {} must be smaller than the window t_end - t0 = {}",
                    self.dt,
                    spec.t_end - spec.t0
                ),
            });
        }
        Ok(())
    }

    /// Parses a flat `key = value` configuration text (one pair per line,
    /// `#` comments). Keys mirror the field names; unknown keys are errors.
    pub fn parse_overrides(&mut self, text: &str) -> Result<(), ConfigError> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Invalid {
                what: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
            };
            match key {
                "dt" => self.dt = value.parse().map_err(|_| bad())?,
                "newton_tol" => self.newton_tol = value.parse().map_err(|_| bad())?,
                "newton_max_iter" => self.newton_max_iter = value.parse().map_err(|_| bad())?,
                "opt_width_tol" => self.opt_width_tol = value.parse().map_err(|_| bad())?,
                "event_tol" => self.event_tol = value.parse().map_err(|_| bad())?,
                "min_event_size" => self.min_event_size = value.parse().map_err(|_| bad())?,
                "reopt_period" => self.reopt_period = value.parse().map_err(|_| bad())?,
                "mode" => self.mode = value.parse()?,
                "global_only" => self.global_only = value.parse().map_err(|_| bad())?,
                "max_worklist" => self.max_worklist = value.parse().map_err(|_| bad())?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        key: key.to_string(),
                    })
                }
            }
        }
        Ok(())
    }

    /// Reads overrides from a config file on top of the current values.
    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        self.parse_overrides(&text)
    }
}

/// Configuration and problem-selection errors (usage errors at the CLI).
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown problem `{name}` (built-ins: simple, robust)")]
    UnknownProblem { name: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("bad value `{value}` for config key `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {what}")]
    Invalid { what: String },
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carrier::lift;

    #[test]
    fn builtin_simple_shape() {
        let spec = builtin_problem("simple").unwrap();
        assert_eq!(spec.problem.dim_x(), 1);
        assert_eq!(spec.problem.dim_y(), 1);
        assert_eq!(spec.x0, vec![1.0]);
        assert_eq!((spec.t0, spec.t_end), (0.0, 1.0));
        assert_eq!(spec.y_domain.components()[0].lo(), -2.0);
        assert_eq!(spec.y_domain.components()[0].hi(), 2.0);
    }

    #[test]
    fn builtin_robust_shape() {
        let spec = builtin_problem("robust").unwrap();
        assert_eq!((spec.t0, spec.t_end), (0.0, 2.0));
        assert_eq!(spec.y_domain.components()[0].hi(), 5.0);
    }

    #[test]
    fn unknown_problem_is_a_usage_error() {
        assert!(matches!(
            builtin_problem("nonesuch"),
            Err(ConfigError::UnknownProblem { .. })
        ));
    }

    #[test]
    fn simple_reference_is_continuous_at_the_event() {
        let p = SimpleProblem;
        let tau = p.reference_event_times()[0];
        let left = p.reference(tau - 1e-13).unwrap()[0];
        let right = p.reference(tau + 1e-13).unwrap()[0];
        assert!((left - right).abs() < 1e-12);
        assert!((left - 0.5).abs() < 1e-12);
        assert!((p.reference(0.0).unwrap()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau1_constant_matches_its_definition() {
        assert_eq!(SIMPLE_TAU1, 2.0_f64.ln() / 3.0);
    }

    #[test]
    fn objective_at_the_two_minimizers() {
        // h(1, ±1) = ∓(x − ½) = ∓½ at x = 1.
        let h_pos = SimpleProblem.objective(&[1.0], &[1.0]);
        let h_neg = SimpleProblem.objective(&[1.0], &[-1.0]);
        assert!((h_pos + 0.5).abs() < 1e-15);
        assert!((h_neg - 0.5).abs() < 1e-15);
    }

    #[test]
    fn interval_evaluation_agrees_with_f64_on_degenerate_boxes() {
        for &(x, y) in &[(0.3, -0.7), (1.0, 1.0), (0.5, 0.25), (-0.2, 1.9)] {
            let exact = SimpleProblem.objective(&[x], &[y]);
            let iv: Interval = SimpleProblem.objective(&lift(&[x]), &lift(&[y]));
            assert!(
                iv.contains(exact) && iv.width() < 1e-13,
                "({x}, {y}): {iv} vs {exact}"
            );
            let exact = RobustProblem.objective(&[x], &[y]);
            let iv: Interval = RobustProblem.objective(&lift(&[x]), &lift(&[y]));
            assert!(iv.contains(exact) && iv.width() < 1e-13);
        }
    }

    #[test]
    fn mode_tokens_round_trip() {
        for mode in [
            Mode::TrackingWithEvents,
            Mode::TrackingNoEvents,
            Mode::AlwaysGlobalOptimize,
        ] {
            assert_eq!(mode.to_string().parse::<Mode>().unwrap(), mode);
            // Serialization uses the same tokens as Display/FromStr.
            assert_eq!(serde_json::to_string(&mode).unwrap(), format!("\"{mode}\""));
        }
        assert!("sometimes".parse::<Mode>().is_err());
    }

    #[test]
    fn config_defaults_validate() {
        SolverConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_nonpositive_dt() {
        let cfg = SolverConfig {
            dt: 0.0,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig {
            dt: -0.1,
            ..SolverConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_dt_wider_than_window() {
        let spec = builtin_problem("simple").unwrap();
        let cfg = SolverConfig {
            dt: 1.5,
            ..SolverConfig::default()
        };
        assert!(cfg.validate_for(&spec).is_err());
    }

    #[test]
    fn config_file_overrides_parse() {
        let mut cfg = SolverConfig::default();
        cfg.parse_overrides(
            "# comment\n dt = 0.25\nmode = no-events # trailing\nreopt_period=10\nglobal_only = true\n",
        )
        .unwrap();
        assert_eq!(cfg.dt, 0.25);
        assert_eq!(cfg.mode, Mode::TrackingNoEvents);
        assert_eq!(cfg.reopt_period, 10);
        assert!(cfg.global_only);
        // untouched keys keep their defaults
        assert_eq!(cfg.newton_tol, 1e-10);
    }

    #[test]
    fn config_file_unknown_key_is_an_error() {
        let mut cfg = SolverConfig::default();
        assert!(matches!(
            cfg.parse_overrides("step_size = 0.1"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(
            cfg.parse_overrides("dt = fast"),
            Err(ConfigError::BadValue { .. })
        ));
    }
}
