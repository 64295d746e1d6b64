//! Solver for ordinary differential equations whose right-hand side depends
//! on the global minimizer of an embedded optimization problem.
//!
//! The state couples `x' = f(x, y*)` with `y*(t) = argmin_y h(x(t), y)`. The
//! solver tracks *every* local minimizer of `h` with verified interval
//! enclosures, integrates with the trapezoidal rule, and detects the times
//! where the global minimizer jumps from one local minimizer to another —
//! restoring second-order convergence that a jump would otherwise destroy.

pub mod ad;
pub mod carrier;
pub mod events;
pub mod integrator;
pub mod interval;
pub mod optimizer;
pub mod problem;
pub mod solver;
pub mod study;

pub use carrier::{Carrier, Objective};
pub use events::{detect_and_correct, event_function, EventError, EventRecord};
pub use integrator::{drift, step, step_with_stats, DriftError, SolverState, StepError};
pub use interval::{Interval, IntervalError};
pub use optimizer::{global_search, OptimError, OptimizerRecord, OptimizerSet, SearchBox};
pub use problem::{
    builtin_problem, BuiltinProblem, ConfigError, Mode, Problem, ProblemSpec, RobustProblem,
    SimpleProblem, SolverConfig,
};
pub use solver::{solve, Counters, Solution, SolveError, TrajectoryPoint};
pub use study::{
    bench, convergence_study, fit_loglog_slope, rk4_reference, BenchRow, ConvergenceRow,
    ReferenceSolution, Slopes,
};
