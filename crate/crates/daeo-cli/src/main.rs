//! Command-line front end for the DAEO solver.
//!
//! Three subcommands: `solve` integrates one configuration and writes the
//! trajectory (CSV plus a JSON sidecar, or a single JSON document);
//! `convergence` runs a step-size ladder and fits log–log error slopes;
//! `bench` times full solves across a (dt, mode) grid.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 solver failure,
//! 4 event inconsistency (the tracked minimizer set cannot explain the
//! observed change of the global minimizer).

use clap::{Args, Parser, Subcommand, ValueEnum};
use daeo::events::EventRecord;
use daeo::problem::{
    builtin_problem, BuiltinProblem, ConfigError, Mode, ProblemSpec, SolverConfig,
};
use daeo::solver::{solve, Counters, Solution, SolveError, TrajectoryPoint};
use daeo::study::{bench, convergence_study, BenchRow, ConvergenceRow, Slopes};
use serde::Serialize;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "daeo",
    version,
    about = "Solver for ODEs coupled to an embedded global optimization problem",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a problem and write the trajectory.
    Solve(SolveArgs),
    /// Run a step-size ladder and fit convergence slopes.
    Convergence(ConvergenceArgs),
    /// Time full solves across a (dt, mode) grid.
    Bench(BenchArgs),
}

/// Options shared by every subcommand.
#[derive(Args)]
struct ProblemOpts {
    /// Built-in problem to integrate (simple | robust).
    #[arg(long, default_value = "simple")]
    problem: String,

    /// Override the end of the integration window.
    #[arg(long)]
    t_end: Option<f64>,

    /// Configuration file with `key = value` lines (# starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Re-run the verified global search every N steps (0 = ends only).
    #[arg(long)]
    reopt_period: Option<u32>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    opts: ProblemOpts,

    /// Time step.
    #[arg(long)]
    dt: Option<f64>,

    /// Solver mode: events | no-events | always-opt.
    #[arg(long)]
    mode: Option<Mode>,

    /// Output path. CSV format also writes a `.json` sidecar next to it.
    /// Without this flag the trajectory goes to stdout and no sidecar is
    /// written.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct ConvergenceArgs {
    #[command(flatten)]
    opts: ProblemOpts,

    /// Step size for the ladder; repeat the flag for several rungs
    /// (default: 0.25 halved down to 0.03125). A single value yields the
    /// error table without fitted slopes.
    #[arg(long = "dt")]
    dts: Vec<f64>,

    /// Also write the rows and slopes as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    opts: ProblemOpts,

    /// Step size; repeat the flag for a grid (default: 0.1 and 0.01).
    #[arg(long = "dt")]
    dts: Vec<f64>,

    /// Mode to time; repeat the flag (default: all three).
    #[arg(long = "mode")]
    modes: Vec<Mode>,

    /// Measured repetitions per cell (after one untimed warmup).
    #[arg(long, default_value_t = 5)]
    reps: usize,

    /// Also write the timing rows as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping

#[derive(Debug)]
enum CliError {
    Usage(String),
    Solver(SolveError),
    Output(String),
    /// The reader of our stdout went away (e.g. `daeo solve | head`).
    /// Normal termination for a pipeline: exit quietly and successfully.
    BrokenPipe,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Solver(e) => write!(f, "{e}"),
            CliError::Output(msg) => write!(f, "{msg}"),
            CliError::BrokenPipe => write!(f, "broken pipe"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Solver(e) if e.is_event_inconsistency() => 4,
            // Configuration problems surfaced by the solver are still usage.
            CliError::Solver(SolveError::Config(_)) => 2,
            CliError::Solver(_) => 3,
            CliError::Output(_) => 3,
            CliError::BrokenPipe => 0,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        CliError::Solver(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            CliError::BrokenPipe
        } else {
            CliError::Output(e.to_string())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Convergence(args) => cmd_convergence(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(err) = result {
        if !matches!(err, CliError::BrokenPipe) {
            eprintln!("error: {err}");
        }
        std::process::exit(err.exit_code());
    }
}

// Negated float comparison is deliberate: a NaN --t-end must fail validation.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn build_setup(
    opts: &ProblemOpts,
) -> Result<(ProblemSpec<BuiltinProblem>, SolverConfig), CliError> {
    let mut spec = builtin_problem(&opts.problem)?;
    if let Some(t_end) = opts.t_end {
        if !(t_end > spec.t0) || !t_end.is_finite() {
            return Err(CliError::Usage(format!(
                "--t-end must be a finite time after t0 = {}, got {t_end}",
                spec.t0
            )));
        }
        spec.t_end = t_end;
    }
    let mut cfg = SolverConfig::default();
    if let Some(path) = &opts.config {
        cfg.load_file(path)?;
    }
    if let Some(period) = opts.reopt_period {
        cfg.reopt_period = period;
    }
    Ok((spec, cfg))
}

// ---------------------------------------------------------------------------
// solve

/// Run metadata: everything about a solve except the trajectory itself.
#[derive(Serialize)]
struct RunReport<'a> {
    problem: &'a str,
    t0: f64,
    t_end: f64,
    config: &'a SolverConfig,
    wall_ms: f64,
    counters: Counters,
    events: &'a [EventRecord],
}

/// The single-file JSON output: the report plus the trajectory.
#[derive(Serialize)]
struct FullReport<'a> {
    #[serde(flatten)]
    run: RunReport<'a>,
    trajectory: &'a [TrajectoryPoint],
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let (spec, mut cfg) = build_setup(&args.opts)?;
    if let Some(dt) = args.dt {
        cfg.dt = dt;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    cfg.validate_for(&spec)?;

    let start = Instant::now();
    let solution = solve(&spec, &cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;

    let report = RunReport {
        problem: &spec.name,
        t0: spec.t0,
        t_end: spec.t_end,
        config: &cfg,
        wall_ms,
        counters: solution.counters,
        events: &solution.events,
    };

    match (args.format, &args.out) {
        (Format::Csv, Some(path)) => {
            let mut file = std::fs::File::create(path)?;
            write_csv(&solution, &mut file)?;
            let sidecar = sidecar_path(path);
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Output(e.to_string()))?;
            std::fs::write(&sidecar, json)?;
            eprintln!(
                "wrote {} ({} samples) and {} ({} events, {:.2} ms)",
                path.display(),
                solution.points.len(),
                sidecar.display(),
                solution.events.len(),
                wall_ms
            );
        }
        (Format::Csv, None) => {
            let stdout = std::io::stdout();
            write_csv(&solution, &mut stdout.lock())?;
        }
        (Format::Json, out) => {
            let full = FullReport {
                run: report,
                trajectory: &solution.points,
            };
            let json =
                serde_json::to_string_pretty(&full).map_err(|e| CliError::Output(e.to_string()))?;
            match out {
                Some(path) => {
                    std::fs::write(path, json)?;
                    eprintln!(
                        "wrote {} ({} samples, {} events, {:.2} ms)",
                        path.display(),
                        solution.points.len(),
                        solution.events.len(),
                        wall_ms
                    );
                }
                None => {
                    use std::io::Write;
                    writeln!(std::io::stdout().lock(), "{json}")?;
                }
            }
        }
    }
    Ok(())
}

/// The sidecar lives next to the CSV with a `.json` extension; when the CSV
/// path itself ends in `.json` the sidecar gets `.meta.json` instead so the
/// two files never collide.
fn sidecar_path(out: &Path) -> PathBuf {
    let sidecar = out.with_extension("json");
    if sidecar == out {
        out.with_extension("meta.json")
    } else {
        sidecar
    }
}

/// Writes the trajectory as CSV. Floats are printed with 17 significant
/// digits, which round-trips every f64 bit pattern exactly.
fn write_csv(solution: &Solution, w: &mut impl Write) -> std::io::Result<()> {
    let dim_x = solution.final_state.x.len();
    let dim_y = solution.final_state.optimizers.star_point().len();
    let mut header = String::from("t");
    for i in 0..dim_x {
        header.push_str(&format!(",x{i}"));
    }
    for j in 0..dim_y {
        header.push_str(&format!(",ystar{j}"));
    }
    header.push_str(",n_optimizers,event");
    writeln!(w, "{header}")?;
    for p in &solution.points {
        write!(w, "{:.16e}", p.t)?;
        for v in &p.x {
            write!(w, ",{v:.16e}")?;
        }
        for v in &p.y_star {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w, ",{},{}", p.optimizer_count, u8::from(p.event))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// convergence

#[derive(Serialize)]
struct ConvergenceReport {
    problem: String,
    rows: Vec<ConvergenceRow>,
    slopes: Slopes,
}

fn cmd_convergence(args: ConvergenceArgs) -> Result<(), CliError> {
    let (spec, cfg) = build_setup(&args.opts)?;
    let dts = if args.dts.is_empty() {
        vec![0.25, 0.125, 0.0625, 0.03125]
    } else {
        args.dts.clone()
    };
    let (rows, slopes) = convergence_study(&spec, &cfg, &dts)?;

    {
        use std::io::Write;
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        writeln!(
            out,
            "{:>12}  {:>16}  {:>18}  {:>12}",
            "dt", "error (events)", "error (no events)", "tau error"
        )?;
        for row in &rows {
            let tau = row
                .tau_error
                .map_or_else(|| format!("{:>12}", "-"), |e| format!("{e:>12.6e}"));
            writeln!(
                out,
                "{:>12.6e}  {:>16.6e}  {:>18.6e}  {tau}",
                row.dt, row.error_with_events, row.error_without_events
            )?;
        }
        writeln!(
            out,
            "slope with events:    {}",
            fmt_slope(slopes.with_events)
        )?;
        writeln!(
            out,
            "slope without events: {}",
            fmt_slope(slopes.without_events)
        )?;
        writeln!(out, "slope tau:            {}", fmt_slope(slopes.tau))?;
    }

    if let Some(path) = &args.out {
        let report = ConvergenceReport {
            problem: spec.name.clone(),
            rows,
            slopes,
        };
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Output(e.to_string()))?;
        std::fs::write(path, json)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or_else(
        || "not available (need at least two step sizes)".into(),
        |v| format!("{v:.3}"),
    )
}

// ---------------------------------------------------------------------------
// bench

#[derive(Serialize)]
struct BenchReport {
    problem: String,
    reps: usize,
    rows: Vec<BenchRow>,
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let (spec, cfg) = build_setup(&args.opts)?;
    let dts = if args.dts.is_empty() {
        vec![0.1, 0.01]
    } else {
        args.dts.clone()
    };
    let modes = if args.modes.is_empty() {
        vec![
            Mode::TrackingWithEvents,
            Mode::TrackingNoEvents,
            Mode::AlwaysGlobalOptimize,
        ]
    } else {
        args.modes.clone()
    };
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let rows = bench(&spec, &cfg, &dts, &modes, args.reps)?;

    {
        use std::io::Write;
        let stdout = std::io::stdout();
        let mut out = stdout.lock();
        writeln!(
            out,
            "{:>12}  {:>12}  {:>12}  {:>8}  {:>7}  {:>9}",
            "dt", "mode", "median_ms", "steps", "events", "searches"
        )?;
        for row in &rows {
            writeln!(
                out,
                "{:>12.6e}  {:>12}  {:>12.3}  {:>8}  {:>7}  {:>9}",
                row.dt,
                row.mode.to_string(),
                row.median_ms,
                row.steps,
                row.events,
                row.global_search_calls
            )?;
        }
    }

    if let Some(path) = &args.out {
        let report = BenchReport {
            problem: spec.name.clone(),
            reps: args.reps,
            rows,
        };
        let json =
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Output(e.to_string()))?;
        std::fs::write(path, json)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}
