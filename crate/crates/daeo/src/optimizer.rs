//! Verified global search for all local minimizers of `y ↦ h(x, y)`.
//!
//! The search maintains a FIFO work list of boxes. Each box is tested with
//! interval arithmetic: if the gradient enclosure excludes zero the box holds
//! no stationary point and is discarded; if the interval Hessian is certified
//! positive definite the box holds exactly one minimizer, which a damped
//! Newton iteration pins down; otherwise the box is split and requeued. The
//! result is a set of [`OptimizerRecord`]s that provably covers every local
//! minimizer in the domain.

use crate::ad::{gradient_y, hessian_yy, SymMatrix};
use crate::carrier::{lift, Objective};
use crate::interval::Interval;
use crate::problem::SolverConfig;
use std::collections::VecDeque;
use thiserror::Error;

/// An axis-aligned box in minimizer space.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBox {
    components: Vec<Interval>,
}

impl SearchBox {
    pub fn new(components: Vec<Interval>) -> Self {
        assert!(
            !components.is_empty(),
            "search box must have dimension >= 1"
        );
        SearchBox { components }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Interval] {
        &self.components
    }

    /// Largest component width.
    pub fn width(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.width())
            .fold(0.0, f64::max)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.midpoint()).collect()
    }

    pub fn contains_point(&self, y: &[f64]) -> bool {
        self.components.iter().zip(y).all(|(c, &v)| c.contains(v))
    }

    /// Splits every coordinate at its midpoint, yielding `2^dim` children.
    pub fn bisect_all(&self) -> Vec<SearchBox> {
        let halves: Vec<(Interval, Interval)> = self
            .components
            .iter()
            .map(|c| c.bisect().expect("bisected box is wider than one ulp"))
            .collect();
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                SearchBox::new(
                    (0..n)
                        .map(|i| {
                            if mask >> i & 1 == 0 {
                                halves[i].0
                            } else {
                                halves[i].1
                            }
                        })
                        .collect(),
                )
            })
            .collect()
    }
}

/// One certified local minimizer.
#[derive(Clone, Debug)]
pub struct OptimizerRecord {
    /// Componentwise enclosure guaranteed to contain the minimizer.
    pub enclosure: Vec<Interval>,
    /// Best point estimate of the minimizer.
    pub point: Vec<f64>,
    /// Objective value at `point`.
    pub value: f64,
    /// Whether the enclosure touches the boundary of the search domain.
    pub on_boundary: bool,
    /// Accumulated drift allowance since this record was last certified;
    /// the tracking solver re-optimizes when it outgrows the enclosure.
    pub slack: f64,
}

impl OptimizerRecord {
    fn overlaps(&self, other: &OptimizerRecord) -> bool {
        self.enclosure
            .iter()
            .zip(&other.enclosure)
            .all(|(a, b)| a.intersect(*b).is_some())
    }

    fn merge(&mut self, other: &OptimizerRecord) {
        if other.value < self.value {
            self.point = other.point.clone();
            self.value = other.value;
        }
        for (a, b) in self.enclosure.iter_mut().zip(&other.enclosure) {
            *a = a.hull(*b);
        }
        self.on_boundary |= other.on_boundary;
        self.slack = self.slack.max(other.slack);
    }
}

/// Every tracked minimizer, plus which one is currently global.
#[derive(Clone, Debug)]
pub struct OptimizerSet {
    pub records: Vec<OptimizerRecord>,
    /// Index of the record with the smallest objective value.
    pub star: usize,
}

impl OptimizerSet {
    pub fn star_record(&self) -> &OptimizerRecord {
        &self.records[self.star]
    }

    pub fn star_point(&self) -> &[f64] {
        &self.records[self.star].point
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Outcome of the interval Sylvester test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Definiteness {
    /// Every matrix in the enclosure is positive definite.
    PositiveDefinite,
    /// No matrix in the enclosure is positive semidefinite.
    NotPositiveSemidefinite,
    /// The enclosure is too wide to decide.
    Indeterminate,
}

/// Determinant of a (small) interval matrix by Laplace expansion along the
/// first row. Exact enclosure up to rounding; cost grows factorially, which
/// is fine at the dimensions minimizer spaces have here.
fn interval_det(m: &[Vec<Interval>]) -> Interval {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    let mut det = Interval::point(0.0);
    for (j, &pivot) in m[0].iter().enumerate() {
        let minor: Vec<Vec<Interval>> = m[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|&(c, _)| c != j)
                    .map(|(_, &v)| v)
                    .collect()
            })
            .collect();
        let term = pivot * interval_det(&minor);
        det = if j % 2 == 0 { det + term } else { det - term };
    }
    det
}

/// Sylvester's criterion on an interval symmetric matrix: positive definite
/// iff every leading principal minor is positive. A minor certainly negative
/// rules out positive semidefiniteness (so no local minimizer can sit where
/// that Hessian is attained); anything else is indeterminate.
// Negated float comparison is deliberate: a NaN pivot bound must demote the
// certificate, never grant it.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn classify_symmetric(h: &SymMatrix<Interval>) -> Definiteness {
    let n = h.dim();
    let mut all_positive = true;
    for k in 1..=n {
        let sub: Vec<Vec<Interval>> = (0..k)
            .map(|i| (0..k).map(|j| h.get(i, j)).collect())
            .collect();
        let d = interval_det(&sub);
        if d.hi() < 0.0 {
            return Definiteness::NotPositiveSemidefinite;
        }
        if !(d.lo() > 0.0) {
            all_positive = false;
        }
    }
    if all_positive {
        Definiteness::PositiveDefinite
    } else {
        Definiteness::Indeterminate
    }
}

/// Interval Hessian test of `y ↦ h(x, y)` over a box.
pub fn classify_hessian<P: Objective>(problem: &P, x: &[f64], bx: &SearchBox) -> Definiteness {
    let xi: Vec<Interval> = lift(x);
    let h = hessian_yy(problem, &xi, bx.components());
    classify_symmetric(&h)
}

/// Search failures (resource exhaustion, empty result).
#[derive(Debug, Error)]
pub enum OptimError {
    #[error(
        "global search work list exceeded its cap of {cap} boxes at split depth {depth}; \
         raise max_worklist or loosen opt_width_tol"
    )]
    WorklistExceeded { cap: usize, depth: u32 },
    #[error("global search certified no minimizers inside the domain")]
    NoMinimizers,
}

/// Pins down the unique minimizer in a box whose interval Hessian is
/// positive definite, by damped Newton from the midpoint (iterates clipped
/// into the box). Returns `None` when Newton cannot reach the gradient
/// tolerance — the convexity certificate guarantees at most one stationary
/// point, not that one exists: a box butting against a fold has none, and
/// the iterates just pile up on the boundary.
///
/// # Panics
///
/// If the positive-definiteness certificate does not actually hold on `bx`.
pub fn narrow<P: Objective>(
    problem: &P,
    x: &[f64],
    bx: &SearchBox,
    cfg: &SolverConfig,
) -> Option<OptimizerRecord> {
    assert_eq!(
        classify_hessian(problem, x, bx),
        Definiteness::PositiveDefinite,
        "narrow requires a box with a certified positive definite Hessian"
    );
    let n = bx.dim();
    let mut y = bx.midpoint();
    let mut last_step = bx.width();
    let grad_norm = |y: &[f64]| -> f64 {
        gradient_y(problem, x, y)
            .iter()
            .fold(0.0, |m, g| m.max(g.abs()))
    };
    let mut gnorm = grad_norm(&y);
    for _ in 0..cfg.newton_max_iter {
        if gnorm <= cfg.newton_tol {
            break;
        }
        let g = gradient_y(problem, x, &y);
        let h = hessian_yy(problem, x, &y);
        let hm = nalgebra::DMatrix::from_fn(n, n, |i, j| h.get(i, j));
        let gv = nalgebra::DVector::from_column_slice(&g);
        let Some(step) = hm.lu().solve(&(-gv)) else {
            break; // certified PD, so this is unreachable in practice
        };
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let trial: Vec<f64> = (0..n)
                .map(|i| {
                    (y[i] + damping * step[i]).clamp(bx.components[i].lo(), bx.components[i].hi())
                })
                .collect();
            let trial_norm = grad_norm(&trial);
            if trial_norm < gnorm {
                last_step = (0..n).fold(0.0_f64, |m, i| m.max((trial[i] - y[i]).abs()));
                y = trial;
                gnorm = trial_norm;
                accepted = true;
                break;
            }
            damping *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if gnorm > cfg.newton_tol {
        return None;
    }
    let radius = last_step.max(cfg.opt_width_tol / 2.0);
    let enclosure: Vec<Interval> = (0..n)
        .map(|i| {
            let c = bx.components[i];
            Interval::new((y[i] - radius).max(c.lo()), (y[i] + radius).min(c.hi()))
        })
        .collect();
    let value = problem.objective(x, &y);
    Some(OptimizerRecord {
        enclosure,
        point: y,
        value,
        on_boundary: false,
        slack: 0.0,
    })
}

/// Queues all 2^n bisection children, enforcing the worklist cap.
fn push_children(
    queue: &mut VecDeque<(SearchBox, u32)>,
    bx: &SearchBox,
    depth: u32,
    cap: usize,
) -> Result<(), OptimError> {
    for child in bx.bisect_all() {
        if queue.len() >= cap {
            return Err(OptimError::WorklistExceeded {
                cap,
                depth: depth + 1,
            });
        }
        queue.push_back((child, depth + 1));
    }
    Ok(())
}

/// Finds every local minimizer of `y ↦ h(x, y)` over `domain`.
///
/// With `cfg.global_only` set, boxes whose objective lower bound exceeds the
/// best value seen so far are pruned, and only (near-)global records remain.
pub fn global_search<P: Objective>(
    problem: &P,
    x: &[f64],
    domain: &SearchBox,
    cfg: &SolverConfig,
) -> Result<OptimizerSet, OptimError> {
    let xi: Vec<Interval> = lift(x);
    let mut queue: VecDeque<(SearchBox, u32)> = VecDeque::new();
    queue.push_back((domain.clone(), 0));
    let mut records: Vec<OptimizerRecord> = Vec::new();
    let mut upper_bound = f64::INFINITY;

    while let Some((bx, depth)) = queue.pop_front() {
        if cfg.global_only {
            let mid_value = problem.objective(x, &bx.midpoint());
            upper_bound = upper_bound.min(mid_value);
            let range = problem.objective(&xi, bx.components());
            if range.lo() > upper_bound {
                continue;
            }
        }

        let grad = gradient_y(problem, &xi, bx.components());
        if grad.iter().any(|g| g.lo() > 0.0 || g.hi() < 0.0) {
            continue; // gradient cannot vanish here
        }

        if bx.width() <= cfg.opt_width_tol {
            let point = bx.midpoint();
            let value = problem.objective(x, &point);
            records.push(OptimizerRecord {
                enclosure: bx.components.clone(),
                point,
                value,
                on_boundary: false,
                slack: 0.0,
            });
            continue;
        }

        match classify_hessian(problem, x, &bx) {
            Definiteness::PositiveDefinite => match narrow(problem, x, &bx, cfg) {
                Some(rec) => records.push(rec),
                // Convex but rootless (a fold lives just outside): split so
                // the sharpened gradient test can discard the pieces.
                None => push_children(&mut queue, &bx, depth, cfg.max_worklist)?,
            },
            Definiteness::NotPositiveSemidefinite => {
                // stationary points here are saddles or maxima
            }
            Definiteness::Indeterminate => {
                push_children(&mut queue, &bx, depth, cfg.max_worklist)?;
            }
        }
    }

    // Adjacent boxes can both certify the same minimizer (it may sit exactly
    // on a shared face); merge records whose enclosures overlap.
    records.sort_by(|a, b| a.point.partial_cmp(&b.point).unwrap());
    let mut merged: Vec<OptimizerRecord> = Vec::new();
    'outer: for rec in records {
        for kept in merged.iter_mut() {
            if kept.overlaps(&rec) {
                kept.merge(&rec);
                continue 'outer;
            }
        }
        merged.push(rec);
    }

    if cfg.global_only {
        let best = merged.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
        merged.retain(|r| r.value <= best + cfg.opt_width_tol);
    }

    for rec in merged.iter_mut() {
        rec.on_boundary = rec
            .enclosure
            .iter()
            .zip(domain.components())
            .any(|(e, d)| e.lo() <= d.lo() || e.hi() >= d.hi());
    }

    if merged.is_empty() {
        return Err(OptimError::NoMinimizers);
    }
    let star = argmin(&merged);
    Ok(OptimizerSet {
        records: merged,
        star,
    })
}

/// Index of the smallest value; ties resolve to the earliest record.
pub fn argmin(records: &[OptimizerRecord]) -> usize {
    let mut best = 0;
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.value < records[best].value {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carrier::Carrier;
    use crate::problem::{builtin_problem, RobustProblem, SimpleProblem};

    fn simple_domain() -> SearchBox {
        SearchBox::new(vec![Interval::new(-2.0, 2.0)])
    }

    #[test]
    fn bisect_all_covers_the_box() {
        let bx = SearchBox::new(vec![Interval::new(0.0, 1.0), Interval::new(-2.0, 2.0)]);
        let children = bx.bisect_all();
        assert_eq!(children.len(), 4);
        for c in &children {
            assert!(bx.contains_point(&c.midpoint()));
        }
        assert!(children.iter().any(|c| c.contains_point(&[0.25, -1.0])));
        assert!(children.iter().any(|c| c.contains_point(&[0.75, 1.0])));
    }

    #[test]
    fn simple_problem_has_two_minimizers_at_x_one() {
        let cfg = SolverConfig::default();
        let set = global_search(&SimpleProblem, &[1.0], &simple_domain(), &cfg).unwrap();
        assert_eq!(set.len(), 2);
        assert!((set.records[0].point[0] + 1.0).abs() < 1e-9);
        assert!((set.records[1].point[0] - 1.0).abs() < 1e-9);
        // h(1, ±1) = ∓1/2, so the global minimizer is y = +1.
        assert_eq!(set.star, 1);
        assert!((set.records[0].value - 0.5).abs() < 1e-9);
        assert!((set.records[1].value + 0.5).abs() < 1e-9);
        for (rec, truth) in set.records.iter().zip([-1.0, 1.0]) {
            assert!(rec.enclosure[0].contains(truth));
            assert!(!rec.on_boundary);
            assert_eq!(rec.slack, 0.0);
        }
    }

    #[test]
    fn star_flips_when_x_is_below_one_half() {
        let cfg = SolverConfig::default();
        let set = global_search(&SimpleProblem, &[0.0], &simple_domain(), &cfg).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.star, 0);
        assert!((set.star_point()[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn tied_values_pick_the_first_record() {
        let cfg = SolverConfig::default();
        let set = global_search(&SimpleProblem, &[0.5], &simple_domain(), &cfg).unwrap();
        assert_eq!(set.len(), 2);
        assert!((set.records[0].value - set.records[1].value).abs() < 1e-10);
        assert_eq!(set.star, 0);
    }

    /// h(x, y) = (1 − y₁²)² + (y₂ − x)², minimized at (±1, x).
    struct TwoWells;
    impl Objective for TwoWells {
        fn objective<C: Carrier>(&self, x: &[C], y: &[C]) -> C {
            (C::constant(1.0) - y[0].powi(2)).powi(2) + (y[1] - x[0]).powi(2)
        }
    }

    #[test]
    fn two_dimensional_search_finds_both_wells() {
        let cfg = SolverConfig::default();
        let domain = SearchBox::new(vec![Interval::new(-2.0, 2.0), Interval::new(-2.0, 2.0)]);
        let set = global_search(&TwoWells, &[0.3], &domain, &cfg).unwrap();
        assert_eq!(set.len(), 2);
        for rec in &set.records {
            assert!((rec.point[0].abs() - 1.0).abs() < 1e-9);
            assert!((rec.point[1] - 0.3).abs() < 1e-9);
            assert!(rec.value.abs() < 1e-12);
        }
    }

    #[test]
    fn global_only_keeps_just_the_global_minimizer() {
        let spec = builtin_problem("robust").unwrap();
        let full_cfg = SolverConfig::default();
        let full = global_search(&spec.problem, &[0.0], &spec.y_domain, &full_cfg).unwrap();
        assert!(
            full.len() > 1,
            "rippled objective should have several minima"
        );

        let global_cfg = SolverConfig {
            global_only: true,
            ..SolverConfig::default()
        };
        let pruned = global_search(&spec.problem, &[0.0], &spec.y_domain, &global_cfg).unwrap();
        assert_eq!(pruned.len(), 1);
        assert!((pruned.records[0].value - full.star_record().value).abs() < 1e-9);
        assert!((pruned.records[0].point[0] - full.star_point()[0]).abs() < 1e-8);
    }

    #[test]
    fn worklist_cap_is_a_resource_error() {
        let cfg = SolverConfig {
            max_worklist: 3,
            ..SolverConfig::default()
        };
        let err = global_search(&SimpleProblem, &[1.0], &simple_domain(), &cfg).unwrap_err();
        assert!(matches!(err, OptimError::WorklistExceeded { cap: 3, .. }));
    }

    #[test]
    fn narrow_pins_the_minimizer_to_newton_tolerance() {
        let cfg = SolverConfig::default();
        let bx = SearchBox::new(vec![Interval::new(0.9, 1.1)]);
        let rec = narrow(&SimpleProblem, &[1.0], &bx, &cfg).expect("a minimizer exists at y = 1");
        assert!((rec.point[0] - 1.0).abs() < 1e-10);
        assert!(rec.enclosure[0].contains(1.0));
        assert!(rec.enclosure[0].width() >= cfg.opt_width_tol / 2.0);
    }

    #[test]
    fn narrow_reports_failure_on_a_convex_box_with_no_root() {
        // For h(x, y) = (x − y)² + sin(5y) at x = 0, the box below sits left
        // of a fold: the Hessian 2 − 25·sin(5y) is certified positive there,
        // yet dh/dy = 2y + 5·cos(5y) stays below ≈ −0.0104, so Newton has
        // nothing to converge to.
        let cfg = SolverConfig::default();
        let bx = SearchBox::new(vec![Interval::new(-2.508, -2.4975)]);
        assert_eq!(
            classify_hessian(&RobustProblem, &[0.0], &bx),
            Definiteness::PositiveDefinite,
            "precondition: the certificate holds on this box"
        );
        assert!(narrow(&RobustProblem, &[0.0], &bx, &cfg).is_none());
    }

    #[test]
    #[should_panic(expected = "positive definite")]
    fn narrow_rejects_uncertified_boxes() {
        let cfg = SolverConfig::default();
        let _ = narrow(&SimpleProblem, &[1.0], &simple_domain(), &cfg);
    }

    #[test]
    fn hessian_classification_matches_hand_analysis() {
        // ∂²h/∂y² = 12y² − 4 + (π²/4)(x − ½)sin(πy/2) at x = 1.
        let pd = SearchBox::new(vec![Interval::new(0.9, 1.1)]);
        assert_eq!(
            classify_hessian(&SimpleProblem, &[1.0], &pd),
            Definiteness::PositiveDefinite
        );
        let concave = SearchBox::new(vec![Interval::new(-0.1, 0.1)]);
        assert_eq!(
            classify_hessian(&SimpleProblem, &[1.0], &concave),
            Definiteness::NotPositiveSemidefinite
        );
        let straddling = SearchBox::new(vec![Interval::new(0.5, 0.7)]);
        assert_eq!(
            classify_hessian(&SimpleProblem, &[1.0], &straddling),
            Definiteness::Indeterminate
        );
    }

    #[test]
    fn interval_det_matches_scalar_determinant() {
        // 3×3 with degenerate entries: det [[2,1,0],[1,3,1],[0,1,4]] = 18.
        let rows = [[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]];
        let m: Vec<Vec<Interval>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| Interval::point(v)).collect())
            .collect();
        let d = interval_det(&m);
        assert!(d.contains(18.0) && d.width() < 1e-12);
    }
}
