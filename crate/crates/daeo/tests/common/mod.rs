//! Shared helpers for the integration suites: finite-difference oracles,
//! randomized inclusion fuzzing, and eigenvalue cross-checks. Each runner
//! returns a `Result` so both the property tests and the acceptance gate can
//! reuse it and report failures their own way.
#![allow(dead_code)]
// Finite-difference tables are filled entry-by-entry against `get(i, j)`;
// range loops keep the two sides visibly symmetric.
#![allow(clippy::needless_range_loop)]

use daeo::ad::{gradient_y, hessian_yy, SymMatrix};
use daeo::carrier::Objective;
use daeo::integrator::drift;
use daeo::interval::Interval;
use daeo::optimizer::{classify_symmetric, global_search, Definiteness, SearchBox};
use daeo::problem::{Problem, SolverConfig};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central-difference gradient of `h` in `y`.
pub fn fd_gradient_y<H: Objective>(h: &H, x: &[f64], y: &[f64], eps: f64) -> Vec<f64> {
    (0..y.len())
        .map(|j| {
            let mut hi = y.to_vec();
            let mut lo = y.to_vec();
            hi[j] += eps;
            lo[j] -= eps;
            (h.objective(x, &hi) - h.objective(x, &lo)) / (2.0 * eps)
        })
        .collect()
}

/// Central-difference Hessian of `h` in `y`.
pub fn fd_hessian_yy<H: Objective>(h: &H, x: &[f64], y: &[f64], eps: f64) -> Vec<Vec<f64>> {
    let n = y.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut pp = y.to_vec();
            let mut pm = y.to_vec();
            let mut mp = y.to_vec();
            let mut mm = y.to_vec();
            pp[i] += eps;
            pp[j] += eps;
            pm[i] += eps;
            pm[j] -= eps;
            mp[i] -= eps;
            mp[j] += eps;
            mm[i] -= eps;
            mm[j] -= eps;
            out[i][j] = (h.objective(x, &pp) - h.objective(x, &pm) - h.objective(x, &mp)
                + h.objective(x, &mm))
                / (4.0 * eps * eps);
        }
    }
    out
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// Compares AD derivatives against central differences at `samples` random
/// points. Gradient entries must agree to `grad_tol`, Hessian entries to
/// `hess_tol`, both relative to max(1, |value|).
pub fn check_ad_against_fd<H: Objective>(
    h: &H,
    dim_x: usize,
    dim_y: usize,
    samples: usize,
    grad_tol: f64,
    hess_tol: f64,
    seed: u64,
) -> Result<(), String> {
    let mut rng = seeded_rng(seed);
    for k in 0..samples {
        let x: Vec<f64> = (0..dim_x).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..dim_y).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let grad = gradient_y(h, &x, &y);
        let fd_grad = fd_gradient_y(h, &x, &y, 1e-6);
        for (j, (g, f)) in grad.iter().zip(&fd_grad).enumerate() {
            let e = rel_err(*g, *f);
            if e > grad_tol {
                return Err(format!(
                    "gradient sample {k} component {j}: ad {g} vs fd {f} (rel {e:.2e})"
                ));
            }
        }

        let hess = hessian_yy(h, &x, &y);
        let fd_hess = fd_hessian_yy(h, &x, &y, 3e-4);
        for i in 0..dim_y {
            for j in 0..dim_y {
                let e = rel_err(hess.get(i, j), fd_hess[i][j]);
                if e > hess_tol {
                    return Err(format!(
                        "hessian sample {k} entry ({i},{j}): ad {} vs fd {} (rel {e:.2e})",
                        hess.get(i, j),
                        fd_hess[i][j]
                    ));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Interval inclusion fuzzing

fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
    let lo = rng.gen_range(-10.0..10.0);
    let width = if rng.gen_bool(0.1) {
        0.0
    } else {
        rng.gen_range(0.0..5.0)
    };
    Interval::new(lo, lo + width)
}

fn random_point_in(rng: &mut ChaCha8Rng, iv: Interval) -> f64 {
    if iv.width() == 0.0 {
        return iv.lo();
    }
    let u: f64 = rng.gen_range(0.0..=1.0);
    (iv.lo() + u * (iv.hi() - iv.lo())).clamp(iv.lo(), iv.hi())
}

/// Runs `iterations` random inclusion checks across every interval operation
/// and returns the number of violations (an exact result outside the
/// computed enclosure). A sound implementation returns zero.
pub fn interval_inclusion_violations(iterations: usize, seed: u64) -> usize {
    let mut rng = seeded_rng(seed);
    let mut violations = 0;
    for _ in 0..iterations {
        let a = random_interval(&mut rng);
        let b = random_interval(&mut rng);
        let pa = random_point_in(&mut rng, a);
        let pb = random_point_in(&mut rng, b);
        let ok = match rng.gen_range(0..9u8) {
            0 => (a + b).contains(pa + pb),
            1 => (a - b).contains(pa - pb),
            2 => (a * b).contains(pa * pb),
            3 => a.sin().contains(pa.sin()),
            4 => a.cos().contains(pa.cos()),
            // Exponent range keeps exp() finite for |lo| ≤ 15.
            5 => {
                let small = Interval::new(a.lo() / 10.0, a.hi() / 10.0);
                let p = pa / 10.0;
                small.exp().contains(p.exp())
            }
            6 => {
                let n = rng.gen_range(-3..=5i32);
                if n < 0 && a.contains_zero() {
                    true // reciprocal powers need a sign-definite base
                } else {
                    a.powi(n).contains(pa.powi(n))
                }
            }
            7 => {
                if b.contains_zero() {
                    true
                } else {
                    match a.try_div(b) {
                        Ok(q) => q.contains(pa / pb),
                        Err(_) => false,
                    }
                }
            }
            _ => {
                if a.lo() <= 0.0 {
                    true
                } else {
                    match a.try_ln() {
                        Ok(l) => l.contains(pa.ln()),
                        Err(_) => false,
                    }
                }
            }
        };
        if !ok {
            violations += 1;
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// Definiteness classification vs an eigenvalue oracle

/// Classifies `count` random symmetric matrices (as point interval matrices,
/// some inflated) and cross-checks each claim against nalgebra's symmetric
/// eigendecomposition of the centre matrix. Returns the first contradiction.
pub fn sylvester_vs_eigen_oracle(count: usize, seed: u64) -> Result<(), String> {
    let mut rng = seeded_rng(seed);
    for k in 0..count {
        let n = rng.gen_range(1..=3usize);
        let mut m = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-3.0..3.0);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        // Occasionally shift towards definiteness so both outcomes appear.
        if rng.gen_bool(0.5) {
            let shift = rng.gen_range(0.0..6.0);
            for (i, row) in m.iter_mut().enumerate() {
                row[i] += shift;
            }
        }
        let delta = if rng.gen_bool(0.3) {
            rng.gen_range(0.0..1e-3)
        } else {
            0.0
        };

        let sym =
            SymMatrix::from_fn_lower(n, |i, j| Interval::new(m[i][j] - delta, m[i][j] + delta));
        let verdict = classify_symmetric(&sym);

        let dm = nalgebra::DMatrix::from_fn(n, n, |i, j| m[i][j]);
        let eigs = dm.symmetric_eigen().eigenvalues;
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);

        match verdict {
            Definiteness::PositiveDefinite => {
                if min_eig <= -1e-10 {
                    return Err(format!(
                        "matrix {k}: claimed positive definite but min eigenvalue {min_eig}"
                    ));
                }
            }
            Definiteness::NotPositiveSemidefinite => {
                if min_eig >= 1e-10 {
                    return Err(format!(
                        "matrix {k}: claimed not PSD but min eigenvalue {min_eig}"
                    ));
                }
            }
            Definiteness::Indeterminate => {}
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// IFT drift vs finite differences of re-optimization

/// Nearest record point to `target` in a freshly searched set.
fn nearest_minimizer<P: Problem>(
    problem: &P,
    x: &[f64],
    domain: &SearchBox,
    cfg: &SolverConfig,
    target: &[f64],
) -> Option<Vec<f64>> {
    let set = global_search(problem, x, domain, cfg).ok()?;
    set.records.iter().map(|r| r.point.clone()).min_by(|a, b| {
        let da: f64 = a
            .iter()
            .zip(target)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        let db: f64 = b
            .iter()
            .zip(target)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        da.partial_cmp(&db).unwrap()
    })
}

/// For every minimizer tracked at each probe `x`, compares the implicit-
/// function-theorem drift along each coordinate direction of ẋ against a
/// central difference of the re-optimized minimizer position. Entries must
/// agree to `tol` relative to max(1, |value|).
pub fn check_drift_against_reopt_fd<P: Problem>(
    problem: &P,
    domain: &SearchBox,
    probes: &[Vec<f64>],
    cfg: &SolverConfig,
    tol: f64,
) -> Result<(), String> {
    let eps = 1e-5;
    for x in probes {
        let set = global_search(problem, x, domain, cfg).map_err(|e| e.to_string())?;
        for rec in &set.records {
            if rec.on_boundary {
                continue; // drift formula assumes an interior stationary point
            }
            for dir in 0..x.len() {
                let mut xdot = vec![0.0; x.len()];
                xdot[dir] = 1.0;
                let d = match drift(problem, x, &rec.point, &xdot) {
                    Ok(d) => d,
                    // A singular Hessian (fold in progress) has no defined
                    // drift; nothing to compare.
                    Err(_) => continue,
                };
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[dir] += eps;
                xm[dir] -= eps;
                let yp = nearest_minimizer(problem, &xp, domain, cfg, &rec.point)
                    .ok_or("search failed at x+eps")?;
                let ym = nearest_minimizer(problem, &xm, domain, cfg, &rec.point)
                    .ok_or("search failed at x-eps")?;
                for j in 0..d.len() {
                    let fd = (yp[j] - ym[j]) / (2.0 * eps);
                    let e = rel_err(d[j], fd);
                    if e > tol {
                        return Err(format!(
                            "drift at x={x:?} record {:?} dir {dir} comp {j}: \
                             ift {} vs fd {fd} (rel {e:.2e})",
                            rec.point, d[j]
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}
