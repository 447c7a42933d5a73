//! Solvers for the discrete HJB equation `min_u {A_u x - b_u} = 0`.
//!
//! The equation is approximated by the penalised problem
//!
//! ```text
//! (A_{u0} x - b_{u0}) - rho * max_u Pi(b_u - A_u x) = 0
//! ```
//!
//! for a reference control `u0` and penalty weight `rho`, and solved either
//! by the Newton-like iteration
//!
//! ```text
//! (A_{u0} + rho A_min(x^n)) x^{n+1} = b_{u0} + rho b_min(x^n)
//! ```
//!
//! (max penalty; rows of `A_min`/`b_min` come from the per-row worst
//! violation and are zeroed where nothing is violated), or by damped Newton
//! with line search on the smoothed penalty. Policy iteration on the
//! original equation serves as the baseline.
//!
//! Iterations terminate on relative residual tests: the penalised residual
//! is scaled by `||b_{u0} + rho b_plus||`, the policy residual by the rhs
//! assembled from the per-row argmin controls.

use std::time::Instant;

use thiserror::Error;

use crate::control::{
    row_max_violation, row_min_residual, scan_min, ControlGrid, ControlledFamily,
};
use crate::matrix::{KonMatrix, MatrixError, SparseRow};
use crate::penalty::PenaltyTerm;
use crate::report::SolveReport;
use crate::scan;

/// Guard added to every termination-test denominator.
const DENOM_GUARD: f64 = 1e-300;

/// Armijo slope coefficient and smallest accepted step of the line search.
const LINESEARCH_SLOPE: f64 = 1e-4;
const LINESEARCH_MIN_STEP: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("linear solve failed: {0}")]
    Linear(#[from] MatrixError),
}

/// Discrete HJB problem: a controlled family plus the control grid used to
/// approximate the compact interval.
pub struct HJBProblem<F: ControlledFamily> {
    pub family: F,
    pub grid: ControlGrid,
}

impl<F: ControlledFamily> HJBProblem<F> {
    pub fn new(family: F, grid: ControlGrid) -> Self {
        HJBProblem { family, grid }
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }
}

/// Parameters of the penalised problem and its iterative solvers.
#[derive(Debug, Clone)]
pub struct PenaltyConfig {
    pub rho: f64,
    /// Reference control; should be a grid point (any value in the control
    /// interval is mathematically valid).
    pub u0: f64,
    pub penalty: PenaltyTerm,
    /// Relative termination tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl PenaltyConfig {
    pub fn new(rho: f64, u0: f64, penalty: PenaltyTerm) -> Self {
        assert!(rho > 0.0, "penalty weight must be positive");
        PenaltyConfig {
            rho,
            u0,
            penalty,
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

/// `min_u (A_u x - b_u)` componentwise over the grid.
pub fn hjb_residual<F: ControlledFamily>(p: &HJBProblem<F>, x: &[f64]) -> Vec<f64> {
    scan_min(&p.family, &p.grid, x)
        .into_iter()
        .map(|(_, v)| v)
        .collect()
}

/// Per-row state of the penalised residual at one iterate: the worst
/// violation, the residual entry of `G`, and the assembled Newton row.
struct PenRow {
    g: f64,
    /// Raw violation `(b_u* - A_u* x)_i` at the scanned control.
    raw: f64,
    u_star: f64,
    sys_row: SparseRow,
    rhs: f64,
    row_u0: SparseRow,
}

fn pen_rows<F: ControlledFamily>(p: &HJBProblem<F>, cfg: &PenaltyConfig, x: &[f64]) -> Vec<PenRow> {
    let fam = &p.family;
    scan::map_rows(p.dim(), |i| {
        let (row_u0, b_u0) = fam.row(i, cfg.u0);
        let base = row_u0.dot(x) - b_u0;
        let (u_star, pen_value) = row_max_violation(fam, &p.grid, x, i, &cfg.penalty);
        let raw = -fam.row_residual(i, u_star, x);
        let g = base - cfg.rho * pen_value;
        let (sys_row, rhs) = if pen_value > 0.0 {
            let (row_s, b_s) = fam.row(i, u_star);
            (row_u0.add_scaled(cfg.rho, &row_s), b_u0 + cfg.rho * b_s)
        } else {
            (row_u0.clone(), b_u0)
        };
        PenRow {
            g,
            raw,
            u_star,
            sys_row,
            rhs,
            row_u0,
        }
    })
}

/// Relative penalised residual `||G|| / (||b_{u0} + rho b_plus|| + guard)`.
fn pen_relative(rows: &[PenRow]) -> f64 {
    let num = rows.iter().map(|r| r.g.abs()).fold(0.0, f64::max);
    let den = rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    num / (den + DENOM_GUARD)
}

/// The penalised residual `G(x)` of the problem with reference control
/// `cfg.u0`, exactly as solved by the Newton iterations.
pub fn penalty_residual_g<F: ControlledFamily>(
    p: &HJBProblem<F>,
    cfg: &PenaltyConfig,
    x: &[f64],
) -> Vec<f64> {
    pen_rows(p, cfg, x).into_iter().map(|r| r.g).collect()
}

/// One step of the Newton-like iteration (max penalty): assemble
/// `A_{u0} + rho A_min(x)` from the per-row worst violations and solve.
pub fn newton_like_step<F: ControlledFamily>(
    p: &HJBProblem<F>,
    cfg: &PenaltyConfig,
    x: &[f64],
) -> Result<Vec<f64>, SolverError> {
    assert!(
        matches!(cfg.penalty, PenaltyTerm::Max),
        "the Newton-like iteration requires the max penalty"
    );
    let rows = pen_rows(p, cfg, x);
    step_from_rows(p.dim(), rows).map(|(x, _)| x)
}

fn step_from_rows(n: usize, rows: Vec<PenRow>) -> Result<(Vec<f64>, Vec<PenRow>), SolverError> {
    let rhs: Vec<f64> = rows.iter().map(|r| r.rhs).collect();
    let sys = KonMatrix::from_certified_rows(n, rows.iter().map(|r| r.sys_row.clone()).collect());
    let x = sys.solve(&rhs)?;
    Ok((x, rows))
}

/// Solves the penalised problem by the Newton-like iteration. Converges for
/// any starting value; `converged = false` only when `max_iter` is hit.
pub fn solve_penalised<F: ControlledFamily>(
    p: &HJBProblem<F>,
    cfg: &PenaltyConfig,
    x0: &[f64],
) -> Result<SolveReport, SolverError> {
    assert!(
        matches!(cfg.penalty, PenaltyTerm::Max),
        "the Newton-like iteration requires the max penalty"
    );
    let start = Instant::now();
    let mut report = SolveReport::new(x0.to_vec());
    let mut rows = pen_rows(p, cfg, x0);
    if pen_relative(&rows) <= cfg.tol {
        report.converged = true;
        report.wall_time = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    while report.iterations < cfg.max_iter {
        let (x, _) = step_from_rows(p.dim(), rows)?;
        rows = pen_rows(p, cfg, &x);
        let rel = pen_relative(&rows);
        report.solution = x;
        report.iterations += 1;
        report.residual_history.push(rel);
        if rel <= cfg.tol {
            report.converged = true;
            break;
        }
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Damped Newton with backtracking line search on the merit function
/// `0.5 ||G||_2^2`, for C^1 (smoothed) penalties. A stalled line search
/// stops the iteration and is reported through `converged = false`.
pub fn solve_penalised_linesearch<F: ControlledFamily>(
    p: &HJBProblem<F>,
    cfg: &PenaltyConfig,
    x0: &[f64],
) -> Result<SolveReport, SolverError> {
    assert!(
        cfg.penalty.is_smooth(),
        "the line-search Newton solver requires a smoothed penalty"
    );
    let start = Instant::now();
    let n = p.dim();
    let mut x = x0.to_vec();
    let mut rows = pen_rows(p, cfg, &x);
    let mut report = SolveReport::new(x.clone());
    loop {
        let rel = pen_relative(&rows);
        if rel <= cfg.tol {
            report.converged = true;
            break;
        }
        if report.iterations >= cfg.max_iter {
            break;
        }
        // Jacobian rows: (A_{u0})_i + rho pi'((b_u* - A_u* x)_i) (A_u*)_i.
        let jac_rows: Vec<SparseRow> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let slope = cfg.penalty.derivative(r.raw);
                if slope > 0.0 {
                    let (row_s, _) = p.family.row(i, r.u_star);
                    r.row_u0.add_scaled(cfg.rho * slope, &row_s)
                } else {
                    r.row_u0.clone()
                }
            })
            .collect();
        let jac = KonMatrix::from_certified_rows(n, jac_rows);
        let neg_g: Vec<f64> = rows.iter().map(|r| -r.g).collect();
        let dir = jac.solve(&neg_g)?;
        let merit0: f64 = rows.iter().map(|r| r.g * r.g).sum::<f64>() * 0.5;

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= LINESEARCH_MIN_STEP {
            let trial: Vec<f64> = x
                .iter()
                .zip(&dir)
                .map(|(xi, di)| xi + alpha * di)
                .collect();
            let trial_rows = pen_rows(p, cfg, &trial);
            let merit: f64 = trial_rows.iter().map(|r| r.g * r.g).sum::<f64>() * 0.5;
            if merit <= (1.0 - 2.0 * LINESEARCH_SLOPE * alpha) * merit0 {
                accepted = Some((trial, trial_rows));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, trial_rows)) => {
                x = trial;
                rows = trial_rows;
                report.solution = x.clone();
                report.iterations += 1;
                report.residual_history.push(pen_relative(&rows));
            }
            // Step shrank below the floor: stop and report the state.
            None => break,
        }
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Howard policy iteration on the original equation: fix the per-row argmin
/// control, solve the induced linear system, repeat.
pub fn policy_iteration<F: ControlledFamily>(
    p: &HJBProblem<F>,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport, SolverError> {
    policy_iteration_trace(p, x0, tol, max_iter).map(|(r, _)| r)
}

/// [`policy_iteration`] that also returns every iterate (after each linear
/// stage), which is what the monotonicity statements are about.
pub fn policy_iteration_trace<F: ControlledFamily>(
    p: &HJBProblem<F>,
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(SolveReport, Vec<Vec<f64>>), SolverError> {
    let start = Instant::now();
    let fam = &p.family;
    let n = p.dim();
    let mut report = SolveReport::new(x0.to_vec());
    let mut trace = Vec::new();
    let mut x = x0.to_vec();
    loop {
        let picks: Vec<(f64, f64)> =
            scan::map_rows(n, |i| row_min_residual(fam, &p.grid, &x, i));
        let num = picks.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        let den = picks
            .iter()
            .enumerate()
            .map(|(i, (u, _))| fam.rhs(i, *u).abs())
            .fold(0.0, f64::max);
        let rel = num / (den + DENOM_GUARD);
        if report.iterations > 0 {
            report.residual_history.push(rel);
        }
        if rel <= tol {
            report.converged = true;
            break;
        }
        if report.iterations >= max_iter {
            break;
        }
        let assembled: Vec<(SparseRow, f64)> =
            scan::map_rows(n, |i| fam.row(i, picks[i].0));
        let rhs: Vec<f64> = assembled.iter().map(|(_, b)| *b).collect();
        let sys =
            KonMatrix::from_certified_rows(n, assembled.into_iter().map(|(r, _)| r).collect());
        x = sys.solve(&rhs)?;
        report.solution = x.clone();
        report.iterations += 1;
        trace.push(x.clone());
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((report, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlInterval;

    /// 1x1 family on U = [0, 1]: A_u = [u + 2], b_u = [1].
    struct F1;

    impl ControlledFamily for F1 {
        fn dim(&self) -> usize {
            1
        }
        fn row(&self, _i: usize, u: f64) -> (SparseRow, f64) {
            (SparseRow::new(0, vec![u + 2.0]), 1.0)
        }
    }

    fn f1_problem() -> HJBProblem<F1> {
        let grid = ControlGrid::uniform(ControlInterval::new(0.0, 1.0).unwrap(), 11).unwrap();
        HJBProblem::new(F1, grid)
    }

    fn cfg(rho: f64) -> PenaltyConfig {
        PenaltyConfig::new(rho, 1.0, PenaltyTerm::Max)
    }

    #[test]
    fn residual_on_f1() {
        let p = f1_problem();
        assert!(hjb_residual(&p, &[0.5])[0].abs() < 1e-15);
        assert!((hjb_residual(&p, &[1.0])[0] - 1.0).abs() < 1e-15);
        assert!((hjb_residual(&p, &[0.0])[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn penalised_residual_f1_closed_form() {
        let p = f1_problem();
        // x_rho = (1 + rho) / (3 + 2 rho) zeroes G for u0 = 1.
        assert!(penalty_residual_g(&p, &cfg(1.0), &[0.4])[0].abs() < 1e-14);
        assert!(penalty_residual_g(&p, &cfg(10.0), &[11.0 / 23.0])[0].abs() < 1e-13);
        for rho in [1.0, 7.0, 100.0] {
            let g = penalty_residual_g(&p, &cfg(rho), &[0.6]);
            assert!((g[0] - 0.8).abs() < 1e-13);
        }
    }

    #[test]
    fn newton_like_step_f1() {
        let p = f1_problem();
        // (3 + 2) x = 1 + 1.
        let x1 = newton_like_step(&p, &cfg(1.0), &[0.0]).unwrap();
        assert!((x1[0] - 0.4).abs() < 1e-15);
        // (3 + 20) x = 1 + 10.
        let x1 = newton_like_step(&p, &cfg(10.0), &[0.0]).unwrap();
        assert!((x1[0] - 11.0 / 23.0).abs() < 1e-15);
        // No violation at 0.6: system is 3 x = 1.
        let x1 = newton_like_step(&p, &cfg(10.0), &[0.6]).unwrap();
        assert!((x1[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn solve_penalised_f1_one_step() {
        let p = f1_problem();
        let report = solve_penalised(&p, &cfg(1000.0), &[0.0]).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2);
        assert!((report.solution[0] - 1001.0 / 2003.0).abs() < 1e-14);
    }

    #[test]
    fn penalty_error_is_first_order_in_rho() {
        let p = f1_problem();
        // Exact solution 0.5; closed-form error 0.5 / (3 + 2 rho).
        for rho in [10.0, 20.0, 40.0, 80.0] {
            let report = solve_penalised(&p, &cfg(rho), &[0.0]).unwrap();
            let expect = 0.5 / (3.0 + 2.0 * rho);
            assert!(((0.5 - report.solution[0]) - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn policy_iteration_f1() {
        let p = f1_problem();
        let report = policy_iteration(&p, &[0.0], 1e-8, 50).unwrap();
        assert!(report.converged);
        assert!(report.iterations <= 2);
        assert!((report.solution[0] - 0.5).abs() < 1e-14);

        // Already at the fixed point: accepted without a linear stage.
        let report = policy_iteration(&p, &[0.5], 1e-8, 50).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn linesearch_matches_max_penalty_solution() {
        let p = f1_problem();
        let mut c = PenaltyConfig::new(1000.0, 1.0, PenaltyTerm::smoothed(1e-6));
        c.tol = 1e-10;
        let report = solve_penalised_linesearch(&p, &c, &[0.0]).unwrap();
        assert!(report.converged);
        assert!((report.solution[0] - 1001.0 / 2003.0).abs() < 1e-5);

        // Starting at the solution: accepted with zero iterations.
        let at = report.solution.clone();
        let again = solve_penalised_linesearch(&p, &c, &at).unwrap();
        assert!(again.converged);
        assert_eq!(again.iterations, 0);
    }

    #[test]
    fn report_history_matches_iterations() {
        let p = f1_problem();
        let report = solve_penalised(&p, &cfg(10.0), &[5.0]).unwrap();
        assert_eq!(report.residual_history.len(), report.iterations);
        assert!(report.converged);
        assert!(report.final_residual().unwrap() <= 1e-8);
    }
}
