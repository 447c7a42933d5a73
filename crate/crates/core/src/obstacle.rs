//! Solvers for the discrete HJB obstacle problem
//! `min { max_u {A_u z - b_u}, A~ z - b~ } = 0`.
//!
//! Penalisation moves the obstacle into the equation:
//!
//! ```text
//! max_u {A_u z - b_u} - rho * Pi(b~ - A~ z) = 0,
//! ```
//!
//! solved by the Newton-like iteration
//!
//! ```text
//! (A_{u_max(z^n)} + rho A_plus(z^n)) z^{n+1} = b_{u_max(z^n)} + rho b_plus(z^n)
//! ```
//!
//! where `A_plus`/`b_plus` carry the obstacle rows wherever the obstacle is
//! violated, or by line-search Newton for smoothed penalties. The baseline
//! is a nested policy iteration: an outer loop picks per row between the
//! max-branch and the obstacle branch (optionally comparing against
//! `delta * (A~ z - b~)`, which changes the path but not the solution), and
//! the induced max-type subproblem is solved by inner Howard iteration.
//! One iteration is counted whenever a linear stage executes.

use std::time::Instant;

use crate::control::{row_max_residual, ControlledFamily};
use crate::hjb::{HJBProblem, SolverError};
use crate::matrix::{KonMatrix, SparseRow};
use crate::penalty::PenaltyTerm;
use crate::report::SolveReport;
use crate::scan;

const DENOM_GUARD: f64 = 1e-300;
const LINESEARCH_SLOPE: f64 = 1e-4;
const LINESEARCH_MIN_STEP: f64 = 1e-14;

/// HJB obstacle problem: the max-form controlled family plus the affine
/// obstacle `A~ z >= b~`.
pub struct ObstacleProblem<F: ControlledFamily> {
    pub base: HJBProblem<F>,
    pub a_tilde: KonMatrix,
    pub b_tilde: Vec<f64>,
}

impl<F: ControlledFamily> ObstacleProblem<F> {
    pub fn new(base: HJBProblem<F>, a_tilde: KonMatrix, b_tilde: Vec<f64>) -> Self {
        assert_eq!(base.dim(), a_tilde.n(), "obstacle dimension mismatch");
        assert_eq!(base.dim(), b_tilde.len(), "obstacle rhs dimension mismatch");
        ObstacleProblem {
            base,
            a_tilde,
            b_tilde,
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    fn obstacle_value(&self, i: usize, z: &[f64]) -> f64 {
        self.a_tilde.sparse_row(i).dot(z) - self.b_tilde[i]
    }
}

/// Parameters for the penalised obstacle problem and its solvers.
#[derive(Debug, Clone)]
pub struct ObstacleConfig {
    pub rho: f64,
    pub penalty: PenaltyTerm,
    pub tol: f64,
    pub max_iter: usize,
    /// Scaling of the obstacle branch inside the policy-iteration selection
    /// and the active rows' equations; the solution is delta-invariant.
    pub delta: f64,
}

impl ObstacleConfig {
    pub fn new(rho: f64, penalty: PenaltyTerm) -> Self {
        assert!(rho > 0.0, "penalty weight must be positive");
        ObstacleConfig {
            rho,
            penalty,
            tol: 1e-8,
            max_iter: 10_000,
            delta: 1.0,
        }
    }
}

/// `min { max_u (A_u z - b_u)_i, (A~ z - b~)_i }` per row.
pub fn obstacle_residual<F: ControlledFamily>(p: &ObstacleProblem<F>, z: &[f64]) -> Vec<f64> {
    let fam = &p.base.family;
    scan::map_rows(p.dim(), |i| {
        let (_, maxres) = row_max_residual(fam, &p.base.grid, z, i);
        maxres.min(p.obstacle_value(i, z))
    })
}

struct ObsRow {
    h: f64,
    /// Obstacle violation `(b~ - A~ z)_i`.
    viol: f64,
    sys_row: SparseRow,
    rhs: f64,
    row_umax: SparseRow,
}

fn obs_rows<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    cfg: &ObstacleConfig,
    z: &[f64],
) -> Vec<ObsRow> {
    let fam = &p.base.family;
    scan::map_rows(p.dim(), |i| {
        let (u_max, maxres) = row_max_residual(fam, &p.base.grid, z, i);
        let viol = -p.obstacle_value(i, z);
        let pen_value = cfg.penalty.value(viol);
        let h = maxres - cfg.rho * pen_value;
        let (row_umax, b_u) = fam.row(i, u_max);
        let (sys_row, rhs) = if pen_value > 0.0 {
            (
                row_umax.add_scaled(cfg.rho, &p.a_tilde.sparse_row(i)),
                b_u + cfg.rho * p.b_tilde[i],
            )
        } else {
            (row_umax.clone(), b_u)
        };
        ObsRow {
            h,
            viol,
            sys_row,
            rhs,
            row_umax,
        }
    })
}

fn obs_relative(rows: &[ObsRow]) -> f64 {
    let num = rows.iter().map(|r| r.h.abs()).fold(0.0, f64::max);
    let den = rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    num / (den + DENOM_GUARD)
}

/// The penalised residual `H(z)` of the obstacle problem.
pub fn penalty_residual_h<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    cfg: &ObstacleConfig,
    z: &[f64],
) -> Vec<f64> {
    obs_rows(p, cfg, z).into_iter().map(|r| r.h).collect()
}

/// One Newton-like step for the penalised obstacle problem (max penalty).
pub fn obstacle_newton_like_step<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    cfg: &ObstacleConfig,
    z: &[f64],
) -> Result<Vec<f64>, SolverError> {
    assert!(
        matches!(cfg.penalty, PenaltyTerm::Max),
        "the Newton-like iteration requires the max penalty"
    );
    let rows = obs_rows(p, cfg, z);
    let rhs: Vec<f64> = rows.iter().map(|r| r.rhs).collect();
    let sys = KonMatrix::from_certified_rows(p.dim(), rows.into_iter().map(|r| r.sys_row).collect());
    Ok(sys.solve(&rhs)?)
}

/// Newton-like iteration on the penalised obstacle problem.
pub fn solve_penalised_obstacle<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    cfg: &ObstacleConfig,
    z0: &[f64],
) -> Result<SolveReport, SolverError> {
    assert!(
        matches!(cfg.penalty, PenaltyTerm::Max),
        "the Newton-like iteration requires the max penalty"
    );
    let start = Instant::now();
    let mut report = SolveReport::new(z0.to_vec());
    let mut rows = obs_rows(p, cfg, z0);
    if obs_relative(&rows) <= cfg.tol {
        report.converged = true;
        report.wall_time = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    while report.iterations < cfg.max_iter {
        let rhs: Vec<f64> = rows.iter().map(|r| r.rhs).collect();
        let sys =
            KonMatrix::from_certified_rows(p.dim(), rows.iter().map(|r| r.sys_row.clone()).collect());
        let z = sys.solve(&rhs)?;
        rows = obs_rows(p, cfg, &z);
        let rel = obs_relative(&rows);
        report.solution = z;
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

/// Damped Newton with line search on `0.5 ||H||_2^2` for smoothed penalties.
pub fn solve_penalised_obstacle_linesearch<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    cfg: &ObstacleConfig,
    z0: &[f64],
) -> Result<SolveReport, SolverError> {
    assert!(
        cfg.penalty.is_smooth(),
        "the line-search Newton solver requires a smoothed penalty"
    );
    let start = Instant::now();
    let n = p.dim();
    let mut z = z0.to_vec();
    let mut rows = obs_rows(p, cfg, &z);
    let mut report = SolveReport::new(z.clone());
    loop {
        let rel = obs_relative(&rows);
        if rel <= cfg.tol {
            report.converged = true;
            break;
        }
        if report.iterations >= cfg.max_iter {
            break;
        }
        // Jacobian rows: (A_{u_max})_i + rho pi'((b~ - A~ z)_i) (A~)_i.
        let jac_rows: Vec<SparseRow> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let slope = cfg.penalty.derivative(r.viol);
                if slope > 0.0 {
                    r.row_umax
                        .add_scaled(cfg.rho * slope, &p.a_tilde.sparse_row(i))
                } else {
                    r.row_umax.clone()
                }
            })
            .collect();
        let jac = KonMatrix::from_certified_rows(n, jac_rows);
        let neg_h: Vec<f64> = rows.iter().map(|r| -r.h).collect();
        let dir = jac.solve(&neg_h)?;
        let merit0: f64 = rows.iter().map(|r| r.h * r.h).sum::<f64>() * 0.5;

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= LINESEARCH_MIN_STEP {
            let trial: Vec<f64> = z
                .iter()
                .zip(&dir)
                .map(|(zi, di)| zi + alpha * di)
                .collect();
            let trial_rows = obs_rows(p, cfg, &trial);
            let merit: f64 = trial_rows.iter().map(|r| r.h * r.h).sum::<f64>() * 0.5;
            if merit <= (1.0 - 2.0 * LINESEARCH_SLOPE * alpha) * merit0 {
                accepted = Some((trial, trial_rows));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, trial_rows)) => {
                z = trial;
                rows = trial_rows;
                report.solution = z.clone();
                report.iterations += 1;
                report.residual_history.push(obs_relative(&rows));
            }
            None => break,
        }
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Nested policy iteration for the obstacle problem.
pub fn policy_iteration_obstacle<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    cfg: &ObstacleConfig,
    z0: &[f64],
) -> Result<SolveReport, SolverError> {
    policy_iteration_obstacle_trace(p, cfg, z0).map(|(r, _)| r)
}

/// [`policy_iteration_obstacle`] that also returns the outer-stage iterates
/// (the solutions of each induced max-type subproblem).
pub fn policy_iteration_obstacle_trace<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    cfg: &ObstacleConfig,
    z0: &[f64],
) -> Result<(SolveReport, Vec<Vec<f64>>), SolverError> {
    assert!(cfg.delta > 0.0, "delta must be positive");
    let start = Instant::now();
    let fam = &p.base.family;
    let grid = &p.base.grid;
    let n = p.dim();
    let mut report = SolveReport::new(z0.to_vec());
    let mut trace = Vec::new();
    let mut z = z0.to_vec();
    'outer: loop {
        let picks: Vec<(f64, f64)> = scan::map_rows(n, |i| row_max_residual(fam, grid, &z, i));
        let obs: Vec<f64> = (0..n).map(|i| p.obstacle_value(i, &z)).collect();

        // Termination: relative residual of the unscaled obstacle equation,
        // denominator assembled from the selected branch per row (ties take
        // the obstacle branch).
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for i in 0..n {
            let (u, val) = picks[i];
            num = num.max(val.min(obs[i]).abs());
            den = den.max(if obs[i] <= val {
                p.b_tilde[i].abs()
            } else {
                fam.rhs(i, u).abs()
            });
        }
        if num / (den + DENOM_GUARD) <= cfg.tol {
            report.converged = true;
            break;
        }
        if report.iterations >= cfg.max_iter {
            break;
        }

        // Branch selection: v = 1 (obstacle) iff delta (A~ z - b~)_i is not
        // larger than the max-branch residual.
        let v: Vec<bool> = (0..n).map(|i| cfg.delta * obs[i] <= picks[i].1).collect();

        // Inner Howard iteration on the induced system: obstacle rows are
        // linear (scaled by delta), max rows re-select their argmax control
        // each pass. Stops at tolerance tol/10 or when the control selection
        // repeats (an exact fixed point).
        let mut w = z.clone();
        let mut prev_sel: Option<Vec<u64>> = None;
        let mut solved_once = false;
        loop {
            let sel: Vec<(f64, f64)> = scan::map_rows(n, |i| {
                if v[i] {
                    (f64::NAN, cfg.delta * (p.obstacle_value(i, &w)))
                } else {
                    row_max_residual(fam, grid, &w, i)
                }
            });
            // Controls compared bitwise so the obstacle-row sentinel matches
            // itself.
            let controls: Vec<u64> = sel.iter().map(|(u, _)| u.to_bits()).collect();
            if solved_once {
                let mut inum: f64 = 0.0;
                let mut iden: f64 = 0.0;
                for i in 0..n {
                    if v[i] {
                        inum = inum.max(p.obstacle_value(i, &w).abs());
                        iden = iden.max(p.b_tilde[i].abs());
                    } else {
                        inum = inum.max(sel[i].1.abs());
                        iden = iden.max(fam.rhs(i, sel[i].0).abs());
                    }
                }
                if inum / (iden + DENOM_GUARD) <= cfg.tol / 10.0 {
                    break;
                }
                if prev_sel.as_deref() == Some(&controls[..]) {
                    break;
                }
            }
            let assembled: Vec<(SparseRow, f64)> = scan::map_rows(n, |i| {
                if v[i] {
                    (
                        p.a_tilde.sparse_row(i).scaled(cfg.delta),
                        cfg.delta * p.b_tilde[i],
                    )
                } else {
                    fam.row(i, sel[i].0)
                }
            });
            let rhs: Vec<f64> = assembled.iter().map(|(_, b)| *b).collect();
            let sys =
                KonMatrix::from_certified_rows(n, assembled.into_iter().map(|(r, _)| r).collect());
            w = sys.solve(&rhs)?;
            report.iterations += 1;
            report.solution = w.clone();
            report.residual_history.push(relative_obstacle_residual(p, &w));
            solved_once = true;
            prev_sel = Some(controls);
            if report.iterations >= cfg.max_iter {
                z = w;
                break 'outer;
            }
        }
        z = w;
        trace.push(z.clone());
    }
    report.solution = z;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((report, trace))
}

/// Relative residual of the unscaled obstacle equation at `z` (the outer
/// termination measure of the policy iteration).
pub fn relative_obstacle_residual<F: ControlledFamily>(
    p: &ObstacleProblem<F>,
    z: &[f64],
) -> f64 {
    let fam = &p.base.family;
    let n = p.dim();
    let parts: Vec<(f64, f64)> = scan::map_rows(n, |i| {
        let (u, val) = row_max_residual(fam, &p.base.grid, z, i);
        let obs = p.obstacle_value(i, z);
        let den = if obs <= val {
            p.b_tilde[i].abs()
        } else {
            fam.rhs(i, u).abs()
        };
        (val.min(obs).abs(), den)
    });
    let num = parts.iter().map(|(a, _)| *a).fold(0.0, f64::max);
    let den = parts.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    num / (den + DENOM_GUARD)
}
