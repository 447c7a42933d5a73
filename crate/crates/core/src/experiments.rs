//! End-to-end experiment drivers: full time-marches of the two models with
//! a choice of nonlinear solver, penalty-parameter sweeps, the reference
//! control sensitivity study, and the initial-guess study.

use crate::control::ControlGrid;
use crate::fd::{
    build_early_exercise_step, build_investment_step, explicit_baseline_step, run_reference,
    run_time_stepping, transform_reference, EarlyExerciseModel, FdError, InvestmentModel,
    SolutionSurface, SpatialGrid, TimeGrid,
};
use crate::hjb::{policy_iteration, solve_penalised, solve_penalised_linesearch, PenaltyConfig};
use crate::obstacle::{
    policy_iteration_obstacle, solve_penalised_obstacle, solve_penalised_obstacle_linesearch,
    ObstacleConfig,
};
use crate::penalty::PenaltyTerm;
use crate::report::SolveReport;

/// Nonlinear solver used at each implicit time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Penalty,
    PenaltyLinesearch,
    Policy,
}

/// Solver parameters shared across steps of one run.
#[derive(Debug, Clone)]
pub struct SolverParams {
    pub rho: f64,
    pub penalty: PenaltyTerm,
    /// Reference control; snapped to the control grid, defaults to its left
    /// endpoint.
    pub u0: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Obstacle-branch scaling for policy iteration.
    pub delta: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            rho: 1e6,
            penalty: PenaltyTerm::Max,
            u0: None,
            tol: 1e-8,
            max_iter: 10_000,
            delta: 1.0,
        }
    }
}

impl SolverParams {
    fn resolve_u0(&self, grid: &ControlGrid) -> f64 {
        match self.u0 {
            Some(u) => grid.snap(u),
            None => grid.lo(),
        }
    }

    fn penalty_config(&self, grid: &ControlGrid) -> PenaltyConfig {
        let mut cfg = PenaltyConfig::new(self.rho, self.resolve_u0(grid), self.penalty);
        cfg.tol = self.tol;
        cfg.max_iter = self.max_iter;
        cfg
    }

    fn obstacle_config(&self) -> ObstacleConfig {
        let mut cfg = ObstacleConfig::new(self.rho, self.penalty);
        cfg.tol = self.tol;
        cfg.max_iter = self.max_iter;
        cfg.delta = self.delta;
        cfg
    }
}

/// Surface plus per-step solver reports, marching order (last step first).
pub struct ExperimentRun {
    pub surface: SolutionSurface,
    pub reports: Vec<SolveReport>,
}

fn require_converged(report: SolveReport, step: usize) -> Result<SolveReport, FdError> {
    if report.converged {
        Ok(report)
    } else {
        Err(FdError::NotConverged { step })
    }
}

/// Full backward march of the investment HJB equation.
pub fn run_investment(
    m: &InvestmentModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    grid: &ControlGrid,
    solver: SolverKind,
    params: &SolverParams,
) -> Result<ExperimentRun, FdError> {
    let terminal = vec![1.0; sg.nodes()];
    let (surface, reports) = run_time_stepping(tg, terminal, |j, prev| {
        let p = build_investment_step(m, sg, tg, grid, prev)?;
        let report = match solver {
            SolverKind::Penalty => solve_penalised(&p, &params.penalty_config(grid), prev)?,
            SolverKind::PenaltyLinesearch => {
                solve_penalised_linesearch(&p, &params.penalty_config(grid), prev)?
            }
            SolverKind::Policy => policy_iteration(&p, prev, params.tol, params.max_iter)?,
        };
        let report = require_converged(report, j)?;
        Ok((report.solution.clone(), report))
    })?;
    Ok(ExperimentRun { surface, reports })
}

/// Linear reference march followed by the pointwise power transform.
pub fn run_investment_reference(
    m: &InvestmentModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
) -> Result<SolutionSurface, FdError> {
    let phi_tilde = run_reference(m, sg, tg)?;
    transform_reference(&phi_tilde, m)
}

/// Full backward march of the early-exercise obstacle problem.
pub fn run_early_exercise(
    m: &EarlyExerciseModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    grid: &ControlGrid,
    solver: SolverKind,
    params: &SolverParams,
) -> Result<ExperimentRun, FdError> {
    let terminal = m.payoff_vector(sg);
    let (surface, reports) = run_time_stepping(tg, terminal, |j, prev| {
        let p = build_early_exercise_step(m, sg, tg, grid, prev)?;
        let report = match solver {
            SolverKind::Penalty => solve_penalised_obstacle(&p, &params.obstacle_config(), prev)?,
            SolverKind::PenaltyLinesearch => {
                solve_penalised_obstacle_linesearch(&p, &params.obstacle_config(), prev)?
            }
            SolverKind::Policy => policy_iteration_obstacle(&p, &params.obstacle_config(), prev)?,
        };
        let report = require_converged(report, j)?;
        Ok((report.solution.clone(), report))
    })?;
    Ok(ExperimentRun { surface, reports })
}

/// Explicit-stepping baseline for the early-exercise model; every step is a
/// direct update, no solver reports.
pub fn run_explicit_baseline(
    m: &EarlyExerciseModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
) -> Result<SolutionSurface, FdError> {
    let terminal = m.payoff_vector(sg);
    let (surface, _) = run_time_stepping(tg, terminal, |_, prev| {
        let sol = explicit_baseline_step(m, sg, tg, prev);
        let mut report = SolveReport::new(sol.clone());
        report.converged = true;
        Ok((sol, report))
    })?;
    Ok(surface)
}

pub fn max_norm_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// One sweep row: penalty weight, max-norm error against the sweep
/// reference, and the empirical rate against the previous row.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub rho: f64,
    pub error_inf: f64,
    /// `ln(e_prev / e) / ln(rho / rho_prev)`; `None` on the first row.
    pub rate: Option<f64>,
}

/// Least-squares slope of `ln error` against `ln rho`, reported with the
/// sign convention that first-order convergence gives `+1`.
pub fn loglog_slope(rows: &[SweepRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.rho.ln(), r.error_inf.max(1e-300).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let var = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum::<f64>();
    -(cov / var)
}

fn sweep_rows(errors: &[(f64, f64)]) -> Vec<SweepRow> {
    let mut rows = Vec::with_capacity(errors.len());
    for (idx, &(rho, err)) in errors.iter().enumerate() {
        let rate = if idx == 0 {
            None
        } else {
            let (rho_prev, err_prev) = errors[idx - 1];
            Some((err_prev.max(1e-300) / err.max(1e-300)).ln() / (rho / rho_prev).ln())
        };
        rows.push(SweepRow {
            rho,
            error_inf: err,
            rate,
        });
    }
    rows
}

/// Penalty-parameter sweep for the investment model: a single implicit step
/// starting from the transformed reference at `t = k`, compared against the
/// reference at `t = 0`.
pub fn rho_sweep_investment(
    m: &InvestmentModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    grid: &ControlGrid,
    rhos: &[f64],
    params: &SolverParams,
) -> Result<Vec<SweepRow>, FdError> {
    assert!(rhos.len() >= 3, "sweep needs at least 3 penalty weights");
    let reference = run_investment_reference(m, sg, tg)?;
    let prev = reference.row(1).to_vec();
    let target = reference.row(0);
    let mut errors = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let p = build_investment_step(m, sg, tg, grid, &prev)?;
        let mut local = params.clone();
        local.rho = rho;
        let report = solve_penalised(&p, &local.penalty_config(grid), &prev)?;
        let report = require_converged(report, 0)?;
        errors.push((rho, max_norm_gap(&report.solution, target)));
    }
    Ok(sweep_rows(&errors))
}

/// Penalty-parameter sweep for the early-exercise model against a
/// `rho = 1e8` penalty march used as reference.
pub fn rho_sweep_early_exercise(
    m: &EarlyExerciseModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    grid: &ControlGrid,
    rhos: &[f64],
    params: &SolverParams,
) -> Result<Vec<SweepRow>, FdError> {
    assert!(rhos.len() >= 3, "sweep needs at least 3 penalty weights");
    // The reference march must be solved well beyond the sweep resolution:
    // at rho = 1e8 the rho-scaled termination denominator makes the default
    // relative test nearly vacuous, so the tolerance is tightened here.
    let mut ref_params = params.clone();
    ref_params.rho = 1e8;
    ref_params.tol = params.tol.min(1e-12);
    let reference = run_early_exercise(m, sg, tg, grid, SolverKind::Penalty, &ref_params)?;
    let prev = reference.surface.row(1).to_vec();
    let target = reference.surface.row(0);
    let mut errors = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let p = build_early_exercise_step(m, sg, tg, grid, &prev)?;
        let mut local = params.clone();
        local.rho = rho;
        let report = solve_penalised_obstacle(&p, &local.obstacle_config(), &prev)?;
        let report = require_converged(report, 0)?;
        errors.push((rho, max_norm_gap(&report.solution, target)));
    }
    Ok(sweep_rows(&errors))
}

/// Gap between penalty marches at different reference controls and the
/// policy-iteration march (max norm at `t = 0`).
pub fn u0_sweep(
    m: &InvestmentModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    grid: &ControlGrid,
    u0s: &[f64],
    params: &SolverParams,
) -> Result<Vec<(f64, f64)>, FdError> {
    let policy = run_investment(m, sg, tg, grid, SolverKind::Policy, params)?;
    let target = policy.surface.row(0);
    let mut out = Vec::with_capacity(u0s.len());
    for &u0 in u0s {
        let mut local = params.clone();
        local.u0 = Some(u0);
        let run = run_investment(m, sg, tg, grid, SolverKind::Penalty, &local)?;
        out.push((u0, max_norm_gap(run.surface.row(0), target)));
    }
    Ok(out)
}

/// Iteration counts of one `M = 1` early-exercise solve per resolution:
/// penalty Newton from the payoff, unscaled policy iteration from the
/// payoff, and `delta`-scaled policy iteration from the constant 1.
#[derive(Debug, Clone, Copy)]
pub struct GuessStudyRow {
    pub n: usize,
    pub penalty_newton: usize,
    pub policy_unscaled: usize,
    pub policy_scaled: usize,
}

pub fn guess_study(
    m: &EarlyExerciseModel,
    grid: &ControlGrid,
    ns: &[usize],
    params: &SolverParams,
    scaled_delta: f64,
) -> Result<Vec<GuessStudyRow>, FdError> {
    let tg = TimeGrid::new(1.0, 1);
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let sg = m.spatial_grid(n);
        let payoff = m.payoff_vector(&sg);
        let p = build_early_exercise_step(m, &sg, &tg, grid, &payoff)?;

        let pen = solve_penalised_obstacle(&p, &params.obstacle_config(), &payoff)?;
        let pen = require_converged(pen, 0)?;

        let unscaled = policy_iteration_obstacle(&p, &params.obstacle_config(), &payoff)?;
        let unscaled = require_converged(unscaled, 0)?;

        let mut scaled_cfg = params.obstacle_config();
        scaled_cfg.delta = scaled_delta;
        let ones = vec![1.0; sg.nodes()];
        let scaled = policy_iteration_obstacle(&p, &scaled_cfg, &ones)?;
        let scaled = require_converged(scaled, 0)?;

        rows.push(GuessStudyRow {
            n,
            penalty_newton: pen.iterations,
            policy_unscaled: unscaled.iterations,
            policy_scaled: scaled.iterations,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlInterval;

    #[test]
    fn loglog_slope_recovers_first_order() {
        let rows = sweep_rows(&[(10.0, 1e-1), (100.0, 1e-2), (1000.0, 1e-3)]);
        assert!((loglog_slope(&rows) - 1.0).abs() < 1e-12);
        assert!(rows[0].rate.is_none());
        assert!((rows[1].rate.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_investment_march_agrees_across_solvers() {
        // Coarse sanity run; the paper-scale agreement bound lives in the
        // acceptance suite. The gap is the penalty error, which scales with
        // the solution, so it is measured relative to the solution norm.
        let m = InvestmentModel::paper();
        let sg = m.spatial_grid(10);
        let tg = TimeGrid::new(1.0, 10);
        let grid = ControlGrid::uniform(m.control_interval(), 41).unwrap();
        let params = SolverParams::default();
        let pen = run_investment(&m, &sg, &tg, &grid, SolverKind::Penalty, &params).unwrap();
        let pol = run_investment(&m, &sg, &tg, &grid, SolverKind::Policy, &params).unwrap();
        let gap = max_norm_gap(pen.surface.row(0), pol.surface.row(0));
        let scale = pol.surface.row(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(gap / scale < 2e-2, "relative gap {}", gap / scale);
    }

    #[test]
    fn tiny_early_exercise_march_agrees_across_solvers() {
        let m = EarlyExerciseModel::paper();
        let sg = m.spatial_grid(10);
        let tg = TimeGrid::new(1.0, 10);
        let grid =
            ControlGrid::uniform(ControlInterval::new(-1.0, 0.0).unwrap(), 21).unwrap();
        let params = SolverParams::default();
        let pen = run_early_exercise(&m, &sg, &tg, &grid, SolverKind::Penalty, &params).unwrap();
        let pol = run_early_exercise(&m, &sg, &tg, &grid, SolverKind::Policy, &params).unwrap();
        let gap = max_norm_gap(pen.surface.row(0), pol.surface.row(0));
        assert!(gap < 1e-4, "gap {gap}");
        // The solution dominates the payoff up to the penalty defect.
        let payoff = m.payoff_vector(&sg);
        let worst = pen
            .surface
            .row(0)
            .iter()
            .zip(&payoff)
            .map(|(z, p)| z - p)
            .fold(f64::INFINITY, f64::min);
        assert!(worst > -1e-4, "payoff domination violated by {worst}");
    }
}
