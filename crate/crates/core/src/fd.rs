//! Monotone finite-difference builders for the two incomplete-market
//! examples.
//!
//! Both models are marched backwards in time with a fully implicit scheme:
//! one-sided differences for first derivatives (switched by the sign of the
//! drift coefficient so off-diagonals stay nonpositive), central differences
//! for second derivatives. Each time step yields a controlled family
//! `u -> (A_u, b_u)` with `A_u = (1/k) I + L_h(u)` and `b_u` carrying the
//! previous time level, certified on the whole control grid.
//!
//! The investment model additionally has a linear reference equation whose
//! solution, raised to a model-dependent power, reproduces the HJB value
//! function; the early-exercise model has an explicit-stepping baseline.

use std::time::Instant;

use thiserror::Error;

use crate::control::{ControlGrid, ControlInterval, ControlledFamily};
use crate::hjb::{HJBProblem, SolverError};
use crate::matrix::{KonMatrix, MatrixError, SparseRow};
use crate::obstacle::ObstacleProblem;
use crate::report::SolveReport;

#[derive(Debug, Error)]
pub enum FdError {
    #[error("time step 1/k = {inv_k} does not strictly dominate the reaction bound {c_max}; refine the time grid")]
    TimeStepTooLarge { inv_k: f64, c_max: f64 },
    #[error("reference surface value {value} is not positive; cannot transform")]
    NonpositiveReference { value: f64 },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("solver did not converge at time step {step}")]
    NotConverged { step: usize },
    #[error("time step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<FdError>,
    },
}

/// Uniform spatial grid with `n` cells, hence `n + 1` nodes.
#[derive(Debug, Clone, Copy)]
pub struct SpatialGrid {
    pub y_min: f64,
    pub y_max: f64,
    pub n: usize,
}

impl SpatialGrid {
    pub fn new(y_min: f64, y_max: f64, n: usize) -> Self {
        assert!(n >= 2 && y_max > y_min, "degenerate spatial grid");
        SpatialGrid { y_min, y_max, n }
    }

    pub fn h(&self) -> f64 {
        (self.y_max - self.y_min) / self.n as f64
    }

    pub fn nodes(&self) -> usize {
        self.n + 1
    }

    pub fn point(&self, i: usize) -> f64 {
        if i == self.n {
            self.y_max
        } else {
            self.y_min + i as f64 * self.h()
        }
    }
}

/// Uniform time grid on `[0, horizon]` with `steps` implicit steps.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Self {
        assert!(steps >= 1 && horizon > 0.0, "degenerate time grid");
        TimeGrid { horizon, steps }
    }

    pub fn k(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

type Coeff = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Optimal-investment model with stochastic volatility. The value function
/// factorises as `x^gamma / gamma * phi(y, t)` and `phi` solves a max-form
/// HJB equation over the investment fraction `u` in `[-l, l]`.
pub struct InvestmentModel {
    pub r: f64,
    pub mu: f64,
    pub rho_corr: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub control_bound: f64,
    pub a: Coeff,
    pub b: Coeff,
    pub sigma: Coeff,
}

impl InvestmentModel {
    /// Parameters and coefficient functions of the reference experiment:
    /// the volatility factor stays in `[kappa, 1]` because `a` vanishes at
    /// both ends while the drift points inwards.
    pub fn paper() -> Self {
        let kappa = 0.1;
        InvestmentModel {
            r: 0.3,
            mu: 0.7,
            rho_corr: -0.2,
            gamma: 0.5,
            kappa,
            control_bound: 150.0,
            a: Box::new(move |y| {
                -2.5 * (y - 0.5 - 0.5 * kappa).powi(2) + 2.5 * (0.5 - 0.5 * kappa).powi(2)
            }),
            b: Box::new(|y| -y + 0.55),
            sigma: Box::new(|y| y),
        }
    }

    pub fn control_interval(&self) -> ControlInterval {
        ControlInterval::new(-self.control_bound, self.control_bound).unwrap()
    }

    /// The state space of the reference experiment: `[kappa, 1]`.
    pub fn spatial_grid(&self, n: usize) -> SpatialGrid {
        SpatialGrid::new(self.kappa, 1.0, n)
    }

    /// Exponent turning the linear reference solution into the HJB value:
    /// `(1 - gamma) / (1 - gamma + rho^2 gamma)`.
    pub fn reference_exponent(&self) -> f64 {
        (1.0 - self.gamma) / (1.0 - self.gamma + self.rho_corr * self.rho_corr * self.gamma)
    }
}

/// Early-exercise indifference-pricing model (American put, strike 1, on a
/// non-traded asset). Max-form HJB with the obstacle `psi >= payoff`.
pub struct EarlyExerciseModel {
    pub mu_over_sigma: f64,
    pub rho_corr: f64,
    pub gamma: f64,
    pub a: Coeff,
    pub b: Coeff,
}

impl EarlyExerciseModel {
    pub fn paper() -> Self {
        EarlyExerciseModel {
            mu_over_sigma: 1.0,
            rho_corr: 0.1,
            gamma: 1.0,
            a: Box::new(|y| y),
            b: Box::new(|y| 0.3 * y),
        }
    }

    pub fn payoff(y: f64) -> f64 {
        (1.0 - y).max(0.0)
    }

    pub fn control_interval(&self) -> ControlInterval {
        ControlInterval::new(-1.0, 0.0).unwrap()
    }

    /// The state space of the reference experiment: `[0, 5]`.
    pub fn spatial_grid(&self, n: usize) -> SpatialGrid {
        SpatialGrid::new(0.0, 5.0, n)
    }

    pub fn payoff_vector(&self, sg: &SpatialGrid) -> Vec<f64> {
        (0..sg.nodes()).map(|i| Self::payoff(sg.point(i))).collect()
    }
}

/// Stencil of one matrix row plus its rhs entry; `sub`/`sup` are ignored on
/// boundary rows that do not have the corresponding neighbour.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    sub: f64,
    diag: f64,
    sup: f64,
    rhs: f64,
}

fn stencil_row(i: usize, nodes: usize, s: Stencil) -> (SparseRow, f64) {
    let row = if i == 0 {
        SparseRow::new(0, vec![s.diag, s.sup])
    } else if i + 1 == nodes {
        SparseRow::new(i - 1, vec![s.sub, s.diag])
    } else {
        SparseRow::new(i - 1, vec![s.sub, s.diag, s.sup])
    };
    (row, s.rhs)
}

fn stencil_residual(i: usize, nodes: usize, s: Stencil, x: &[f64]) -> f64 {
    let mut v = s.diag * x[i] - s.rhs;
    if i > 0 {
        v += s.sub * x[i - 1];
    }
    if i + 1 < nodes {
        v += s.sup * x[i + 1];
    }
    v
}

/// One implicit time step of the investment HJB equation, negated and
/// scaled into min-form: `A_u = (1/k) I + L_h(u)` where `L_h(u)` upwinds
/// `-0.5 a^2 d_yy - beta(y,u) d_y - c(y,u)` with
/// `beta = b + gamma rho sigma a u` and
/// `c = gamma r + gamma (0.5 (gamma - 1) sigma^2 u^2 + (mu - r) u)`.
pub struct InvestmentStepFamily {
    nodes: usize,
    h: f64,
    inv_k: f64,
    gamma: f64,
    r: f64,
    mu: f64,
    rho_corr: f64,
    /// Per node: (a, b, sigma); `a` is pinned to zero on the boundary rows.
    coeffs: Vec<(f64, f64, f64)>,
    b_rhs: Vec<f64>,
}

impl InvestmentStepFamily {
    fn stencil(&self, i: usize, u: f64) -> Stencil {
        let (a, b, sigma) = self.coeffs[i];
        let h = self.h;
        let beta = b + self.gamma * self.rho_corr * sigma * a * u;
        let c = self.gamma * self.r
            + self.gamma * (0.5 * (self.gamma - 1.0) * sigma * sigma * u * u + (self.mu - self.r) * u);
        let d = 0.5 * a * a;
        let h2 = h * h;
        let mut sub = -d / h2;
        let mut sup = -d / h2;
        let mut diag = self.inv_k + 2.0 * d / h2 - c;
        // Upwind the convection term -beta d_y: forward difference for
        // beta >= 0, backward otherwise. A boundary row whose drift points
        // outward drops its convection term (only reachable when the model
        // violates the outgoing-characteristics assumption; `a` is already
        // zero there, so certification is preserved).
        if beta >= 0.0 {
            if i + 1 < self.nodes {
                diag += beta / h;
                sup -= beta / h;
            }
        } else if i > 0 {
            diag += -beta / h;
            sub += beta / h;
        }
        Stencil {
            sub,
            diag,
            sup,
            rhs: self.b_rhs[i],
        }
    }
}

impl ControlledFamily for InvestmentStepFamily {
    fn dim(&self) -> usize {
        self.nodes
    }

    fn row(&self, i: usize, u: f64) -> (SparseRow, f64) {
        stencil_row(i, self.nodes, self.stencil(i, u))
    }

    fn row_residual(&self, i: usize, u: f64, x: &[f64]) -> f64 {
        stencil_residual(i, self.nodes, self.stencil(i, u), x)
    }

    fn rhs(&self, i: usize, _u: f64) -> f64 {
        self.b_rhs[i]
    }
}

/// Builds the controlled family for one implicit investment step. Fails
/// with [`FdError::TimeStepTooLarge`] when `1/k` does not strictly dominate
/// the reaction coefficient for some node and grid control, since strict
/// dominance (and with it the certificate of every `A_u`) would be lost.
pub fn build_investment_step(
    m: &InvestmentModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    grid: &ControlGrid,
    prev: &[f64],
) -> Result<HJBProblem<InvestmentStepFamily>, FdError> {
    let nodes = sg.nodes();
    assert_eq!(prev.len(), nodes, "previous level has wrong length");
    let inv_k = 1.0 / tg.k();
    let coeffs: Vec<(f64, f64, f64)> = (0..nodes)
        .map(|i| {
            let y = sg.point(i);
            let a = if i == 0 || i == sg.n { 0.0 } else { (m.a)(y) };
            (a, (m.b)(y), (m.sigma)(y))
        })
        .collect();
    // Certification: reaction must stay below 1/k for every node and every
    // control on the grid.
    let mut c_max = f64::NEG_INFINITY;
    for &(_, _, sigma) in &coeffs {
        for &u in grid.points() {
            let c = m.gamma * m.r
                + m.gamma * (0.5 * (m.gamma - 1.0) * sigma * sigma * u * u + (m.mu - m.r) * u);
            c_max = c_max.max(c);
        }
    }
    if inv_k <= c_max {
        return Err(FdError::TimeStepTooLarge { inv_k, c_max });
    }
    let family = InvestmentStepFamily {
        nodes,
        h: sg.h(),
        inv_k,
        gamma: m.gamma,
        r: m.r,
        mu: m.mu,
        rho_corr: m.rho_corr,
        coeffs,
        b_rhs: prev.iter().map(|p| p * inv_k).collect(),
    };
    Ok(HJBProblem::new(family, grid.clone()))
}

/// One implicit step of the linear reference equation (same upwind recipe,
/// control-free coefficients). Returns the certified system.
pub fn build_reference_step(
    m: &InvestmentModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    prev: &[f64],
) -> Result<(KonMatrix, Vec<f64>), FdError> {
    let nodes = sg.nodes();
    assert_eq!(prev.len(), nodes);
    let inv_k = 1.0 / tg.k();
    let h = sg.h();
    let h2 = h * h;
    let one_m_g = 1.0 - m.gamma;
    let react_scale = m.gamma * (1.0 - m.gamma + m.rho_corr * m.rho_corr * m.gamma) / one_m_g;
    let excess = (m.mu - m.r) * (m.mu - m.r);

    let mut sub = vec![0.0; nodes - 1];
    let mut diag = vec![0.0; nodes];
    let mut sup = vec![0.0; nodes - 1];
    let mut c_max = f64::NEG_INFINITY;
    for i in 0..nodes {
        let y = sg.point(i);
        let a = if i == 0 || i == sg.n { 0.0 } else { (m.a)(y) };
        let sigma = (m.sigma)(y);
        let drift = (m.b)(y) + m.rho_corr * m.gamma * (m.mu - m.r) * a / (one_m_g * sigma);
        let c = react_scale * (m.r + excess / (2.0 * sigma * sigma * one_m_g));
        c_max = c_max.max(c);
        let d = 0.5 * a * a;
        diag[i] = inv_k + 2.0 * d / h2 - c;
        if i > 0 {
            sub[i - 1] = -d / h2;
        }
        if i + 1 < nodes {
            sup[i] = -d / h2;
        }
        if drift >= 0.0 {
            if i + 1 < nodes {
                diag[i] += drift / h;
                sup[i] -= drift / h;
            }
        } else if i > 0 {
            diag[i] += -drift / h;
            sub[i - 1] += drift / h;
        }
    }
    if inv_k <= c_max {
        return Err(FdError::TimeStepTooLarge { inv_k, c_max });
    }
    let mat = KonMatrix::tridiagonal(sub, diag, sup)?;
    let rhs = prev.iter().map(|p| p * inv_k).collect();
    Ok((mat, rhs))
}

/// One implicit time step of the early-exercise equation in max-form:
/// `A_u = (1/k) I` plus the upwind discretisation of
/// `-0.5 a^2 d_yy + beta~(y,u) d_y` with
/// `beta~ = -(b - rho (mu/sigma) a) + gamma (1 - rho^2) a^2 u`, and
/// `b_u = prev / k + 0.5 gamma (1 - rho^2) a^2 u^2`. The boundary rows pin
/// the put values 1 and 0.
pub struct EarlyExerciseStepFamily {
    nodes: usize,
    h: f64,
    inv_k: f64,
    q: f64,
    /// Per node: (a, linear drift `b - rho (mu/sigma) a`).
    coeffs: Vec<(f64, f64)>,
    prev_over_k: Vec<f64>,
}

impl EarlyExerciseStepFamily {
    fn stencil(&self, i: usize, u: f64) -> Stencil {
        if i == 0 {
            return Stencil {
                sub: 0.0,
                diag: 1.0,
                sup: 0.0,
                rhs: 1.0,
            };
        }
        if i + 1 == self.nodes {
            return Stencil {
                sub: 0.0,
                diag: 1.0,
                sup: 0.0,
                rhs: 0.0,
            };
        }
        let (a, lin_drift) = self.coeffs[i];
        let h = self.h;
        let h2 = h * h;
        let aa = a * a;
        let beta = -lin_drift + self.q * aa * u;
        let d = 0.5 * aa;
        let mut sub = -d / h2;
        let mut sup = -d / h2;
        let mut diag = self.inv_k + 2.0 * d / h2;
        // Convection +beta d_y: backward difference for beta >= 0, forward
        // otherwise.
        if beta >= 0.0 {
            diag += beta / h;
            sub -= beta / h;
        } else {
            diag += -beta / h;
            sup += beta / h;
        }
        Stencil {
            sub,
            diag,
            sup,
            rhs: self.prev_over_k[i] + 0.5 * self.q * aa * u * u,
        }
    }
}

impl ControlledFamily for EarlyExerciseStepFamily {
    fn dim(&self) -> usize {
        self.nodes
    }

    fn row(&self, i: usize, u: f64) -> (SparseRow, f64) {
        stencil_row(i, self.nodes, self.stencil(i, u))
    }

    fn row_residual(&self, i: usize, u: f64, x: &[f64]) -> f64 {
        stencil_residual(i, self.nodes, self.stencil(i, u), x)
    }

    fn rhs(&self, i: usize, u: f64) -> f64 {
        self.stencil(i, u).rhs
    }
}

/// Builds the obstacle problem for one implicit early-exercise step:
/// max-form family plus the obstacle `z >= payoff` (identity obstacle
/// matrix). The boundary obstacle rows are satisfied by construction.
pub fn build_early_exercise_step(
    m: &EarlyExerciseModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    grid: &ControlGrid,
    prev: &[f64],
) -> Result<ObstacleProblem<EarlyExerciseStepFamily>, FdError> {
    let nodes = sg.nodes();
    assert_eq!(prev.len(), nodes);
    let inv_k = 1.0 / tg.k();
    // No reaction term: strict dominance holds for every k > 0.
    let family = EarlyExerciseStepFamily {
        nodes,
        h: sg.h(),
        inv_k,
        q: m.gamma * (1.0 - m.rho_corr * m.rho_corr),
        coeffs: (0..nodes)
            .map(|i| {
                let y = sg.point(i);
                let a = (m.a)(y);
                (a, (m.b)(y) - m.rho_corr * m.mu_over_sigma * a)
            })
            .collect(),
        prev_over_k: prev.iter().map(|p| p * inv_k).collect(),
    };
    let payoff = m.payoff_vector(sg);
    Ok(ObstacleProblem::new(
        HJBProblem::new(family, grid.clone()),
        KonMatrix::identity(nodes),
        payoff,
    ))
}

/// One forward-Euler step of the early-exercise equation followed by the
/// obstacle projection. Central second difference, upwind first difference
/// for the linear drift, forward difference for the gradient inside the
/// squared nonlinearity (the same side the implicit family upwinds to;
/// with a decreasing solution this also keeps the update monotone in the
/// forward neighbour). Stability is the caller's concern.
pub fn explicit_baseline_step(
    m: &EarlyExerciseModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
    prev: &[f64],
) -> Vec<f64> {
    let nodes = sg.nodes();
    assert_eq!(prev.len(), nodes);
    let h = sg.h();
    let k = tg.k();
    let q = m.gamma * (1.0 - m.rho_corr * m.rho_corr);
    let mut out = vec![0.0; nodes];
    out[0] = 1.0;
    out[nodes - 1] = 0.0;
    for i in 1..nodes - 1 {
        let y = sg.point(i);
        let a = (m.a)(y);
        let drift = (m.b)(y) - m.rho_corr * m.mu_over_sigma * a;
        let diffusion = 0.5 * a * a * (prev[i + 1] - 2.0 * prev[i] + prev[i - 1]) / (h * h);
        let convection = if drift >= 0.0 {
            drift * (prev[i + 1] - prev[i]) / h
        } else {
            drift * (prev[i] - prev[i - 1]) / h
        };
        let grad = (prev[i + 1] - prev[i]) / h;
        let value = prev[i] + k * (diffusion + convection - 0.5 * q * a * a * grad * grad);
        out[i] = value.max(EarlyExerciseModel::payoff(y));
    }
    out
}

/// Solution values on the full time-space grid; row `j` holds time level
/// `t = j k`, row `steps` is the terminal condition.
#[derive(Debug, Clone)]
pub struct SolutionSurface {
    values: Vec<Vec<f64>>,
}

impl SolutionSurface {
    pub fn with_terminal(steps: usize, terminal: Vec<f64>) -> Self {
        let nodes = terminal.len();
        let mut values = vec![vec![0.0; nodes]; steps + 1];
        values[steps] = terminal;
        SolutionSurface { values }
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.values[0].len()
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn set_row(&mut self, j: usize, row: Vec<f64>) {
        assert_eq!(row.len(), self.nodes());
        self.values[j] = row;
    }

    pub fn at(&self, j: usize, i: usize) -> f64 {
        self.values[j][i]
    }
}

/// Raises every reference value to the model exponent, recovering the HJB
/// value function from the linear solve. All values must be positive.
pub fn transform_reference(
    phi_tilde: &SolutionSurface,
    m: &InvestmentModel,
) -> Result<SolutionSurface, FdError> {
    let e = m.reference_exponent();
    let mut out = phi_tilde.clone();
    for j in 0..=out.steps() {
        let row: Result<Vec<f64>, FdError> = phi_tilde.row(j)
            .iter()
            .map(|&v| {
                if v <= 0.0 {
                    Err(FdError::NonpositiveReference { value: v })
                } else {
                    Ok(v.powf(e))
                }
            })
            .collect();
        out.set_row(j, row?);
    }
    Ok(out)
}

/// Marches backwards from the terminal row, feeding each solved level to
/// the next step as data and starting value. Failures carry the step index.
pub fn run_time_stepping(
    tg: &TimeGrid,
    terminal: Vec<f64>,
    mut step: impl FnMut(usize, &[f64]) -> Result<(Vec<f64>, SolveReport), FdError>,
) -> Result<(SolutionSurface, Vec<SolveReport>), FdError> {
    let mut surface = SolutionSurface::with_terminal(tg.steps, terminal);
    let mut reports = Vec::with_capacity(tg.steps);
    for j in (0..tg.steps).rev() {
        let prev = surface.row(j + 1).to_vec();
        let (sol, report) = step(j, &prev).map_err(|e| FdError::StepFailed {
            step: j,
            source: Box::new(e),
        })?;
        surface.set_row(j, sol);
        reports.push(report);
    }
    Ok((surface, reports))
}

/// Marches the linear reference equation; each step is a single solve.
pub fn run_reference(
    m: &InvestmentModel,
    sg: &SpatialGrid,
    tg: &TimeGrid,
) -> Result<SolutionSurface, FdError> {
    let terminal = vec![1.0; sg.nodes()];
    let (surface, _) = run_time_stepping(tg, terminal, |_, prev| {
        let start = Instant::now();
        let (mat, rhs) = build_reference_step(m, sg, tg, prev)?;
        let sol = mat.solve(&rhs).map_err(FdError::Matrix)?;
        let mut report = SolveReport::new(sol.clone());
        report.iterations = 1;
        report.converged = true;
        report.wall_time = start.elapsed().as_secs_f64();
        Ok((sol, report))
    })?;
    Ok(surface)
}
