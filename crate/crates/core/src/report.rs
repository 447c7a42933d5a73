//! Solve outcome bookkeeping shared by all iterative solvers.

/// Result of one nonlinear solve. `iterations` counts executions of the
/// linear stage, `residual_history` holds the relative termination residual
/// recorded after each of them.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Wall-clock seconds; reported, never asserted.
    pub wall_time: f64,
    pub converged: bool,
}

impl SolveReport {
    pub(crate) fn new(solution: Vec<f64>) -> Self {
        SolveReport {
            solution,
            iterations: 0,
            residual_history: Vec::new(),
            wall_time: 0.0,
            converged: false,
        }
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().copied()
    }
}

/// Max and mean of iteration counts over a sequence of reports.
pub fn iteration_stats(reports: &[SolveReport]) -> (usize, f64) {
    let max = reports.iter().map(|r| r.iterations).max().unwrap_or(0);
    let mean = if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.iterations).sum::<usize>() as f64 / reports.len() as f64
    };
    (max, mean)
}
