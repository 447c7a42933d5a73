//! Solvers for discrete Hamilton-Jacobi-Bellman equations and HJB obstacle
//! problems over compact control sets.
//!
//! The discrete HJB equation asks for `x` with
//!
//! ```text
//! min_{u in U} { A_u x - b_u } = 0,
//! ```
//!
//! where every `A_u` is a strictly diagonally dominant M-matrix and the map
//! `u -> (A_u, b_u)` is continuous on a compact interval `U`. The obstacle
//! variant couples the max-form residual with an affine obstacle:
//!
//! ```text
//! min { max_{u in U} { A_u z - b_u }, A~ z - b~ } = 0.
//! ```
//!
//! Both systems are solved by penalising the maximum constraint violation
//! with a weight `rho` and applying Newton-type iterations to the penalised
//! equations; Howard-style policy iteration is provided as a baseline. The
//! [`fd`] module builds the discrete systems for two incomplete-market
//! finance examples via monotone upwind finite differences.
//!
//! Per-row control scans run in parallel through rayon when the default
//! `parallel` feature is enabled; disabling it yields a fully sequential
//! build with bit-identical results.

pub mod control;
pub mod experiments;
pub mod fd;
pub mod hjb;
pub mod matrix;
pub mod obstacle;
pub mod penalty;
pub mod report;
pub mod scan;

pub use control::{ControlGrid, ControlInterval, ControlledFamily};
pub use hjb::{HJBProblem, PenaltyConfig};
pub use matrix::{KonCheck, KonMatrix, MatrixError, SparseRow};
pub use obstacle::{ObstacleConfig, ObstacleProblem};
pub use penalty::PenaltyTerm;
pub use report::SolveReport;
