//! Controlled matrix families and per-row control scans.
//!
//! A [`ControlledFamily`] maps a control `u` from a compact interval to a
//! certified system `(A_u, b_u)`, exposing single rows so the scans never
//! materialise full matrices. The compact interval is approximated by a
//! finite [`ControlGrid`] (piecewise-constant sampling); all argmin/argmax
//! scans break ties towards the smallest grid index, which pins down every
//! iterate of the solvers.

use thiserror::Error;

use crate::matrix::{KonMatrix, MatrixError, SparseRow};
use crate::penalty::PenaltyTerm;
use crate::scan;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("control interval requires lo <= hi, got [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("control grid must be nonempty")]
    EmptyGrid,
    #[error("control grid points must be finite and strictly increasing")]
    UnsortedGrid,
}

/// Compact control interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInterval {
    lo: f64,
    hi: f64,
}

impl ControlInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ControlError> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(ControlError::EmptyInterval { lo, hi });
        }
        Ok(ControlInterval { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, u: f64) -> bool {
        self.lo <= u && u <= self.hi
    }
}

/// Finite, strictly increasing sample of a control interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    points: Vec<f64>,
}

impl ControlGrid {
    /// Uniform grid with both endpoints included for `count >= 2`; a single
    /// point sits at the left endpoint.
    pub fn uniform(interval: ControlInterval, count: usize) -> Result<Self, ControlError> {
        if count == 0 {
            return Err(ControlError::EmptyGrid);
        }
        if count == 1 {
            return Ok(ControlGrid {
                points: vec![interval.lo()],
            });
        }
        let step = (interval.hi() - interval.lo()) / (count - 1) as f64;
        let points = (0..count)
            .map(|i| {
                if i + 1 == count {
                    interval.hi()
                } else {
                    interval.lo() + i as f64 * step
                }
            })
            .collect();
        Ok(ControlGrid { points })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self, ControlError> {
        if points.is_empty() {
            return Err(ControlError::EmptyGrid);
        }
        if points.iter().any(|p| !p.is_finite())
            || points.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(ControlError::UnsortedGrid);
        }
        Ok(ControlGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of grid points; at least 1 by construction.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn lo(&self) -> f64 {
        self.points[0]
    }

    /// Nearest grid point to `u` (ties towards the smaller index).
    pub fn snap(&self, u: f64) -> f64 {
        let mut best = self.points[0];
        let mut dist = (u - best).abs();
        for &p in &self.points[1..] {
            let d = (u - p).abs();
            if d < dist {
                dist = d;
                best = p;
            }
        }
        best
    }
}

/// Continuous map `u -> (A_u, b_u)` with every `A_u` certified on the grid
/// in use. Evaluation must be deterministic; rows are evaluated
/// independently, so implementations must be `Sync`.
pub trait ControlledFamily: Sync {
    /// System dimension `N`.
    fn dim(&self) -> usize;

    /// Row `i` of `A_u` together with entry `i` of `b_u`.
    fn row(&self, i: usize, u: f64) -> (SparseRow, f64);

    /// `(A_u x - b_u)_i`; override when the residual can be formed without
    /// materialising the row.
    fn row_residual(&self, i: usize, u: f64, x: &[f64]) -> f64 {
        let (row, b) = self.row(i, u);
        row.dot(x) - b
    }

    /// Entry `i` of `b_u`.
    fn rhs(&self, i: usize, u: f64) -> f64 {
        self.row(i, u).1
    }

    /// Assembles and certifies the full system at control `u`.
    fn system(&self, u: f64) -> Result<(KonMatrix, Vec<f64>), MatrixError> {
        let n = self.dim();
        let mut rows = Vec::with_capacity(n);
        let mut rhs = Vec::with_capacity(n);
        for i in 0..n {
            let (row, b) = self.row(i, u);
            rows.push(row);
            rhs.push(b);
        }
        let mut entries = vec![0.0; n * n];
        for (i, r) in rows.iter().enumerate() {
            for (off, &v) in r.vals.iter().enumerate() {
                entries[i * n + r.start + off] = v;
            }
        }
        Ok((KonMatrix::dense(n, entries)?, rhs))
    }
}

impl<F: ControlledFamily + ?Sized> ControlledFamily for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn row(&self, i: usize, u: f64) -> (SparseRow, f64) {
        (**self).row(i, u)
    }
    fn row_residual(&self, i: usize, u: f64, x: &[f64]) -> f64 {
        (**self).row_residual(i, u, x)
    }
    fn rhs(&self, i: usize, u: f64) -> f64 {
        (**self).rhs(i, u)
    }
}

/// Minimises `(A_u x - b_u)_i` over the grid; returns `(u*, value)` with
/// ties broken towards the smallest grid index.
pub fn row_min_residual<F: ControlledFamily>(
    fam: &F,
    grid: &ControlGrid,
    x: &[f64],
    i: usize,
) -> (f64, f64) {
    let mut best_u = grid.points()[0];
    let mut best = fam.row_residual(i, best_u, x);
    for &u in &grid.points()[1..] {
        let v = fam.row_residual(i, u, x);
        if v < best {
            best = v;
            best_u = u;
        }
    }
    (best_u, best)
}

/// Maximises `(A_u z - b_u)_i` over the grid; same tie rule.
pub fn row_max_residual<F: ControlledFamily>(
    fam: &F,
    grid: &ControlGrid,
    z: &[f64],
    i: usize,
) -> (f64, f64) {
    let mut best_u = grid.points()[0];
    let mut best = fam.row_residual(i, best_u, z);
    for &u in &grid.points()[1..] {
        let v = fam.row_residual(i, u, z);
        if v > best {
            best = v;
            best_u = u;
        }
    }
    (best_u, best)
}

/// Maximises the penalised violation `pi((b_u - A_u x)_i)` over the grid;
/// same tie rule. The returned value is the penalty value, which is positive
/// exactly when the raw violation is.
pub fn row_max_violation<F: ControlledFamily>(
    fam: &F,
    grid: &ControlGrid,
    x: &[f64],
    i: usize,
    pen: &PenaltyTerm,
) -> (f64, f64) {
    let mut best_u = grid.points()[0];
    let mut best = pen.value(-fam.row_residual(i, best_u, x));
    for &u in &grid.points()[1..] {
        let v = pen.value(-fam.row_residual(i, u, x));
        if v > best {
            best = v;
            best_u = u;
        }
    }
    (best_u, best)
}

/// Runs [`row_min_residual`] on every row (in parallel when enabled).
pub fn scan_min<F: ControlledFamily>(fam: &F, grid: &ControlGrid, x: &[f64]) -> Vec<(f64, f64)> {
    scan::map_rows(fam.dim(), |i| row_min_residual(fam, grid, x, i))
}

/// Runs [`row_max_residual`] on every row.
pub fn scan_max<F: ControlledFamily>(fam: &F, grid: &ControlGrid, z: &[f64]) -> Vec<(f64, f64)> {
    scan::map_rows(fam.dim(), |i| row_max_residual(fam, grid, z, i))
}

/// Runs [`row_max_violation`] on every row.
pub fn scan_max_violation<F: ControlledFamily>(
    fam: &F,
    grid: &ControlGrid,
    x: &[f64],
    pen: &PenaltyTerm,
) -> Vec<(f64, f64)> {
    scan::map_rows(fam.dim(), |i| row_max_violation(fam, grid, x, i, pen))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1x1 family on U = [0, 1]: A_u = [u + 2], b_u = [1].
    pub struct F1;

    impl ControlledFamily for F1 {
        fn dim(&self) -> usize {
            1
        }
        fn row(&self, _i: usize, u: f64) -> (SparseRow, f64) {
            (SparseRow::new(0, vec![u + 2.0]), 1.0)
        }
    }

    fn grid11() -> ControlGrid {
        ControlGrid::uniform(ControlInterval::new(0.0, 1.0).unwrap(), 11).unwrap()
    }

    #[test]
    fn min_residual_scans_f1() {
        let g = grid11();
        // residual(u) = (u + 2) x - 1
        let (u, v) = row_min_residual(&F1, &g, &[0.5], 0);
        assert_eq!(u, 0.0);
        assert!(v.abs() < 1e-15);
        let (u, v) = row_min_residual(&F1, &g, &[1.0], 0);
        assert_eq!(u, 0.0);
        assert!((v - 1.0).abs() < 1e-15);
        // Residual -1 for every u: tie goes to the smallest grid point.
        let (u, v) = row_min_residual(&F1, &g, &[0.0], 0);
        assert_eq!(u, 0.0);
        assert!((v + 1.0).abs() < 1e-15);
    }

    #[test]
    fn max_residual_scans_f1() {
        let g = grid11();
        let (u, v) = row_max_residual(&F1, &g, &[0.5], 0);
        assert_eq!(u, 1.0);
        assert!((v - 0.5).abs() < 1e-15);
        let (u, v) = row_max_residual(&F1, &g, &[0.0], 0);
        assert_eq!(u, 0.0);
        assert!((v + 1.0).abs() < 1e-15);
        let (u, v) = row_max_residual(&F1, &g, &[1.0 / 3.0], 0);
        assert_eq!(u, 1.0);
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn max_violation_scans_f1() {
        let g = grid11();
        let p = PenaltyTerm::Max;
        // Violation 1 for every u at x = 0: tie.
        let (u, v) = row_max_violation(&F1, &g, &[0.0], 0, &p);
        assert_eq!(u, 0.0);
        assert!((v - 1.0).abs() < 1e-15);
        let (u, v) = row_max_violation(&F1, &g, &[0.4], 0, &p);
        assert_eq!(u, 0.0);
        assert!((v - 0.2).abs() < 1e-14);
        // All violations nonpositive: penalty 0, tie again.
        let (u, v) = row_max_violation(&F1, &g, &[0.6], 0, &p);
        assert_eq!(u, 0.0);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn uniform_grid_hits_endpoints() {
        let g = ControlGrid::uniform(ControlInterval::new(-150.0, 150.0).unwrap(), 1001).unwrap();
        assert_eq!(g.len(), 1001);
        assert_eq!(g.points()[0], -150.0);
        assert_eq!(g.points()[1000], 150.0);
        assert!((g.points()[1] + 149.7).abs() < 1e-12);
    }

    #[test]
    fn grid_construction_errors() {
        assert!(matches!(
            ControlGrid::from_points(vec![]),
            Err(ControlError::EmptyGrid)
        ));
        assert!(matches!(
            ControlGrid::from_points(vec![0.0, 0.0]),
            Err(ControlError::UnsortedGrid)
        ));
        assert!(matches!(
            ControlInterval::new(1.0, 0.0),
            Err(ControlError::EmptyInterval { .. })
        ));
    }

    #[test]
    fn scans_are_deterministic() {
        let g = grid11();
        let a = scan_min(&F1, &g, &[0.25]);
        let b = scan_min(&F1, &g, &[0.25]);
        assert_eq!(a, b);
    }
}
