//! Square matrices with a certified M-matrix structure.
//!
//! A matrix is accepted when its off-diagonal entries are nonpositive and
//! every diagonal entry strictly exceeds the sum of the absolute off-diagonal
//! entries in its row. Such matrices have a nonnegative inverse, and the set
//! is closed under row mixing and addition, which is what lets the solvers
//! assemble Newton systems from certified building blocks without
//! re-checking them.
//!
//! Storage is tridiagonal for banded input (the finite-difference builders
//! only ever produce bands) with a dense fallback; linear systems are solved
//! by the Thomas algorithm or by Gaussian elimination without pivoting,
//! which is stable for strictly row-dominant matrices.

use thiserror::Error;

/// Relative residual bound enforced after every linear solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("matrix entry at row {row} is not finite")]
    NotFinite { row: usize },
    #[error("matrix is not in the certified class: row {row} fails the sign or strict dominance test")]
    NotCertified { row: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("row selection entry {index} exceeds source count {sources}")]
    SelectionOutOfRange { index: usize, sources: usize },
    #[error("linear solve residual {residual:.3e} exceeds {tol:.1e}")]
    ResidualTooLarge { residual: f64, tol: f64 },
}

/// Outcome of the certification check: rejection carries the first failing
/// row and is an ordinary value, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KonCheck {
    Certified,
    /// First row (0-based) violating the sign pattern or strict dominance.
    Rejected { row: usize },
}

impl KonCheck {
    pub fn is_certified(&self) -> bool {
        matches!(self, KonCheck::Certified)
    }
}

/// Checks the sign pattern and strict row dominance of a dense row-major
/// `n x n` matrix. Non-finite entries are a fault.
pub fn check_kon(n: usize, entries: &[f64]) -> Result<KonCheck, MatrixError> {
    assert_eq!(entries.len(), n * n, "entries must be n*n");
    for i in 0..n {
        let row = &entries[i * n..(i + 1) * n];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(MatrixError::NotFinite { row: i });
        }
        let mut off = 0.0;
        for (j, &v) in row.iter().enumerate() {
            if j != i {
                if v > 0.0 {
                    return Ok(KonCheck::Rejected { row: i });
                }
                off += v.abs();
            }
        }
        if !(row[i] > off) {
            return Ok(KonCheck::Rejected { row: i });
        }
    }
    Ok(KonCheck::Certified)
}

/// One matrix row as a contiguous segment starting at column `start`.
///
/// Every row produced in this crate contains its diagonal entry, so sums of
/// rows with a common diagonal stay contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub start: usize,
    pub vals: Vec<f64>,
}

impl SparseRow {
    pub fn new(start: usize, vals: Vec<f64>) -> Self {
        SparseRow { start, vals }
    }

    pub fn end(&self) -> usize {
        self.start + self.vals.len()
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (off, v) in self.vals.iter().enumerate() {
            acc += v * x[self.start + off];
        }
        acc
    }

    /// Returns `self + c * other`. Both segments must overlap or touch,
    /// which holds whenever they share the diagonal column.
    pub fn add_scaled(&self, c: f64, other: &SparseRow) -> SparseRow {
        let start = self.start.min(other.start);
        let end = self.end().max(other.end());
        assert!(
            self.start <= other.end() && other.start <= self.end(),
            "row segments must overlap"
        );
        let mut vals = vec![0.0; end - start];
        for (off, v) in self.vals.iter().enumerate() {
            vals[self.start - start + off] += v;
        }
        for (off, v) in other.vals.iter().enumerate() {
            vals[other.start - start + off] += c * v;
        }
        SparseRow { start, vals }
    }

    pub fn scaled(&self, c: f64) -> SparseRow {
        SparseRow {
            start: self.start,
            vals: self.vals.iter().map(|v| c * v).collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    /// `sub[i-1] = A[i][i-1]`, `diag[i] = A[i][i]`, `sup[i] = A[i][i+1]`.
    Tridiagonal {
        sub: Vec<f64>,
        diag: Vec<f64>,
        sup: Vec<f64>,
    },
    Dense { n: usize, entries: Vec<f64> },
}

/// A certified square matrix: nonpositive off-diagonals and strict row
/// dominance, hence positive diagonal and a nonnegative inverse.
#[derive(Debug, Clone)]
pub struct KonMatrix {
    storage: Storage,
}

impl KonMatrix {
    /// Certifies a dense row-major matrix. Banded input is stored in
    /// tridiagonal form automatically.
    pub fn dense(n: usize, entries: Vec<f64>) -> Result<Self, MatrixError> {
        match check_kon(n, &entries)? {
            KonCheck::Certified => {}
            KonCheck::Rejected { row } => return Err(MatrixError::NotCertified { row }),
        }
        let banded = (0..n).all(|i| {
            entries[i * n..(i + 1) * n]
                .iter()
                .enumerate()
                .all(|(j, &v)| v == 0.0 || j + 1 >= i && j <= i + 1)
        });
        if banded && n > 1 {
            let sub = (1..n).map(|i| entries[i * n + i - 1]).collect();
            let diag = (0..n).map(|i| entries[i * n + i]).collect();
            let sup = (0..n - 1).map(|i| entries[i * n + i + 1]).collect();
            Ok(KonMatrix {
                storage: Storage::Tridiagonal { sub, diag, sup },
            })
        } else {
            Ok(KonMatrix {
                storage: Storage::Dense { n, entries },
            })
        }
    }

    /// Certifies a tridiagonal matrix given by its three diagonals.
    pub fn tridiagonal(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Result<Self, MatrixError> {
        let n = diag.len();
        assert!(n >= 1, "empty matrix");
        assert_eq!(sub.len(), n - 1);
        assert_eq!(sup.len(), n - 1);
        for i in 0..n {
            let lo = if i > 0 { sub[i - 1] } else { 0.0 };
            let hi = if i + 1 < n { sup[i] } else { 0.0 };
            if !lo.is_finite() || !hi.is_finite() || !diag[i].is_finite() {
                return Err(MatrixError::NotFinite { row: i });
            }
            if lo > 0.0 || hi > 0.0 || !(diag[i] > lo.abs() + hi.abs()) {
                return Err(MatrixError::NotCertified { row: i });
            }
        }
        Ok(KonMatrix {
            storage: Storage::Tridiagonal { sub, diag, sup },
        })
    }

    pub fn identity(n: usize) -> Self {
        KonMatrix {
            storage: Storage::Tridiagonal {
                sub: vec![0.0; n - 1],
                diag: vec![1.0; n],
                sup: vec![0.0; n - 1],
            },
        }
    }

    /// Assembles a matrix from per-row segments that are already known to be
    /// certified by the closure properties (row mixing, sums with
    /// nonnegative weights of certified rows). No re-check in release
    /// builds.
    pub(crate) fn from_certified_rows(n: usize, rows: Vec<SparseRow>) -> Self {
        debug_assert_eq!(rows.len(), n);
        let banded = n > 1
            && rows
                .iter()
                .enumerate()
                .all(|(i, r)| r.start + 1 >= i && r.end() <= i + 2);
        let m = if banded {
            let mut sub = vec![0.0; n - 1];
            let mut diag = vec![0.0; n];
            let mut sup = vec![0.0; n - 1];
            for (i, r) in rows.iter().enumerate() {
                for (off, &v) in r.vals.iter().enumerate() {
                    let j = r.start + off;
                    if j + 1 == i {
                        sub[i - 1] = v;
                    } else if j == i {
                        diag[i] = v;
                    } else {
                        sup[i] = v;
                    }
                }
            }
            KonMatrix {
                storage: Storage::Tridiagonal { sub, diag, sup },
            }
        } else {
            let mut entries = vec![0.0; n * n];
            for (i, r) in rows.iter().enumerate() {
                for (off, &v) in r.vals.iter().enumerate() {
                    entries[i * n + r.start + off] = v;
                }
            }
            KonMatrix {
                storage: Storage::Dense { n, entries },
            }
        };
        debug_assert!(
            check_kon(m.n(), &m.to_dense()).map(|c| c.is_certified()).unwrap_or(false),
            "closure-assembled matrix failed certification"
        );
        m
    }

    pub fn n(&self) -> usize {
        match &self.storage {
            Storage::Tridiagonal { diag, .. } => diag.len(),
            Storage::Dense { n, .. } => *n,
        }
    }

    pub fn is_tridiagonal(&self) -> bool {
        matches!(self.storage, Storage::Tridiagonal { .. })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        match &self.storage {
            Storage::Tridiagonal { sub, diag, sup } => {
                if c + 1 == r {
                    sub[r - 1]
                } else if c == r {
                    diag[r]
                } else if c == r + 1 {
                    sup[r]
                } else {
                    0.0
                }
            }
            Storage::Dense { n, entries } => entries[r * n + c],
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        match &self.storage {
            Storage::Dense { entries, .. } => entries.clone(),
            Storage::Tridiagonal { sub, diag, sup } => {
                let mut e = vec![0.0; n * n];
                for i in 0..n {
                    e[i * n + i] = diag[i];
                    if i > 0 {
                        e[i * n + i - 1] = sub[i - 1];
                    }
                    if i + 1 < n {
                        e[i * n + i + 1] = sup[i];
                    }
                }
                e
            }
        }
    }

    pub fn sparse_row(&self, i: usize) -> SparseRow {
        let n = self.n();
        match &self.storage {
            Storage::Tridiagonal { sub, diag, sup } => {
                let start = i.saturating_sub(1);
                let mut vals = Vec::with_capacity(3);
                if i > 0 {
                    vals.push(sub[i - 1]);
                }
                vals.push(diag[i]);
                if i + 1 < n {
                    vals.push(sup[i]);
                }
                SparseRow { start, vals }
            }
            Storage::Dense { n, entries } => {
                SparseRow::new(0, entries[i * n..(i + 1) * n].to_vec())
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n();
        assert_eq!(x.len(), n);
        match &self.storage {
            Storage::Tridiagonal { sub, diag, sup } => (0..n)
                .map(|i| {
                    let mut v = diag[i] * x[i];
                    if i > 0 {
                        v += sub[i - 1] * x[i - 1];
                    }
                    if i + 1 < n {
                        v += sup[i] * x[i + 1];
                    }
                    v
                })
                .collect(),
            Storage::Dense { n, entries } => (0..*n)
                .map(|i| {
                    entries[i * n..(i + 1) * n]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect(),
        }
    }

    /// Copies row `i` of `sources[sel[i]]` into row `i` of the result. The
    /// output is certified without re-checking: the class is closed under
    /// row mixing.
    pub fn compose_rows(sources: &[&KonMatrix], sel: &[usize]) -> Result<Self, MatrixError> {
        assert!(!sources.is_empty(), "no sources");
        let n = sources[0].n();
        for s in sources {
            if s.n() != n {
                return Err(MatrixError::DimensionMismatch {
                    expected: n,
                    got: s.n(),
                });
            }
        }
        if sel.len() != n {
            return Err(MatrixError::DimensionMismatch {
                expected: n,
                got: sel.len(),
            });
        }
        if let Some(&bad) = sel.iter().find(|&&s| s >= sources.len()) {
            return Err(MatrixError::SelectionOutOfRange {
                index: bad,
                sources: sources.len(),
            });
        }
        let rows = (0..n).map(|i| sources[sel[i]].sparse_row(i)).collect();
        Ok(KonMatrix::from_certified_rows(n, rows))
    }

    /// Solves `A x = b`, enforcing a relative residual of at most
    /// [`SOLVE_RESIDUAL_TOL`]. Strict dominance makes both the Thomas sweep
    /// and unpivoted elimination stable, and for `b >= 0` the solution is
    /// nonnegative (all intermediate quantities keep their sign).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, MatrixError> {
        let n = self.n();
        assert_eq!(b.len(), n);
        let x = match &self.storage {
            Storage::Tridiagonal { sub, diag, sup } => thomas(sub, diag, sup, b),
            Storage::Dense { n, entries } => gauss_no_pivot(*n, entries, b),
        };
        let ax = self.mul_vec(&x);
        let num = ax
            .iter()
            .zip(b)
            .map(|(a, bi)| (a - bi).abs())
            .fold(0.0, f64::max);
        let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        let rel = num / den;
        if rel > SOLVE_RESIDUAL_TOL {
            return Err(MatrixError::ResidualTooLarge {
                residual: rel,
                tol: SOLVE_RESIDUAL_TOL,
            });
        }
        Ok(x)
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { sup[0] / diag[0] } else { 0.0 };
    d[0] = b[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = sup[i] / m;
        }
        d[i] = (b[i] - sub[i - 1] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

fn gauss_no_pivot(n: usize, entries: &[f64], b: &[f64]) -> Vec<f64> {
    let mut a = entries.to_vec();
    let mut x = b.to_vec();
    for k in 0..n {
        let piv = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            if f == 0.0 {
                continue;
            }
            for j in k + 1..n {
                a[i * n + j] -= f * a[k * n + j];
            }
            a[i * n + k] = 0.0;
            x[i] -= f * x[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= a[i * n + j] * x[j];
        }
        x[i] = s / a[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_accepts_dominant_and_identity() {
        let c = check_kon(2, &[2.0, -1.0, -0.5, 1.0]).unwrap();
        assert!(c.is_certified());
        let id = check_kon(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(id.is_certified());
    }

    #[test]
    fn check_rejects_weak_dominance_at_first_row() {
        // 1 > |-1| fails, so the first row is reported.
        let c = check_kon(2, &[1.0, -1.0, 0.0, 1.0]).unwrap();
        assert_eq!(c, KonCheck::Rejected { row: 0 });
    }

    #[test]
    fn check_rejects_positive_offdiagonal() {
        let c = check_kon(2, &[2.0, 0.5, 0.0, 1.0]).unwrap();
        assert_eq!(c, KonCheck::Rejected { row: 0 });
    }

    #[test]
    fn check_faults_on_nan() {
        let r = check_kon(2, &[2.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(r, Err(MatrixError::NotFinite { row: 0 })));
    }

    #[test]
    fn compose_copies_selected_rows() {
        let a = KonMatrix::dense(2, vec![2.0, -1.0, -1.0, 2.0]).unwrap();
        let b = KonMatrix::dense(2, vec![3.0, 0.0, 0.0, 3.0]).unwrap();
        let m = KonMatrix::compose_rows(&[&a, &b], &[0, 1]).unwrap();
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.get(1, 1), 3.0);

        let same = KonMatrix::compose_rows(&[&a, &b], &[0, 0]).unwrap();
        assert_eq!(same.to_dense(), a.to_dense());
    }

    #[test]
    fn compose_rejects_bad_selection() {
        let a = KonMatrix::identity(2);
        let r = KonMatrix::compose_rows(&[&a], &[0, 3]);
        assert!(matches!(r, Err(MatrixError::SelectionOutOfRange { .. })));
    }

    #[test]
    fn solve_identity_and_upper_triangular() {
        let id = KonMatrix::identity(2);
        assert_eq!(id.solve(&[7.0, -3.0]).unwrap(), vec![7.0, -3.0]);

        // Back-substitution by hand: x2 = 1, 2 x1 - 1 = 1 => x1 = 1.
        let a = KonMatrix::dense(2, vec![2.0, -1.0, 0.0, 1.0]).unwrap();
        let x = a.solve(&[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dense_constructor_detects_band() {
        let a = KonMatrix::dense(3, vec![2.0, -1.0, 0.0, -1.0, 3.0, -1.0, 0.0, -1.0, 2.0]).unwrap();
        assert!(a.is_tridiagonal());
        let full = KonMatrix::dense(
            3,
            vec![3.0, -1.0, -1.0, -1.0, 3.0, -1.0, -1.0, -1.0, 3.0],
        )
        .unwrap();
        assert!(!full.is_tridiagonal());
    }

    #[test]
    fn sum_of_certified_matrices_passes_check() {
        let a = KonMatrix::dense(2, vec![2.0, -1.0, -0.5, 1.0]).unwrap();
        let b = KonMatrix::dense(2, vec![3.0, 0.0, -1.0, 4.0]).unwrap();
        let sum: Vec<f64> = a
            .to_dense()
            .iter()
            .zip(b.to_dense())
            .map(|(x, y)| x + y)
            .collect();
        assert!(check_kon(2, &sum).unwrap().is_certified());
    }

    #[test]
    fn sparse_row_add_scaled_merges_segments() {
        let r1 = SparseRow::new(1, vec![2.0, -1.0]);
        let r2 = SparseRow::new(0, vec![-0.5, 1.0]);
        let r = r1.add_scaled(2.0, &r2);
        assert_eq!(r.start, 0);
        assert_eq!(r.vals, vec![-1.0, 4.0, -1.0]);
    }
}
