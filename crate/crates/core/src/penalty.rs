//! Componentwise penalty terms.
//!
//! A penalty term vanishes on nonpositive arguments, is positive on positive
//! arguments, and is nondecreasing. Two variants are provided: the exact
//! `max{y, 0}` and a C^1 quadratic-spline smoothing with kink width
//! `epsilon`. Where the derivative of the max penalty is undefined (at 0)
//! the left limit 0 is used, so Newton rows drop out exactly when a
//! constraint is inactive.

/// Componentwise penalty `pi(y)` applied to constraint violations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyTerm {
    /// `pi(y) = max{y, 0}`.
    Max,
    /// C^1 smoothing: `y^2 / (2 eps)` on `(0, eps]`, `y - eps/2` beyond.
    Smoothed { epsilon: f64 },
}

impl PenaltyTerm {
    pub fn smoothed(epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "smoothing width must be positive");
        PenaltyTerm::Smoothed { epsilon }
    }

    pub fn value(&self, y: f64) -> f64 {
        match *self {
            PenaltyTerm::Max => y.max(0.0),
            PenaltyTerm::Smoothed { epsilon } => {
                if y <= 0.0 {
                    0.0
                } else if y <= epsilon {
                    y * y / (2.0 * epsilon)
                } else {
                    y - epsilon / 2.0
                }
            }
        }
    }

    pub fn derivative(&self, y: f64) -> f64 {
        match *self {
            PenaltyTerm::Max => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            PenaltyTerm::Smoothed { epsilon } => {
                if y <= 0.0 {
                    0.0
                } else if y <= epsilon {
                    y / epsilon
                } else {
                    1.0
                }
            }
        }
    }

    /// Lower bound of the derivative on `[epsilon, inf)`; equals 1 for both
    /// variants. Note the smoothed derivative drops below this bound on
    /// `(0, epsilon)`, which is why the O(1/rho) rate statements are tied to
    /// the max penalty.
    pub fn derivative_lower_bound(&self) -> f64 {
        1.0
    }

    pub fn is_smooth(&self) -> bool {
        matches!(self, PenaltyTerm::Smoothed { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_penalty_values() {
        let p = PenaltyTerm::Max;
        assert_eq!(p.value(-1.0), 0.0);
        assert_eq!(p.value(0.3), 0.3);
        assert_eq!(p.value(0.0), 0.0);
    }

    #[test]
    fn smoothed_penalty_values() {
        let p = PenaltyTerm::smoothed(0.1);
        assert_eq!(p.value(-2.0), 0.0);
        assert!((p.value(0.05) - 0.0125).abs() < 1e-15);
        assert!((p.value(0.2) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn derivative_convention_at_zero() {
        // Left-limit convention: the max penalty gets derivative 0 at 0.
        assert_eq!(PenaltyTerm::Max.derivative(0.0), 0.0);
        assert_eq!(PenaltyTerm::Max.derivative(2.0), 1.0);
        let p = PenaltyTerm::smoothed(0.1);
        assert_eq!(p.derivative(0.0), 0.0);
        assert_eq!(p.derivative(0.1), 1.0);
        assert!((p.derivative(0.05) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn smoothing_error_bounded_by_epsilon() {
        let eps = 1e-3;
        let p = PenaltyTerm::smoothed(eps);
        let mut worst: f64 = 0.0;
        for k in -2000..=2000 {
            let y = k as f64 * 1e-5;
            worst = worst.max((y.max(0.0) - p.value(y)).abs());
        }
        assert!(worst <= eps);
        // The gap is attained at y = eps with value eps / 2.
        assert!(((eps.max(0.0) - p.value(eps)) - eps / 2.0).abs() < 1e-18);
    }

    #[test]
    fn derivative_matches_finite_differences_away_from_kinks() {
        let eps = 0.1;
        for p in [PenaltyTerm::Max, PenaltyTerm::smoothed(eps)] {
            for k in -50..=50 {
                let y = k as f64 * 0.01 + 0.0042;
                if y.abs() < 1e-3 || (y - eps).abs() < 1e-3 {
                    continue;
                }
                let h = 1e-7;
                let fd = (p.value(y + h) - p.value(y - h)) / (2.0 * h);
                assert!(
                    (fd - p.derivative(y)).abs() < 1e-6,
                    "fd mismatch at y={y} for {p:?}"
                );
            }
        }
    }
}
