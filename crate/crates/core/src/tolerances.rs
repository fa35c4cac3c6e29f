use serde::{Deserialize, Serialize};

/// Numeric thresholds shared by the solvers.
///
/// Every field is surfaced as a CLI flag; the defaults are the values the
/// tests and acceptance suite are pinned against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Singular values below `rank_tol * sigma_max` count as zero.
    pub rank_tol: f64,
    /// Uniform margin that models a strict inequality `a·c > b` as
    /// `a·c >= b + strict_eps` (unit-normalized `a`).
    pub strict_eps: f64,
    /// Slack allowed on non-strict sign conditions (`R·x <= 0`).
    pub sign_tol: f64,
    /// Relative residual accepted by solvability tests.
    pub solve_tol: f64,
    /// Half-width of the band that encodes a hyperplane equality.
    pub hyperplane_tol: f64,
    /// One-sided gradients must reach cosine `>= 1 - parallel_cos_tol`.
    pub parallel_cos_tol: f64,
    /// Gradients with norm below `zero_grad_tol * scale` are zero.
    pub zero_grad_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank_tol: 1e-10,
            strict_eps: 1e-7,
            sign_tol: 1e-10,
            solve_tol: 1e-9,
            hyperplane_tol: 1e-9,
            parallel_cos_tol: 1e-8,
            zero_grad_tol: 1e-10,
        }
    }
}
