//! Loss-landscape analysis for one-hidden-layer ReLU networks with squared loss.
//!
//! The weight space of such a network is cut into cells by the hyperplanes
//! `w · x_i = 0` of the samples. Inside a cell the indicators `I_ij` are
//! constant and the loss, written in the combined variables `R_j = z_j w_j`,
//! is a convex quadratic. This crate:
//!
//! - solves every cell's minimum with the Moore-Penrose pseudoinverse
//!   ([`minima`]) and decides whether the recovered weights actually lie in
//!   the cell that defined them,
//! - finds differentiable saddle points for every proper subset of
//!   stationary neurons ([`saddle`]),
//! - finds minima pinned to a single sample hyperplane ([`nondiff`]),
//! - computes the analytic and Monte Carlo probability of being trapped in a
//!   cell minimum for Gaussian classes with parallel hidden weights
//!   ([`probability`]).
//!
//! Dense linear algebra lives in [`linalg`], activation geometry and the
//! half-space feasibility solver in [`cells`].

pub mod cells;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod linalg;
pub mod minima;
pub mod model;
pub mod nondiff;
pub mod probability;
pub mod saddle;
pub mod tolerances;

pub use cells::{
    assemble_a, halfspace_feasible, membership, pattern_from_weights, ActivationPattern,
    FeasibilityResult, Halfspace, HalfspaceSystem, Relation,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use linalg::{general_least_squares, is_solvable, pseudoinverse, AffineSolutionSet};
pub use minima::{
    genuineness_continuous, genuineness_unique, recover_params, solve_cell_minima,
    GenuinenessReport, MinimaKind, MinimaSolution,
};
pub use model::{CombinedParams, ConvexLoss, Dataset, LossKind, NetworkParams};
pub use tolerances::Tolerances;
pub use nondiff::{
    lemma2_check, solve_nondiff, BoundaryConfig, Lemma2Certificate, Lemma2Verdict, NonDiffSolution,
};
pub use probability::{
    analyze_trap, gap_probability, monte_carlo_trap, optimal_locations, trap_probability,
    GaussianClassModel, HStarSource, ParallelWeightConfig, WeightSpec,
};
pub use saddle::{
    certify, genuine_saddle_check, solve_saddle, sweep_saddles, SaddleCandidate, SaddleGenuineness,
};
