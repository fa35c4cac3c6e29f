//! Dense linear algebra: SVD-based (faer) Moore-Penrose pseudoinverse, general
//! least-squares solution sets and solvability tests.
//!
//! Rank is decided by thresholding singular values at `rank_tol * sigma_max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Thin SVD with the numerical rank already decided.
struct RankedSvd {
    u: DMatrix<f64>,
    singular: DVector<f64>,
    v_t: DMatrix<f64>,
    rank: usize,
    /// Indices of the singular values kept as nonzero.
    kept: Vec<usize>,
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("matrix has non-finite entries"))
    }
}

fn ranked_svd(m: &DMatrix<f64>, rank_tol: f64) -> Result<RankedSvd> {
    check_finite(m)?;
    if !(rank_tol > 0.0) {
        return Err(Error::invalid("rank_tol must be positive"));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        let k = rows.min(cols);
        return Ok(RankedSvd {
            u: DMatrix::zeros(rows, k),
            singular: DVector::zeros(k),
            v_t: DMatrix::zeros(k, cols),
            rank: 0,
            kept: Vec::new(),
        });
    }
    // nalgebra's own SVD can return inaccurate factors for rank-deficient
    // input, so the decomposition is done by faer.
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm
        .thin_svd()
        .map_err(|e| Error::Solver(format!("SVD did not converge: {e:?}")))?;
    let k = rows.min(cols);
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let u = DMatrix::from_fn(rows, k, |i, q| fu[(i, q)]);
    let v_t = DMatrix::from_fn(k, cols, |q, j| fv[(j, q)]);
    let singular = DVector::from_fn(k, |q, _| fs[q]);
    let sigma_max = singular.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rank_tol * sigma_max;
    let kept: Vec<usize> = if sigma_max == 0.0 {
        Vec::new()
    } else {
        (0..singular.len()).filter(|&i| singular[i] > cutoff).collect()
    };
    Ok(RankedSvd {
        u,
        singular,
        v_t,
        rank: kept.len(),
        kept,
    })
}

/// Numerical rank of `m`.
pub fn numerical_rank(m: &DMatrix<f64>, rank_tol: f64) -> Result<usize> {
    Ok(ranked_svd(m, rank_tol)?.rank)
}

/// Moore-Penrose pseudoinverse `M⁺` (shape `cols × rows`).
pub fn pseudoinverse(m: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let svd = ranked_svd(m, rank_tol)?;
    Ok(pinv_from(&svd, m.nrows(), m.ncols()))
}

fn pinv_from(svd: &RankedSvd, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(cols, rows);
    for &i in &svd.kept {
        let inv = 1.0 / svd.singular[i];
        let v = svd.v_t.row(i).transpose();
        let u = svd.u.column(i);
        out.ger(inv, &v, &u.into_owned(), 1.0);
    }
    out
}

/// Orthogonal projector onto the null space of `m`, i.e. `I - M⁺M`.
fn null_projector(svd: &RankedSvd, cols: usize) -> DMatrix<f64> {
    let mut p = DMatrix::identity(cols, cols);
    for &i in &svd.kept {
        let v = svd.v_t.row(i).transpose();
        p.ger(-1.0, &v, &v, 1.0);
    }
    // exact symmetry
    let pt = p.transpose();
    (p + pt) * 0.5
}

/// Solution set `particular + projector · c` of a least-squares problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSolutionSet {
    /// `M⁺b`, the minimum-norm member.
    pub particular: DVector<f64>,
    /// `I - M⁺M`.
    pub projector: DMatrix<f64>,
    /// Rank of the projector (dimension of the solution set).
    pub dim: usize,
}

impl AffineSolutionSet {
    pub fn ambient_dim(&self) -> usize {
        self.particular.len()
    }

    pub fn is_unique(&self) -> bool {
        self.dim == 0
    }

    /// `particular + projector · c`.
    pub fn member(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        ensure_dim("free vector c", self.ambient_dim(), c.len())?;
        Ok(&self.particular + &self.projector * c)
    }

    /// Rows `[start, start + len)` of the projector, e.g. the block of one
    /// neuron.
    pub fn projector_rows(&self, start: usize, len: usize) -> DMatrix<f64> {
        self.projector.rows(start, len).into_owned()
    }
}

/// General solution of `min ‖M z − b‖²`: `z = M⁺b + (I − M⁺M)c`.
pub fn general_least_squares(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    rank_tol: f64,
) -> Result<AffineSolutionSet> {
    ensure_dim("right-hand side length", m.nrows(), b.len())?;
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("right-hand side has non-finite entries"));
    }
    let svd = ranked_svd(m, rank_tol)?;
    let pinv = pinv_from(&svd, m.nrows(), m.ncols());
    let projector = null_projector(&svd, m.ncols());
    Ok(AffineSolutionSet {
        particular: pinv * b,
        projector,
        dim: m.ncols() - svd.rank,
    })
}

/// `‖M M⁺ b − b‖`.
pub fn solvability_residual(m: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> Result<f64> {
    ensure_dim("right-hand side length", m.nrows(), b.len())?;
    let pinv = pseudoinverse(m, rank_tol)?;
    Ok((m * (pinv * b) - b).norm())
}

/// True iff `‖M M⁺ b − b‖ <= tol · (1 + ‖b‖)`.
pub fn is_solvable(m: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<bool> {
    is_solvable_with(m, b, tol, DEFAULT_RANK_TOL)
}

pub fn is_solvable_with(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
    rank_tol: f64,
) -> Result<bool> {
    Ok(solvability_residual(m, b, rank_tol)? <= tol * (1.0 + b.norm()))
}

/// Largest absolute entry, floored at 1 so tolerances stay meaningful for
/// tiny matrices.
pub fn entry_scale(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()))
}
