//! Differentiable local minima of a single cell.
//!
//! With the pattern fixed the loss is the least-squares objective
//! `(1/N)‖A R − y‖²`, minimized by `R* = A⁺y + (I − A⁺A)c`. A minimum is
//! genuine only if the recovered hidden weights `w_j = R*_j / z_j` still
//! produce the pattern that defined the cell. Because only the sign of `z_j`
//! matters, every neuron has a positive and a negative branch.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cells::{assemble_a, halfspace_feasible, ActivationPattern, FeasibilityResult, HalfspaceSystem, Relation};
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::linalg::{general_least_squares, is_solvable, AffineSolutionSet};
use crate::model::{CombinedParams, Dataset, NetworkParams};
use crate::tolerances::Tolerances;

/// Largest K for which all `2^K` sign vectors are enumerated.
pub const MAX_SIGN_ENUMERATION_K: usize = 12;

/// Absolute cutoff for the rank of projector row blocks (projector entries
/// are O(1), round-off is O(1e-15)).
const PROJECTOR_RANK_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinimaKind {
    Unique,
    ContinuousSubspace,
    FullSpace,
}

#[derive(Debug, Clone)]
pub struct MinimaSolution {
    pub solution_set: AffineSolutionSet,
    pub loss_at_min: f64,
    pub kind: MinimaKind,
    /// Rank of the projector rows belonging to each neuron.
    pub per_neuron_freedom: Vec<usize>,
    pub k: usize,
    pub d: usize,
}

impl MinimaSolution {
    /// `R*(c)` as combined parameters.
    pub fn member(&self, c: &DVector<f64>) -> Result<CombinedParams> {
        CombinedParams::from_vector(self.solution_set.member(c)?, self.k, self.d)
    }

    pub fn particular(&self) -> CombinedParams {
        CombinedParams::from_vector(self.solution_set.particular.clone(), self.k, self.d)
            .expect("shape fixed at construction")
    }
}

fn block_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > PROJECTOR_RANK_CUTOFF)
        .count()
}

/// Least-squares minimum of the cell with the given pattern.
pub fn solve_cell_minima(
    pattern: &ActivationPattern,
    data: &Dataset,
    rank_tol: f64,
) -> Result<MinimaSolution> {
    let a = assemble_a(pattern, data)?;
    let set = general_least_squares(&a, data.labels(), rank_tol)?;
    let residual = &a * &set.particular - data.labels();
    let loss_at_min = residual.norm_squared() / data.n() as f64;
    let (k, d) = (pattern.k(), data.d());
    let kind = if set.dim == 0 {
        MinimaKind::Unique
    } else if set.dim == k * d {
        MinimaKind::FullSpace
    } else {
        MinimaKind::ContinuousSubspace
    };
    let per_neuron_freedom = (0..k)
        .map(|j| block_rank(&set.projector_rows(j * d, d)))
        .collect();
    Ok(MinimaSolution {
        solution_set: set,
        loss_at_min,
        kind,
        per_neuron_freedom,
        k,
        d,
    })
}

/// True iff the cell minimum has zero loss, decided by solvability of `AR = y`.
pub fn zero_loss_attainable(pattern: &ActivationPattern, data: &Dataset, tol: f64) -> Result<bool> {
    let a = assemble_a(pattern, data)?;
    is_solvable(&a, data.labels(), tol)
}

/// Both branches of one neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NeuronVerdict {
    pub neuron: usize,
    /// `R*_j` itself lies in the cell (z_j > 0).
    pub positive: bool,
    /// `-R*_j` lies in the cell (z_j < 0).
    pub negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenuinenessReport {
    pub neurons: Vec<NeuronVerdict>,
}

impl GenuinenessReport {
    /// AND over neurons of the branch selected by `signs[j]`.
    pub fn overall_genuine(&self, signs: &[i8]) -> bool {
        signs.len() == self.neurons.len()
            && self.neurons.iter().zip(signs).all(|(v, &s)| {
                if s >= 0 {
                    v.positive
                } else {
                    v.negative
                }
            })
    }

    /// Some sign vector is genuine.
    pub fn any_genuine(&self) -> bool {
        self.neurons.iter().all(|v| v.positive || v.negative)
    }

    /// All genuine sign vectors, in lexicographic order with `+1 < -1`.
    pub fn genuine_sign_vectors(&self) -> Vec<Vec<i8>> {
        let mut out = vec![Vec::new()];
        for v in &self.neurons {
            let mut next = Vec::new();
            for prefix in &out {
                for (ok, s) in [(v.positive, 1i8), (v.negative, -1i8)] {
                    if ok {
                        let mut p = prefix.clone();
                        p.push(s);
                        next.push(p);
                    }
                }
            }
            out = next;
        }
        out
    }
}

/// `sign · R_j` lies in the cell of column `j`: strictly positive products
/// (beyond `tol`) on active samples, products `<= tol` on inactive ones.
pub fn branch_in_cell(r_j: &DVector<f64>, sign: i8, column: &[bool], data: &Dataset, tol: f64) -> bool {
    let s = if sign >= 0 { 1.0 } else { -1.0 };
    column.iter().enumerate().all(|(i, &active)| {
        let dot = s * data.samples().row(i).dot(&r_j.transpose());
        if active {
            dot > tol
        } else {
            dot <= tol
        }
    })
}

/// Per-neuron, per-branch genuineness of a fixed `R*`.
pub fn genuineness_unique(
    r_star: &CombinedParams,
    pattern: &ActivationPattern,
    data: &Dataset,
    sign_tol: f64,
) -> Result<GenuinenessReport> {
    ensure_dim("pattern rows (N)", data.n(), pattern.n())?;
    ensure_dim("pattern columns (K)", r_star.k(), pattern.k())?;
    ensure_dim("parameter dimension", data.d(), r_star.d())?;
    let neurons = (0..pattern.k())
        .map(|j| {
            let col = pattern.column(j);
            let r = r_star.neuron(j);
            NeuronVerdict {
                neuron: j,
                positive: branch_in_cell(&r, 1, &col, data, sign_tol),
                negative: branch_in_cell(&r, -1, &col, data, sign_tol),
            }
        })
        .collect();
    Ok(GenuinenessReport { neurons })
}

/// Half-spaces over `c` whose intersection is the set of free vectors for
/// which `R*(c)` is genuine under `signs`.
pub fn continuous_constraints(
    sol: &MinimaSolution,
    pattern: &ActivationPattern,
    data: &Dataset,
    signs: &[i8],
) -> Result<HalfspaceSystem> {
    ensure_dim("sign vector length", pattern.k(), signs.len())?;
    ensure_dim("pattern rows (N)", data.n(), pattern.n())?;
    let (k, d) = (sol.k, sol.d);
    let dim = k * d;
    let mut sys = HalfspaceSystem::new(dim);
    for j in 0..k {
        let s = if signs[j] >= 0 { 1.0 } else { -1.0 };
        let p_j = sol.solution_set.particular.rows(j * d, d);
        let proj_j = sol.solution_set.projector.rows(j * d, d);
        for i in 0..data.n() {
            let x = data.x(i);
            // s·x·(p_j + P_j c) (>|<=) 0
            let normal: DVector<f64> = proj_j.transpose() * &x * s;
            let offset = -s * x.dot(&p_j);
            let rel = if pattern.get(i, j) {
                Relation::Gt
            } else {
                Relation::Le
            };
            sys.push(normal, rel, offset)?;
        }
    }
    Ok(sys)
}

/// Feasibility of genuineness over the free vector `c` for one sign vector.
pub fn genuineness_continuous(
    sol: &MinimaSolution,
    pattern: &ActivationPattern,
    data: &Dataset,
    signs: &[i8],
    strict_eps: f64,
) -> Result<FeasibilityResult> {
    let sys = continuous_constraints(sol, pattern, data, signs)?;
    halfspace_feasible(&sys, strict_eps)
}

/// Every sign vector in `{+1,-1}^K`, `+1` first.
pub fn all_sign_vectors(k: usize) -> Result<Vec<Vec<i8>>> {
    if k > MAX_SIGN_ENUMERATION_K {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the sign-vector enumeration limit {MAX_SIGN_ENUMERATION_K}"
        )));
    }
    Ok((0..1usize << k)
        .map(|mask| {
            (0..k)
                .map(|j| if mask >> (k - 1 - j) & 1 == 1 { -1 } else { 1 })
                .collect()
        })
        .collect())
}

/// `z_j = sign_j · scale`, `w_j = R*_j / z_j`.
pub fn recover_params(r_star: &CombinedParams, signs: &[i8], scale: f64) -> Result<NetworkParams> {
    ensure_dim("sign vector length", r_star.k(), signs.len())?;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::invalid("scale must be positive and finite"));
    }
    let z = DVector::from_iterator(
        signs.len(),
        signs.iter().map(|&s| if s >= 0 { scale } else { -scale }),
    );
    let mut w = DMatrix::zeros(r_star.k(), r_star.d());
    for j in 0..r_star.k() {
        w.set_row(j, &(r_star.neuron(j) / z[j]).transpose());
    }
    NetworkParams::new(z, w)
}

#[derive(Debug, Clone, Serialize)]
pub struct SignBranchReport {
    pub signs: Vec<i8>,
    pub genuine: bool,
    /// Free vector `c` realizing the genuine minimum (non-unique cells).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_c: Option<Vec<f64>>,
    /// `R*` at the witness (or the unique solution).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

/// Everything known about one cell, ready for JSON.
#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub pattern: ActivationPattern,
    pub kind: MinimaKind,
    pub particular: Vec<f64>,
    pub projector_rank: usize,
    pub per_neuron_freedom: Vec<usize>,
    pub loss: f64,
    pub zero_loss: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neurons: Option<Vec<NeuronVerdict>>,
    pub branches: Vec<SignBranchReport>,
    pub any_genuine: bool,
}

/// Solve the cell, then check genuineness on every sign vector.
pub fn analyze_cell(
    pattern: &ActivationPattern,
    data: &Dataset,
    tol: &Tolerances,
    exec: Execution,
) -> Result<CellReport> {
    let sol = solve_cell_minima(pattern, data, tol.rank_tol)?;
    let signs = all_sign_vectors(pattern.k())?;
    let zero_loss = zero_loss_attainable(pattern, data, tol.solve_tol)?;
    let (neurons, branches) = if sol.kind == MinimaKind::Unique {
        let r = sol.particular();
        let rep = genuineness_unique(&r, pattern, data, tol.sign_tol)?;
        let branches = signs
            .into_iter()
            .map(|s| SignBranchReport {
                genuine: rep.overall_genuine(&s),
                signs: s,
                witness_c: None,
                r_star: Some(r.as_vector().iter().copied().collect()),
                margin: None,
            })
            .collect();
        (Some(rep.neurons), branches)
    } else {
        let results = exec.map_slice(&signs, |s| genuineness_continuous(&sol, pattern, data, s, tol.strict_eps));
        let mut branches = Vec::with_capacity(signs.len());
        for (s, res) in signs.into_iter().zip(results) {
            let res = res?;
            let (witness_c, r_star) = match &res.witness {
                Some(c) if res.feasible => (
                    Some(c.iter().copied().collect()),
                    Some(sol.solution_set.member(c)?.iter().copied().collect()),
                ),
                _ => (None, None),
            };
            branches.push(SignBranchReport {
                signs: s,
                genuine: res.feasible,
                witness_c,
                r_star,
                margin: res.margin.is_finite().then_some(res.margin),
            });
        }
        (None, branches)
    };
    let any_genuine = branches.iter().any(|b| b.genuine);
    Ok(CellReport {
        pattern: pattern.clone(),
        kind: sol.kind,
        particular: sol.solution_set.particular.iter().copied().collect(),
        projector_rank: sol.solution_set.dim,
        per_neuron_freedom: sol.per_neuron_freedom.clone(),
        loss: sol.loss_at_min,
        zero_loss,
        neurons,
        branches,
        any_genuine,
    })
}
