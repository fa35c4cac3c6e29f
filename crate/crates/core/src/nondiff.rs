//! Non-differentiable minima with one hidden weight pinned to a sample
//! hyperplane.
//!
//! Neuron `m` sits on `w_m·x_n = 0`, the wall between cell 1 (sample `n`
//! inactive) and cell 2 (sample `n` active). The loss is a minimum there iff
//! every other neuron is stationary, the cell-1 gradient of `w_m` points
//! along `-x_n` and the cell-2 gradient along `+x_n`. The first two
//! conditions are linear in `R` and collected into `D R = d`; the directions
//! become sign conditions on `z_m`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cells::{halfspace_feasible, ActivationPattern, HalfspaceSystem, Relation};
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::linalg::{general_least_squares, solvability_residual, AffineSolutionSet};
use crate::minima::{all_sign_vectors, branch_in_cell};
use crate::model::{CombinedParams, Dataset, NetworkParams};
use crate::tolerances::Tolerances;

/// Neuron `m` pinned on the hyperplane of sample `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConfig {
    pub m: usize,
    pub n: usize,
    /// Pattern of the cell-1 side; `I_nm` is forced to 0.
    pub pattern: ActivationPattern,
}

impl BoundaryConfig {
    pub fn new(m: usize, n: usize, pattern: &ActivationPattern) -> Result<Self> {
        if m >= pattern.k() {
            return Err(Error::invalid(format!("neuron {m} out of range (K = {})", pattern.k())));
        }
        if n >= pattern.n() {
            return Err(Error::invalid(format!("sample {n} out of range (N = {})", pattern.n())));
        }
        let mut pattern = pattern.clone();
        pattern.set(n, m, false);
        Ok(Self { m, n, pattern })
    }
}

fn check_cfg(cfg: &BoundaryConfig, data: &Dataset) -> Result<DVector<f64>> {
    ensure_dim("pattern rows (N)", data.n(), cfg.pattern.n())?;
    if cfg.m >= cfg.pattern.k() || cfg.n >= data.n() {
        return Err(Error::invalid("boundary indices out of range"));
    }
    let xn = data.x(cfg.n);
    if xn.norm() == 0.0 {
        return Err(Error::invalid(format!("sample {} is the zero vector", cfg.n)));
    }
    Ok(xn)
}

/// `(x_i·x_n) x_n − |x_n|² x_i`, the part of `x_i` orthogonal to `x_n`
/// (scaled by `-|x_n|²`).
fn orth(x: &DVector<f64>, xn: &DVector<f64>) -> DVector<f64> {
    xn * x.dot(xn) - x * xn.norm_squared()
}

/// Assemble the `(K+1)d × Kd` system `D R = d`.
///
/// Block rows `j ≠ m` are the stationarity equations of neuron `j`; block
/// row `m` forces the cell-1 gradient of `w_m` to be parallel to `x_n`; the
/// last block holds `x_nᵀ R_m = 0` in its first row and zeros below.
pub fn assemble_d_system(cfg: &BoundaryConfig, data: &Dataset) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let xn = check_cfg(cfg, data)?;
    let (k, d) = (cfg.pattern.k(), data.d());
    let p = &cfg.pattern;
    let mut dm = DMatrix::zeros((k + 1) * d, k * d);
    let mut rhs = DVector::zeros((k + 1) * d);
    for i in 0..data.n() {
        let x = data.x(i);
        let y = data.y(i);
        for j in (0..k).filter(|&j| p.get(i, j)) {
            let lhs_vec = if j == cfg.m {
                if i == cfg.n {
                    continue;
                }
                orth(&x, &xn)
            } else {
                x.clone()
            };
            rhs.rows_mut(j * d, d).axpy(y, &lhs_vec, 1.0);
            let outer = &lhs_vec * x.transpose();
            for kk in (0..k).filter(|&kk| p.get(i, kk)) {
                let mut blk = dm.view_mut((j * d, kk * d), (d, d));
                blk += &outer;
            }
        }
    }
    dm.view_mut((k * d, cfg.m * d), (1, d))
        .copy_from(&xn.transpose());
    Ok((dm, rhs))
}

/// Verdict for one sign of `z_m`.
#[derive(Debug, Clone, Serialize)]
pub struct BranchVerdict {
    /// Sign of `z_m`.
    pub sigma: i8,
    /// Cell-1 gradient points along `-x_n`.
    pub cell1_direction: bool,
    /// Cell-2 gradient points along `+x_n`.
    pub cell2_direction: bool,
    /// `σ R_m` lies in its cell for every sample other than `n`, and every
    /// other neuron lies in its cell on the branch given by `other_signs`.
    pub in_cells: bool,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub other_signs: Option<Vec<i8>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_c: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NonDiffSolution {
    pub m: usize,
    pub n: usize,
    pub solvable: bool,
    pub residual: f64,
    pub solution_set: Option<AffineSolutionSet>,
    pub branches: Vec<BranchVerdict>,
    pub k: usize,
    pub d: usize,
}

impl NonDiffSolution {
    pub fn accepted(&self) -> bool {
        self.branches.iter().any(|b| b.accepted)
    }

    /// Network parameters of an accepted branch, `|z_j| = scale`.
    pub fn params(&self, sigma: i8, scale: f64) -> Option<NetworkParams> {
        let b = self.branches.iter().find(|b| b.sigma == sigma && b.accepted)?;
        let r = CombinedParams::from_vector(DVector::from_vec(b.r_star.clone()?), self.k, self.d).ok()?;
        let others = b.other_signs.as_ref()?;
        let mut z = DVector::zeros(self.k);
        let mut w = DMatrix::zeros(self.k, self.d);
        let mut it = others.iter();
        for j in 0..self.k {
            let s = if j == self.m { sigma } else { *it.next()? };
            let s = if s >= 0 { scale } else { -scale };
            z[j] = s;
            w.set_row(j, &(r.neuron(j) / s).transpose());
        }
        NetworkParams::new(z, w).ok()
    }
}

/// Residual forms `e_i(c) = e0_i + g_iᵀ c` over the free vector.
struct AffineErrors {
    e0: Vec<f64>,
    g: Vec<DVector<f64>>,
}

fn affine_errors(set: &AffineSolutionSet, pattern: &ActivationPattern, data: &Dataset) -> AffineErrors {
    let d = data.d();
    let mut e0 = Vec::with_capacity(data.n());
    let mut g = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let x = data.x(i);
        let mut e = -data.y(i);
        let mut gi = DVector::zeros(set.ambient_dim());
        for j in (0..pattern.k()).filter(|&j| pattern.get(i, j)) {
            e += set.particular.rows(j * d, d).dot(&x);
            gi += set.projector.rows(j * d, d).transpose() * &x;
        }
        e0.push(e);
        g.push(gi);
    }
    AffineErrors { e0, g }
}

/// Decide whether `D R = d` is solvable and, per sign of `z_m`, whether the
/// one-sided gradient directions and all cell memberships hold.
pub fn solve_nondiff(cfg: &BoundaryConfig, data: &Dataset, tol: &Tolerances) -> Result<NonDiffSolution> {
    let xn = check_cfg(cfg, data)?;
    let (dm, rhs) = assemble_d_system(cfg, data)?;
    let (k, d) = (cfg.pattern.k(), data.d());
    let residual = solvability_residual(&dm, &rhs, tol.rank_tol)?;
    let mut out = NonDiffSolution {
        m: cfg.m,
        n: cfg.n,
        solvable: residual <= tol.solve_tol * (1.0 + rhs.norm()),
        residual,
        solution_set: None,
        branches: Vec::new(),
        k,
        d,
    };
    if !out.solvable {
        return Ok(out);
    }
    let set = general_least_squares(&dm, &rhs, tol.rank_tol)?;
    let others: Vec<usize> = (0..k).filter(|&j| j != cfg.m).collect();
    let other_signs = all_sign_vectors(others.len())?;
    for sigma in [1i8, -1] {
        let v = if set.is_unique() {
            unique_branch(cfg, data, &set, &xn, sigma, &others, &other_signs, tol)
        } else {
            continuous_branch(cfg, data, &set, &xn, sigma, &others, &other_signs, tol)?
        };
        out.branches.push(v);
    }
    out.solution_set = Some(set);
    Ok(out)
}

/// `a = Σ_{i≠n} e_i I_im x_i·x_n` and `b = e_n |x_n|²`.
fn direction_terms(cfg: &BoundaryConfig, data: &Dataset, e: &[f64], xn: &DVector<f64>) -> (f64, f64) {
    let a = (0..data.n())
        .filter(|&i| i != cfg.n && cfg.pattern.get(i, cfg.m))
        .map(|i| e[i] * data.x(i).dot(xn))
        .sum();
    (a, e[cfg.n] * xn.norm_squared())
}

#[allow(clippy::too_many_arguments)]
fn unique_branch(
    cfg: &BoundaryConfig,
    data: &Dataset,
    set: &AffineSolutionSet,
    xn: &DVector<f64>,
    sigma: i8,
    others: &[usize],
    other_signs: &[Vec<i8>],
    tol: &Tolerances,
) -> BranchVerdict {
    let d = data.d();
    let r = CombinedParams::from_vector(set.particular.clone(), cfg.pattern.k(), d).expect("shape");
    let e = affine_errors(set, &cfg.pattern, data).e0;
    let (a, b) = direction_terms(cfg, data, &e, xn);
    let s = sigma as f64;
    let cell1 = s * a < -tol.sign_tol;
    let cell2 = s * (a + b) > tol.sign_tol;
    let mut col_m = cfg.pattern.column(cfg.m);
    let rm = r.neuron(cfg.m);
    // sample n is on the wall; test the rest
    let m_ok = (0..data.n()).filter(|&i| i != cfg.n).all(|i| {
        let dot = s * data.x(i).dot(&rm);
        if col_m[i] {
            dot > tol.sign_tol
        } else {
            dot <= tol.sign_tol
        }
    });
    col_m.clear();
    let chosen = other_signs.iter().find(|signs| {
        others.iter().zip(signs.iter()).all(|(&j, &sj)| {
            branch_in_cell(&r.neuron(j), sj, &cfg.pattern.column(j), data, tol.sign_tol)
        })
    });
    let in_cells = m_ok && chosen.is_some();
    BranchVerdict {
        sigma,
        cell1_direction: cell1,
        cell2_direction: cell2,
        in_cells,
        accepted: cell1 && cell2 && in_cells,
        other_signs: chosen.cloned(),
        r_star: Some(set.particular.iter().copied().collect()),
        witness_c: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn continuous_branch(
    cfg: &BoundaryConfig,
    data: &Dataset,
    set: &AffineSolutionSet,
    xn: &DVector<f64>,
    sigma: i8,
    others: &[usize],
    other_signs: &[Vec<i8>],
    tol: &Tolerances,
) -> Result<BranchVerdict> {
    let d = data.d();
    let dim = set.ambient_dim();
    let s = sigma as f64;
    let ae = affine_errors(set, &cfg.pattern, data);
    // a(c) and a(c) + b(c) as affine forms
    let mut a0 = 0.0;
    let mut ag = DVector::zeros(dim);
    for i in (0..data.n()).filter(|&i| i != cfg.n && cfg.pattern.get(i, cfg.m)) {
        let w = data.x(i).dot(xn);
        a0 += w * ae.e0[i];
        ag.axpy(w, &ae.g[i], 1.0);
    }
    let nn = xn.norm_squared();
    let ab0 = a0 + ae.e0[cfg.n] * nn;
    let abg = &ag + &ae.g[cfg.n] * nn;

    let mut base = HalfspaceSystem::new(dim);
    // s·a(c) < 0  and  s·(a + b)(c) > 0
    base.push(&ag * s, Relation::Lt, -s * a0)?;
    base.push(&abg * s, Relation::Gt, -s * ab0)?;
    let push_membership = |sys: &mut HalfspaceSystem, j: usize, sj: f64, skip: Option<usize>| -> Result<()> {
        let p = set.particular.rows(j * d, d);
        let proj = set.projector.rows(j * d, d);
        for i in (0..data.n()).filter(|&i| Some(i) != skip) {
            let x = data.x(i);
            let rel = if cfg.pattern.get(i, j) {
                Relation::Gt
            } else {
                Relation::Le
            };
            sys.push(proj.transpose() * &x * sj, rel, -sj * x.dot(&p))?;
        }
        Ok(())
    };
    push_membership(&mut base, cfg.m, s, Some(cfg.n))?;

    for signs in other_signs {
        let mut sys = base.clone();
        for (&j, &sj) in others.iter().zip(signs) {
            push_membership(&mut sys, j, sj as f64, None)?;
        }
        let res = halfspace_feasible(&sys, tol.strict_eps)?;
        if let (true, Some(c)) = (res.feasible, res.witness.as_ref()) {
            return Ok(BranchVerdict {
                sigma,
                cell1_direction: true,
                cell2_direction: true,
                in_cells: true,
                accepted: true,
                other_signs: Some(signs.clone()),
                r_star: Some(set.member(c)?.iter().copied().collect()),
                witness_c: Some(c.iter().copied().collect()),
            });
        }
    }
    // report the direction conditions on their own
    let mut dirs = HalfspaceSystem::new(dim);
    dirs.push(&ag * s, Relation::Lt, -s * a0)?;
    let cell1 = halfspace_feasible(&dirs, tol.strict_eps)?.feasible;
    let mut dirs2 = HalfspaceSystem::new(dim);
    dirs2.push(&abg * s, Relation::Gt, -s * ab0)?;
    let cell2 = halfspace_feasible(&dirs2, tol.strict_eps)?.feasible;
    Ok(BranchVerdict {
        sigma,
        cell1_direction: cell1,
        cell2_direction: cell2,
        in_cells: false,
        accepted: false,
        other_signs: None,
        r_star: None,
        witness_c: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lemma2Verdict {
    /// Opposed one-sided gradients: a non-differentiable minimum.
    Minimum,
    NotMinimum,
    /// A one-sided gradient vanishes and the other does not point into the
    /// wall's descent side: the point is stationary in an adjacent cell and
    /// belongs to the differentiable analysis.
    Degenerate,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lemma2Certificate {
    pub verdict: Lemma2Verdict,
    /// Limit of `∂L/∂w_m` from cell 1.
    pub grad_cell1: Vec<f64>,
    /// Limit of `∂L/∂w_m` from cell 2.
    pub grad_cell2: Vec<f64>,
    pub cos_cell1: f64,
    pub cos_cell2: f64,
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let den = a.norm() * b.norm();
    if den == 0.0 {
        0.0
    } else {
        a.dot(b) / den
    }
}

/// One-sided gradients of the loss in `w_m` at parameters with `w_m` on the
/// hyperplane of sample `n`.
pub fn lemma2_check(
    cfg: &BoundaryConfig,
    params: &NetworkParams,
    data: &Dataset,
    tol: &Tolerances,
) -> Result<Lemma2Certificate> {
    let xn = check_cfg(cfg, data)?;
    ensure_dim("parameter dimension", data.d(), params.d())?;
    ensure_dim("neuron count", cfg.pattern.k(), params.k())?;
    let wm = params.w_j(cfg.m);
    let on_wall = wm.dot(&xn).abs();
    if on_wall > tol.hyperplane_tol * (wm.norm() * xn.norm()).max(1.0) {
        return Err(Error::invalid(format!(
            "w_{} is not on the hyperplane of sample {} (|w·x| = {on_wall:e})",
            cfg.m, cfg.n
        )));
    }
    let pred = params.predict(data)?;
    let resid = pred - data.labels();
    let nf = data.n() as f64;
    let zm = params.z[cfg.m];
    let mut g1 = DVector::zeros(data.d());
    for i in (0..data.n()).filter(|&i| i != cfg.n) {
        let x = data.x(i);
        if wm.dot(&x) > 0.0 {
            g1.axpy(resid[i], &x, 1.0);
        }
    }
    g1 *= 2.0 * zm / nf;
    let g2 = &g1 + &xn * (2.0 * zm * resid[cfg.n] / nf);
    let scale = (1.0 + data.labels().norm()) * (0..data.n()).map(|i| data.x(i).norm()).fold(1.0, f64::max);
    let zero1 = g1.norm() <= tol.zero_grad_tol * scale;
    let zero2 = g2.norm() <= tol.zero_grad_tol * scale;
    let cos1 = cosine(&g1, &(-&xn));
    let cos2 = cosine(&g2, &xn);
    let ok1 = zero1 || cos1 >= 1.0 - tol.parallel_cos_tol;
    let ok2 = zero2 || cos2 >= 1.0 - tol.parallel_cos_tol;
    // a flat side with the other side rising is still a minimum, but of the
    // adjacent cell rather than of the wall
    let verdict = match (ok1 && ok2, zero1 || zero2) {
        (false, _) => Lemma2Verdict::NotMinimum,
        (true, true) => Lemma2Verdict::Degenerate,
        (true, false) => Lemma2Verdict::Minimum,
    };
    Ok(Lemma2Certificate {
        verdict,
        grad_cell1: g1.iter().copied().collect(),
        grad_cell2: g2.iter().copied().collect(),
        cos_cell1: cos1,
        cos_cell2: cos2,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    pub m: usize,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    pub solvable: bool,
    pub residual: f64,
    pub branches: Vec<BranchVerdict>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lemma2: Vec<Lemma2Certificate>,
    pub accepted: bool,
}

fn skip_reason(pattern: &ActivationPattern, data: &Dataset, m: usize, n: usize) -> Option<String> {
    if data.x(n).norm() == 0.0 {
        return Some(format!("sample {n} is the zero vector"));
    }
    if (0..data.n()).all(|i| i == n || !pattern.get(i, m)) {
        return Some(format!("neuron {m} has no active sample besides {n}"));
    }
    None
}

pub fn analyze_boundary(
    pattern: &ActivationPattern,
    data: &Dataset,
    m: usize,
    n: usize,
    tol: &Tolerances,
) -> Result<BoundaryReport> {
    let mut rep = BoundaryReport {
        m,
        n,
        skipped: skip_reason(pattern, data, m, n),
        solvable: false,
        residual: f64::NAN,
        branches: Vec::new(),
        lemma2: Vec::new(),
        accepted: false,
    };
    if rep.skipped.is_some() {
        rep.residual = 0.0;
        return Ok(rep);
    }
    let cfg = BoundaryConfig::new(m, n, pattern)?;
    let sol = solve_nondiff(&cfg, data, tol)?;
    rep.solvable = sol.solvable;
    rep.residual = sol.residual;
    rep.accepted = sol.accepted();
    for b in sol.branches.iter().filter(|b| b.accepted) {
        if let Some(p) = sol.params(b.sigma, 1.0) {
            rep.lemma2.push(lemma2_check(&cfg, &p, data, tol)?);
        }
    }
    rep.branches = sol.branches;
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct NonDiffSweepReport {
    pub examined: usize,
    pub skipped: usize,
    pub minima: Vec<BoundaryReport>,
}

/// Every `(m, n)` pair of a base pattern; accepted boundaries are collected.
pub fn sweep_nondiff(
    pattern: &ActivationPattern,
    data: &Dataset,
    tol: &Tolerances,
    exec: Execution,
) -> Result<(NonDiffSweepReport, Vec<BoundaryReport>)> {
    ensure_dim("pattern rows (N)", data.n(), pattern.n())?;
    let pairs: Vec<(usize, usize)> = (0..pattern.k())
        .flat_map(|m| (0..data.n()).map(move |n| (m, n)))
        .collect();
    let all = exec
        .map_slice(&pairs, |&(m, n)| analyze_boundary(pattern, data, m, n, tol))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let report = NonDiffSweepReport {
        examined: all.iter().filter(|r| r.skipped.is_none()).count(),
        skipped: all.iter().filter(|r| r.skipped.is_some()).count(),
        minima: all.iter().filter(|r| r.accepted).cloned().collect(),
    };
    Ok((report, all))
}
