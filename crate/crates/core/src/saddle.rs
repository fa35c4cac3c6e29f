//! Differentiable saddle points.
//!
//! Pick a proper subset `S` of neurons whose gradients vanish. Their combined
//! weights solve the normal equations `B R̃ = b` of the least-squares problem
//! restricted to `S`; the remaining neurons carry `z_j = 0`, so their
//! gradient is `(2/N) Σ_i e_i I_ij x_i` with residuals `e_i`. That vector is
//! nonzero by assumption, and stationarity in `w_j` only requires `w_j` to lie
//! on the hyperplane orthogonal to it. Moving `z_j` away from zero while
//! tilting `w_j` across that hyperplane changes the loss in both directions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::cells::{halfspace_feasible, ActivationPattern, HalfspaceSystem, Relation};
use crate::error::{ensure_dim, Error, Result};
use crate::exec::Execution;
use crate::linalg::{general_least_squares, AffineSolutionSet};
use crate::minima::{all_sign_vectors, branch_in_cell};
use crate::model::{loss_zw, CombinedParams, Dataset, LossKind, NetworkParams};
use crate::tolerances::Tolerances;

/// Largest K swept exhaustively unless a subset cap is given.
pub const MAX_EXHAUSTIVE_K: usize = 12;

fn check_subset(subset: &[usize], k: usize) -> Result<()> {
    if subset.len() >= k {
        return Err(Error::invalid(format!(
            "stationary subset must be proper: |S| = {} but K = {k}",
            subset.len()
        )));
    }
    for (pos, &j) in subset.iter().enumerate() {
        if j >= k {
            return Err(Error::invalid(format!("neuron index {j} out of range (K = {k})")));
        }
        if subset[..pos].contains(&j) {
            return Err(Error::invalid(format!("neuron {j} listed twice")));
        }
    }
    Ok(())
}

/// `B(j,k) = Σ_i I_ij I_ik x_i x_iᵀ`, `b(j) = Σ_i I_ij y_i x_i` for `j, k ∈ S`.
pub fn assemble_saddle_system(
    subset: &[usize],
    pattern: &ActivationPattern,
    data: &Dataset,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    ensure_dim("pattern rows (N)", data.n(), pattern.n())?;
    check_subset(subset, pattern.k())?;
    let d = data.d();
    let s = subset.len();
    let mut b_mat = DMatrix::zeros(s * d, s * d);
    let mut b_vec = DVector::zeros(s * d);
    for i in 0..data.n() {
        let x = data.x(i);
        let xxt = &x * x.transpose();
        for (bj, &j) in subset.iter().enumerate() {
            if !pattern.get(i, j) {
                continue;
            }
            let mut rows = b_vec.rows_mut(bj * d, d);
            rows.axpy(data.y(i), &x, 1.0);
            for (bk, &k) in subset.iter().enumerate() {
                if pattern.get(i, k) {
                    let mut blk = b_mat.view_mut((bj * d, bk * d), (d, d));
                    blk += &xxt;
                }
            }
        }
    }
    Ok((b_mat, b_vec))
}

/// Neuron outside `S` with its hyperplane normal `Σ_i e_i I_ij x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct InactiveNeuron {
    pub neuron: usize,
    pub normal: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct SaddleCandidate {
    pub subset: Vec<usize>,
    pub k: usize,
    pub d: usize,
    pub r_tilde: AffineSolutionSet,
    /// `e_i = Σ_{k∈S} I_ik R_k·x_i − y_i`, the same for every member of the
    /// solution set.
    pub errors: DVector<f64>,
    pub inactive: Vec<InactiveNeuron>,
}

impl SaddleCandidate {
    /// Full combined parameters: `R̃(c)` on `S`, zeros elsewhere.
    pub fn full_r(&self, c: &DVector<f64>) -> Result<CombinedParams> {
        let rt = self.r_tilde.member(c)?;
        let mut r = DVector::zeros(self.k * self.d);
        for (bj, &j) in self.subset.iter().enumerate() {
            r.rows_mut(j * self.d, self.d)
                .copy_from(&rt.rows(bj * self.d, self.d));
        }
        CombinedParams::from_vector(r, self.k, self.d)
    }

    pub fn particular_r(&self) -> CombinedParams {
        self.full_r(&DVector::zeros(self.r_tilde.ambient_dim()))
            .expect("shape fixed at construction")
    }

    pub fn normal(&self, neuron: usize) -> Option<&DVector<f64>> {
        self.inactive
            .iter()
            .find(|n| n.neuron == neuron)
            .map(|n| &n.normal)
    }
}

/// Solve `B R̃ = b`, compute residuals and the hyperplane normals of the
/// neurons outside `S`. Fails with [`Error::NotASaddle`] when some normal
/// vanishes.
pub fn solve_saddle(
    subset: &[usize],
    pattern: &ActivationPattern,
    data: &Dataset,
    tol: &Tolerances,
) -> Result<SaddleCandidate> {
    let (b_mat, b_vec) = assemble_saddle_system(subset, pattern, data)?;
    let r_tilde = general_least_squares(&b_mat, &b_vec, tol.rank_tol)?;
    let (k, d) = (pattern.k(), data.d());
    let mut cand = SaddleCandidate {
        subset: subset.to_vec(),
        k,
        d,
        r_tilde,
        errors: DVector::zeros(data.n()),
        inactive: Vec::new(),
    };
    let r = cand.particular_r();
    cand.errors = DVector::from_iterator(
        data.n(),
        (0..data.n()).map(|i| {
            let x = data.x(i);
            subset
                .iter()
                .filter(|&&j| pattern.get(i, j))
                .map(|&j| r.neuron(j).dot(&x))
                .sum::<f64>()
                - data.y(i)
        }),
    );
    let scale = (0..data.n())
        .map(|i| data.x(i).norm())
        .fold(0.0_f64, f64::max)
        * (1.0 + data.labels().norm());
    for j in (0..k).filter(|j| !subset.contains(j)) {
        let mut normal = DVector::zeros(d);
        for i in (0..data.n()).filter(|&i| pattern.get(i, j)) {
            normal.axpy(cand.errors[i], &data.x(i), 1.0);
        }
        if normal.norm() <= tol.zero_grad_tol * scale.max(1.0) {
            return Err(Error::NotASaddle { neuron: j });
        }
        cand.inactive.push(InactiveNeuron { neuron: j, normal });
    }
    Ok(cand)
}

/// Genuineness of one candidate under a sign choice for the neurons in `S`.
#[derive(Debug, Clone)]
pub struct SaddleGenuineness {
    pub genuine: bool,
    /// Signs of `z_j` for `j ∈ S`, in subset order.
    pub signs: Vec<i8>,
    /// Free vector of the `R̃` set realizing the stationary neurons.
    pub c_tilde: Option<DVector<f64>>,
    /// For each neuron outside `S`: a hidden weight inside its cell and on
    /// its hyperplane, if one exists.
    pub inactive_witnesses: Vec<(usize, Option<DVector<f64>>)>,
}

impl SaddleGenuineness {
    /// Network parameters at the certified saddle: `z_j = ±1`, `w_j = ±R_j`
    /// on `S`; `z_j = 0`, `w_j = w*_j` elsewhere.
    pub fn params(&self, cand: &SaddleCandidate) -> Option<NetworkParams> {
        if !self.genuine {
            return None;
        }
        let r = cand.full_r(self.c_tilde.as_ref()?).ok()?;
        let mut z = DVector::zeros(cand.k);
        let mut w = DMatrix::zeros(cand.k, cand.d);
        for (bj, &j) in cand.subset.iter().enumerate() {
            let s = if self.signs[bj] >= 0 { 1.0 } else { -1.0 };
            z[j] = s;
            w.set_row(j, &(r.neuron(j) * s).transpose());
        }
        for (j, wit) in &self.inactive_witnesses {
            w.set_row(*j, &wit.as_ref()?.transpose());
        }
        NetworkParams::new(z, w).ok()
    }
}

/// Hidden weight in cell `column` lying on the hyperplane `normal·w = 0`
/// (within `±hyperplane_tol`), then projected exactly onto it.
pub fn inactive_witness(
    normal: &DVector<f64>,
    column: &[bool],
    data: &Dataset,
    tol: &Tolerances,
) -> Result<Option<DVector<f64>>> {
    let d = data.d();
    let mut sys = HalfspaceSystem::new(d);
    for (i, &active) in column.iter().enumerate() {
        let rel = if active { Relation::Gt } else { Relation::Le };
        sys.push(data.x(i), rel, 0.0)?;
    }
    sys.push_band(normal.clone(), -tol.hyperplane_tol, tol.hyperplane_tol)?;
    let res = halfspace_feasible(&sys, tol.strict_eps)?;
    let Some(w) = res.witness.filter(|_| res.feasible) else {
        return Ok(None);
    };
    let w = &w - normal * (normal.dot(&w) / normal.norm_squared());
    // the projection moves w by at most the band width; keep it only if it
    // is still strictly inside the cell
    Ok(branch_in_cell(&w, 1, column, data, tol.sign_tol).then_some(w))
}

/// Cell membership of every neuron at the candidate (stationary neurons
/// under `signs`, inactive neurons on their hyperplanes).
pub fn genuine_saddle_check(
    cand: &SaddleCandidate,
    pattern: &ActivationPattern,
    data: &Dataset,
    signs: &[i8],
    tol: &Tolerances,
) -> Result<SaddleGenuineness> {
    ensure_dim("sign vector length", cand.subset.len(), signs.len())?;
    let d = cand.d;
    let dim = cand.r_tilde.ambient_dim();
    let c_tilde = if cand.r_tilde.is_unique() {
        let c = DVector::zeros(dim);
        let r = cand.full_r(&c)?;
        let ok = cand.subset.iter().zip(signs).all(|(&j, &s)| {
            branch_in_cell(&r.neuron(j), s, &pattern.column(j), data, tol.sign_tol)
        });
        ok.then_some(c)
    } else {
        let mut sys = HalfspaceSystem::new(dim);
        for (bj, &j) in cand.subset.iter().enumerate() {
            let s = if signs[bj] >= 0 { 1.0 } else { -1.0 };
            let p = cand.r_tilde.particular.rows(bj * d, d);
            let proj = cand.r_tilde.projector.rows(bj * d, d);
            for i in 0..data.n() {
                let x = data.x(i);
                let rel = if pattern.get(i, j) {
                    Relation::Gt
                } else {
                    Relation::Le
                };
                sys.push(proj.transpose() * &x * s, rel, -s * x.dot(&p))?;
            }
        }
        let res = halfspace_feasible(&sys, tol.strict_eps)?;
        res.witness.filter(|_| res.feasible)
    };
    let mut inactive_witnesses = Vec::with_capacity(cand.inactive.len());
    for n in &cand.inactive {
        let w = inactive_witness(&n.normal, &pattern.column(n.neuron), data, tol)?;
        inactive_witnesses.push((n.neuron, w));
    }
    let genuine = c_tilde.is_some() && inactive_witnesses.iter().all(|(_, w)| w.is_some());
    Ok(SaddleGenuineness {
        genuine,
        signs: signs.to_vec(),
        c_tilde,
        inactive_witnesses,
    })
}

/// Second-order loss change when neuron `k ∉ S` moves from `(0, w*)` to
/// `(dz, w* + dw)`:
/// `(1/N)[2 Σ_i e_i I_ik dz (dw·x_i) + Σ_i I_ik dz² (w*·x_i)²]`.
pub fn perturbation_delta(
    cand: &SaddleCandidate,
    k: usize,
    w_star: &DVector<f64>,
    dz: f64,
    dw: &DVector<f64>,
    pattern: &ActivationPattern,
    data: &Dataset,
) -> Result<f64> {
    if cand.subset.contains(&k) || k >= cand.k {
        return Err(Error::invalid(format!("neuron {k} is not outside the stationary subset")));
    }
    ensure_dim("dw length", data.d(), dw.len())?;
    ensure_dim("w* length", data.d(), w_star.len())?;
    let mut first = 0.0;
    let mut second = 0.0;
    for i in (0..data.n()).filter(|&i| pattern.get(i, k)) {
        let x = data.x(i);
        first += cand.errors[i] * dw.dot(&x);
        second += w_star.dot(&x).powi(2);
    }
    Ok((2.0 * dz * first + dz * dz * second) / data.n() as f64)
}

/// Exact loss change for the same perturbation, from the full network loss.
pub fn exact_delta(base: &NetworkParams, k: usize, dz: f64, dw: &DVector<f64>, data: &Dataset) -> Result<f64> {
    let mut moved = base.clone();
    moved.z[k] += dz;
    let row = moved.w.row(k) + dw.transpose();
    moved.w.set_row(k, &row);
    Ok(loss_zw(&moved, data, &LossKind::Squared)? - loss_zw(base, data, &LossKind::Squared)?)
}

/// Descent and ascent perturbations of one inactive neuron.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbationCertificate {
    pub neuron: usize,
    pub dz: f64,
    pub dw_descent: Vec<f64>,
    pub delta_descent: f64,
    pub exact_descent: f64,
    pub dw_ascent: Vec<f64>,
    pub delta_ascent: f64,
    pub exact_ascent: f64,
}

impl PerturbationCertificate {
    pub fn is_saddle(&self) -> bool {
        self.delta_descent < 0.0
            && self.exact_descent < 0.0
            && self.delta_ascent > 0.0
            && self.exact_ascent > 0.0
    }
}

/// Direction `u` with `dw = dz·u` along `∓normal`, scaled so the linear
/// term dominates the quadratic one on the descent side.
pub fn descent_direction(
    normal: &DVector<f64>,
    w_star: &DVector<f64>,
    k: usize,
    pattern: &ActivationPattern,
    data: &Dataset,
) -> DVector<f64> {
    let q: f64 = (0..data.n())
        .filter(|&i| pattern.get(i, k))
        .map(|i| w_star.dot(&data.x(i)).powi(2))
        .sum();
    let nn = normal.norm();
    let alpha = q / nn + 1.0;
    -normal * (alpha / nn)
}

/// Build descent/ascent perturbations of radius at most `radius` around a
/// genuine saddle, keeping `w_k` inside its cell.
pub fn certify(
    cand: &SaddleCandidate,
    gen: &SaddleGenuineness,
    pattern: &ActivationPattern,
    data: &Dataset,
    radius: f64,
) -> Result<Vec<PerturbationCertificate>> {
    let base = gen
        .params(cand)
        .ok_or_else(|| Error::invalid("candidate is not a genuine saddle"))?;
    let xmax = (0..data.n()).map(|i| data.x(i).norm()).fold(0.0_f64, f64::max);
    let mut out = Vec::new();
    for n in &cand.inactive {
        let k = n.neuron;
        let w_star = base.w_j(k);
        let u = descent_direction(&n.normal, &w_star, k, pattern, data);
        // smallest |w*·x_i| keeps the perturbed weight in the same cell
        let slack = (0..data.n())
            .map(|i| w_star.dot(&data.x(i)).abs())
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let mut dz = radius / (1.0 + u.norm_squared()).sqrt();
        if slack.is_finite() && xmax > 0.0 {
            dz = dz.min(0.5 * slack / (u.norm() * xmax).max(1e-300));
        }
        let dw_d = &u * dz;
        let dw_a = -&u * dz;
        out.push(PerturbationCertificate {
            neuron: k,
            dz,
            delta_descent: perturbation_delta(cand, k, &w_star, dz, &dw_d, pattern, data)?,
            exact_descent: exact_delta(&base, k, dz, &dw_d, data)?,
            delta_ascent: perturbation_delta(cand, k, &w_star, dz, &dw_a, pattern, data)?,
            exact_ascent: exact_delta(&base, k, dz, &dw_a, data)?,
            dw_descent: dw_d.iter().copied().collect(),
            dw_ascent: dw_a.iter().copied().collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct InactiveReport {
    pub neuron: usize,
    pub normal: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubsetReport {
    pub subset: Vec<usize>,
    /// The empty subset is admitted as a degenerate case.
    pub empty_subset: bool,
    pub status: SubsetStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_tilde_particular: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projector_rank: Option<usize>,
    pub inactive: Vec<InactiveReport>,
    pub genuine: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signs: Option<Vec<i8>>,
    pub certificates: Vec<PerturbationCertificate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SubsetStatus {
    Candidate,
    NotASaddle { neuron: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddleSweepReport {
    pub k: usize,
    pub examined: usize,
    pub truncated: bool,
    pub subsets: Vec<SubsetReport>,
    pub genuine_count: usize,
}

/// Proper subsets of `0..k` ordered by size, then lexicographically.
pub fn proper_subsets(k: usize, cap: Option<usize>) -> Vec<Vec<usize>> {
    fn rec(start: usize, k: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, cap: usize) {
        if out.len() >= cap {
            return;
        }
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for j in start..k {
            cur.push(j);
            rec(j + 1, k, size, cur, out, cap);
            cur.pop();
            if out.len() >= cap {
                return;
            }
        }
    }
    let cap = cap.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for size in 0..k {
        rec(0, k, size, &mut Vec::new(), &mut out, cap);
    }
    out
}

/// Default radius of the saddle perturbation certificates.
pub const CERTIFICATE_RADIUS: f64 = 1e-3;

pub fn analyze_subset(
    subset: &[usize],
    pattern: &ActivationPattern,
    data: &Dataset,
    tol: &Tolerances,
) -> Result<SubsetReport> {
    let mut rep = SubsetReport {
        subset: subset.to_vec(),
        empty_subset: subset.is_empty(),
        status: SubsetStatus::Candidate,
        r_tilde_particular: None,
        projector_rank: None,
        inactive: Vec::new(),
        genuine: false,
        signs: None,
        certificates: Vec::new(),
    };
    let cand = match solve_saddle(subset, pattern, data, tol) {
        Ok(c) => c,
        Err(Error::NotASaddle { neuron }) => {
            rep.status = SubsetStatus::NotASaddle { neuron };
            return Ok(rep);
        }
        Err(e) => return Err(e),
    };
    rep.r_tilde_particular = Some(cand.r_tilde.particular.iter().copied().collect());
    rep.projector_rank = Some(cand.r_tilde.dim);
    let mut found = None;
    let mut last = None;
    for signs in all_sign_vectors(subset.len())? {
        let g = genuine_saddle_check(&cand, pattern, data, &signs, tol)?;
        if g.genuine {
            found = Some(g);
            break;
        }
        last = Some(g);
    }
    let shown = found.as_ref().or(last.as_ref());
    rep.inactive = cand
        .inactive
        .iter()
        .map(|n| InactiveReport {
            neuron: n.neuron,
            normal: n.normal.iter().copied().collect(),
            w_star: shown.and_then(|g| {
                g.inactive_witnesses
                    .iter()
                    .find(|(j, _)| *j == n.neuron)
                    .and_then(|(_, w)| w.as_ref().map(|w| w.iter().copied().collect()))
            }),
        })
        .collect();
    if let Some(g) = found {
        rep.genuine = true;
        rep.signs = Some(g.signs.clone());
        rep.certificates = certify(&cand, &g, pattern, data, CERTIFICATE_RADIUS)?;
    }
    Ok(rep)
}

/// Analyze every proper subset (or the first `max_subsets` of them).
pub fn sweep_saddles(
    pattern: &ActivationPattern,
    data: &Dataset,
    tol: &Tolerances,
    max_subsets: Option<usize>,
    exec: Execution,
) -> Result<SaddleSweepReport> {
    let k = pattern.k();
    if k > MAX_EXHAUSTIVE_K && max_subsets.is_none() {
        return Err(Error::invalid(format!(
            "K = {k} has 2^{k} - 1 subsets; pass a subset cap to sweep a prefix"
        )));
    }
    if k > 63 {
        return Err(Error::invalid("K above 63 is not supported"));
    }
    let total = (1u128 << k) - 1;
    let subsets = proper_subsets(k, max_subsets);
    let reports: Vec<Result<SubsetReport>> =
        exec.map_slice(&subsets, |s| analyze_subset(s, pattern, data, tol));
    let subsets = reports.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SaddleSweepReport {
        k,
        examined: subsets.len(),
        truncated: (subsets.len() as u128) < total,
        genuine_count: subsets.iter().filter(|s| s.genuine).count(),
        subsets,
    })
}
