//! Activation-region geometry.
//!
//! A cell is the set of hidden weights that put every sample on a fixed side
//! of every neuron. It is identified by its activation pattern `I` (N × K).
//! Membership tests, the block data matrix `A` and the feasibility of systems
//! of strict and non-strict half-spaces live here.

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::model::Dataset;

/// Binary N × K matrix, `I_ij = 1` iff sample `i` activates neuron `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActivationPattern {
    n: usize,
    k: usize,
    bits: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct PatternJson {
    #[serde(rename = "I")]
    i: Vec<Vec<u8>>,
}

impl ActivationPattern {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            bits: vec![false; n * k],
        }
    }

    pub fn from_fn(n: usize, k: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut p = Self::zeros(n, k);
        for i in 0..n {
            for j in 0..k {
                p.bits[i * k + j] = f(i, j);
            }
        }
        p
    }

    /// Rows of 0/1 entries.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("pattern has no rows"));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(Error::invalid("pattern has no columns"));
        }
        let mut bits = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            ensure_dim("pattern row length", k, row.len())?;
            for &b in row {
                match b {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    other => {
                        return Err(Error::invalid(format!(
                            "pattern row {i} has entry {other}, expected 0 or 1"
                        )))
                    }
                }
            }
        }
        Ok(Self {
            n: rows.len(),
            k,
            bits,
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: PatternJson = serde_json::from_str(s)?;
        Self::from_rows(&raw.i)
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n)
            .map(|i| (0..self.k).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PatternJson { i: self.to_rows() }).expect("pattern serializes")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.k + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// True iff no sample activates neuron `j`.
    pub fn column_is_empty(&self, j: usize) -> bool {
        (0..self.n).all(|i| !self.get(i, j))
    }
}

impl Serialize for ActivationPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PatternJson { i: self.to_rows() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActivationPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PatternJson::deserialize(d)?;
        Self::from_rows(&raw.i).map_err(serde::de::Error::custom)
    }
}

/// `I_ij = 1` iff `w_j·x_i > 0`; an exactly-zero product maps to 0.
pub fn pattern_from_weights(w: &DMatrix<f64>, data: &Dataset) -> Result<ActivationPattern> {
    ensure_dim("weight dimension", data.d(), w.ncols())?;
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("weights have non-finite entries"));
    }
    let pre = data.samples() * w.transpose();
    Ok(ActivationPattern::from_fn(data.n(), w.nrows(), |i, j| {
        pre[(i, j)] > 0.0
    }))
}

/// Block matrix `A` (N × Kd): row `i`, block `j` is `I_ij x_iᵀ`.
pub fn assemble_a(pattern: &ActivationPattern, data: &Dataset) -> Result<DMatrix<f64>> {
    ensure_dim("pattern rows (N)", data.n(), pattern.n())?;
    let (n, k, d) = (data.n(), pattern.k(), data.d());
    let mut a = DMatrix::zeros(n, k * d);
    for i in 0..n {
        for j in (0..k).filter(|&j| pattern.get(i, j)) {
            a.view_mut((i, j * d), (1, d))
                .copy_from(&data.samples().row(i));
        }
    }
    Ok(a)
}

/// `w_j` lies in the cell described by `column`: `w_j·x_i > 0` where the
/// column is set and `<= 0` elsewhere.
pub fn membership(w_j: &DVector<f64>, column: &[bool], data: &Dataset) -> bool {
    membership_with_tol(w_j, column, data, 0.0)
}

/// Membership with slack `tol`: active products must exceed `tol`, inactive
/// ones must not exceed it.
pub fn membership_with_tol(w_j: &DVector<f64>, column: &[bool], data: &Dataset, tol: f64) -> bool {
    if column.len() != data.n() || w_j.len() != data.d() {
        return false;
    }
    (0..data.n()).all(|i| {
        let dot = data.samples().row(i).dot(&w_j.transpose());
        if column[i] {
            dot > tol
        } else {
            dot <= tol
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Relation {
    pub fn is_strict(self) -> bool {
        matches!(self, Relation::Gt | Relation::Lt)
    }
}

/// `normal · c  (relation)  offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub relation: Relation,
    pub offset: f64,
}

impl Halfspace {
    /// Signed slack, positive when satisfied: `normal·c − offset` for `>`/`>=`,
    /// `offset − normal·c` for `<`/`<=`.
    pub fn slack(&self, c: &DVector<f64>) -> f64 {
        let v = self.normal.dot(c) - self.offset;
        match self.relation {
            Relation::Gt | Relation::Ge => v,
            Relation::Lt | Relation::Le => -v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceSystem {
    dim: usize,
    constraints: Vec<Halfspace>,
}

impl HalfspaceSystem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            constraints: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constraints(&self) -> &[Halfspace] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn push(&mut self, normal: DVector<f64>, relation: Relation, offset: f64) -> Result<()> {
        ensure_dim("half-space normal", self.dim, normal.len())?;
        if !normal.iter().all(|v| v.is_finite()) || !offset.is_finite() {
            return Err(Error::invalid("half-space has non-finite coefficients"));
        }
        self.constraints.push(Halfspace {
            normal,
            relation,
            offset,
        });
        Ok(())
    }

    /// Append `lo <= normal·c <= hi` as two non-strict constraints.
    pub fn push_band(&mut self, normal: DVector<f64>, lo: f64, hi: f64) -> Result<()> {
        self.push(normal.clone(), Relation::Ge, lo)?;
        self.push(normal, Relation::Le, hi)
    }

    pub fn extend(&mut self, other: &HalfspaceSystem) -> Result<()> {
        ensure_dim("half-space system dimension", self.dim, other.dim)?;
        self.constraints.extend(other.constraints.iter().cloned());
        Ok(())
    }

    /// Every strict constraint has slack `>= strict_eps · ‖normal‖` and every
    /// non-strict one slack `>= -tol`.
    pub fn is_satisfied_by(&self, c: &DVector<f64>, strict_eps: f64, tol: f64) -> bool {
        self.constraints.iter().all(|h| {
            let s = h.slack(c);
            let scale = h.normal.norm().max(1.0);
            if h.relation.is_strict() {
                s >= strict_eps * h.normal.norm() - tol * scale
            } else {
                s >= -tol * scale
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub witness: Option<DVector<f64>>,
    /// Smallest strict slack of the unit-normalized constraints at the
    /// witness; `+inf` when there are no strict constraints, `-inf` when
    /// infeasible.
    pub margin: f64,
}

impl FeasibilityResult {
    fn infeasible() -> Self {
        Self {
            feasible: false,
            witness: None,
            margin: f64::NEG_INFINITY,
        }
    }
}

/// Normalized constraint `a·c >= b` (or `> b`) with `‖a‖ = 1`.
struct Row {
    a: DVector<f64>,
    b: f64,
    strict: bool,
}

const ZERO_NORMAL: f64 = 1e-12;
const LP_TOL: f64 = 1e-9;

/// Decide whether the intersection of the half-spaces is non-empty.
///
/// Strict constraints are modeled with a uniform margin: after scaling every
/// normal to unit length, `a·c > b` becomes `a·c >= b + strict_eps`. A linear
/// program maximizes the smallest strict slack `t <= 1`; the system is
/// feasible iff `t* >= strict_eps`. When there are no strict constraints the
/// same slack is applied to the non-strict ones and any `t* >= 0` is
/// accepted, which also yields interior witnesses where they exist.
pub fn halfspace_feasible(sys: &HalfspaceSystem, strict_eps: f64) -> Result<FeasibilityResult> {
    if !(strict_eps > 0.0) {
        return Err(Error::invalid("strict_eps must be positive"));
    }
    let normal_scale = sys
        .constraints
        .iter()
        .fold(1.0_f64, |m, h| m.max(h.normal.amax()));
    let mut rows = Vec::with_capacity(sys.len());
    for h in &sys.constraints {
        let (a, b) = match h.relation {
            Relation::Gt | Relation::Ge => (h.normal.clone(), h.offset),
            Relation::Lt | Relation::Le => (-&h.normal, -h.offset),
        };
        let norm = a.norm();
        let strict = h.relation.is_strict();
        if norm <= ZERO_NORMAL * normal_scale {
            // constant constraint 0 >= b (or 0 > b)
            let ok = if strict { -b >= strict_eps } else { b <= LP_TOL };
            if !ok {
                return Ok(FeasibilityResult::infeasible());
            }
            continue;
        }
        rows.push(Row {
            a: a / norm,
            b: b / norm,
            strict,
        });
    }

    let n = sys.dim;
    let has_strict = rows.iter().any(|r| r.strict);
    if rows.is_empty() {
        return Ok(FeasibilityResult {
            feasible: true,
            witness: Some(DVector::zeros(n)),
            margin: f64::INFINITY,
        });
    }

    // phase 1: maximize the uniform slack t
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..n)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let t = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    for r in &rows {
        let mut expr: Vec<_> = vars.iter().zip(r.a.iter()).map(|(&v, &c)| (v, c)).collect();
        if r.strict || !has_strict {
            expr.push((t, -1.0));
        }
        lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, r.b);
    }
    let sol = match lp.solve() {
        Ok(out) => match out.into_solution() {
            Ok(s) => s,
            Err(_) => return Err(Error::Solver("linear program interrupted".into())),
        },
        Err(microlp::Error::Infeasible) => return Ok(FeasibilityResult::infeasible()),
        Err(e) => return Err(Error::Solver(e.to_string())),
    };
    let t_star = sol.var_value(t);
    let phase1: DVector<f64> = DVector::from_iterator(n, vars.iter().map(|&v| sol.var_value(v)));

    if has_strict && t_star < strict_eps {
        return Ok(FeasibilityResult::infeasible());
    }
    if !has_strict {
        if t_star < -LP_TOL {
            return Ok(FeasibilityResult::infeasible());
        }
        return Ok(FeasibilityResult {
            feasible: true,
            witness: Some(phase1),
            margin: f64::INFINITY,
        });
    }

    // phase 2: keep part of the strict margin, push non-strict slack inward
    let keep = (0.5 * t_star).max(strict_eps);
    let witness = if rows.iter().any(|r| !r.strict) {
        centered_witness(&rows, n, keep).unwrap_or(phase1)
    } else {
        phase1
    };
    let margin = rows
        .iter()
        .filter(|r| r.strict)
        .map(|r| r.a.dot(&witness) - r.b)
        .fold(f64::INFINITY, f64::min);
    Ok(FeasibilityResult {
        feasible: true,
        witness: Some(witness),
        margin,
    })
}

fn centered_witness(rows: &[Row], n: usize, keep: f64) -> Option<DVector<f64>> {
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..n)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let u = lp.add_var(1.0, (0.0, 1.0));
    for r in rows {
        let mut expr: Vec<_> = vars.iter().zip(r.a.iter()).map(|(&v, &c)| (v, c)).collect();
        if r.strict {
            lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, r.b + keep);
        } else {
            expr.push((u, -1.0));
            lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, r.b);
        }
    }
    let sol = lp.solve().ok()?.into_solution().ok()?;
    let c = DVector::from_iterator(n, vars.iter().map(|&v| sol.var_value(v)));
    let ok = rows.iter().all(|r| {
        let s = r.a.dot(&c) - r.b;
        if r.strict {
            s >= keep - LP_TOL
        } else {
            s >= -LP_TOL
        }
    });
    ok.then_some(c)
}
