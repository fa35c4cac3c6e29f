//! Network, dataset and loss.
//!
//! The loss of a network with output weights `z` and hidden weights `w` is
//! `(1/N) Σ_i l(Σ_j z_j [w_j·x_i]₊, y_i)`. Inside a cell it is rewritten in
//! the combined variables `R_j = z_j w_j` as
//! `(1/N) Σ_i l(Σ_j I_ij R_j·x_i, y_i)`, which is convex in `R`.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::cells::ActivationPattern;
use crate::error::{ensure_dim, Error, Result};

/// Labeled samples `x_i ∈ R^d`, `y_i ∈ {±1}`, stored row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: DMatrix<f64>,
    labels: DVector<f64>,
    homogeneous: bool,
}

fn check_labels(labels: &[f64]) -> Result<()> {
    match labels.iter().position(|&y| y != 1.0 && y != -1.0) {
        Some(i) => Err(Error::invalid(format!(
            "label of sample {i} is {}, expected +1 or -1",
            labels[i]
        ))),
        None => Ok(()),
    }
}

impl Dataset {
    /// Samples that already carry the homogeneous coordinate (last entry 1).
    pub fn homogeneous(samples: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        let ds = Self::build(samples, labels, true)?;
        if ds.d() < 2 {
            return Err(Error::invalid("homogeneous samples need d >= 2"));
        }
        if let Some(i) = (0..ds.n()).find(|&i| ds.samples[(i, ds.d() - 1)] != 1.0) {
            return Err(Error::invalid(format!(
                "sample {i} has last coordinate {}, expected 1",
                ds.samples[(i, ds.d() - 1)]
            )));
        }
        Ok(ds)
    }

    /// Raw feature rows; a trailing 1 is appended to every sample.
    pub fn from_features(features: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let n = features.len();
        if n == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        let p = features[0].len();
        if let Some(i) = features.iter().position(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                what: "feature count",
                expected: p,
                got: features[i].len(),
            });
        }
        let samples = DMatrix::from_fn(n, p + 1, |i, j| if j < p { features[i][j] } else { 1.0 });
        Self::homogeneous(samples, labels)
    }

    /// Samples used exactly as given, without a bias coordinate.
    pub fn without_bias(samples: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        Self::build(samples, labels, false)
    }

    fn build(samples: DMatrix<f64>, labels: Vec<f64>, homogeneous: bool) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::invalid("dataset is empty"));
        }
        if samples.ncols() == 0 {
            return Err(Error::invalid("samples have no coordinates"));
        }
        ensure_dim("label count", samples.nrows(), labels.len())?;
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("samples have non-finite entries"));
        }
        check_labels(&labels)?;
        Ok(Self {
            samples,
            labels: DVector::from_vec(labels),
            homogeneous,
        })
    }

    /// Parse `f1,...,f{d-1},label` CSV. With `augment` the homogeneous 1 is
    /// appended; otherwise the features are used as-is.
    pub fn from_csv_reader<R: Read>(reader: R, augment: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        if headers.len() < 2 {
            return Err(Error::Parse {
                line: 1,
                message: "header needs at least one feature column and a label column".into(),
            });
        }
        let p = headers.len() - 1;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != p + 1 {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} fields, found {}", p + 1, rec.len()),
                });
            }
            let mut row = Vec::with_capacity(p);
            for field in rec.iter().take(p) {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("non-finite value: {field:?}"),
                    });
                }
                row.push(v);
            }
            let label: f64 = rec[p].parse().map_err(|_| Error::Parse {
                line,
                message: format!("not a label: {:?}", &rec[p]),
            })?;
            if label != 1.0 && label != -1.0 {
                return Err(Error::Parse {
                    line,
                    message: format!("label must be +1 or -1, found {}", &rec[p]),
                });
            }
            rows.push(row);
            labels.push(label);
        }
        if rows.is_empty() {
            return Err(Error::Parse {
                line: 2,
                message: "dataset has no samples".into(),
            });
        }
        if augment {
            Self::from_features(&rows, labels)
        } else {
            let samples = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
            Self::without_bias(samples, labels)
        }
    }

    pub fn from_csv_path(path: impl AsRef<Path>, augment: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, augment)
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn d(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn x(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }

    pub fn y(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// Copy with the labels replaced.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        Self::build(self.samples.clone(), labels, self.homogeneous)
    }
}

/// Output weights `z` and hidden weights `w` (row `j` is `w_j`).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub z: DVector<f64>,
    pub w: DMatrix<f64>,
}

impl NetworkParams {
    pub fn new(z: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::invalid("network needs at least one hidden neuron"));
        }
        ensure_dim("hidden weight rows", z.len(), w.nrows())?;
        if !z.iter().chain(w.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("network parameters have non-finite entries"));
        }
        Ok(Self { z, w })
    }

    pub fn k(&self) -> usize {
        self.z.len()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn w_j(&self, j: usize) -> DVector<f64> {
        self.w.row(j).transpose()
    }

    /// `R_j = z_j w_j`.
    pub fn combined(&self) -> CombinedParams {
        let (k, d) = (self.k(), self.d());
        let r = DVector::from_fn(k * d, |idx, _| self.z[idx / d] * self.w[(idx / d, idx % d)]);
        CombinedParams { r, k, d }
    }

    /// `ŷ_i = Σ_j z_j [w_j·x_i]₊`.
    pub fn predict(&self, data: &Dataset) -> Result<DVector<f64>> {
        ensure_dim("input dimension", data.d(), self.d())?;
        let pre = data.samples() * self.w.transpose();
        Ok(DVector::from_fn(data.n(), |i, _| {
            (0..self.k()).map(|j| self.z[j] * pre[(i, j)].max(0.0)).sum()
        }))
    }
}

/// Stacked `R = (R_1ᵀ, …, R_Kᵀ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedParams {
    r: DVector<f64>,
    k: usize,
    d: usize,
}

impl CombinedParams {
    pub fn from_vector(r: DVector<f64>, k: usize, d: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        ensure_dim("stacked R length", k * d, r.len())?;
        if !r.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("R has non-finite entries"));
        }
        Ok(Self { r, k, d })
    }

    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            r: DVector::zeros(k * d),
            k,
            d,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn neuron(&self, j: usize) -> DVector<f64> {
        self.r.rows(j * self.d, self.d).into_owned()
    }

    pub fn negated(&self) -> Self {
        Self {
            r: -&self.r,
            k: self.k,
            d: self.d,
        }
    }
}

/// A convex per-sample loss `l(ŷ, y)` with its first two derivatives in `ŷ`.
pub trait ConvexLoss: Send + Sync {
    fn value(&self, pred: f64, y: f64) -> f64;
    fn d1(&self, pred: f64, y: f64) -> f64;
    fn d2(&self, pred: f64, y: f64) -> f64;
}

#[derive(Clone, Default)]
pub enum LossKind {
    #[default]
    Squared,
    Convex(Arc<dyn ConvexLoss>),
}

impl fmt::Debug for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Squared => f.write_str("Squared"),
            LossKind::Convex(_) => f.write_str("Convex(..)"),
        }
    }
}

impl LossKind {
    pub fn value(&self, pred: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => (pred - y) * (pred - y),
            LossKind::Convex(l) => l.value(pred, y),
        }
    }

    pub fn d1(&self, pred: f64, y: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0 * (pred - y),
            LossKind::Convex(l) => l.d1(pred, y),
        }
    }

    pub fn d2(&self, pred: f64, y: f64) -> Result<f64> {
        let v = match self {
            LossKind::Squared => 2.0,
            LossKind::Convex(l) => l.d2(pred, y),
        };
        if v < 0.0 {
            return Err(Error::invalid(format!(
                "loss is not convex: l'' = {v} at prediction {pred}"
            )));
        }
        Ok(v)
    }
}

/// `(1/N) Σ_i l(Σ_j z_j [w_j·x_i]₊, y_i)`.
pub fn loss_zw(params: &NetworkParams, data: &Dataset, loss: &LossKind) -> Result<f64> {
    let pred = params.predict(data)?;
    Ok((0..data.n())
        .map(|i| loss.value(pred[i], data.y(i)))
        .sum::<f64>()
        / data.n() as f64)
}

fn check_shapes(r: &CombinedParams, pattern: &ActivationPattern, data: &Dataset) -> Result<()> {
    ensure_dim("pattern rows (N)", data.n(), pattern.n())?;
    ensure_dim("pattern columns (K)", r.k(), pattern.k())?;
    ensure_dim("R block size (d)", data.d(), r.d())
}

/// `ŷ_i = Σ_j I_ij R_j·x_i`.
pub fn predict_r(r: &CombinedParams, pattern: &ActivationPattern, data: &Dataset) -> Result<DVector<f64>> {
    check_shapes(r, pattern, data)?;
    let rm = DMatrix::from_fn(r.k(), r.d(), |j, c| r.as_vector()[j * r.d() + c]);
    let pre = data.samples() * rm.transpose();
    Ok(DVector::from_fn(data.n(), |i, _| {
        (0..r.k())
            .filter(|&j| pattern.get(i, j))
            .map(|j| pre[(i, j)])
            .sum()
    }))
}

/// Squared loss in the combined variables.
pub fn loss_r(r: &CombinedParams, pattern: &ActivationPattern, data: &Dataset) -> Result<f64> {
    loss_r_with(r, pattern, data, &LossKind::Squared)
}

pub fn loss_r_with(
    r: &CombinedParams,
    pattern: &ActivationPattern,
    data: &Dataset,
    loss: &LossKind,
) -> Result<f64> {
    let pred = predict_r(r, pattern, data)?;
    Ok((0..data.n())
        .map(|i| loss.value(pred[i], data.y(i)))
        .sum::<f64>()
        / data.n() as f64)
}

/// `∂L/∂R_j = (2/N) Σ_i (Σ_k I_ik R_k·x_i − y_i) I_ij x_i`, stacked.
pub fn grad_r(r: &CombinedParams, pattern: &ActivationPattern, data: &Dataset) -> Result<DVector<f64>> {
    let pred = predict_r(r, pattern, data)?;
    let (k, d, n) = (r.k(), r.d(), data.n());
    let mut g = DVector::zeros(k * d);
    for i in 0..n {
        let coef = 2.0 * (pred[i] - data.y(i)) / n as f64;
        if coef == 0.0 {
            continue;
        }
        let x = data.samples().row(i);
        for j in (0..k).filter(|&j| pattern.get(i, j)) {
            let mut block = g.rows_mut(j * d, d);
            block += coef * x.transpose();
        }
    }
    Ok(g)
}

/// Hessian of the squared loss in `R`: block `(m, n)` is
/// `(2/N) Σ_i I_im I_in x_i x_iᵀ`. Constant inside a cell.
pub fn hessian_r(pattern: &ActivationPattern, data: &Dataset) -> Result<DMatrix<f64>> {
    let n = data.n();
    weighted_gram(pattern, data, &vec![2.0 / n as f64; n])
}

/// Hessian for a generic convex loss at `r`: `(1/N) Σ_i l''(ŷ_i) x̃_i x̃_iᵀ`.
pub fn hessian_r_with(
    r: &CombinedParams,
    pattern: &ActivationPattern,
    data: &Dataset,
    loss: &LossKind,
) -> Result<DMatrix<f64>> {
    let pred = predict_r(r, pattern, data)?;
    let n = data.n();
    let weights = (0..n)
        .map(|i| Ok(loss.d2(pred[i], data.y(i))? / n as f64))
        .collect::<Result<Vec<_>>>()?;
    weighted_gram(pattern, data, &weights)
}

fn weighted_gram(pattern: &ActivationPattern, data: &Dataset, weights: &[f64]) -> Result<DMatrix<f64>> {
    ensure_dim("pattern rows (N)", data.n(), pattern.n())?;
    let (k, d) = (pattern.k(), data.d());
    let mut h = DMatrix::zeros(k * d, k * d);
    for (i, &wt) in weights.iter().enumerate() {
        let x = data.x(i);
        let outer = &x * x.transpose() * wt;
        for a in (0..k).filter(|&a| pattern.get(i, a)) {
            for b in (0..k).filter(|&b| pattern.get(i, b)) {
                let mut blk = h.view_mut((a * d, b * d), (d, d));
                blk += &outer;
            }
        }
    }
    Ok(h)
}

/// Axis of a 2-D loss slice: `steps` evenly spaced values on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridAxis {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::invalid("grid resolution must be at least 1"));
        }
        if !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(Error::invalid("grid bounds must be finite with lo <= hi"));
        }
        if self.steps == 1 {
            return Ok(vec![self.lo]);
        }
        // divide last so round grids print as round numbers
        let last = (self.steps - 1) as f64;
        Ok((0..self.steps).map(|s| self.lo + (self.hi - self.lo) * s as f64 / last).collect())
    }
}

/// Loss over a slice of weight space: coordinates `coords` of hidden weight
/// `neuron` sweep the two axes, everything else stays at `base`. Rows are
/// `(a, b, loss)` with `a` outer.
pub fn loss_grid(
    base: &NetworkParams,
    neuron: usize,
    coords: (usize, usize),
    axes: (GridAxis, GridAxis),
    data: &Dataset,
    exec: crate::exec::Execution,
) -> Result<Vec<(f64, f64, f64)>> {
    if neuron >= base.k() || coords.0 >= base.d() || coords.1 >= base.d() || coords.0 == coords.1 {
        return Err(Error::invalid("grid slice out of range"));
    }
    ensure_dim("weight dimension (d)", data.d(), base.d())?;
    let (av, bv) = (axes.0.values()?, axes.1.values()?);
    let nb = bv.len();
    exec.map(av.len() * nb, |idx| {
        let (a, b) = (av[idx / nb], bv[idx % nb]);
        let mut p = base.clone();
        p.w[(neuron, coords.0)] = a;
        p.w[(neuron, coords.1)] = b;
        Ok((a, b, loss_zw(&p, data, &LossKind::Squared)?))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::pattern_from_weights;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    #[test]
    fn csv_roundtrip_and_errors() {
        let ok = "f1,label\n0.5,1\n-0.5,-1\n";
        let ds = Dataset::from_csv_reader(ok.as_bytes(), true).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 2));
        assert_eq!(ds.x(1).as_slice(), &[-0.5, 1.0]);

        let empty = "f1,label\n";
        assert!(matches!(
            Dataset::from_csv_reader(empty.as_bytes(), true),
            Err(Error::Parse { .. })
        ));
        let bad = "f1,label\n0.5,1\nabc,-1\n";
        match Dataset::from_csv_reader(bad.as_bytes(), true) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let bad_label = "f1,label\n0.5,2\n";
        assert!(matches!(
            Dataset::from_csv_reader(bad_label.as_bytes(), true),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn homogeneous_invariant() {
        let s = DMatrix::from_row_slice(1, 2, &[0.3, 0.9]);
        assert!(Dataset::homogeneous(s.clone(), vec![1.0]).is_err());
        assert!(Dataset::without_bias(s, vec![1.0]).is_ok());
    }

    #[test]
    fn two_sample_plateau_loss() {
        let data = fixtures::two_sample_dataset(false);
        let params = NetworkParams::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_row_slice(1, 2, &[-1.0, -2.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(loss_zw(&params, &data, &LossKind::Squared).unwrap(), 1.0);
    }

    #[test]
    fn zero_output_weights_give_mean_label_energy() {
        let data = fixtures::two_sample_dataset(true);
        let params = NetworkParams::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.5]),
        )
        .unwrap();
        assert_abs_diff_eq!(loss_zw(&params, &data, &LossKind::Squared).unwrap(), 1.0);
    }

    #[test]
    fn loss_r_at_r4_minimum_is_zero() {
        let data = fixtures::two_sample_dataset(false);
        let r = CombinedParams::from_vector(DVector::from_vec(vec![1.0, 1.0]), 1, 2).unwrap();
        let p = fixtures::two_sample_pattern(fixtures::TwoSampleCell::R4);
        assert_abs_diff_eq!(loss_r(&r, &p, &data).unwrap(), 0.0);
        let zero = ActivationPattern::zeros(2, 1);
        assert_abs_diff_eq!(loss_r(&r, &zero, &data).unwrap(), 1.0);
    }

    #[test]
    fn zero_pattern_has_zero_gradient_and_hessian() {
        let data = fixtures::two_sample_dataset(false);
        let r = CombinedParams::from_vector(DVector::from_vec(vec![0.3, -2.0]), 1, 2).unwrap();
        let zero = ActivationPattern::zeros(2, 1);
        assert!(grad_r(&r, &zero, &data).unwrap().iter().all(|&v| v == 0.0));
        assert!(hessian_r(&zero, &data).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn r4_hessian_is_identity() {
        // (2/N)(x1 x1ᵀ + x2 x2ᵀ) with N = 2
        let data = fixtures::two_sample_dataset(false);
        let p = fixtures::two_sample_pattern(fixtures::TwoSampleCell::R4);
        let h = hessian_r(&p, &data).unwrap();
        assert_abs_diff_eq!(h, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn reparameterization_and_scale_symmetry() {
        let data = fixtures::two_sample_dataset(false);
        let w = DMatrix::from_row_slice(2, 2, &[0.7, 0.4, -0.2, 1.3]);
        let z = DVector::from_vec(vec![1.5, -0.8]);
        let params = NetworkParams::new(z.clone(), w.clone()).unwrap();
        let pattern = pattern_from_weights(&w, &data).unwrap();
        let a = loss_zw(&params, &data, &LossKind::Squared).unwrap();
        let b = loss_r(&params.combined(), &pattern, &data).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);

        let c = 3.7;
        let scaled = NetworkParams::new(z * c, w / c).unwrap();
        assert_abs_diff_eq!(
            loss_zw(&scaled, &data, &LossKind::Squared).unwrap(),
            a,
            epsilon = 1e-14
        );
    }

    struct NegativeCurvature;
    impl ConvexLoss for NegativeCurvature {
        fn value(&self, p: f64, _: f64) -> f64 {
            -p * p
        }
        fn d1(&self, p: f64, _: f64) -> f64 {
            -2.0 * p
        }
        fn d2(&self, _: f64, _: f64) -> f64 {
            -2.0
        }
    }

    #[test]
    fn non_convex_loss_is_rejected_by_hessian() {
        let data = fixtures::two_sample_dataset(false);
        let p = fixtures::two_sample_pattern(fixtures::TwoSampleCell::R4);
        let r = CombinedParams::zeros(1, 2);
        let loss = LossKind::Convex(Arc::new(NegativeCurvature));
        assert!(hessian_r_with(&r, &p, &data, &loss).is_err());
    }

    #[test]
    fn grid_shapes() {
        let data = fixtures::two_sample_dataset(false);
        let base = NetworkParams::new(DVector::from_element(1, 1.0), DMatrix::zeros(1, 2)).unwrap();
        let ax = GridAxis { lo: -1.0, hi: 1.0, steps: 3 };
        let g = loss_grid(&base, 0, (0, 1), (ax, ax), &data, crate::exec::Execution::Sequential).unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], (-1.0, -1.0, 1.0));
        assert_eq!(g[8], (1.0, 1.0, 0.0));
        let one = GridAxis { lo: 0.5, hi: 0.5, steps: 1 };
        assert_eq!(loss_grid(&base, 0, (0, 1), (one, one), &data, Default::default()).unwrap().len(), 1);
        let zero = GridAxis { steps: 0, ..ax };
        assert!(loss_grid(&base, 0, (0, 1), (zero, ax), &data, Default::default()).is_err());
    }
}
