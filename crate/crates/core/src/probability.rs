//! Trapping probability for parallel hidden weights and Gaussian classes.
//!
//! All hidden weights share one direction `i`; weight `k` is a normal sign
//! `n_k = ±1` and an offset `h_k` along `i`, with `z_k = n_k`, so neuron `k`
//! contributes `x − h_k` wherever `n_k (x − h_k) > 0`. Only the coordinate
//! along `i` matters, so everything here is one-dimensional.
//!
//! The offsets partition the line into regions with constant activations.
//! Minimizing the loss over the offsets is the linear system `F h = f`; the
//! starting offsets are trapped at the cell minimum `h*` iff no sample falls
//! between `h_k` and `h*_k` for any `k`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::general_least_squares;
use crate::model::{loss_zw, Dataset, LossKind, NetworkParams};

/// Standard normal CDF.
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `Φ(b) − Φ(a)` for `a <= b`, evaluated on the tail that keeps precision.
pub fn std_normal_mass(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a >= 0.0 {
        phi_cdf(-a) - phi_cdf(-b)
    } else {
        phi_cdf(b) - phi_cdf(a)
    }
}

/// Regions whose class mass falls below this are degenerate.
pub const DEGENERATE_MASS: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    /// `+1` if the weight points along `i`, `-1` otherwise.
    pub normal: i8,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelWeightConfig {
    pub weights: Vec<WeightSpec>,
}

impl ParallelWeightConfig {
    pub fn new(weights: Vec<WeightSpec>) -> Result<Self> {
        let cfg = Self { weights };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Normals and offsets given separately.
    pub fn from_parts(normals: &[i8], offsets: &[f64]) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::DimensionMismatch {
                what: "offset count",
                expected: normals.len(),
                got: offsets.len(),
            });
        }
        Self::new(
            normals
                .iter()
                .zip(offsets)
                .map(|(&normal, &offset)| WeightSpec { normal, offset })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::invalid("need at least one weight"));
        }
        for (k, w) in self.weights.iter().enumerate() {
            if w.normal != 1 && w.normal != -1 {
                return Err(Error::invalid(format!("weight {k} has normal {}, expected ±1", w.normal)));
            }
            if !w.offset.is_finite() {
                return Err(Error::invalid(format!("weight {k} has a non-finite offset")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn offsets(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.offset).collect()
    }

    pub fn with_offset(&self, k: usize, offset: f64) -> Self {
        let mut c = self.clone();
        c.weights[k].offset = offset;
        c
    }

    pub fn with_offsets(&self, offsets: &[f64]) -> Self {
        let mut c = self.clone();
        for (w, &h) in c.weights.iter_mut().zip(offsets) {
            w.offset = h;
        }
        c
    }

    /// `n_k (x − h_k) > 0`.
    pub fn active(&self, k: usize, x: f64) -> bool {
        let w = self.weights[k];
        w.normal as f64 * (x - w.offset) > 0.0
    }

    /// Network output `Σ_k [active] (x − h_k)`.
    pub fn predict(&self, x: f64) -> f64 {
        (0..self.k())
            .filter(|&k| self.active(k, x))
            .map(|k| x - self.weights[k].offset)
            .sum()
    }

    /// The equivalent network on homogeneous samples `(x, 1)`:
    /// `w_k = (n_k, −n_k h_k)`, `z_k = n_k`.
    pub fn network(&self) -> NetworkParams {
        let k = self.k();
        let z = DVector::from_iterator(k, self.weights.iter().map(|w| w.normal as f64));
        let w = DMatrix::from_fn(k, 2, |j, c| {
            let n = self.weights[j].normal as f64;
            if c == 0 {
                n
            } else {
                -n * self.weights[j].offset
            }
        });
        NetworkParams::new(z, w).expect("finite by validation")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianClassModel {
    pub mean_plus: f64,
    pub mean_minus: f64,
    pub sigma: f64,
    pub prior_plus: f64,
}

impl Default for GaussianClassModel {
    fn default() -> Self {
        Self {
            mean_plus: 1.0,
            mean_minus: -1.0,
            sigma: 1.0,
            prior_plus: 0.5,
        }
    }
}

impl GaussianClassModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma must be positive"));
        }
        if !(self.prior_plus > 0.0 && self.prior_plus < 1.0) {
            return Err(Error::invalid("prior_plus must lie in (0, 1)"));
        }
        if !self.mean_plus.is_finite() || !self.mean_minus.is_finite() {
            return Err(Error::invalid("class means must be finite"));
        }
        Ok(())
    }

    /// Class-conditional mass of `(lo, hi)` for label `+1` or `-1`.
    pub fn class_mass(&self, positive: bool, lo: f64, hi: f64) -> f64 {
        let mu = if positive { self.mean_plus } else { self.mean_minus };
        std_normal_mass((lo - mu) / self.sigma, (hi - mu) / self.sigma)
    }

    /// Mixture mass of `(lo, hi)`.
    pub fn mass(&self, lo: f64, hi: f64) -> f64 {
        self.prior_plus * self.class_mass(true, lo, hi)
            + (1.0 - self.prior_plus) * self.class_mass(false, lo, hi)
    }

    /// `∫_lo^hi x p(x) dx` for one class, i.e. `P · x̄`.
    pub fn class_moment(&self, positive: bool, lo: f64, hi: f64) -> f64 {
        let mu = if positive { self.mean_plus } else { self.mean_minus };
        let a = (lo - mu) / self.sigma;
        let b = (hi - mu) / self.sigma;
        if a >= b {
            return 0.0;
        }
        mu * std_normal_mass(a, b) + self.sigma * (phi_pdf(a) - phi_pdf(b))
    }

    /// Draw one labeled sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let positive = rng.random::<f64>() < self.prior_plus;
        let mu = if positive { self.mean_plus } else { self.mean_minus };
        let x = Normal::new(mu, self.sigma).expect("validated").sample(rng);
        (x, if positive { 1.0 } else { -1.0 })
    }
}

/// Interval of the line with constant activations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    pub lo: f64,
    pub hi: f64,
    pub active: Vec<bool>,
}

impl Region {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Split the line at the (merged) offsets, left to right.
pub fn region_partition(cfg: &ParallelWeightConfig) -> Vec<Region> {
    let mut cuts = cfg.offsets();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(f64::NEG_INFINITY);
    bounds.extend(cuts.iter().copied());
    bounds.push(f64::INFINITY);
    bounds
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let probe = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (false, true) => hi - 1.0,
                (true, false) => lo + 1.0,
                (false, false) => 0.0,
            };
            Region {
                lo,
                hi,
                active: (0..cfg.k()).map(|k| cfg.active(k, probe)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionStat {
    pub region: Region,
    pub p_plus: f64,
    pub p_minus: f64,
    /// `P_{j+} x̄_{j+}`.
    pub moment_plus: f64,
    pub moment_minus: f64,
    /// Truncated means; `None` when the class mass is degenerate.
    pub mean_plus: Option<f64>,
    pub mean_minus: Option<f64>,
    pub degenerate: bool,
}

pub fn region_stats_gaussian(regions: &[Region], model: &GaussianClassModel) -> Result<Vec<RegionStat>> {
    model.validate()?;
    Ok(regions
        .iter()
        .map(|r| {
            let p_plus = model.class_mass(true, r.lo, r.hi);
            let p_minus = model.class_mass(false, r.lo, r.hi);
            let moment_plus = model.class_moment(true, r.lo, r.hi);
            let moment_minus = model.class_moment(false, r.lo, r.hi);
            let mean = |p: f64, m: f64| (p >= DEGENERATE_MASS).then(|| (m / p).clamp(r.lo, r.hi));
            RegionStat {
                region: r.clone(),
                p_plus,
                p_minus,
                moment_plus,
                moment_minus,
                mean_plus: mean(p_plus, moment_plus),
                mean_minus: mean(p_minus, moment_minus),
                degenerate: p_plus < DEGENERATE_MASS || p_minus < DEGENERATE_MASS,
            }
        })
        .collect())
}

/// Population form of `F h = f`. Class terms are weighted by twice their
/// prior, so equal priors give `F(l,k) = Σ_j I_jl I_jk (P_{j+} + P_{j−})`.
pub fn assemble_f_f(cfg: &ParallelWeightConfig, stats: &[RegionStat], model: &GaussianClassModel) -> (DMatrix<f64>, DVector<f64>) {
    let k = cfg.k();
    let wp = 2.0 * model.prior_plus;
    let wm = 2.0 * (1.0 - model.prior_plus);
    let mut f_mat = DMatrix::zeros(k, k);
    let mut f_vec = DVector::zeros(k);
    for s in stats {
        let act = &s.region.active;
        let mass = wp * s.p_plus + wm * s.p_minus;
        let moment = wp * s.moment_plus + wm * s.moment_minus;
        let label = wp * s.p_plus - wm * s.p_minus;
        let count = s.region.active_count() as f64;
        for l in (0..k).filter(|&l| act[l]) {
            for kk in (0..k).filter(|&kk| act[kk]) {
                f_mat[(l, kk)] += mass;
            }
            f_vec[l] += count * moment - label;
        }
    }
    (f_mat, f_vec)
}

/// Sample form of `F h = f`: counts and sums over the drawn samples.
pub fn assemble_f_f_samples(cfg: &ParallelWeightConfig, xs: &[f64], ys: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let k = cfg.k();
    let mut f_mat = DMatrix::zeros(k, k);
    let mut f_vec = DVector::zeros(k);
    let mut act = vec![false; k];
    for (&x, &y) in xs.iter().zip(ys) {
        for (kk, a) in act.iter_mut().enumerate() {
            *a = cfg.active(kk, x);
        }
        let count = act.iter().filter(|&&a| a).count() as f64;
        for l in (0..k).filter(|&l| act[l]) {
            for kk in (0..k).filter(|&kk| act[kk]) {
                f_mat[(l, kk)] += 1.0;
            }
            f_vec[l] += count * x - y;
        }
    }
    (f_mat, f_vec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalLocations {
    /// `h*_k`, or `None` where the offset is free.
    pub h_star: Vec<Option<f64>>,
    /// Every offset is free: the loss is flat in all of them.
    pub plateau: bool,
}

const FREE_TOL: f64 = 1e-8;

// F is diagonally scaled first: a weight whose active region holds little
// mass is still pinned down, and only a massless one (zero row) is free.
fn solve_locations(f_mat: &DMatrix<f64>, f_vec: &DVector<f64>, rank_tol: f64) -> Result<OptimalLocations> {
    let s = DVector::from_fn(f_vec.len(), |k, _| {
        let d = f_mat[(k, k)];
        if d > 0.0 { d.sqrt().recip() } else { 1.0 }
    });
    let scaled = DMatrix::from_fn(f_mat.nrows(), f_mat.ncols(), |i, j| s[i] * f_mat[(i, j)] * s[j]);
    let set = general_least_squares(&scaled, &f_vec.component_mul(&s), rank_tol)?;
    let h_star: Vec<Option<f64>> = (0..f_vec.len())
        .map(|k| {
            let free = set.projector.row(k).amax() > FREE_TOL;
            (!free).then_some(s[k] * set.particular[k])
        })
        .collect();
    Ok(OptimalLocations {
        plateau: h_star.iter().all(Option::is_none),
        h_star,
    })
}

/// Cell-optimal offsets under the population model.
pub fn optimal_locations(cfg: &ParallelWeightConfig, model: &GaussianClassModel, rank_tol: f64) -> Result<OptimalLocations> {
    cfg.validate()?;
    let stats = region_stats_gaussian(&region_partition(cfg), model)?;
    let (f_mat, f_vec) = assemble_f_f(cfg, &stats, model);
    solve_locations(&f_mat, &f_vec, rank_tol)
}

/// Cell-optimal offsets for a concrete sample.
pub fn optimal_locations_from_samples(cfg: &ParallelWeightConfig, xs: &[f64], ys: &[f64], rank_tol: f64) -> Result<OptimalLocations> {
    let (f_mat, f_vec) = assemble_f_f_samples(cfg, xs, ys);
    solve_locations(&f_mat, &f_vec, rank_tol)
}

/// Gap of each weight: the interval between `h_k` and `h*_k` (none if free).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapSet {
    pub gaps: Vec<Option<(f64, f64)>>,
}

impl GapSet {
    pub fn new(cfg: &ParallelWeightConfig, opt: &OptimalLocations) -> Self {
        Self {
            gaps: cfg
                .weights
                .iter()
                .zip(&opt.h_star)
                .map(|(w, h)| h.map(|h| (w.offset.min(h), w.offset.max(h))))
                .collect(),
        }
    }

    /// Only the gaps listed in `tracked` (all when `None`).
    pub fn intervals(&self, tracked: Option<&[usize]>) -> Vec<(f64, f64)> {
        self.gaps
            .iter()
            .enumerate()
            .filter(|(k, _)| tracked.is_none_or(|t| t.contains(k)))
            .filter_map(|(_, g)| *g)
            .filter(|(lo, hi)| hi > lo)
            .collect()
    }

    pub fn contains(&self, x: f64, tracked: Option<&[usize]>) -> bool {
        self.gaps
            .iter()
            .enumerate()
            .filter(|(k, _)| tracked.is_none_or(|t| t.contains(k)))
            .any(|(_, g)| matches!(g, Some((lo, hi)) if x > *lo && x < *hi))
    }
}

/// Sorted, merged union of intervals.
pub fn merge_intervals(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.retain(|(a, b)| b > a);
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapProbability {
    /// Mass of the union of the tracked gaps.
    pub exact: f64,
    /// Largest single-gap mass (a lower bound on `exact`).
    pub max: f64,
    /// Mass of every gap (0 for free weights), tracked or not.
    pub per_gap: Vec<f64>,
}

pub fn gap_probability(gaps: &GapSet, model: &GaussianClassModel, tracked: Option<&[usize]>) -> Result<GapProbability> {
    model.validate()?;
    let per_gap: Vec<f64> = gaps
        .gaps
        .iter()
        .map(|g| g.map_or(0.0, |(lo, hi)| model.mass(lo, hi)))
        .collect();
    let exact = merge_intervals(gaps.intervals(tracked))
        .into_iter()
        .map(|(lo, hi)| model.mass(lo, hi))
        .sum::<f64>()
        .min(1.0);
    let max = per_gap
        .iter()
        .enumerate()
        .filter(|(k, _)| tracked.is_none_or(|t| t.contains(k)))
        .map(|(_, &p)| p)
        .fold(0.0, f64::max);
    Ok(GapProbability { exact, max, per_gap })
}

/// `(1 − P_g)^N`.
pub fn trap_probability(p_g: f64, n: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_g) {
        return Err(Error::invalid(format!("gap probability {p_g} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    Ok((1.0 - p_g).powf(n as f64))
}

/// Analytic quantities for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrapAnalysis {
    pub optimal: OptimalLocations,
    pub gaps: GapSet,
    pub gap_probability: GapProbability,
    /// `(1 − P_g)^N` with the exact union.
    pub p_trap: f64,
    /// Same with the max lower bound.
    pub p_trap_max: f64,
    /// `Π_k (1 − P(g_k))^N` over the tracked gaps.
    pub p_trap_product: f64,
}

pub fn analyze_trap(
    cfg: &ParallelWeightConfig,
    model: &GaussianClassModel,
    n: u64,
    tracked: Option<&[usize]>,
    rank_tol: f64,
) -> Result<TrapAnalysis> {
    let optimal = optimal_locations(cfg, model, rank_tol)?;
    let gaps = GapSet::new(cfg, &optimal);
    let gp = gap_probability(&gaps, model, tracked)?;
    let mut product = 1.0;
    for (k, &p) in gp.per_gap.iter().enumerate() {
        if tracked.is_none_or(|t| t.contains(&k)) {
            product *= trap_probability(p.min(1.0), n)?;
        }
    }
    Ok(TrapAnalysis {
        p_trap: trap_probability(gp.exact, n)?,
        p_trap_max: trap_probability(gp.max, n)?,
        p_trap_product: product,
        optimal,
        gaps,
        gap_probability: gp,
    })
}

/// Where the Monte Carlo oracle takes `h*` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HStarSource {
    /// Fixed population gaps; each trial only tests its samples against them.
    #[default]
    Population,
    /// Re-solve `F h = f` from each trial's own samples.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub trapped: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub seed: u64,
}

/// Wilson score interval with `z` standard deviations.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Per-trial generator: the seed picks the key, the trial index the stream,
/// so results do not depend on scheduling or thread count.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions<'a> {
    pub trials: u64,
    pub seed: u64,
    pub hstar: HStarSource,
    /// Gaps that count; `None` means all.
    pub tracked: Option<&'a [usize]>,
    pub rank_tol: f64,
    pub exec: Execution,
}

/// Fraction of trials in which no sample lands in a (tracked) gap.
pub fn monte_carlo_trap(
    cfg: &ParallelWeightConfig,
    model: &GaussianClassModel,
    n: usize,
    opts: &McOptions<'_>,
) -> Result<McEstimate> {
    if opts.trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    cfg.validate()?;
    model.validate()?;
    let population = GapSet::new(cfg, &optimal_locations(cfg, model, opts.rank_tol)?);
    let trapped = opts.exec.count(opts.trials as usize, |t| {
        let mut rng = trial_rng(opts.seed, t as u64);
        match opts.hstar {
            HStarSource::Population => {
                (0..n).all(|_| !population.contains(model.sample(&mut rng).0, opts.tracked))
            }
            HStarSource::Empirical => {
                let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n).map(|_| model.sample(&mut rng)).unzip();
                match optimal_locations_from_samples(cfg, &xs, &ys, opts.rank_tol) {
                    Ok(opt) => {
                        let gaps = GapSet::new(cfg, &opt);
                        xs.iter().all(|&x| !gaps.contains(x, opts.tracked))
                    }
                    Err(_) => false,
                }
            }
        }
    });
    let (ci_lo, ci_hi) = wilson_interval(trapped, opts.trials, 3.0);
    Ok(McEstimate {
        trapped,
        trials: opts.trials,
        p_hat: trapped as f64 / opts.trials as f64,
        ci_lo,
        ci_hi,
        seed: opts.seed,
    })
}

/// `n` labeled samples as a homogeneous dataset `(x, 1)`.
pub fn draw_dataset(model: &GaussianClassModel, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n).map(|_| model.sample(rng)).unzip();
    let features: Vec<Vec<f64>> = xs.into_iter().map(|x| vec![x]).collect();
    Dataset::from_features(&features, ys)
}

/// Mean loss of the parallel-weight network as weight `swept` moves over
/// `offsets`. The same `replicates` datasets (streams `0..replicates` of
/// `seed`) are reused at every offset, so the curve is smooth.
pub fn empirical_loss_curve(
    cfg: &ParallelWeightConfig,
    swept: usize,
    offsets: &[f64],
    model: &GaussianClassModel,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if swept >= cfg.k() {
        return Err(Error::invalid(format!("weight {swept} out of range")));
    }
    if replicates == 0 || n == 0 {
        return Err(Error::invalid("need at least one sample and one replicate"));
    }
    model.validate()?;
    let sets: Vec<Dataset> = (0..replicates)
        .map(|r| draw_dataset(model, n, &mut trial_rng(seed, r as u64)))
        .collect::<Result<_>>()?;
    offsets
        .iter()
        .map(|&h| {
            if !h.is_finite() {
                return Err(Error::invalid("offsets must be finite"));
            }
            let params = cfg.with_offset(swept, h).network();
            let mut total = 0.0;
            for ds in &sets {
                total += loss_zw(&params, ds, &LossKind::Squared)?;
            }
            Ok((h, total / replicates as f64))
        })
        .collect()
}

/// Which gaps count towards the trapping probability in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tracked {
    /// Only the gap of the weight being moved.
    #[default]
    Swept,
    All,
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ParallelWeightConfig,
    pub swept: usize,
    pub offsets: Vec<f64>,
    pub model: GaussianClassModel,
    pub n: usize,
    pub trials: u64,
    pub seed: u64,
    pub tracked: Tracked,
    pub hstar: HStarSource,
    pub loss_replicates: usize,
    pub rank_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub offset: f64,
    pub p_t_analytic: f64,
    pub p_t_mc: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub loss_mean: f64,
}

/// Seed of sweep point `i`: distinct keys per point, derived from `seed`.
pub fn point_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Analytic and Monte Carlo trapping probability plus mean loss at every
/// offset of the swept weight. Sweep points run sequentially; each point's
/// trials use `exec`.
pub fn sweep(spec: &SweepSpec, exec: Execution) -> Result<Vec<SweepRow>> {
    if spec.swept >= spec.base.k() {
        return Err(Error::invalid(format!("weight {} out of range", spec.swept)));
    }
    let tracked_idx = [spec.swept];
    let tracked = match spec.tracked {
        Tracked::Swept => Some(&tracked_idx[..]),
        Tracked::All => None,
    };
    let losses = empirical_loss_curve(
        &spec.base,
        spec.swept,
        &spec.offsets,
        &spec.model,
        spec.n,
        spec.loss_replicates.max(1),
        spec.seed,
    )?;
    let mut rows = Vec::with_capacity(spec.offsets.len());
    for (i, (&h, (_, loss))) in spec.offsets.iter().zip(losses).enumerate() {
        let cfg = spec.base.with_offset(spec.swept, h);
        let analytic = analyze_trap(&cfg, &spec.model, spec.n as u64, tracked, spec.rank_tol)?;
        let mc = monte_carlo_trap(
            &cfg,
            &spec.model,
            spec.n,
            &McOptions {
                trials: spec.trials,
                seed: point_seed(spec.seed, i),
                hstar: spec.hstar,
                tracked,
                rank_tol: spec.rank_tol,
                exec,
            },
        )?;
        rows.push(SweepRow {
            offset: h,
            p_t_analytic: analytic.p_trap,
            p_t_mc: mc.p_hat,
            ci_lo: mc.ci_lo,
            ci_hi: mc.ci_hi,
            loss_mean: loss,
        });
    }
    Ok(rows)
}

/// The two-weight setting of the moving-weight experiment: `w1` points
/// along `+i` at `t`, `w2` along `−i` at `h2`.
pub fn two_weight_config(t: f64, h2: f64) -> ParallelWeightConfig {
    ParallelWeightConfig::from_parts(&[1, -1], &[t, h2]).expect("valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn phi_identities() {
        assert_eq!(phi_cdf(0.0), 0.5);
        for x in [0.3, 1.7, 5.0, 9.0] {
            assert_abs_diff_eq!(phi_cdf(x) + phi_cdf(-x), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(std_normal_mass(f64::NEG_INFINITY, f64::INFINITY), 1.0, epsilon = 1e-15);
        // far tail keeps relative precision
        let tail = std_normal_mass(10.0, 11.0);
        assert!(tail > 7e-24 && tail < 8e-24, "{tail}");
    }

    #[test]
    fn half_line_stats() {
        let model = GaussianClassModel::default();
        let r = Region {
            lo: 1.0,
            hi: f64::INFINITY,
            active: vec![true],
        };
        let s = &region_stats_gaussian(&[r], &model).unwrap()[0];
        assert_abs_diff_eq!(s.p_plus, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean_plus.unwrap(), 1.0 + (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn whole_line_stats() {
        let model = GaussianClassModel::default();
        let r = Region {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            active: vec![],
        };
        let s = &region_stats_gaussian(&[r], &model).unwrap()[0];
        assert_abs_diff_eq!(s.p_minus, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean_minus.unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn partition_shapes() {
        let cfg = two_weight_config(2.0, 0.0);
        let regions = region_partition(&cfg);
        assert_eq!(regions.len(), 3);
        assert_eq!(regions[0].active, vec![false, true]);
        assert_eq!(regions[1].active, vec![false, false]);
        assert_eq!(regions[2].active, vec![true, false]);

        let one = ParallelWeightConfig::from_parts(&[1], &[0.0]).unwrap();
        let r = region_partition(&one);
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].active[0], r[1].active[0]), (false, true));

        let dup = ParallelWeightConfig::from_parts(&[1, 1], &[0.5, 0.5]).unwrap();
        assert_eq!(region_partition(&dup).len(), 2);
    }

    #[test]
    fn opposed_weights_give_diagonal_f() {
        let model = GaussianClassModel::default();
        let cfg = two_weight_config(2.0, 0.0);
        let stats = region_stats_gaussian(&region_partition(&cfg), &model).unwrap();
        let (f_mat, _) = assemble_f_f(&cfg, &stats, &model);
        assert_eq!(f_mat[(0, 1)], 0.0);
        assert_abs_diff_eq!(f_mat[(0, 0)], stats[2].p_plus + stats[2].p_minus, epsilon = 1e-15);
        assert_abs_diff_eq!(f_mat[(1, 1)], stats[0].p_plus + stats[0].p_minus, epsilon = 1e-15);
    }

    #[test]
    fn same_direction_without_gap_is_rank_deficient() {
        let model = GaussianClassModel::default();
        let cfg = ParallelWeightConfig::from_parts(&[1, 1], &[0.5, 0.5]).unwrap();
        let stats = region_stats_gaussian(&region_partition(&cfg), &model).unwrap();
        let (f_mat, _) = assemble_f_f(&cfg, &stats, &model);
        assert_eq!(f_mat.row(0), f_mat.row(1));
        let opt = optimal_locations(&cfg, &model, 1e-10).unwrap();
        assert!(opt.h_star.iter().all(Option::is_none));
    }

    #[test]
    fn trap_probability_values() {
        assert_eq!(trap_probability(0.0, 100).unwrap(), 1.0);
        assert_eq!(trap_probability(1.0, 100).unwrap(), 0.0);
        assert_abs_diff_eq!(trap_probability(0.05, 100).unwrap(), 0.95f64.powi(100), epsilon = 1e-15);
        assert!(trap_probability(1.5, 10).is_err());
        assert!(trap_probability(0.5, 0).is_err());
    }

    #[test]
    fn gap_union() {
        let model = GaussianClassModel::default();
        let gaps = GapSet {
            gaps: vec![Some((0.0, f64::INFINITY)), Some((0.5, 1.0)), None],
        };
        let gp = gap_probability(&gaps, &model, None).unwrap();
        assert_abs_diff_eq!(gp.exact, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(gp.max, 0.5, epsilon = 1e-15);
        assert_eq!(gp.per_gap[2], 0.0);
        let zero = GapSet { gaps: vec![Some((1.0, 1.0))] };
        assert_eq!(gap_probability(&zero, &model, None).unwrap().exact, 0.0);
    }

    #[test]
    fn merge() {
        assert_eq!(
            merge_intervals(vec![(2.0, 3.0), (0.0, 1.0), (0.5, 2.0), (5.0, 5.0)]),
            vec![(0.0, 3.0)]
        );
    }

    #[test]
    fn wilson_brackets_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 3.0);
        assert!(lo < 0.3 && hi > 0.3);
        assert_eq!(wilson_interval(0, 100, 3.0).0, 0.0);
    }

    #[test]
    fn mc_far_gap_always_trapped() {
        // single weight far to the right: its gap carries no mass
        let model = GaussianClassModel::default();
        let cfg = ParallelWeightConfig::from_parts(&[1], &[40.0]).unwrap();
        let est = monte_carlo_trap(
            &cfg,
            &model,
            100,
            &McOptions {
                trials: 200,
                seed: 1,
                hstar: HStarSource::Population,
                tracked: None,
                rank_tol: 1e-10,
                exec: Execution::Sequential,
            },
        )
        .unwrap();
        assert_eq!(est.trapped, 200);
    }

    #[test]
    fn mc_reproducible_across_execution() {
        let model = GaussianClassModel::default();
        let cfg = two_weight_config(3.3, 0.0);
        let mk = |exec| McOptions {
            trials: 500,
            seed: 9,
            hstar: HStarSource::Population,
            tracked: Some(&[0][..]),
            rank_tol: 1e-10,
            exec,
        };
        let a = monte_carlo_trap(&cfg, &model, 100, &mk(Execution::Sequential)).unwrap();
        let b = monte_carlo_trap(&cfg, &model, 100, &mk(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn network_matches_predict() {
        let cfg = ParallelWeightConfig::from_parts(&[1, -1, 1], &[0.3, -0.2, 1.1]).unwrap();
        let net = cfg.network();
        let xs = [-2.0, -0.1, 0.5, 1.5];
        let features: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let ds = Dataset::from_features(&features, vec![1.0; 4]).unwrap();
        let pred = net.predict(&ds).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            assert_abs_diff_eq!(pred[i], cfg.predict(x), epsilon = 1e-14);
        }
    }
}
