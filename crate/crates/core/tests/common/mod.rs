//! Random instances shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use relu_landscape::cells::{pattern_from_weights, ActivationPattern};
use relu_landscape::model::Dataset;

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gauss_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gauss(rng))
}

pub fn gauss_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gauss(rng))
}

/// `r × c` matrix of rank at most `rank` (a product of Gaussian factors).
pub fn low_rank(rng: &mut ChaCha8Rng, r: usize, c: usize, rank: usize) -> DMatrix<f64> {
    if rank == 0 {
        return DMatrix::zeros(r, c);
    }
    gauss_matrix(rng, r, rank) * gauss_matrix(rng, rank, c)
}

/// `n` samples with `d − 1` Gaussian features plus the bias coordinate.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let features: Vec<Vec<f64>> = (0..n).map(|_| (0..d - 1).map(|_| gauss(rng)).collect()).collect();
    let labels = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Dataset::from_features(&features, labels).unwrap()
}

/// Random data with the pattern of random hidden weights.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, d: usize) -> (Dataset, ActivationPattern, DMatrix<f64>) {
    let data = random_dataset(rng, n, d);
    let w = gauss_matrix(rng, k, d);
    let pattern = pattern_from_weights(&w, &data).unwrap();
    (data, pattern, w)
}

/// Sizes for the random-instance suites: N ≤ 30, K ≤ 4, d ≤ 5.
pub fn random_sizes(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(2..=30), rng.random_range(1..=4), rng.random_range(2..=5))
}

use nalgebra::DVector as Vector;
use relu_landscape::model::{loss_zw, LossKind, NetworkParams};
use relu_landscape::nondiff::{BoundaryConfig, BranchVerdict, NonDiffSolution};
use relu_landscape::model::CombinedParams;

/// One feature plus bias, neuron `m` pinned on the hyperplane of sample `n`.
/// Neuron `m` is active on one side of `t_n`; with `k = 2` the other neuron
/// is active on one side of a random threshold.
pub fn random_boundary(rng: &mut ChaCha8Rng, k: usize) -> (Dataset, BoundaryConfig) {
    let count = rng.random_range(4..=9);
    let ts: Vec<f64> = (0..count).map(|_| rng.random_range(-3.0..3.0)).collect();
    let labels: Vec<f64> = (0..count).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let features: Vec<Vec<f64>> = ts.iter().map(|&t| vec![t]).collect();
    let data = Dataset::from_features(&features, labels).unwrap();
    let n = rng.random_range(0..count);
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let cut = rng.random_range(-3.0..3.0);
    let side2 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let pattern = ActivationPattern::from_fn(count, k, |i, j| {
        if j == 0 {
            side * (ts[i] - ts[n]) > 0.0
        } else {
            side2 * (ts[i] - cut) > 0.0
        }
    });
    let cfg = BoundaryConfig::new(0, n, &pattern).unwrap();
    (data, cfg)
}

/// Parameters of a branch whose weights lie in their cells, accepted or not.
pub fn branch_params(sol: &NonDiffSolution, b: &BranchVerdict) -> Option<NetworkParams> {
    let r = CombinedParams::from_vector(Vector::from_vec(b.r_star.clone()?), sol.k, sol.d).ok()?;
    let others = b.other_signs.as_ref()?;
    let mut z = Vector::zeros(sol.k);
    let mut w = DMatrix::zeros(sol.k, sol.d);
    let mut it = others.iter();
    for j in 0..sol.k {
        let s = if j == sol.m { b.sigma } else { *it.next()? };
        let s = if s >= 0 { 1.0 } else { -1.0 };
        z[j] = s;
        w.set_row(j, &(r.neuron(j) * s).transpose());
    }
    NetworkParams::new(z, w).ok()
}

/// No perturbation of `w_m` with norm at most `radius` lowers the loss by
/// more than `1e-12` (`samples` uniform draws in the ball).
pub fn no_local_descent(params: &NetworkParams, m: usize, data: &Dataset, rng: &mut ChaCha8Rng, samples: usize, radius: f64) -> bool {
    let base = loss_zw(params, data, &LossKind::Squared).unwrap();
    let d = params.d();
    (0..samples).all(|_| {
        let dir = gauss_vector(rng, d).normalize();
        let rad = radius * rng.random::<f64>().powf(1.0 / d as f64);
        let mut p = params.clone();
        let row = p.w.row(m) + (dir * rad).transpose();
        p.w.set_row(m, &row);
        loss_zw(&p, data, &LossKind::Squared).unwrap() >= base - 1e-12
    })
}
