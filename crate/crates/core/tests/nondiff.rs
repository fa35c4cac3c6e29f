mod common;

use common::{branch_params, no_local_descent, random_boundary, random_instance};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use relu_landscape::cells::ActivationPattern;
use relu_landscape::fixtures::{two_sample_dataset, boundary_instance};
use relu_landscape::model::{loss_zw, LossKind, NetworkParams};
use relu_landscape::nondiff::{lemma2_check, solve_nondiff, sweep_nondiff, BoundaryConfig, Lemma2Verdict};
use relu_landscape::{Execution, Tolerances};

#[test]
fn constructed_boundary_minimum_survives_sampling() {
    let (data, pattern, m, n) = boundary_instance();
    let tol = Tolerances::default();
    let cfg = BoundaryConfig::new(m, n, &pattern).unwrap();
    let sol = solve_nondiff(&cfg, &data, &tol).unwrap();
    assert!(sol.accepted());
    let p = sol.params(1, 1.0).unwrap();
    assert_eq!(lemma2_check(&cfg, &p, &data, &tol).unwrap().verdict, Lemma2Verdict::Minimum);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert!(no_local_descent(&p, m, &data, &mut rng, 1000, 1e-4));
    // scaling z and w together leaves the loss unchanged
    let p2 = sol.params(1, 3.0).unwrap();
    let (l1, l2) = (
        loss_zw(&p, &data, &LossKind::Squared).unwrap(),
        loss_zw(&p2, &data, &LossKind::Squared).unwrap(),
    );
    assert!((l1 - l2).abs() < 1e-12);
}

/// With `w = (0, t)`, `t > 0`, on the hyperplane of `x1` and `x2` active,
/// some small move of `(z, w1)` always lowers the loss: no boundary minimum
/// exists on that ray.
#[test]
fn two_sample_boundary_ray() {
    let data = two_sample_dataset(false);
    let tol = Tolerances::default();
    let p = ActivationPattern::from_rows(&[vec![1], vec![1]]).unwrap();
    let cfg = BoundaryConfig::new(0, 0, &p).unwrap();
    let sol = solve_nondiff(&cfg, &data, &tol).unwrap();
    assert!(!sol.accepted());
    let loss = |z: f64, w1: f64, t: f64| {
        let params = NetworkParams::new(DVector::from_element(1, z), DMatrix::from_row_slice(1, 2, &[w1, t])).unwrap();
        loss_zw(&params, &data, &LossKind::Squared).unwrap()
    };
    for it in 1..=30 {
        let t = it as f64 * 0.1;
        for iz in -20..=20 {
            let z = iz as f64 * 0.1;
            let here = loss(z, 0.0, t);
            let better = [-1e-3, 0.0, 1e-3]
                .iter()
                .flat_map(|&dz| [-1e-3, 0.0, 1e-3].map(|dw| (dz, dw)))
                .any(|(dz, dw)| loss(z + dz, dw, t) < here - 1e-12);
            assert!(better, "t = {t}, z = {z}");
        }
    }
}

#[test]
fn accepted_boundaries_agree_with_lemma2_and_sampling() {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut accepted, mut rejected) = (0, 0);
    for trial in 0..400 {
        let k = if trial % 4 == 3 { 2 } else { 1 };
        let (data, cfg) = random_boundary(&mut rng, k);
        let sol = solve_nondiff(&cfg, &data, &tol).unwrap();
        if !sol.solvable || !sol.solution_set.as_ref().unwrap().is_unique() {
            continue;
        }
        for b in sol.branches.iter().filter(|b| b.in_cells) {
            let p = branch_params(&sol, b).unwrap();
            let lemma = lemma2_check(&cfg, &p, &data, &tol).unwrap().verdict;
            if lemma == Lemma2Verdict::Degenerate {
                assert!(!b.accepted);
                continue;
            }
            let oracle = no_local_descent(&p, cfg.m, &data, &mut rng, 1000, 1e-4);
            assert_eq!(b.accepted, lemma == Lemma2Verdict::Minimum, "trial {trial}");
            assert_eq!(b.accepted, oracle, "trial {trial}");
            if b.accepted {
                accepted += 1;
            } else {
                rejected += 1;
            }
        }
    }
    assert!(accepted > 0 && rejected > 0, "{accepted} accepted, {rejected} rejected");
}

#[test]
fn sweep_ordering_and_empty_result() {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (data, pattern, _) = random_instance(&mut rng, 6, 2, 3);
    let (rep, all) = sweep_nondiff(&pattern, &data, &tol, Execution::Sequential).unwrap();
    let (rep2, all2) = sweep_nondiff(&pattern, &data, &tol, Execution::Parallel).unwrap();
    assert_eq!(serde_json::to_string(&rep).unwrap(), serde_json::to_string(&rep2).unwrap());
    assert_eq!(all.len(), 12);
    assert_eq!(all2.len(), 12);
    let pairs: Vec<(usize, usize)> = all.iter().map(|r| (r.m, r.n)).collect();
    let mut sorted = pairs.clone();
    sorted.sort();
    assert_eq!(pairs, sorted);
    assert_eq!(rep.examined + rep.skipped, 12);

    // all-zero pattern: every pair is skipped, nothing accepted
    let zero = ActivationPattern::zeros(6, 2);
    let (rep, _) = sweep_nondiff(&zero, &data, &tol, Execution::Sequential).unwrap();
    assert!(rep.minima.is_empty());
    assert_eq!(rep.skipped, 12);
}
