mod common;

use cba::augment::AugmentConfig;
use cba::policy::{
    compute_batch_complexity, da_factor, regularized_incomplete_beta, PolicyConfig,
};
use common::ibf_quadrature;

const PAIRS: [(f64, f64); 20] = [
    (0.5, 5.0),
    (0.5, 0.5),
    (0.5, 1.0),
    (0.5, 2.0),
    (0.3, 0.7),
    (0.7, 3.0),
    (1.0, 1.0),
    (1.0, 5.0),
    (1.5, 1.5),
    (2.0, 2.0),
    (2.0, 5.0),
    (3.0, 1.0),
    (5.0, 0.5),
    (5.0, 5.0),
    (0.2, 0.2),
    (4.0, 9.0),
    (8.0, 2.5),
    (1.2, 0.8),
    (10.0, 10.0),
    (0.9, 7.0),
];

fn grid() -> Vec<f64> {
    (0..50).map(|i| (i as f64 + 0.5) / 50.0).collect()
}

#[test]
fn matches_quadrature_on_grid() {
    let mut worst = 0.0f64;
    for &(s, a) in &PAIRS {
        for x in grid() {
            let got = regularized_incomplete_beta(x, s, a).unwrap();
            let want = ibf_quadrature(x, s, a);
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst <= 1e-8, "max deviation {worst:e}");
}

#[test]
fn default_shape_midpoint() {
    let want = ibf_quadrature(0.5, 0.5, 5.0);
    let got = regularized_incomplete_beta(0.5, 0.5, 5.0).unwrap();
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    let cfg = PolicyConfig::default();
    assert!((da_factor(0.5, &cfg).unwrap() - (1.0 - want)).abs() < 1e-10);
}

#[test]
fn reg_factor_is_mean_of_complements() {
    let cfg = PolicyConfig::default();
    let bc = compute_batch_complexity(&[1.0, 5.0, 6.0], &cfg).unwrap();
    // x = (0, 0.8, 1): complements are 1, 1 − I_0.8, 0
    let want = (1.0 + (1.0 - ibf_quadrature(0.8, 0.5, 5.0)) + 0.0) / 3.0;
    assert!((bc.reg_factor - want).abs() < 1e-10);
}

#[test]
fn mask_counts_follow_difficulty() {
    let cfg = PolicyConfig::default();
    let aug = AugmentConfig::default();
    let bc = compute_batch_complexity(&[1.0, 2.0, 6.0], &cfg).unwrap();
    let counts: Vec<usize> = bc
        .da_factors
        .iter()
        .map(|&f| aug.adaptive_counts(f).unwrap().0)
        .collect();
    let mid = (4.0 * (1.0 - ibf_quadrature(0.2, 0.5, 5.0))).round() as usize;
    assert_eq!(counts, vec![4, mid, 0]);
}

#[test]
fn closed_forms_and_symmetry() {
    for x in grid() {
        for &a in &[0.5, 1.0, 2.5, 5.0] {
            let got = regularized_incomplete_beta(x, 1.0, a).unwrap();
            assert!((got - (1.0 - (1.0 - x).powf(a))).abs() <= 1e-9);
            let got = regularized_incomplete_beta(x, a, 1.0).unwrap();
            assert!((got - x.powf(a)).abs() <= 1e-9);
        }
        for &(s, a) in &PAIRS {
            let lhs = regularized_incomplete_beta(x, s, a).unwrap();
            let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, a, s).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9, "symmetry at ({x}, {s}, {a})");
        }
    }
}

#[test]
fn quadrature_reproduces_closed_forms() {
    for &x in &[0.01, 0.3, 0.5, 0.77, 0.99] {
        assert!((ibf_quadrature(x, 1.0, 1.0) - x).abs() < 1e-12);
        assert!((ibf_quadrature(x, 1.0, 3.0) - (1.0 - (1.0 - x).powi(3))).abs() < 1e-12);
        let arcsine = 2.0 / std::f64::consts::PI * x.sqrt().asin();
        assert!((ibf_quadrature(x, 0.5, 0.5) - arcsine).abs() < 1e-10);
    }
}
