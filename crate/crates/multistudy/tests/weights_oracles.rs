//! Oracle checks for optimal ensemble weights: the closed-form weights must
//! dominate a large random sample of alternative weightings, agree with the
//! analytic ensemble risk, and produce a self-consistent optimally-weighted
//! transition point.

use multistudy::error_theory::{
    excess_mspe_ls_ensemble, excess_mspe_ls_merged, excess_mspe_ridge_ensemble,
    excess_mspe_ridge_merged,
};
use multistudy::seed::stream_rng;
use multistudy::transition::{tau_ls, tau_ridge};
use multistudy::weights::{
    optimal_transition_point_ls, optimal_transition_point_ridge, optimal_weights_ls,
    optimal_weights_ridge,
};
use multistudy::{
    EnsembleWeights, Error, RandomEffectsStructure, RidgeConfig, ScalingMode, StudyData,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

fn randn_matrix(rng: &mut impl Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn randn_study(rng: &mut impl Rng, id: &str, n: usize, p: usize) -> StudyData {
    let x = randn_matrix(rng, n, p);
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    StudyData::new(id, x, y).unwrap()
}

/// Uniform draw from the probability simplex (normalized exponentials).
fn random_simplex(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k)
        .map(|_| -f64::ln(1.0 - rng.random::<f64>()))
        .collect();
    let total: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= total;
    }
    w
}

#[test]
fn ls_weights_dominate_random_weightings() {
    let mut rng = stream_rng(9101, 0, 0);
    let studies = vec![
        randn_study(&mut rng, "a", 15, 4),
        randn_study(&mut rng, "b", 30, 4),
        randn_study(&mut rng, "c", 9, 4),
        randn_study(&mut rng, "d", 21, 4),
    ];
    let x0 = randn_matrix(&mut rng, 8, 4);
    let re = RandomEffectsStructure::new(vec![1, 3], vec![0.35, 0.1]).unwrap();
    let sigma_eps2 = 1.2;

    let opt = optimal_weights_ls(&studies, &re, sigma_eps2, &x0).unwrap();
    assert!(opt.kkt_residual <= 1e-8, "kkt residual {}", opt.kkt_residual);
    assert!(!opt.has_negative);

    // The reported objective is exactly the analytic ensemble excess.
    let direct = excess_mspe_ls_ensemble(&studies, &re, sigma_eps2, &opt.weights, &x0)
        .unwrap()
        .excess();
    assert!(
        (opt.objective - direct).abs() <= 1e-10 * direct.abs().max(1.0),
        "objective {} vs direct {}",
        opt.objective,
        direct
    );

    let equal = EnsembleWeights::equal(4).unwrap();
    let equal_excess = excess_mspe_ls_ensemble(&studies, &re, sigma_eps2, &equal, &x0)
        .unwrap()
        .excess();
    assert!(opt.objective <= equal_excess + 1e-12);

    for _ in 0..10_000 {
        let w = EnsembleWeights::new(random_simplex(&mut rng, 4)).unwrap();
        let excess = excess_mspe_ls_ensemble(&studies, &re, sigma_eps2, &w, &x0)
            .unwrap()
            .excess();
        assert!(
            opt.objective <= excess + 1e-10 * excess.abs(),
            "random weighting beat the optimum: {} < {}",
            excess,
            opt.objective
        );
    }
}

#[test]
fn ridge_weights_dominate_random_weightings() {
    let mut rng = stream_rng(9102, 0, 0);
    let p = 8;
    // Underdetermined per-study fits: only ridge is defined here.
    let studies: Vec<StudyData> = (0..3)
        .map(|k| {
            let mut x = randn_matrix(&mut rng, 6, p);
            x.column_mut(0).fill(1.0);
            let y = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            StudyData::new(format!("s{k}"), x, y).unwrap()
        })
        .collect();
    let mut x0 = randn_matrix(&mut rng, 10, p);
    x0.column_mut(0).fill(1.0);
    let re = RandomEffectsStructure::new(vec![2, 3, 5], vec![0.25, 0.25, 0.05]).unwrap();
    let sigma_eps2 = 0.8;
    let cfg = RidgeConfig {
        lambda_merged: 2.1,
        lambda_per_study: vec![0.7, 1.1, 0.9],
        scaling: ScalingMode::InverseSd,
        intercept: true,
    };
    let beta = DVector::from_fn(p, |i, _| if i == 0 { 1.5 } else { 0.4 * (i as f64) - 1.0 });

    let opt = optimal_weights_ridge(&studies, &re, sigma_eps2, &beta, &cfg, &x0).unwrap();
    assert!(opt.kkt_residual <= 1e-8, "kkt residual {}", opt.kkt_residual);
    let system = opt.system.as_ref().expect("ridge returns its system matrix");
    assert_eq!(system.nrows(), 3);

    let direct = excess_mspe_ridge_ensemble(
        &studies, &re, sigma_eps2, &beta, &cfg, &opt.weights, &x0,
    )
    .unwrap()
    .excess();
    assert!(
        (opt.objective - direct).abs() <= 1e-10 * direct.abs().max(1.0),
        "objective {} vs direct {}",
        opt.objective,
        direct
    );

    for _ in 0..10_000 {
        let w = EnsembleWeights::new(random_simplex(&mut rng, 3)).unwrap();
        let excess = excess_mspe_ridge_ensemble(&studies, &re, sigma_eps2, &beta, &cfg, &w, &x0)
            .unwrap()
            .excess();
        assert!(
            opt.objective <= excess + 1e-10 * excess.abs(),
            "random weighting beat the optimum: {} < {}",
            excess,
            opt.objective
        );
    }
}

#[test]
fn symmetric_studies_make_optimal_and_equal_transitions_coincide() {
    // Column-swapped copies give both studies identical risk for every
    // heterogeneity level, so the optimal weights stay equal and the
    // optimally-weighted crossing equals the equal-weight one.
    let mut rng = stream_rng(9103, 0, 0);
    let x1 = randn_matrix(&mut rng, 10, 2);
    let mut x2 = x1.clone();
    x2.swap_columns(0, 1);
    let y1 = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
    let studies = vec![
        StudyData::new("a", x1, y1.clone()).unwrap(),
        StudyData::new("b", x2, y1).unwrap(),
    ];
    let x0 = DMatrix::identity(2, 2);
    let cols = [0usize, 1];
    let sigma_eps2 = 1.0;

    let equal = EnsembleWeights::equal(2).unwrap();
    let tau_eq = tau_ls(&studies, &cols, sigma_eps2, &equal, &x0)
        .unwrap()
        .point
        .expect("generic instance has a valid point");
    let star = optimal_transition_point_ls(&studies, &cols, sigma_eps2, &x0).unwrap();
    assert!(
        (star - tau_eq).abs() <= 1e-6 * tau_eq.max(1.0),
        "expected coincidence: {} vs {}",
        star,
        tau_eq
    );
}

#[test]
fn optimal_transition_ls_is_a_self_consistent_fixed_point() {
    let mut rng = stream_rng(9104, 0, 0);
    let studies = vec![
        randn_study(&mut rng, "a", 12, 3),
        randn_study(&mut rng, "b", 20, 3),
        randn_study(&mut rng, "c", 9, 3),
    ];
    let x0 = randn_matrix(&mut rng, 7, 3);
    let cols = [1usize, 2];
    let sigma_eps2 = 1.3;

    let equal = EnsembleWeights::equal(3).unwrap();
    let tau_eq = tau_ls(&studies, &cols, sigma_eps2, &equal, &x0)
        .unwrap()
        .point
        .unwrap();
    let star = optimal_transition_point_ls(&studies, &cols, sigma_eps2, &x0).unwrap();
    assert!(star > 0.0);
    assert!(star <= tau_eq, "optimal crossing cannot come later");

    // Curves actually cross at the reported point.
    let p = 3usize;
    let re = RandomEffectsStructure::uniform(cols.to_vec(), star * p as f64 / 2.0).unwrap();
    let w_star = optimal_weights_ls(&studies, &re, sigma_eps2, &x0).unwrap();
    let merged = excess_mspe_ls_merged(&studies, &re, sigma_eps2, &x0)
        .unwrap()
        .excess();
    assert!(
        (merged - w_star.objective).abs() <= 1e-7 * merged,
        "gap at the root: merged {} vs ensemble {}",
        merged,
        w_star.objective
    );

    // Freezing the optimal weights reproduces the same crossing point.
    let tau_fixed = tau_ls(&studies, &cols, sigma_eps2, &w_star.weights, &x0)
        .unwrap()
        .point
        .unwrap();
    assert!(
        (tau_fixed - star).abs() <= 1e-8_f64.max(1e-8 * star),
        "fixed point violated: {} vs {}",
        tau_fixed,
        star
    );
}

#[test]
fn optimal_transition_ridge_is_a_self_consistent_fixed_point() {
    let mut rng = stream_rng(9105, 0, 0);
    let p = 5;
    let studies: Vec<StudyData> = [14usize, 8, 11]
        .iter()
        .enumerate()
        .map(|(k, &n)| randn_study(&mut rng, &format!("s{k}"), n, p))
        .collect();
    let x0 = randn_matrix(&mut rng, 9, p);
    let cols = [0usize, 2, 4];
    let sigma_eps2 = 0.9;
    let cfg = RidgeConfig::uniform(0.6, 3, ScalingMode::Identity, false).unwrap();
    let beta = DVector::from_column_slice(&[0.8, -0.5, 1.1, 0.0, 0.3]);

    let equal = EnsembleWeights::equal(3).unwrap();
    let tau_eq = tau_ridge(&studies, &cols, sigma_eps2, &beta, &cfg, &equal, &x0)
        .unwrap()
        .point
        .unwrap();
    let star =
        optimal_transition_point_ridge(&studies, &cols, sigma_eps2, &beta, &cfg, &x0).unwrap();
    assert!(star > 0.0);
    assert!(star <= tau_eq);

    let re = RandomEffectsStructure::uniform(cols.to_vec(), star * p as f64 / 3.0).unwrap();
    let w_star = optimal_weights_ridge(&studies, &re, sigma_eps2, &beta, &cfg, &x0).unwrap();
    let merged = excess_mspe_ridge_merged(&studies, &re, sigma_eps2, &beta, &cfg, &x0)
        .unwrap()
        .excess();
    assert!(
        (merged - w_star.objective).abs() <= 1e-7 * merged,
        "gap at the root: merged {} vs ensemble {}",
        merged,
        w_star.objective
    );

    let tau_fixed = tau_ridge(&studies, &cols, sigma_eps2, &beta, &cfg, &w_star.weights, &x0)
        .unwrap()
        .point
        .unwrap();
    assert!((tau_fixed - star).abs() <= 1e-8_f64.max(1e-8 * star));
}

#[test]
fn identical_studies_have_no_optimal_crossing() {
    let mut rng = stream_rng(9106, 0, 0);
    let s = randn_study(&mut rng, "a", 10, 2);
    let twin = StudyData::new("b", s.x().clone(), s.y().clone()).unwrap();
    let x0 = randn_matrix(&mut rng, 5, 2);
    let err = optimal_transition_point_ls(&[s, twin], &[0, 1], 1.0, &x0).unwrap_err();
    assert!(matches!(err, Error::NoCrossing { .. }));
}
