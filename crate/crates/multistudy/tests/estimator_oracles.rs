//! Estimator closed forms checked against independent linear-algebra routes:
//! SVD pseudoinverse for least squares, the standardized-design formulation
//! for ridge, and Monte Carlo unbiasedness for the least-squares fit.

use multistudy::estimators::{
    fit_ols, fit_ridge, fit_ridge_merged, scaling_diag, RidgeConfig, ScalingMode,
};
use multistudy::{generate_study, GeneratorConfig, RandomEffectsStructure, StudyData};
use nalgebra::{DMatrix, DVector, LU, SVD};
use rand::Rng;
use rand_distr::StandardNormal;

fn randn_matrix(rng: &mut impl Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

fn randn_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

#[test]
fn ols_matches_svd_pseudoinverse() {
    let mut rng = multistudy::seed::stream_rng(11, 0, 0);
    for trial in 0..20 {
        let x = randn_matrix(&mut rng, 20, 3);
        let y = randn_vector(&mut rng, 20);
        let fit = fit_ols(&StudyData::new("t", x.clone(), y.clone()).unwrap()).unwrap();
        let pinv = SVD::new(x, true, true)
            .pseudo_inverse(1e-13)
            .expect("svd converged");
        let oracle = &pinv * &y;
        assert!(
            (&fit.coefficients - &oracle).norm() <= 1e-10 * (1.0 + oracle.norm()),
            "trial {trial}: {} vs {}",
            fit.coefficients,
            oracle
        );
    }
}

/// Ridge with inverse-sd scaling, computed here the other way around: fit on
/// the explicitly standardized design with an unpenalized intercept, then map
/// the coefficients back through the scaling.
fn ridge_via_standardized(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    intercept: bool,
) -> DVector<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut s = DVector::from_element(p, 1.0);
    for j in 0..p {
        if j == 0 && intercept {
            continue;
        }
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        s[j] = 1.0 / var.sqrt();
    }
    let mut xs = x.clone();
    for j in 0..p {
        let mut col = xs.column_mut(j);
        col *= s[j];
    }
    let mut m = xs.tr_mul(&xs);
    for j in 0..p {
        if j == 0 && intercept {
            continue;
        }
        m[(j, j)] += lambda;
    }
    let rhs = xs.tr_mul(y);
    let sol = LU::new(m).solve(&rhs).expect("ridge system invertible");
    DVector::from_iterator(p, sol.iter().zip(s.iter()).map(|(b, sj)| b * sj))
}

#[test]
fn ridge_agrees_with_standardized_formulation_when_wide() {
    let mut rng = multistudy::seed::stream_rng(12, 0, 0);
    for &lambda in &[0.3, 1.0, 10.0] {
        let mut x = randn_matrix(&mut rng, 10, 20);
        x.column_mut(0).fill(1.0);
        let y = randn_vector(&mut rng, 10);
        let study = StudyData::new("wide", x.clone(), y.clone()).unwrap();
        let fit = fit_ridge(&study, lambda, ScalingMode::InverseSd, true).unwrap();
        let oracle = ridge_via_standardized(&x, &y, lambda, true);
        assert!(
            (&fit.coefficients - &oracle).norm() <= 1e-9 * (1.0 + oracle.norm()),
            "lambda {lambda}: deviation {}",
            (&fit.coefficients - &oracle).norm()
        );
    }
}

#[test]
fn merged_ridge_equals_ridge_on_stacked_rows() {
    let mut rng = multistudy::seed::stream_rng(13, 0, 0);
    let mut make = |n: usize| {
        let mut x = randn_matrix(&mut rng, n, 4);
        x.column_mut(0).fill(1.0);
        let y = randn_vector(&mut rng, n);
        StudyData::new(format!("s{n}"), x, y).unwrap()
    };
    let studies = vec![make(8), make(12), make(9)];
    let cfg = RidgeConfig::uniform(2.5, 3, ScalingMode::InverseSd, true).unwrap();
    let fit = fit_ridge_merged(&studies, &cfg).unwrap();

    let stacked = multistudy::stack_studies(&studies).unwrap();
    let oracle = ridge_via_standardized(stacked.data().x(), stacked.data().y(), 2.5, true);
    assert!((&fit.coefficients - &oracle).norm() <= 1e-9 * (1.0 + oracle.norm()));
}

#[test]
fn inverse_sd_ridge_predictions_are_scale_equivariant() {
    let mut rng = multistudy::seed::stream_rng(14, 0, 0);
    let mut x = randn_matrix(&mut rng, 12, 4);
    x.column_mut(0).fill(1.0);
    let y = randn_vector(&mut rng, 12);
    let mut x0 = randn_matrix(&mut rng, 5, 4);
    x0.column_mut(0).fill(1.0);

    let base = fit_ridge(
        &StudyData::new("a", x.clone(), y.clone()).unwrap(),
        1.7,
        ScalingMode::InverseSd,
        true,
    )
    .unwrap();
    let base_pred = base.predict(&x0).unwrap();

    // Rescale the non-intercept columns of both designs by the same factors.
    let factors = [2.0, 0.5, 7.3];
    let mut xs = x.clone();
    let mut x0s = x0.clone();
    for (j, &f) in factors.iter().enumerate() {
        let mut c = xs.column_mut(j + 1);
        c *= f;
        let mut c0 = x0s.column_mut(j + 1);
        c0 *= f;
    }
    let scaled = fit_ridge(
        &StudyData::new("b", xs, y).unwrap(),
        1.7,
        ScalingMode::InverseSd,
        true,
    )
    .unwrap();
    let scaled_pred = scaled.predict(&x0s).unwrap();
    assert!(
        (&base_pred - &scaled_pred).norm() <= 1e-8 * (1.0 + base_pred.norm()),
        "predictions drifted under column rescaling: {}",
        (&base_pred - &scaled_pred).norm()
    );

    // The scaling diagonal itself tracks the rescaling.
    let s = scaling_diag(&x, ScalingMode::InverseSd, true).unwrap();
    assert!((s[0] - 1.0).abs() < 1e-12);
}

#[test]
fn ols_is_empirically_unbiased() {
    let mut rng = multistudy::seed::stream_rng(15, 0, 0);
    let mut x = randn_matrix(&mut rng, 12, 3);
    x.column_mut(0).fill(1.0);
    let beta = DVector::from_column_slice(&[0.5, -1.0, 2.0]);
    let cfg = GeneratorConfig::new(
        beta.clone(),
        RandomEffectsStructure::new(vec![1], vec![0.3]).unwrap(),
        1.0,
        vec![x],
        vec![DMatrix::from_element(2, 3, 1.0)],
        99,
    )
    .unwrap();

    let reps = 10_000u64;
    let mut sum: DVector<f64> = DVector::zeros(3);
    let mut sum_sq: DVector<f64> = DVector::zeros(3);
    for rep in 0..reps {
        let s = generate_study(&cfg, 0, rep).unwrap();
        let fit = fit_ols(&s).unwrap();
        for j in 0..3 {
            sum[j] += fit.coefficients[j];
            sum_sq[j] += fit.coefficients[j] * fit.coefficients[j];
        }
    }
    for j in 0..3 {
        let mean = sum[j] / reps as f64;
        let var = sum_sq[j] / reps as f64 - mean * mean;
        let se = (var / reps as f64).sqrt();
        assert!(
            (mean - beta[j]).abs() <= 4.0 * se,
            "coefficient {j}: mean {mean} vs {} (se {se})",
            beta[j]
        );
    }
}
