//! Moment-based variance-component estimation from multi-study data.
//!
//! Fits each study by ordinary least squares and applies the
//! DerSimonian–Laird estimator per coefficient: the weighted heterogeneity
//! statistic `Q_i` of the per-study estimates, compared against its null
//! expectation `K - 1`, yields a non-negative moment estimate of that
//! coefficient's random-effect variance. The residual variance is pooled
//! across studies. Moment estimates are imprecise for small `K`, so results
//! carry a warning flag when fewer than five studies are available.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::estimators::LearnerFit;
use crate::linalg::SpdSolver;
use crate::model::StudyData;
use crate::seed::stream_rng;

use rand::Rng;

/// Studies below this count make moment estimates unreliable.
const FEW_STUDIES: usize = 5;

/// Seed lane reserved for bootstrap resampling.
const BOOTSTRAP_LANE: u64 = 0xB007;

/// Per-coefficient detail behind a [`VarCompEstimate`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PerCoefficient {
    /// Design column index.
    pub column: usize,
    /// Per-study coefficient estimates.
    pub estimates: Vec<f64>,
    /// Their sampling variances `sigma_eps_hat2_k (R_k^{-1})_{ii}`.
    pub sampling_variances: Vec<f64>,
    /// Weighted heterogeneity statistic; compares against `K - 1` under the
    /// homogeneous null.
    pub q_statistic: f64,
    /// Truncated moment estimate of the coefficient's random-effect
    /// variance.
    pub sigma_hat2: f64,
}

/// Estimated variance components for a collection of studies.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct VarCompEstimate {
    /// Length-`p` vector of random-effect variance estimates; coefficients
    /// without a declared random effect are fixed at zero.
    pub sigma_hat2: Vec<f64>,
    /// Pooled residual variance `sum_k RSS_k / sum_k (n_k - p)`.
    pub sigma_eps_hat2: f64,
    /// Average heterogeneity `sum_i sigma_hat2[i] / p`.
    pub sigma_bar2_hat: f64,
    /// Per-coefficient detail for the declared random-effect columns.
    pub per_coefficient: Vec<PerCoefficient>,
    /// Set when fewer than five studies were available.
    pub few_studies_warning: bool,
}

/// DerSimonian–Laird variance components from per-study least-squares fits.
///
/// `re_indices` lists the design columns assumed to carry random effects;
/// every other coefficient's variance is reported as zero.
pub fn estimate_varcomp(studies: &[StudyData], re_indices: &[usize]) -> Result<VarCompEstimate> {
    let k = studies.len();
    if k < 2 {
        return Err(Error::InsufficientStudies { needed: 2, found: k });
    }
    let p = studies[0].p();
    for (pos, &c) in re_indices.iter().enumerate() {
        if c >= p {
            return Err(Error::DimensionMismatch {
                context: format!("random-effect column {c} vs design width"),
                expected: p,
                found: c,
            });
        }
        if re_indices[..pos].contains(&c) {
            return Err(Error::InvalidConfig {
                context: format!("random-effect column {c} listed twice"),
            });
        }
    }

    let mut coef = Vec::with_capacity(k);
    let mut inv_diag = Vec::with_capacity(k);
    let mut rss_total = 0.0;
    let mut dof_total = 0usize;
    let mut resid_var = Vec::with_capacity(k);
    for s in studies {
        if s.p() != p {
            return Err(Error::DimensionMismatch {
                context: format!("study {} width vs first study", s.id()),
                expected: p,
                found: s.p(),
            });
        }
        if s.n() <= p {
            return Err(Error::InsufficientData {
                context: format!("study {}", s.id()),
                detail: format!(
                    "needs more rows than predictors for a residual variance ({} rows, {} predictors)",
                    s.n(),
                    p
                ),
            });
        }
        let solver = SpdSolver::new(&s.gram(), &format!("Gram matrix of study {}", s.id()))?;
        let beta = solver.solve_vec(&s.xty());
        let resid = s.y() - s.x() * &beta;
        let rss = resid.norm_squared();
        let dof = s.n() - p;
        let s2 = rss / dof as f64;
        if !(s2 > 0.0) {
            return Err(Error::DegenerateSystem {
                context: format!("study {} has zero residual variance", s.id()),
            });
        }
        let inv = solver.inverse();
        inv_diag.push((0..p).map(|i| inv[(i, i)]).collect::<Vec<f64>>());
        coef.push(beta);
        resid_var.push(s2);
        rss_total += rss;
        dof_total += dof;
    }
    let sigma_eps_hat2 = rss_total / dof_total as f64;

    let mut sigma_hat2 = vec![0.0; p];
    let mut per_coefficient = Vec::with_capacity(re_indices.len());
    for &i in re_indices {
        let estimates: Vec<f64> = coef.iter().map(|b| b[i]).collect();
        let sampling_variances: Vec<f64> = (0..k).map(|s| resid_var[s] * inv_diag[s][i]).collect();
        let u: Vec<f64> = sampling_variances.iter().map(|v| 1.0 / v).collect();
        let u_sum: f64 = u.iter().sum();
        let u_sq_sum: f64 = u.iter().map(|x| x * x).sum();
        let pooled_mean: f64 =
            u.iter().zip(&estimates).map(|(ui, bi)| ui * bi).sum::<f64>() / u_sum;
        let q: f64 = u
            .iter()
            .zip(&estimates)
            .map(|(ui, bi)| ui * (bi - pooled_mean) * (bi - pooled_mean))
            .sum();
        // Strictly positive for K >= 2: it equals the off-diagonal weight
        // products divided by the weight total.
        let denom = u_sum - u_sq_sum / u_sum;
        let est = ((q - (k - 1) as f64) / denom).max(0.0);
        sigma_hat2[i] = est;
        per_coefficient.push(PerCoefficient {
            column: i,
            estimates,
            sampling_variances,
            q_statistic: q,
            sigma_hat2: est,
        });
    }
    let sigma_bar2_hat = sigma_hat2.iter().sum::<f64>() / p as f64;
    Ok(VarCompEstimate {
        sigma_hat2,
        sigma_eps_hat2,
        sigma_bar2_hat,
        per_coefficient,
        few_studies_warning: k < FEW_STUDIES,
    })
}

/// Root-mean-squared prediction error of a fitted learner on a labeled test
/// study, with a nonparametric bootstrap 95% interval over test rows.
///
/// The learner is fit once; only the test rows are resampled. Each resample
/// uses its own derived seed, so results are reproducible and the resamples
/// could be evaluated in any order.
pub fn bootstrap_rmspe<F>(
    fit_procedure: F,
    studies: &[StudyData],
    x0_study: &StudyData,
    b: usize,
    seed: u64,
) -> Result<(f64, f64, f64)>
where
    F: FnOnce(&[StudyData]) -> Result<LearnerFit>,
{
    if b < 100 {
        return Err(Error::InvalidConfig {
            context: format!("bootstrap needs at least 100 resamples, got {b}"),
        });
    }
    let n0 = x0_study.n();
    if n0 == 0 {
        return Err(Error::InsufficientData {
            context: "bootstrap test set".to_string(),
            detail: "no test rows".to_string(),
        });
    }
    let fit = fit_procedure(studies)?;
    let predictions = fit.predict(x0_study.x())?;
    let sq_errors: Vec<f64> = x0_study
        .y()
        .iter()
        .zip(predictions.iter())
        .map(|(y, yhat)| (y - yhat) * (y - yhat))
        .collect();
    let rmspe = libm::sqrt(sq_errors.iter().sum::<f64>() / n0 as f64);

    let mut resampled = Vec::with_capacity(b);
    for rep in 0..b {
        let mut rng = stream_rng(seed, BOOTSTRAP_LANE, rep as u64);
        let mut acc = 0.0;
        for _ in 0..n0 {
            acc += sq_errors[rng.random_range(0..n0)];
        }
        resampled.push(libm::sqrt(acc / n0 as f64));
    }
    resampled.sort_by(|a, b| a.partial_cmp(b).expect("rmspe values are finite"));
    let lower = percentile(&resampled, 0.025);
    let upper = percentile(&resampled, 0.975);
    Ok((rmspe, lower, upper))
}

/// Linear-interpolation percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::fit_ols;
    use nalgebra::{DMatrix, DVector};
    use rand_distr::StandardNormal;

    fn constant_study(id: &str, n: usize, y_value: f64) -> StudyData {
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_element(n, y_value);
        StudyData::new(id, x, y).unwrap()
    }

    #[test]
    fn single_study_is_rejected() {
        let s = constant_study("a", 5, 1.0);
        assert!(matches!(
            estimate_varcomp(core::slice::from_ref(&s), &[0]),
            Err(Error::InsufficientStudies { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn matches_a_hand_computed_intercept_case() {
        // p = 1 intercept-only studies: the coefficient is the sample mean,
        // its sampling variance s2_k / n_k, so the whole chain can be redone
        // by hand.
        let ys = [
            vec![1.0, 2.0, 3.0],
            vec![4.0, 4.0, 7.0],
            vec![0.0, 1.0, -1.0, 2.0],
        ];
        let studies: Vec<StudyData> = ys
            .iter()
            .enumerate()
            .map(|(k, y)| {
                let n = y.len();
                StudyData::new(
                    format!("s{k}"),
                    DMatrix::from_element(n, 1, 1.0),
                    DVector::from_vec(y.clone()),
                )
                .unwrap()
            })
            .collect();
        let est = estimate_varcomp(&studies, &[0]).unwrap();

        let mut means = Vec::new();
        let mut variances = Vec::new();
        let mut rss_total = 0.0;
        let mut dof_total = 0.0;
        for y in &ys {
            let n = y.len() as f64;
            let mean = y.iter().sum::<f64>() / n;
            let rss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
            means.push(mean);
            variances.push(rss / (n - 1.0) / n);
            rss_total += rss;
            dof_total += n - 1.0;
        }
        let u: Vec<f64> = variances.iter().map(|v| 1.0 / v).collect();
        let u_sum: f64 = u.iter().sum();
        let pooled = u.iter().zip(&means).map(|(a, b)| a * b).sum::<f64>() / u_sum;
        let q: f64 = u
            .iter()
            .zip(&means)
            .map(|(a, b)| a * (b - pooled) * (b - pooled))
            .sum();
        let denom = u_sum - u.iter().map(|x| x * x).sum::<f64>() / u_sum;
        let expected = ((q - 2.0) / denom).max(0.0);

        assert!((est.sigma_hat2[0] - expected).abs() <= 1e-12 * expected.max(1.0));
        assert!((est.sigma_eps_hat2 - rss_total / dof_total).abs() <= 1e-12);
        assert_eq!(est.per_coefficient.len(), 1);
        assert!((est.per_coefficient[0].q_statistic - q).abs() <= 1e-10);
        assert_eq!(est.sigma_bar2_hat, est.sigma_hat2[0]);
        assert!(est.few_studies_warning);
    }

    #[test]
    fn scaling_y_scales_all_variances_quadratically() {
        let mut rng = stream_rng(41, 0, 0);
        let studies: Vec<StudyData> = (0..6)
            .map(|k| {
                let x = DMatrix::from_fn(12, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                let y = DVector::from_fn(12, |_, _| rng.sample::<f64, _>(StandardNormal));
                StudyData::new(format!("s{k}"), x, y).unwrap()
            })
            .collect();
        let scaled: Vec<StudyData> = studies
            .iter()
            .map(|s| StudyData::new(s.id(), s.x().clone(), s.y() * 2.5).unwrap())
            .collect();
        let base = estimate_varcomp(&studies, &[0, 2]).unwrap();
        let big = estimate_varcomp(&scaled, &[0, 2]).unwrap();
        let c2 = 2.5 * 2.5;
        assert!((big.sigma_eps_hat2 - c2 * base.sigma_eps_hat2).abs() <= 1e-12 * c2);
        for i in 0..3 {
            assert!(
                (big.sigma_hat2[i] - c2 * base.sigma_hat2[i]).abs()
                    <= 1e-12 * (1.0 + c2 * base.sigma_hat2[i])
            );
        }
        assert!(!base.few_studies_warning);
    }

    #[test]
    fn estimates_are_always_non_negative() {
        let mut rng = stream_rng(42, 0, 0);
        for round in 0..20 {
            let studies: Vec<StudyData> = (0..4)
                .map(|k| {
                    let x =
                        DMatrix::from_fn(9, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let y = DVector::from_fn(9, |_, _| rng.sample::<f64, _>(StandardNormal));
                    StudyData::new(format!("r{round}-s{k}"), x, y).unwrap()
                })
                .collect();
            let est = estimate_varcomp(&studies, &[0, 1]).unwrap();
            assert!(est.sigma_hat2.iter().all(|&v| v >= 0.0));
            assert!(est.sigma_eps_hat2 > 0.0);
            assert!(est.sigma_bar2_hat >= 0.0);
        }
    }

    #[test]
    fn bootstrap_zero_residuals_give_zero_interval() {
        let train = constant_study("train", 4, 2.0);
        let test = constant_study("test", 5, 2.0);
        let (rmspe, lo, hi) =
            bootstrap_rmspe(|s| fit_ols(&s[0]), &[train], &test, 100, 7).unwrap();
        assert_eq!(rmspe, 0.0);
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn bootstrap_unit_residuals_pin_the_interval_at_one() {
        // Training outcome 0 forces a zero coefficient; the test residuals
        // are then exactly (1, -1, 1, -1), so every resample has RMSPE 1.
        let train = constant_study("train", 3, 0.0);
        let test = StudyData::new(
            "test",
            DMatrix::from_element(4, 1, 1.0),
            DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]),
        )
        .unwrap();
        let (rmspe, lo, hi) =
            bootstrap_rmspe(|s| fit_ols(&s[0]), &[train], &test, 150, 99).unwrap();
        assert_eq!(rmspe, 1.0);
        assert_eq!((lo, hi), (1.0, 1.0));
    }

    #[test]
    fn bootstrap_rejects_too_few_resamples() {
        let train = constant_study("train", 3, 0.0);
        let test = constant_study("test", 3, 1.0);
        assert!(matches!(
            bootstrap_rmspe(|s| fit_ols(&s[0]), &[train], &test, 1, 7),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn bootstrap_is_deterministic_in_the_seed() {
        let mut rng = stream_rng(44, 0, 0);
        let x = DMatrix::from_fn(10, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let train = StudyData::new("train", x, y).unwrap();
        let xt = DMatrix::from_fn(6, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let yt = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let test = StudyData::new("test", xt, yt).unwrap();
        let a = bootstrap_rmspe(|s| fit_ols(&s[0]), core::slice::from_ref(&train), &test, 200, 5)
            .unwrap();
        let b = bootstrap_rmspe(|s| fit_ols(&s[0]), core::slice::from_ref(&train), &test, 200, 5)
            .unwrap();
        let c = bootstrap_rmspe(|s| fit_ols(&s[0]), core::slice::from_ref(&train), &test, 200, 6)
            .unwrap();
        assert_eq!(a, b);
        assert!(a.0 > 0.0);
        assert_ne!((a.1, a.2), (c.1, c.2));
    }
}
