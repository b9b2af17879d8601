//! Closed-form excess prediction error of merged and ensembled learners.
//!
//! For a test design `X_0`, the excess mean squared prediction error of a fit
//! `b` is `E ||X_0 (b - beta_true)||^2`, i.e. total MSPE minus the
//! irreducible part `tr(G Z_0^T Z_0) + sigma_eps2 n_0`. Every formula here is
//! a trace expression in the per-study Gram matrices `R_k = X_k^T X_k`, their
//! sum `R`, the penalized versions `M_k = R_k + lambda_k P S_k^{-2}` and
//! `M = R + lambda P S^{-2}`, and the test Gram `R_0 = X_0^T X_0`. Random
//! effects enter only through the Gram columns of their design positions, so
//! the excess error is affine in each variance-group value; that affinity is
//! what makes the transition points of [`crate::transition`] closed-form.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::{scaling_diag, shrink_diag, EnsembleWeights, RidgeConfig};
use crate::linalg::{columns_subset, trace_of_product, trace_qform, SpdSolver};
use crate::model::{stack_studies, RandomEffectsStructure, StudyData};

/// Variance/bias split of an excess MSPE, summed over the test rows.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ErrorDecomposition {
    /// Trace part: covariance of the fit pushed through the test design.
    pub variance: f64,
    /// Squared norm of the prediction bias (zero for least squares).
    pub bias_sq: f64,
}

impl ErrorDecomposition {
    /// Total excess MSPE.
    pub fn excess(&self) -> f64 {
        self.variance + self.bias_sq
    }
}

fn validate_noise(sigma_eps2: f64) -> Result<()> {
    if !sigma_eps2.is_finite() || sigma_eps2 < 0.0 {
        return Err(Error::InvalidVariance { value: sigma_eps2 });
    }
    Ok(())
}

fn validate_x0(x0: &DMatrix<f64>, p: usize) -> Result<()> {
    if x0.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: "test design width vs training designs".to_string(),
            expected: p,
            found: x0.ncols(),
        });
    }
    if x0.nrows() == 0 {
        return Err(Error::InsufficientData {
            context: "test design".to_string(),
            detail: "no rows".to_string(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "test design".to_string(),
        });
    }
    Ok(())
}

/// Factorizations shared by the least-squares formulas.
pub(crate) struct LsContext {
    pub grams: Vec<DMatrix<f64>>,
    pub solvers: Vec<SpdSolver>,
    pub merged: SpdSolver,
    pub r0: DMatrix<f64>,
    pub p: usize,
}

impl LsContext {
    pub fn new(studies: &[StudyData], x0: &DMatrix<f64>) -> Result<Self> {
        let first = studies.first().ok_or(Error::EmptyStudies)?;
        let p = first.p();
        validate_x0(x0, p)?;
        let mut grams = Vec::with_capacity(studies.len());
        let mut solvers = Vec::with_capacity(studies.len());
        let mut r_sum = DMatrix::zeros(p, p);
        for s in studies {
            if s.p() != p {
                return Err(Error::DimensionMismatch {
                    context: format!("study {} width vs first study", s.id()),
                    expected: p,
                    found: s.p(),
                });
            }
            let r = s.gram();
            r_sum += &r;
            solvers.push(SpdSolver::new(&r, &format!("Gram matrix of study {}", s.id()))?);
            grams.push(r);
        }
        let merged = SpdSolver::new(&r_sum, "merged Gram matrix")?;
        Ok(Self {
            grams,
            solvers,
            merged,
            r0: x0.tr_mul(x0),
            p,
        })
    }

    pub fn k(&self) -> usize {
        self.grams.len()
    }

    /// `tr(R_k^{-1} R_0)`.
    pub fn noise_study(&self, k: usize) -> f64 {
        self.solvers[k].trace_solve(&self.r0)
    }

    /// `tr(R^{-1} R_0)`.
    pub fn noise_merged(&self) -> f64 {
        self.merged.trace_solve(&self.r0)
    }

    /// `sum_c (R_0)_{cc}` over the group's columns: the group block trace of
    /// `Z_0^T Z_0`.
    pub fn z0_group_trace(&self, cols: &[usize]) -> f64 {
        cols.iter().map(|&c| self.r0[(c, c)]).sum()
    }

    /// `sum_k tr(R^{-1} C_{k} C_{k}^T R^{-1} R_0)` where `C_k` holds the
    /// group's columns of `R_k`: the merged fit's sensitivity to the group.
    pub fn merged_group_coeff(&self, cols: &[usize]) -> f64 {
        let mut acc = 0.0;
        for r_k in &self.grams {
            let c = columns_subset(r_k, cols);
            let u = self.merged.solve_mat(&c);
            acc += trace_qform(&u, &self.r0);
        }
        acc
    }
}

/// Factorizations shared by the ridge formulas.
pub(crate) struct RidgeContext {
    pub grams: Vec<DMatrix<f64>>,
    pub solvers: Vec<SpdSolver>,
    pub merged: SpdSolver,
    pub r_sum: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    pub x0: DMatrix<f64>,
    /// Diagonal of `lambda_k P S_k^{-2}` per study.
    pub shrink: Vec<DVector<f64>>,
    /// Diagonal of `lambda P S^{-2}` for the merged fit.
    pub shrink_merged: DVector<f64>,
    pub p: usize,
}

impl RidgeContext {
    pub fn new(studies: &[StudyData], config: &RidgeConfig, x0: &DMatrix<f64>) -> Result<Self> {
        let first = studies.first().ok_or(Error::EmptyStudies)?;
        let p = first.p();
        validate_x0(x0, p)?;
        config.validate(studies.len())?;
        let mut grams = Vec::with_capacity(studies.len());
        let mut solvers = Vec::with_capacity(studies.len());
        let mut shrink = Vec::with_capacity(studies.len());
        let mut r_sum = DMatrix::zeros(p, p);
        for (s, &lambda) in studies.iter().zip(&config.lambda_per_study) {
            if s.p() != p {
                return Err(Error::DimensionMismatch {
                    context: format!("study {} width vs first study", s.id()),
                    expected: p,
                    found: s.p(),
                });
            }
            let scaling = scaling_diag(s.x(), config.scaling, config.intercept)?;
            let sh = shrink_diag(lambda, &scaling, config.intercept);
            let r = s.gram();
            r_sum += &r;
            let mut m = r.clone();
            for j in 0..p {
                m[(j, j)] += sh[j];
            }
            solvers.push(SpdSolver::new(
                &m,
                &format!("ridge system of study {}", s.id()),
            )?);
            grams.push(r);
            shrink.push(sh);
        }
        let stacked = stack_studies(studies)?;
        let merged_scaling = scaling_diag(stacked.data().x(), config.scaling, config.intercept)?;
        let shrink_merged = shrink_diag(config.lambda_merged, &merged_scaling, config.intercept);
        let mut m = r_sum.clone();
        for j in 0..p {
            m[(j, j)] += shrink_merged[j];
        }
        let merged = SpdSolver::new(&m, "merged ridge system")?;
        Ok(Self {
            grams,
            solvers,
            merged,
            r_sum,
            r0: x0.tr_mul(x0),
            x0: x0.clone(),
            shrink,
            shrink_merged,
            p,
        })
    }

    pub fn k(&self) -> usize {
        self.grams.len()
    }

    /// `tr(M_k^{-1} R_k M_k^{-1} R_0)`.
    pub fn noise_study(&self, k: usize) -> f64 {
        let a = self.solvers[k].solve_mat(&self.grams[k]);
        let b = self.solvers[k].solve_mat(&self.r0);
        trace_of_product(&a, &b)
    }

    /// `tr(M^{-1} R M^{-1} R_0)`.
    pub fn noise_merged(&self) -> f64 {
        let a = self.merged.solve_mat(&self.r_sum);
        let b = self.merged.solve_mat(&self.r0);
        trace_of_product(&a, &b)
    }

    /// `tr(C_k^T M_k^{-1} R_0 M_k^{-1} C_k)` for the group's columns of `R_k`.
    pub fn study_group_coeff(&self, k: usize, cols: &[usize]) -> f64 {
        let c = columns_subset(&self.grams[k], cols);
        let v = self.solvers[k].solve_mat(&c);
        trace_qform(&v, &self.r0)
    }

    /// `sum_k tr(C_k^T M^{-1} R_0 M^{-1} C_k)` for the group's columns.
    pub fn merged_group_coeff(&self, cols: &[usize]) -> f64 {
        let mut acc = 0.0;
        for r_k in &self.grams {
            let c = columns_subset(r_k, cols);
            let u = self.merged.solve_mat(&c);
            acc += trace_qform(&u, &self.r0);
        }
        acc
    }

    /// Per-study shrinkage bias on the test rows:
    /// `lambda_k X_0 M_k^{-1} P S_k^{-2} beta` (sign dropped; only norms and
    /// inner products of these vectors are ever used).
    pub fn study_bias(&self, k: usize, beta: &DVector<f64>) -> DVector<f64> {
        let t = DVector::from_iterator(
            self.p,
            self.shrink[k].iter().zip(beta.iter()).map(|(s, b)| s * b),
        );
        &self.x0 * self.solvers[k].solve_vec(&t)
    }

    /// Ensemble shrinkage bias `sum_k w_k lambda_k X_0 M_k^{-1} P S_k^{-2} beta`.
    pub fn ensemble_bias(&self, weights: &EnsembleWeights, beta: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.p);
        for (k, &w) in weights.as_slice().iter().enumerate() {
            let t = DVector::from_iterator(
                self.p,
                self.shrink[k].iter().zip(beta.iter()).map(|(s, b)| s * b),
            );
            u.axpy(w, &self.solvers[k].solve_vec(&t), 1.0);
        }
        &self.x0 * u
    }

    /// Merged-fit shrinkage bias `lambda X_0 M^{-1} P S^{-2} beta`.
    pub fn merged_bias(&self, beta: &DVector<f64>) -> DVector<f64> {
        let t = DVector::from_iterator(
            self.p,
            self.shrink_merged
                .iter()
                .zip(beta.iter())
                .map(|(s, b)| s * b),
        );
        &self.x0 * self.merged.solve_vec(&t)
    }

    pub fn validate_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.p {
            return Err(Error::DimensionMismatch {
                context: "beta length vs design width".to_string(),
                expected: self.p,
                found: beta.len(),
            });
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "beta".to_string(),
            });
        }
        Ok(())
    }
}

/// Excess MSPE of the weighted least-squares ensemble.
pub fn excess_mspe_ls_ensemble(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    weights: &EnsembleWeights,
    x0: &DMatrix<f64>,
) -> Result<ErrorDecomposition> {
    validate_noise(sigma_eps2)?;
    let ctx = LsContext::new(studies, x0)?;
    re.validate_p(ctx.p)?;
    weights.validate_k(ctx.k())?;
    let wsq = weights.sum_sq();
    let mut variance = 0.0;
    for g in re.groups() {
        variance += g.variance() * ctx.z0_group_trace(g.columns()) * wsq;
    }
    for (k, &w) in weights.as_slice().iter().enumerate() {
        variance += sigma_eps2 * w * w * ctx.noise_study(k);
    }
    Ok(ErrorDecomposition {
        variance,
        bias_sq: 0.0,
    })
}

/// Excess MSPE of the merged least-squares fit.
pub fn excess_mspe_ls_merged(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    x0: &DMatrix<f64>,
) -> Result<ErrorDecomposition> {
    validate_noise(sigma_eps2)?;
    let ctx = LsContext::new(studies, x0)?;
    re.validate_p(ctx.p)?;
    let mut variance = 0.0;
    for g in re.groups() {
        variance += g.variance() * ctx.merged_group_coeff(g.columns());
    }
    variance += sigma_eps2 * ctx.noise_merged();
    Ok(ErrorDecomposition {
        variance,
        bias_sq: 0.0,
    })
}

/// Excess MSPE of the weighted ridge ensemble.
pub fn excess_mspe_ridge_ensemble(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    beta: &DVector<f64>,
    config: &RidgeConfig,
    weights: &EnsembleWeights,
    x0: &DMatrix<f64>,
) -> Result<ErrorDecomposition> {
    validate_noise(sigma_eps2)?;
    let ctx = RidgeContext::new(studies, config, x0)?;
    re.validate_p(ctx.p)?;
    weights.validate_k(ctx.k())?;
    ctx.validate_beta(beta)?;
    let w = weights.as_slice();
    let mut variance = 0.0;
    for g in re.groups() {
        let mut acc = 0.0;
        for k in 0..ctx.k() {
            acc += w[k] * w[k] * ctx.study_group_coeff(k, g.columns());
        }
        variance += g.variance() * acc;
    }
    for k in 0..ctx.k() {
        variance += sigma_eps2 * w[k] * w[k] * ctx.noise_study(k);
    }
    let bias = ctx.ensemble_bias(weights, beta);
    Ok(ErrorDecomposition {
        variance,
        bias_sq: bias.norm_squared(),
    })
}

/// Excess MSPE of the merged ridge fit.
pub fn excess_mspe_ridge_merged(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    beta: &DVector<f64>,
    config: &RidgeConfig,
    x0: &DMatrix<f64>,
) -> Result<ErrorDecomposition> {
    validate_noise(sigma_eps2)?;
    let ctx = RidgeContext::new(studies, config, x0)?;
    re.validate_p(ctx.p)?;
    ctx.validate_beta(beta)?;
    let mut variance = 0.0;
    for g in re.groups() {
        variance += g.variance() * ctx.merged_group_coeff(g.columns());
    }
    variance += sigma_eps2 * ctx.noise_merged();
    let bias = ctx.merged_bias(beta);
    Ok(ErrorDecomposition {
        variance,
        bias_sq: bias.norm_squared(),
    })
}

/// Irreducible MSPE `tr(G Z_0^T Z_0) + sigma_eps2 n_0`, summed over test
/// rows; adding it to an excess gives the absolute expected MSPE.
pub fn irreducible_mspe(
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    x0: &DMatrix<f64>,
) -> Result<f64> {
    validate_noise(sigma_eps2)?;
    validate_x0(x0, x0.ncols().max(1))?;
    re.validate_p(x0.ncols())?;
    let mut acc = sigma_eps2 * x0.nrows() as f64;
    for (&c, &v) in re.columns().iter().zip(re.variances()) {
        acc += v * x0.column(c).norm_squared();
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ScalingMode;
    use crate::model::{GeneratorConfig, StudyData};
    use alloc::vec;
    use alloc::vec::Vec;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn_study(seed: u64, n: usize, p: usize, intercept: bool) -> StudyData {
        let mut rng = crate::seed::stream_rng(seed, 0, 0);
        let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        if intercept {
            x.column_mut(0).fill(1.0);
        }
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        StudyData::new(format!("s{seed}"), x, y).unwrap()
    }

    fn x0_matrix(seed: u64, n0: usize, p: usize, intercept: bool) -> DMatrix<f64> {
        let mut rng = crate::seed::stream_rng(seed, 1, 0);
        let mut x0 = DMatrix::from_fn(n0, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        if intercept {
            x0.column_mut(0).fill(1.0);
        }
        x0
    }

    #[test]
    fn single_study_unit_weight_ls_reduces_to_noise_trace() {
        let s = randn_study(1, 12, 3, false);
        let x0 = x0_matrix(1, 5, 3, false);
        let re = RandomEffectsStructure::uniform(vec![1], 0.0).unwrap();
        let w = EnsembleWeights::new(vec![1.0]).unwrap();
        let e = excess_mspe_ls_ensemble(core::slice::from_ref(&s), &re, 1.0, &w, &x0).unwrap();
        let direct = (s.gram().try_inverse().unwrap() * x0.tr_mul(&x0)).trace();
        assert_relative_eq!(e.excess(), direct, max_relative = 1e-10);

        let m = excess_mspe_ls_merged(core::slice::from_ref(&s), &re, 1.0, &x0).unwrap();
        assert_relative_eq!(m.excess(), e.excess(), max_relative = 1e-12);
    }

    #[test]
    fn merged_dominates_equal_weight_ensemble_without_heterogeneity() {
        let studies = vec![
            randn_study(2, 14, 3, false),
            randn_study(3, 10, 3, false),
            randn_study(4, 20, 3, false),
        ];
        let x0 = x0_matrix(2, 6, 3, false);
        let re = RandomEffectsStructure::uniform(vec![0, 2], 0.0).unwrap();
        let w = EnsembleWeights::equal(3).unwrap();
        let merged = excess_mspe_ls_merged(&studies, &re, 1.0, &x0).unwrap();
        let ens = excess_mspe_ls_ensemble(&studies, &re, 1.0, &w, &x0).unwrap();
        assert!(merged.excess() <= ens.excess() + 1e-12);
    }

    #[test]
    fn excess_is_affine_in_each_group_variance() {
        let studies = vec![randn_study(5, 15, 4, false), randn_study(6, 11, 4, false)];
        let x0 = x0_matrix(5, 7, 4, false);
        let w = EnsembleWeights::new(vec![0.7, 0.3]).unwrap();
        let at = |v1: f64, v2: f64| {
            let re = RandomEffectsStructure::new(vec![1, 3], vec![v1, v2]).unwrap();
            let m = excess_mspe_ls_merged(&studies, &re, 0.8, &x0)
                .unwrap()
                .excess();
            let e = excess_mspe_ls_ensemble(&studies, &re, 0.8, &w, &x0)
                .unwrap()
                .excess();
            (m, e)
        };
        // Equal increments at different base points, per group.
        let (m00, e00) = at(0.0, 0.0);
        let (m10, e10) = at(1.0, 0.0);
        let (m20, e20) = at(2.0, 0.0);
        assert_relative_eq!(m20 - m10, m10 - m00, max_relative = 1e-10);
        assert_relative_eq!(e20 - e10, e10 - e00, max_relative = 1e-10);
        let (m01, e01) = at(0.0, 1.0);
        let (m11, e11) = at(1.0, 1.0);
        assert_relative_eq!(m11 - m01, m10 - m00, max_relative = 1e-10);
        assert_relative_eq!(e11 - e01, e10 - e00, max_relative = 1e-10);
    }

    #[test]
    fn ridge_at_zero_penalty_collapses_to_least_squares() {
        let studies = vec![randn_study(7, 16, 3, true), randn_study(8, 13, 3, true)];
        let x0 = x0_matrix(7, 6, 3, true);
        let re = RandomEffectsStructure::new(vec![1, 2], vec![0.5, 0.2]).unwrap();
        let beta = DVector::from_column_slice(&[1.0, -0.5, 0.25]);
        let cfg = RidgeConfig::uniform(0.0, 2, ScalingMode::Identity, true).unwrap();
        let w = EnsembleWeights::new(vec![0.4, 0.6]).unwrap();

        let rm = excess_mspe_ridge_merged(&studies, &re, 1.0, &beta, &cfg, &x0).unwrap();
        let lm = excess_mspe_ls_merged(&studies, &re, 1.0, &x0).unwrap();
        assert_relative_eq!(rm.excess(), lm.excess(), max_relative = 1e-9);
        assert_eq!(rm.bias_sq, 0.0);

        let re_ens = excess_mspe_ridge_ensemble(&studies, &re, 1.0, &beta, &cfg, &w, &x0).unwrap();
        let le = excess_mspe_ls_ensemble(&studies, &re, 1.0, &w, &x0).unwrap();
        assert_relative_eq!(re_ens.excess(), le.excess(), max_relative = 1e-9);
    }

    #[test]
    fn zero_beta_has_zero_shrinkage_bias() {
        let studies = vec![randn_study(9, 8, 5, true), randn_study(10, 9, 5, true)];
        let x0 = x0_matrix(9, 4, 5, true);
        let re = RandomEffectsStructure::uniform(vec![1, 2], 0.3).unwrap();
        let beta = DVector::zeros(5);
        let cfg = RidgeConfig::uniform(2.0, 2, ScalingMode::InverseSd, true).unwrap();
        let w = EnsembleWeights::equal(2).unwrap();
        let e = excess_mspe_ridge_ensemble(&studies, &re, 1.0, &beta, &cfg, &w, &x0).unwrap();
        let m = excess_mspe_ridge_merged(&studies, &re, 1.0, &beta, &cfg, &x0).unwrap();
        assert_eq!(e.bias_sq, 0.0);
        assert_eq!(m.bias_sq, 0.0);
    }

    /// The ridge mean is the ridge fit on noiseless data, so the bias-squared
    /// term must equal the squared test-set error of that deterministic fit.
    #[test]
    fn shrinkage_bias_matches_noiseless_refit() {
        let p = 4;
        let beta = DVector::from_column_slice(&[1.5, -2.0, 0.75, 0.3]);
        let mut designs = Vec::new();
        for seed in 11..14u64 {
            designs.push(randn_study(seed, 10, p, true).x().clone());
        }
        let x0 = x0_matrix(11, 6, p, true);
        let cfg = RidgeConfig {
            lambda_merged: 3.0,
            lambda_per_study: vec![1.0, 2.0, 0.5],
            scaling: ScalingMode::InverseSd,
            intercept: true,
        };
        let noiseless: Vec<StudyData> = designs
            .iter()
            .enumerate()
            .map(|(i, x)| StudyData::new(format!("n{i}"), x.clone(), x * &beta).unwrap())
            .collect();
        let re = RandomEffectsStructure::uniform(vec![1], 0.0).unwrap();
        let w = EnsembleWeights::new(vec![0.5, 0.25, 0.25]).unwrap();

        // Oracle: fit each arm on the noiseless outcomes and measure the
        // test-set deviation directly.
        let mut fits = Vec::new();
        for (i, s) in noiseless.iter().enumerate() {
            fits.push(
                crate::estimators::fit_ridge(
                    s,
                    cfg.lambda_per_study[i],
                    cfg.scaling,
                    cfg.intercept,
                )
                .unwrap(),
            );
        }
        let ens = crate::estimators::ensemble_combine(&fits, &w).unwrap();
        let oracle_ens = (&x0 * &ens.coefficients - &x0 * &beta).norm_squared();
        let merged_fit = crate::estimators::fit_ridge_merged(&noiseless, &cfg).unwrap();
        let oracle_merged = (&x0 * &merged_fit.coefficients - &x0 * &beta).norm_squared();

        let e = excess_mspe_ridge_ensemble(&noiseless, &re, 0.0, &beta, &cfg, &w, &x0).unwrap();
        let m = excess_mspe_ridge_merged(&noiseless, &re, 0.0, &beta, &cfg, &x0).unwrap();
        assert_relative_eq!(e.bias_sq, oracle_ens, max_relative = 1e-9);
        assert_relative_eq!(m.bias_sq, oracle_merged, max_relative = 1e-9);
        // With sigma_eps2 = 0 and G = 0 the bias is the entire excess.
        assert_relative_eq!(e.excess(), e.bias_sq);
        assert_relative_eq!(m.excess(), m.bias_sq);
    }

    #[test]
    fn irreducible_error_tracks_noise_and_heterogeneity() {
        let x0 = x0_matrix(20, 5, 3, false);
        let re = RandomEffectsStructure::new(vec![1], vec![2.0]).unwrap();
        let base = irreducible_mspe(&re, 1.0, &x0).unwrap();
        let expected = 2.0 * x0.column(1).norm_squared() + 5.0;
        assert_relative_eq!(base, expected, max_relative = 1e-12);

        let re0 = RandomEffectsStructure::uniform(vec![1], 0.0).unwrap();
        assert_relative_eq!(irreducible_mspe(&re0, 0.0, &x0).unwrap(), 0.0);
    }

    #[test]
    fn generator_and_theory_agree_on_dimension_checks() {
        let s = randn_study(30, 10, 3, false);
        let x0_bad = x0_matrix(30, 4, 2, false);
        let re = RandomEffectsStructure::uniform(vec![0], 0.1).unwrap();
        let w = EnsembleWeights::new(vec![1.0]).unwrap();
        assert!(matches!(
            excess_mspe_ls_ensemble(core::slice::from_ref(&s), &re, 1.0, &w, &x0_bad),
            Err(Error::DimensionMismatch { .. })
        ));
        let cfg = GeneratorConfig::new(
            DVector::zeros(3),
            re,
            1.0,
            vec![s.x().clone()],
            vec![x0_bad],
            0,
        );
        assert!(cfg.is_err());
    }
}
