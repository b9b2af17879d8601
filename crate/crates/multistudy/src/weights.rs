//! Optimal ensemble weights and the optimally-weighted transition point.
//!
//! For least squares the per-study prediction risks are uncorrelated and the
//! optimal weights are inverse-risk. For ridge the shrinkage biases correlate
//! across studies, so the weights solve `min w^T C w` over the simplex-sum
//! constraint `1^T w = 1`, where `C` collects per-study variances on the
//! diagonal and bias inner products off it; the minimizer is
//! `C^{-1} 1 / (1^T C^{-1} 1)` and may have negative entries, which are kept
//! (and flagged) rather than clipped.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::error_theory::{LsContext, RidgeContext};
use crate::estimators::{EnsembleWeights, RidgeConfig};
use crate::linalg::SpdSolver;
use crate::model::{RandomEffectsStructure, StudyData};
use crate::transition::{tau_ls, tau_ridge};

/// Weights minimizing the analytic ensemble excess MSPE, with diagnostics.
#[derive(Clone, Debug)]
pub struct OptimalWeights {
    pub weights: EnsembleWeights,
    /// Ensemble excess MSPE at the optimum.
    pub objective: f64,
    /// Relative residual of the stationarity conditions; near zero at a true
    /// optimum.
    pub kkt_residual: f64,
    /// The quadratic-form matrix `C` for ridge; `None` for least squares,
    /// whose system is diagonal.
    pub system: Option<DMatrix<f64>>,
    /// Whether any weight is negative (possible for ridge when shrinkage
    /// biases are strongly correlated).
    pub has_negative: bool,
}

fn validate_noise(sigma_eps2: f64) -> Result<()> {
    if !sigma_eps2.is_finite() || sigma_eps2 < 0.0 {
        return Err(Error::InvalidVariance { value: sigma_eps2 });
    }
    Ok(())
}

/// Inverse-risk weights for the least-squares ensemble: each study's risk is
/// `tr(G Z_0^T Z_0) + sigma_eps2 tr(R_k^{-1} R_0)`.
pub fn optimal_weights_ls(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    x0: &DMatrix<f64>,
) -> Result<OptimalWeights> {
    validate_noise(sigma_eps2)?;
    let ctx = LsContext::new(studies, x0)?;
    re.validate_p(ctx.p)?;
    let g_term: f64 = re
        .columns()
        .iter()
        .zip(re.variances())
        .map(|(&c, &v)| v * ctx.r0[(c, c)])
        .sum();
    let mut risks = Vec::with_capacity(ctx.k());
    for k in 0..ctx.k() {
        let c_k = g_term + sigma_eps2 * ctx.noise_study(k);
        if !(c_k > 0.0) {
            return Err(Error::DegenerateSystem {
                context: "inverse-risk weights: a study has zero prediction risk".to_string(),
            });
        }
        risks.push(c_k);
    }
    let inv_sum: f64 = risks.iter().map(|c| 1.0 / c).sum();
    let weights: Vec<f64> = risks.iter().map(|c| 1.0 / (c * inv_sum)).collect();
    let objective: f64 = weights.iter().zip(&risks).map(|(w, c)| w * w * c).sum();
    // Stationarity: 2 w_k c_k constant across studies.
    let grads: Vec<f64> = weights.iter().zip(&risks).map(|(w, c)| 2.0 * w * c).collect();
    let mean = grads.iter().sum::<f64>() / grads.len() as f64;
    let kkt_residual = grads
        .iter()
        .map(|g| (g - mean).abs())
        .fold(0.0, f64::max)
        / mean.abs().max(f64::MIN_POSITIVE);
    Ok(OptimalWeights {
        weights: EnsembleWeights::new(weights)?,
        objective,
        kkt_residual,
        system: None,
        has_negative: false,
    })
}

/// Constrained quadratic optimum for the ridge ensemble.
pub fn optimal_weights_ridge(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    beta: &DVector<f64>,
    config: &RidgeConfig,
    x0: &DMatrix<f64>,
) -> Result<OptimalWeights> {
    validate_noise(sigma_eps2)?;
    let ctx = RidgeContext::new(studies, config, x0)?;
    re.validate_p(ctx.p)?;
    ctx.validate_beta(beta)?;
    let k = ctx.k();
    let mut c = DMatrix::zeros(k, k);
    let mut biases = Vec::with_capacity(k);
    for i in 0..k {
        let mut v_i = sigma_eps2 * ctx.noise_study(i);
        for g in re.groups() {
            v_i += g.variance() * ctx.study_group_coeff(i, g.columns());
        }
        c[(i, i)] = v_i;
        biases.push(ctx.study_bias(i, beta));
    }
    for i in 0..k {
        for j in 0..k {
            let dot = biases[i].dot(&biases[j]);
            c[(i, j)] += dot;
        }
    }
    let solver = SpdSolver::new(&c, "optimal-weight system").map_err(|e| match e {
        Error::SingularSystem { cond, .. } => Error::SingularSystem {
            context: "optimal-weight system".to_string(),
            cond,
        },
        other => other,
    })?;
    let ones = DVector::from_element(k, 1.0);
    let u = solver.solve_vec(&ones);
    let total = ones.dot(&u);
    if !(total > 0.0) {
        return Err(Error::DegenerateSystem {
            context: "optimal-weight system has non-positive normalization".to_string(),
        });
    }
    let w = &u / total;
    let objective = (&c * &w).dot(&w);
    let grads = &c * &w * 2.0;
    let alpha = 2.0 * objective;
    let scale = grads
        .iter()
        .map(|g| g.abs())
        .fold(alpha.abs(), f64::max)
        .max(f64::MIN_POSITIVE);
    let kkt_residual = grads
        .iter()
        .map(|g| (g - alpha).abs())
        .fold(0.0, f64::max)
        / scale;
    let has_negative = w.iter().any(|&wi| wi < 0.0);
    Ok(OptimalWeights {
        weights: EnsembleWeights::new(w.iter().copied().collect())?,
        objective,
        kkt_residual,
        system: Some(c),
        has_negative,
    })
}

/// Bisection for the root of `gap` (negative at `lo`, positive at `hi`) to
/// absolute tolerance `1e-10`. The closure returns `(gap, scale)`; a bracket
/// endpoint whose gap has the wrong sign within `1e-9 * scale` is treated as
/// the root itself (the symmetric case lands exactly on the upper end).
fn bisect(
    mut gap: impl FnMut(f64) -> Result<(f64, f64)>,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    const REL: f64 = 1e-9;
    let (g_lo, s_lo) = gap(lo)?;
    let (g_hi, s_hi) = gap(hi)?;
    if g_lo > REL * s_lo || g_hi < -REL * s_hi {
        return Err(Error::NoCrossing {
            context: String::from("optimally-weighted merged-vs-ensemble gap"),
        });
    }
    if g_lo > 0.0 {
        return Ok(lo);
    }
    if g_hi < 0.0 {
        return Ok(hi);
    }
    for _ in 0..200 {
        if hi - lo <= 1e-10 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid)?.0 <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Heterogeneity level at which the merged least-squares fit and the
/// optimally weighted least-squares ensemble have equal excess MSPE.
///
/// The equal-weight transition point bounds the search from above: the
/// optimal ensemble is at least as good as the equal-weight one, so its
/// crossing can only come earlier.
pub fn optimal_transition_point_ls(
    studies: &[StudyData],
    re_columns: &[usize],
    sigma_eps2: f64,
    x0: &DMatrix<f64>,
) -> Result<f64> {
    let equal = EnsembleWeights::equal(studies.len())?;
    let tau_eq = tau_ls(studies, re_columns, sigma_eps2, &equal, x0)?
        .point
        .filter(|t| *t > 0.0)
        .ok_or(Error::NoCrossing {
            context: String::from("equal-weight least-squares transition is degenerate"),
        })?;
    let ctx = LsContext::new(studies, x0)?;
    let p = ctx.p;
    let q = re_columns.len();
    let gap = |s: f64| -> Result<(f64, f64)> {
        let re = RandomEffectsStructure::uniform(
            re_columns.to_vec(),
            s * p as f64 / q as f64,
        )?;
        let opt = optimal_weights_ls(studies, &re, sigma_eps2, x0)?;
        let merged = crate::error_theory::excess_mspe_ls_merged(studies, &re, sigma_eps2, x0)?
            .excess();
        Ok((merged - opt.objective, merged + opt.objective))
    };
    bisect(gap, 0.0, tau_eq)
}

/// Heterogeneity level at which the merged ridge fit and the optimally
/// weighted ridge ensemble have equal excess MSPE.
pub fn optimal_transition_point_ridge(
    studies: &[StudyData],
    re_columns: &[usize],
    sigma_eps2: f64,
    beta: &DVector<f64>,
    config: &RidgeConfig,
    x0: &DMatrix<f64>,
) -> Result<f64> {
    let equal = EnsembleWeights::equal(studies.len())?;
    let tau_eq = tau_ridge(studies, re_columns, sigma_eps2, beta, config, &equal, x0)?
        .point
        .filter(|t| *t > 0.0)
        .ok_or(Error::NoCrossing {
            context: String::from("equal-weight ridge transition is degenerate"),
        })?;
    let p = studies[0].p();
    let q = re_columns.len();
    let gap = |s: f64| -> Result<(f64, f64)> {
        let re = RandomEffectsStructure::uniform(
            re_columns.to_vec(),
            s * p as f64 / q as f64,
        )?;
        let opt = optimal_weights_ridge(studies, &re, sigma_eps2, beta, config, x0)?;
        let merged = crate::error_theory::excess_mspe_ridge_merged(
            studies, &re, sigma_eps2, beta, config, x0,
        )?
        .excess();
        Ok((merged - opt.objective, merged + opt.objective))
    };
    bisect(gap, 0.0, tau_eq)
}
