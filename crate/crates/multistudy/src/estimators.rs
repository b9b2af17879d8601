//! Least-squares and ridge learners, merged or ensembled.
//!
//! Ridge fits solve `(X^T X + lambda P S^{-2}) b = X^T Y` where `P` is the
//! identity with a zero in the intercept slot and `S` is the diagonal
//! inverse-standard-deviation scaling. This is algebraically identical to
//! ridge on the standardized predictors followed by back-scaling, but avoids
//! materializing the scaled design.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdSolver;
use crate::model::{stack_studies, StudyData};

/// Which learner family a routine should use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Learner {
    LeastSquares,
    Ridge,
}

impl Learner {
    pub fn label(self) -> &'static str {
        match self {
            Learner::LeastSquares => "ls",
            Learner::Ridge => "ridge",
        }
    }
}

/// How ridge penalties are scaled per column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ScalingMode {
    /// No scaling: `S = I`.
    Identity,
    /// Inverse sample standard deviation per column; the intercept column,
    /// when present, keeps scale 1.
    InverseSd,
}

/// Provenance of a fitted coefficient vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LearnerKind {
    LsStudy,
    LsMerged,
    LsEnsemble,
    RidgeStudy,
    RidgeMerged,
    RidgeEnsemble,
}

impl LearnerKind {
    pub fn is_ridge(self) -> bool {
        matches!(
            self,
            LearnerKind::RidgeStudy | LearnerKind::RidgeMerged | LearnerKind::RidgeEnsemble
        )
    }

    fn ensemble_of(self) -> Result<LearnerKind> {
        match self {
            LearnerKind::LsStudy | LearnerKind::LsMerged | LearnerKind::LsEnsemble => {
                Ok(LearnerKind::LsEnsemble)
            }
            LearnerKind::RidgeStudy | LearnerKind::RidgeMerged | LearnerKind::RidgeEnsemble => {
                Ok(LearnerKind::RidgeEnsemble)
            }
        }
    }
}

/// A fitted coefficient vector and how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnerFit {
    pub kind: LearnerKind,
    pub coefficients: DVector<f64>,
    /// Diagonal of the scaling matrix `S` for ridge fits, `None` for
    /// least squares and for ensembles (whose members carry their own).
    pub scaling: Option<DVector<f64>>,
}

impl LearnerFit {
    /// Predictions `X_0 b` on a new design.
    ///
    /// # Errors
    ///
    /// Rejects designs whose width differs from the coefficient length.
    pub fn predict(&self, x0: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x0.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                context: "prediction design width vs coefficients".to_string(),
                expected: self.coefficients.len(),
                found: x0.ncols(),
            });
        }
        Ok(x0 * &self.coefficients)
    }
}

/// Ensemble weights over `K` studies, validated to sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleWeights(Vec<f64>);

impl EnsembleWeights {
    /// # Errors
    ///
    /// Rejects empty or non-finite weight vectors and sums off one by more
    /// than `1e-8`.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyStudies);
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite {
                context: "ensemble weights".to_string(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-8 {
            return Err(Error::WeightSum { sum });
        }
        Ok(Self(weights))
    }

    /// `1/K` for each of `k` studies.
    pub fn equal(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::EmptyStudies);
        }
        Self::new(alloc::vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Sum of squared weights, the variance inflation factor of an ensemble.
    pub fn sum_sq(&self) -> f64 {
        self.0.iter().map(|w| w * w).sum()
    }

    pub(crate) fn validate_k(&self, k: usize) -> Result<()> {
        if self.len() != k {
            return Err(Error::DimensionMismatch {
                context: "ensemble weights vs studies".to_string(),
                expected: k,
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Ridge penalty levels and scaling policy for a `K`-study problem.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeConfig {
    /// Penalty for the merged fit.
    pub lambda_merged: f64,
    /// Penalty for each per-study fit.
    pub lambda_per_study: Vec<f64>,
    pub scaling: ScalingMode,
    /// Whether column 0 is an unpenalized intercept.
    pub intercept: bool,
}

impl RidgeConfig {
    /// One shared penalty for the merged fit and all `k` per-study fits.
    pub fn uniform(lambda: f64, k: usize, scaling: ScalingMode, intercept: bool) -> Result<Self> {
        let cfg = Self {
            lambda_merged: lambda,
            lambda_per_study: alloc::vec![lambda; k],
            scaling,
            intercept,
        };
        cfg.validate(k)?;
        Ok(cfg)
    }

    /// # Errors
    ///
    /// Rejects negative or non-finite penalties and per-study lists whose
    /// length is not `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.lambda_per_study.len() != k {
            return Err(Error::DimensionMismatch {
                context: "per-study ridge penalties vs studies".to_string(),
                expected: k,
                found: self.lambda_per_study.len(),
            });
        }
        for &l in core::iter::once(&self.lambda_merged).chain(&self.lambda_per_study) {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidConfig {
                    context: format!("ridge penalty {l} must be finite and non-negative"),
                });
            }
        }
        Ok(())
    }
}

/// Diagonal of the scaling matrix `S` for a design.
///
/// Under [`ScalingMode::InverseSd`] entry `j` is the inverse sample standard
/// deviation (centered, `n-1` denominator) of column `j`; the intercept slot
/// stays 1 when `intercept` is set.
///
/// # Errors
///
/// Inverse-sd scaling needs at least two rows and rejects constant columns.
pub fn scaling_diag(x: &DMatrix<f64>, mode: ScalingMode, intercept: bool) -> Result<DVector<f64>> {
    let p = x.ncols();
    match mode {
        ScalingMode::Identity => Ok(DVector::from_element(p, 1.0)),
        ScalingMode::InverseSd => {
            let n = x.nrows();
            if n < 2 {
                return Err(Error::InsufficientData {
                    context: "inverse-sd scaling".to_string(),
                    detail: "need at least 2 rows".to_string(),
                });
            }
            let mut s = DVector::from_element(p, 1.0);
            for j in 0..p {
                if j == 0 && intercept {
                    continue;
                }
                let col = x.column(j);
                let mean = col.sum() / n as f64;
                let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
                let var = ss / (n as f64 - 1.0);
                if var <= 0.0 {
                    return Err(Error::DegenerateScaling { column: j });
                }
                s[j] = 1.0 / libm::sqrt(var);
            }
            Ok(s)
        }
    }
}

/// Diagonal of the penalty selector: ones, with a zero in slot 0 when an
/// intercept is present.
pub fn penalty_diag(p: usize, intercept: bool) -> DVector<f64> {
    let mut d = DVector::from_element(p, 1.0);
    if intercept && p > 0 {
        d[0] = 0.0;
    }
    d
}

/// Diagonal of `lambda P S^{-2}`, the additive ridge term on the Gram scale.
pub(crate) fn shrink_diag(lambda: f64, scaling: &DVector<f64>, intercept: bool) -> DVector<f64> {
    let pen = penalty_diag(scaling.len(), intercept);
    DVector::from_iterator(
        scaling.len(),
        scaling
            .iter()
            .zip(pen.iter())
            .map(|(s, p)| lambda * p / (s * s)),
    )
}

fn ols_with_kind(data: &StudyData, kind: LearnerKind) -> Result<LearnerFit> {
    let solver = SpdSolver::new(&data.gram(), &format!("Gram matrix of study {}", data.id()))?;
    let coefficients = solver.solve_vec(&data.xty());
    Ok(LearnerFit {
        kind,
        coefficients,
        scaling: None,
    })
}

/// Ordinary least squares on one study.
pub fn fit_ols(data: &StudyData) -> Result<LearnerFit> {
    ols_with_kind(data, LearnerKind::LsStudy)
}

/// Ordinary least squares on the row-stacked collection.
pub fn fit_ols_merged(studies: &[StudyData]) -> Result<LearnerFit> {
    let stacked = stack_studies(studies)?;
    ols_with_kind(stacked.data(), LearnerKind::LsMerged)
}

fn ridge_with_kind(
    data: &StudyData,
    lambda: f64,
    mode: ScalingMode,
    intercept: bool,
    kind: LearnerKind,
) -> Result<LearnerFit> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidConfig {
            context: format!("ridge penalty {lambda} must be finite and non-negative"),
        });
    }
    let scaling = scaling_diag(data.x(), mode, intercept)?;
    let mut m = data.gram();
    let shrink = shrink_diag(lambda, &scaling, intercept);
    for j in 0..m.nrows() {
        m[(j, j)] += shrink[j];
    }
    let solver = SpdSolver::new(&m, &format!("ridge system of study {}", data.id()))?;
    let coefficients = solver.solve_vec(&data.xty());
    Ok(LearnerFit {
        kind,
        coefficients,
        scaling: Some(scaling),
    })
}

/// Ridge regression on one study.
pub fn fit_ridge(
    data: &StudyData,
    lambda: f64,
    mode: ScalingMode,
    intercept: bool,
) -> Result<LearnerFit> {
    ridge_with_kind(data, lambda, mode, intercept, LearnerKind::RidgeStudy)
}

/// Ridge regression on the row-stacked collection, with scaling computed
/// from the stacked design.
pub fn fit_ridge_merged(studies: &[StudyData], config: &RidgeConfig) -> Result<LearnerFit> {
    config.validate(studies.len())?;
    let stacked = stack_studies(studies)?;
    ridge_with_kind(
        stacked.data(),
        config.lambda_merged,
        config.scaling,
        config.intercept,
        LearnerKind::RidgeMerged,
    )
}

/// Weighted average of per-study coefficient vectors.
///
/// # Errors
///
/// Rejects empty input, weight/fit count mismatches, coefficient length
/// mismatches, and mixtures of least-squares and ridge members.
pub fn ensemble_combine(fits: &[LearnerFit], weights: &EnsembleWeights) -> Result<LearnerFit> {
    let first = fits.first().ok_or(Error::EmptyStudies)?;
    weights.validate_k(fits.len())?;
    let kind = first.kind.ensemble_of()?;
    let p = first.coefficients.len();
    let mut coefficients = DVector::zeros(p);
    for (fit, &w) in fits.iter().zip(weights.as_slice()) {
        if fit.coefficients.len() != p {
            return Err(Error::DimensionMismatch {
                context: "ensemble member coefficient length".to_string(),
                expected: p,
                found: fit.coefficients.len(),
            });
        }
        if fit.kind.is_ridge() != first.kind.is_ridge() {
            return Err(Error::InvalidConfig {
                context: "ensemble mixes least-squares and ridge members".to_string(),
            });
        }
        coefficients.axpy(w, &fit.coefficients, 1.0);
    }
    Ok(LearnerFit {
        kind,
        coefficients,
        scaling: None,
    })
}
