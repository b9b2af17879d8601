//! Closed-form transition points between merging and ensembling.
//!
//! Both learners' excess MSPE is affine in the heterogeneity level
//! `sigma_bar2 = tr(G)/p`, so the two curves cross at most once. With all
//! random-effect variances equal, the crossing is an exact point; with
//! unequal variances the crossing depends on how `tr(G)` is allocated across
//! the equal-variance groups, and the extreme allocations give a sharp
//! interval `[lower, upper]`: merging is better for every allocation below
//! `lower`, ensembling for every allocation above `upper`.
//!
//! Each denominator must be positive for its bound to be meaningful; the
//! checks are reported as [`ConditionCheck`] entries with a relative
//! tolerance, and exact cancellations (e.g. identical studies) surface as
//! [`ConditionStatus::Degenerate`] rather than as a spurious point.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::error_theory::{LsContext, RidgeContext};
use crate::estimators::{EnsembleWeights, RidgeConfig};
use crate::linalg::{trace_of_product, SpdSolver};
use crate::model::{RandomEffectsStructure, StudyData};

/// Relative tolerance below which a denominator counts as exactly zero.
const DEGENERACY_TOL: f64 = 1e-10;

/// Outcome of a sign condition backing a transition bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConditionStatus {
    /// Positive beyond tolerance: the bound is usable.
    Holds,
    /// Zero within relative tolerance: the formula is 0/0 (e.g. identical
    /// studies) and no bound is reported.
    Degenerate,
    /// Negative beyond tolerance: the theory's premise fails here.
    Violated,
}

/// One checked positivity condition with its magnitude context.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ConditionCheck {
    pub name: String,
    /// Signed value of the checked expression.
    pub value: f64,
    /// Sum of the magnitudes of the cancelling terms; `value` is compared
    /// against `1e-10 * scale`.
    pub scale: f64,
    pub status: ConditionStatus,
}

impl ConditionCheck {
    fn new(name: String, value: f64, scale: f64) -> Self {
        let status = if value > DEGENERACY_TOL * scale {
            ConditionStatus::Holds
        } else if value < -DEGENERACY_TOL * scale {
            ConditionStatus::Violated
        } else {
            ConditionStatus::Degenerate
        };
        Self {
            name,
            value,
            scale,
            status,
        }
    }
}

/// Whether a result is an exact crossing or an allocation-robust interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TransitionKind {
    Point,
    Interval,
}

/// A transition point or interval in `sigma_bar2` units, plus diagnostics.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct TransitionResult {
    pub kind: TransitionKind,
    /// Exact crossing (`kind == Point` and the denominator condition holds).
    pub point: Option<f64>,
    /// Below this every variance allocation favors merging.
    pub lower: Option<f64>,
    /// Above this every variance allocation favors ensembling.
    pub upper: Option<f64>,
    /// Shared numerator of the bound expressions: the weighted noise-variance
    /// gap, plus the shrinkage-bias gap for ridge.
    pub numerator: f64,
    pub conditions: Vec<ConditionCheck>,
}

impl TransitionResult {
    /// True when at least one usable bound exists.
    pub fn is_valid(&self) -> bool {
        self.point.is_some() || self.lower.is_some() || self.upper.is_some()
    }

    /// `(lower, upper)` with a point collapsing to a width-zero interval.
    pub fn bounds(&self) -> (Option<f64>, Option<f64>) {
        match self.kind {
            TransitionKind::Point => (self.point, self.point),
            TransitionKind::Interval => (self.lower, self.upper),
        }
    }
}

/// Decision implied by an estimated heterogeneity level and a transition
/// result. Inside an interval — or whenever no usable bound exists — the
/// comparison is indeterminate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Recommendation {
    Merge,
    Ensemble,
    Indeterminate,
}

/// Pure decision rule: merge strictly below the lower bound, ensemble
/// strictly above the upper bound, indeterminate otherwise.
pub fn recommend(sigma_bar2: f64, result: &TransitionResult) -> Recommendation {
    let (lower, upper) = result.bounds();
    if let Some(lo) = lower {
        if sigma_bar2 < lo {
            return Recommendation::Merge;
        }
    }
    if let Some(hi) = upper {
        if sigma_bar2 > hi {
            return Recommendation::Ensemble;
        }
    }
    Recommendation::Indeterminate
}

/// Affine coefficient data for one equal-variance group.
struct GroupTerm {
    /// Denominator contribution `D_j` (merged sensitivity minus ensemble
    /// sensitivity to the group's variance).
    d: f64,
    /// `|merged term| + |ensemble term|`, the cancellation scale.
    scale: f64,
    /// Group size `m_j`.
    m: usize,
}

fn validate_noise(sigma_eps2: f64) -> Result<()> {
    if !sigma_eps2.is_finite() || sigma_eps2 < 0.0 {
        return Err(Error::InvalidVariance { value: sigma_eps2 });
    }
    Ok(())
}

fn ls_numerator(
    ctx: &LsContext,
    weights: &EnsembleWeights,
    sigma_eps2: f64,
) -> (f64, ConditionCheck) {
    let mut ens = 0.0;
    for (k, &w) in weights.as_slice().iter().enumerate() {
        ens += w * w * ctx.noise_study(k);
    }
    let merged = ctx.noise_merged();
    let numerator = sigma_eps2 * (ens - merged);
    let check = ConditionCheck::new(
        String::from("numerator"),
        numerator,
        sigma_eps2 * (ens.abs() + merged.abs()),
    );
    (numerator, check)
}

fn ls_group_terms(
    ctx: &LsContext,
    re: &RandomEffectsStructure,
    weights: &EnsembleWeights,
) -> Vec<GroupTerm> {
    let wsq = weights.sum_sq();
    re.groups()
        .iter()
        .map(|g| {
            let merged = ctx.merged_group_coeff(g.columns());
            let ens = ctx.z0_group_trace(g.columns()) * wsq;
            GroupTerm {
                d: merged - ens,
                scale: merged.abs() + ens.abs(),
                m: g.len(),
            }
        })
        .collect()
}

fn ridge_numerator(
    ctx: &RidgeContext,
    weights: &EnsembleWeights,
    sigma_eps2: f64,
    beta: &DVector<f64>,
) -> (f64, ConditionCheck) {
    let mut ens_noise = 0.0;
    for (k, &w) in weights.as_slice().iter().enumerate() {
        ens_noise += w * w * ctx.noise_study(k);
    }
    let merged_noise = ctx.noise_merged();
    let ens_bias = ctx.ensemble_bias(weights, beta).norm_squared();
    let merged_bias = ctx.merged_bias(beta).norm_squared();
    let numerator = sigma_eps2 * (ens_noise - merged_noise) + ens_bias - merged_bias;
    let scale = sigma_eps2 * (ens_noise.abs() + merged_noise.abs()) + ens_bias + merged_bias;
    (
        numerator,
        ConditionCheck::new(String::from("numerator"), numerator, scale),
    )
}

fn ridge_group_terms(
    ctx: &RidgeContext,
    re: &RandomEffectsStructure,
    weights: &EnsembleWeights,
) -> Vec<GroupTerm> {
    re.groups()
        .iter()
        .map(|g| {
            let merged = ctx.merged_group_coeff(g.columns());
            let mut ens = 0.0;
            for (k, &w) in weights.as_slice().iter().enumerate() {
                ens += w * w * ctx.study_group_coeff(k, g.columns());
            }
            GroupTerm {
                d: merged - ens,
                scale: merged.abs() + ens.abs(),
                m: g.len(),
            }
        })
        .collect()
}

/// Pools all groups into the single-set point formula
/// `tau = (q/p) numerator / sum_j D_j`.
fn assemble_point(
    numerator: f64,
    numerator_check: ConditionCheck,
    terms: &[GroupTerm],
    q: usize,
    p: usize,
) -> TransitionResult {
    let d: f64 = terms.iter().map(|t| t.d).sum();
    let scale: f64 = terms.iter().map(|t| t.scale).sum();
    let check = ConditionCheck::new(String::from("denominator"), d, scale);
    let point = (check.status == ConditionStatus::Holds)
        .then(|| (q as f64 / p as f64) * numerator / d);
    TransitionResult {
        kind: TransitionKind::Point,
        point,
        lower: None,
        upper: None,
        numerator,
        conditions: alloc::vec![numerator_check, check],
    }
}

/// Forms the allocation-robust interval
/// `numerator / (p max_j D_j/m_j)` to `numerator / (p min_j D_j/m_j)`.
fn assemble_interval(
    numerator: f64,
    numerator_check: ConditionCheck,
    terms: &[GroupTerm],
    p: usize,
) -> TransitionResult {
    let mut conditions = alloc::vec![numerator_check];
    let mut max_idx = 0;
    let mut min_idx = 0;
    for (j, t) in terms.iter().enumerate() {
        let scaled = t.d / t.m as f64;
        if scaled > terms[max_idx].d / terms[max_idx].m as f64 {
            max_idx = j;
        }
        if scaled < terms[min_idx].d / terms[min_idx].m as f64 {
            min_idx = j;
        }
        conditions.push(ConditionCheck::new(
            format!("denominator-group-{j}"),
            scaled,
            t.scale / t.m as f64,
        ));
    }
    // Group checks start at index 1 (after the numerator entry).
    let lower = (conditions[1 + max_idx].status == ConditionStatus::Holds).then(|| {
        numerator / (p as f64 * terms[max_idx].d / terms[max_idx].m as f64)
    });
    let upper = (conditions
        .iter()
        .skip(1)
        .all(|c| c.status == ConditionStatus::Holds))
    .then(|| numerator / (p as f64 * terms[min_idx].d / terms[min_idx].m as f64));
    TransitionResult {
        kind: TransitionKind::Interval,
        point: None,
        lower,
        upper,
        numerator,
        conditions,
    }
}

/// Exact least-squares transition point for a single equal-variance set of
/// random-effect columns.
pub fn tau_ls(
    studies: &[StudyData],
    re_columns: &[usize],
    sigma_eps2: f64,
    weights: &EnsembleWeights,
    x0: &DMatrix<f64>,
) -> Result<TransitionResult> {
    let re = RandomEffectsStructure::uniform(re_columns.to_vec(), 1.0)?;
    validate_noise(sigma_eps2)?;
    let ctx = LsContext::new(studies, x0)?;
    re.validate_p(ctx.p)?;
    weights.validate_k(ctx.k())?;
    let (numerator, ncheck) = ls_numerator(&ctx, weights, sigma_eps2);
    let terms = ls_group_terms(&ctx, &re, weights);
    Ok(assemble_point(numerator, ncheck, &terms, re.q(), ctx.p))
}

/// Least-squares transition interval over equal-variance groups.
pub fn tau_ls_interval(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    weights: &EnsembleWeights,
    x0: &DMatrix<f64>,
) -> Result<TransitionResult> {
    validate_noise(sigma_eps2)?;
    let ctx = LsContext::new(studies, x0)?;
    re.validate_p(ctx.p)?;
    weights.validate_k(ctx.k())?;
    let (numerator, ncheck) = ls_numerator(&ctx, weights, sigma_eps2);
    let terms = ls_group_terms(&ctx, re, weights);
    Ok(assemble_interval(numerator, ncheck, &terms, ctx.p))
}

/// Exact ridge transition point for a single equal-variance set of
/// random-effect columns.
pub fn tau_ridge(
    studies: &[StudyData],
    re_columns: &[usize],
    sigma_eps2: f64,
    beta: &DVector<f64>,
    config: &RidgeConfig,
    weights: &EnsembleWeights,
    x0: &DMatrix<f64>,
) -> Result<TransitionResult> {
    let re = RandomEffectsStructure::uniform(re_columns.to_vec(), 1.0)?;
    validate_noise(sigma_eps2)?;
    let ctx = RidgeContext::new(studies, config, x0)?;
    re.validate_p(ctx.p)?;
    weights.validate_k(ctx.k())?;
    ctx.validate_beta(beta)?;
    let (numerator, ncheck) = ridge_numerator(&ctx, weights, sigma_eps2, beta);
    let terms = ridge_group_terms(&ctx, &re, weights);
    Ok(assemble_point(numerator, ncheck, &terms, re.q(), ctx.p))
}

/// Ridge transition interval over equal-variance groups.
pub fn tau_ridge_interval(
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    beta: &DVector<f64>,
    config: &RidgeConfig,
    weights: &EnsembleWeights,
    x0: &DMatrix<f64>,
) -> Result<TransitionResult> {
    validate_noise(sigma_eps2)?;
    let ctx = RidgeContext::new(studies, config, x0)?;
    re.validate_p(ctx.p)?;
    weights.validate_k(ctx.k())?;
    ctx.validate_beta(beta)?;
    let (numerator, ncheck) = ridge_numerator(&ctx, weights, sigma_eps2, beta);
    let terms = ridge_group_terms(&ctx, re, weights);
    Ok(assemble_interval(numerator, ncheck, &terms, ctx.p))
}

/// Many-studies limit of the least-squares interval under equal weights.
///
/// `a1 = E[R_k]`, `a2 = E[R_k^{-1}]`, and `a_groups[j] = E[C_{k,j} C_{k,j}^T]`
/// where `C_{k,j}` holds the group-`j` columns of `R_k`; the expectations are
/// over the training-design distribution. The result no longer depends on the
/// number of studies.
pub fn tau_asymptotic(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    a_groups: &[DMatrix<f64>],
    re: &RandomEffectsStructure,
    sigma_eps2: f64,
    x0: &DMatrix<f64>,
) -> Result<TransitionResult> {
    validate_noise(sigma_eps2)?;
    let p = a1.nrows();
    if x0.ncols() != p || a2.nrows() != p || a2.ncols() != p {
        return Err(Error::DimensionMismatch {
            context: String::from("asymptotic moment matrices vs test design"),
            expected: p,
            found: x0.ncols(),
        });
    }
    re.validate_p(p)?;
    if a_groups.len() != re.groups().len() {
        return Err(Error::DimensionMismatch {
            context: String::from("group moment matrices vs variance groups"),
            expected: re.groups().len(),
            found: a_groups.len(),
        });
    }
    let r0 = x0.tr_mul(x0);
    let solver = SpdSolver::new(a1, "expected Gram matrix")?;
    let ens = trace_of_product(a2, &r0);
    let merged = solver.trace_solve(&r0);
    let numerator = sigma_eps2 * (ens - merged);
    let ncheck = ConditionCheck::new(
        String::from("numerator"),
        numerator,
        sigma_eps2 * (ens.abs() + merged.abs()),
    );
    let a1_inv_r0 = solver.solve_mat(&r0);
    let mut terms = Vec::with_capacity(a_groups.len());
    for (g, a_j) in re.groups().iter().zip(a_groups) {
        if a_j.nrows() != p || a_j.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: String::from("group moment matrix"),
                expected: p,
                found: a_j.nrows(),
            });
        }
        let merged_term = trace_of_product(&solver.solve_mat(a_j), &a1_inv_r0);
        let ens_term: f64 = g.columns().iter().map(|&c| r0[(c, c)]).sum();
        terms.push(GroupTerm {
            d: merged_term - ens_term,
            scale: merged_term.abs() + ens_term.abs(),
            m: g.len(),
        });
    }
    Ok(assemble_interval(numerator, ncheck, &terms, p))
}
