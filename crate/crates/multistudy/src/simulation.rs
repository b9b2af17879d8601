//! Deterministic Monte Carlo sweeps over the heterogeneity scale.
//!
//! The engine fixes the study designs, scales the random-effect structure to
//! each grid level of `sigma_bar2`, regenerates outcomes per replicate, and
//! records merged and ensemble prediction errors for the configured
//! learners. Every grid point carries the analytic excess MSPE alongside the
//! Monte Carlo mean, with a three-standard-error concordance flag — the
//! module's built-in self test. Grid points are seeded independently, so
//! they can be evaluated in any order (or on different threads) and
//! reassembled deterministically.
//!
//! Prediction error is measured in excess form `||X_0 (beta_hat - beta)||^2`
//! (summed over test rows, matching the analytic convention) unless raw
//! per-row MSPE against freshly drawn test outcomes is requested.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::error_theory::{
    excess_mspe_ls_ensemble, excess_mspe_ls_merged, excess_mspe_ridge_ensemble,
    excess_mspe_ridge_merged, irreducible_mspe,
};
use crate::estimators::{
    scaling_diag, shrink_diag, EnsembleWeights, Learner, RidgeConfig,
};
use crate::linalg::SpdSolver;
use crate::model::{generate_study, GeneratorConfig, RandomEffectsStructure, StudyData};
use crate::seed::{stream_rng, stream_seed};
use crate::transition::{tau_ls, tau_ridge, TransitionResult};
use crate::varcomp::estimate_varcomp;
use crate::weights::{
    optimal_transition_point_ls, optimal_transition_point_ridge, optimal_weights_ls,
    optimal_weights_ridge,
};

use rand::Rng;

/// Seed lane for per-grid-point generator streams.
const POINT_LANE: u64 = 0x70A1;
/// Seed lane for the crossing-interval bootstrap.
const CROSSING_LANE: u64 = 0xC805;
/// Seed lane for `compare_at` evaluations.
const COMPARE_LANE: u64 = 0xC0A2;

/// Resamples used for the empirical-crossing interval.
const CROSSING_BOOTSTRAP: usize = 500;

/// How ensemble weights are chosen inside a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WeightScheme {
    /// `1/K` everywhere.
    Equal,
    /// Risk-optimal weights computed from the true generating quantities at
    /// each grid point.
    OptimalOracle,
    /// Risk-optimal weights recomputed inside every replicate from plug-in
    /// estimates (moment variance components and the merged coefficient
    /// fit). Requires more rows than predictors per study.
    OptimalEstimated,
}

impl WeightScheme {
    pub fn label(self) -> &'static str {
        match self {
            WeightScheme::Equal => "equal",
            WeightScheme::OptimalOracle => "optimal-oracle",
            WeightScheme::OptimalEstimated => "optimal-estimated",
        }
    }
}

/// Configuration of one Monte Carlo sweep.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    generator: GeneratorConfig,
    sigma_bar2_grid: Vec<f64>,
    replicates: usize,
    learners: Vec<Learner>,
    weight_scheme: WeightScheme,
    ridge: Option<RidgeConfig>,
    raw_mspe: bool,
}

impl SweepConfig {
    /// # Errors
    ///
    /// Rejects a grid that does not start at zero, is not strictly
    /// ascending, or contains non-finite values; fewer than 100 replicates;
    /// an empty or duplicated learner list; and a ridge learner without a
    /// ridge configuration.
    pub fn new(
        generator: GeneratorConfig,
        sigma_bar2_grid: Vec<f64>,
        replicates: usize,
        learners: Vec<Learner>,
        weight_scheme: WeightScheme,
        ridge: Option<RidgeConfig>,
    ) -> Result<Self> {
        if sigma_bar2_grid.first() != Some(&0.0) {
            return Err(Error::InvalidConfig {
                context: "sweep grid must start at zero heterogeneity".to_string(),
            });
        }
        for pair in sigma_bar2_grid.windows(2) {
            if !pair[1].is_finite() || pair[1] <= pair[0] {
                return Err(Error::InvalidConfig {
                    context: "sweep grid must be finite and strictly ascending".to_string(),
                });
            }
        }
        if replicates < 100 {
            return Err(Error::InvalidConfig {
                context: format!("sweeps need at least 100 replicates, got {replicates}"),
            });
        }
        if learners.is_empty() {
            return Err(Error::InvalidConfig {
                context: "sweep needs at least one learner".to_string(),
            });
        }
        if learners.len() > 1 && learners[0] == learners[1] {
            return Err(Error::InvalidConfig {
                context: "duplicate learner in sweep".to_string(),
            });
        }
        if learners.contains(&Learner::Ridge) {
            match &ridge {
                None => {
                    return Err(Error::InvalidConfig {
                        context: "ridge learner requires a ridge configuration".to_string(),
                    })
                }
                Some(cfg) => cfg.validate(generator.n_train())?,
            }
        }
        Ok(Self {
            generator,
            sigma_bar2_grid,
            replicates,
            learners,
            weight_scheme,
            ridge,
            raw_mspe: false,
        })
    }

    /// Switch to raw per-row MSPE against freshly drawn test outcomes
    /// (irreducible error included), instead of excess error against the
    /// true mean.
    #[must_use]
    pub fn with_raw_mspe(mut self, raw: bool) -> Self {
        self.raw_mspe = raw;
        self
    }

    pub fn generator(&self) -> &GeneratorConfig {
        &self.generator
    }

    pub fn grid(&self) -> &[f64] {
        &self.sigma_bar2_grid
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    pub fn weight_scheme(&self) -> WeightScheme {
        self.weight_scheme
    }

    pub fn ridge(&self) -> Option<&RidgeConfig> {
        self.ridge.as_ref()
    }

    pub fn raw_mspe(&self) -> bool {
        self.raw_mspe
    }
}

/// One grid point scheduled for evaluation: its heterogeneity level, its
/// derived generator seed, and whether the scheduler inserted it (the
/// theoretical transition point) rather than the user listing it.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSpec {
    pub sigma_bar2: f64,
    pub seed: u64,
    pub inserted: bool,
}

/// Monte Carlo summary of one arm (merged or ensemble) at one grid point.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ArmStats {
    pub mc_mean: f64,
    pub mc_se: f64,
    /// Analytic value for the same quantity. Under estimated weights the
    /// ensemble reference uses the oracle-optimal weights, so the flag below
    /// is informative rather than guaranteed.
    pub analytic: f64,
    /// Whether the Monte Carlo mean lies within three standard errors of
    /// the analytic value.
    pub within_3se: bool,
}

/// Results for one learner at one grid point.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LearnerPoint {
    pub learner: Learner,
    pub merged: ArmStats,
    pub ensemble: ArmStats,
    /// `ln(ensemble / merged)` of the Monte Carlo means: positive where
    /// merging wins.
    pub log_ratio: f64,
    /// Paired per-replicate difference `merged - ensemble`.
    pub diff_mean: f64,
    pub diff_se: f64,
    /// Per-replicate `(merged, ensemble)` values, kept for resampling.
    #[cfg_attr(feature = "serde", serde(skip))]
    pub samples: Vec<(f64, f64)>,
}

/// All learners' results at one grid point.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct PointResult {
    pub sigma_bar2: f64,
    /// True when the scheduler added this point (theoretical transition).
    pub inserted: bool,
    pub excluded: usize,
    pub learners: Vec<LearnerPoint>,
}

/// A theoretical transition attached to the sweep for one learner.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct LearnerTau {
    pub learner: Learner,
    pub result: TransitionResult,
}

/// Output of [`run_sweep`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SweepResult {
    pub points: Vec<PointResult>,
    /// Theoretical transition results under the sweep's weight scheme.
    pub taus: Vec<LearnerTau>,
    pub weight_scheme: WeightScheme,
    pub raw_mspe: bool,
    pub replicates: usize,
    pub excluded_total: usize,
    /// Master seed the point streams were derived from.
    pub master_seed: u64,
}

/// One row of the flat CSV view of a sweep.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct FlatRow {
    pub sigma_bar2: f64,
    pub learner: String,
    pub arm: String,
    pub mspe: f64,
    pub se: f64,
    pub log_ratio: f64,
}

impl SweepResult {
    /// Flat rows (one per point, learner, and arm) for CSV export.
    pub fn flat_rows(&self) -> Vec<FlatRow> {
        let mut rows = Vec::new();
        for point in &self.points {
            for lp in &point.learners {
                for (arm, stats) in [("merged", &lp.merged), ("ensemble", &lp.ensemble)] {
                    rows.push(FlatRow {
                        sigma_bar2: point.sigma_bar2,
                        learner: lp.learner.label().to_string(),
                        arm: arm.to_string(),
                        mspe: stats.mc_mean,
                        se: stats.mc_se,
                        log_ratio: lp.log_ratio,
                    });
                }
            }
        }
        rows
    }

    /// Whether every enforced concordance flag holds (ensemble flags are
    /// skipped under estimated weights, whose reference is the oracle).
    pub fn concordant(&self) -> bool {
        self.points.iter().all(|p| {
            p.learners.iter().all(|lp| {
                lp.merged.within_3se
                    && (lp.ensemble.within_3se || self.weight_scheme == WeightScheme::OptimalEstimated)
            })
        })
    }
}

/// Sign a non-crossing log-ratio curve kept throughout the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CurveSign {
    /// Merging won everywhere.
    Positive,
    /// Ensembling won everywhere.
    Negative,
}

/// Empirical transition estimate from a sweep's log-ratio curve.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct EmpiricalTransition {
    /// Interpolated zero crossing; `None` when the curve never changes sign.
    pub estimate: Option<f64>,
    /// Bootstrap 95% interval over replicates, when enough resampled curves
    /// cross.
    pub interval: Option<(f64, f64)>,
    /// Set when no crossing was found: the sign the curve kept.
    pub prevailing: Option<CurveSign>,
}

/// First zero crossing of a piecewise-linear curve `(x, y)`, by linear
/// interpolation. An exact zero lands on its grid point.
pub fn crossing_from_curve(curve: &[(f64, f64)]) -> Option<f64> {
    for pair in curve.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        if y0 == 0.0 {
            return Some(x0);
        }
        if y0 * y1 < 0.0 {
            return Some(x0 + (x1 - x0) * y0 / (y0 - y1));
        }
    }
    curve.last().and_then(|&(x, y)| (y == 0.0).then_some(x))
}

fn stack_rows(designs: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = designs.iter().map(DMatrix::nrows).sum();
    let p = designs[0].ncols();
    let mut out = DMatrix::zeros(rows, p);
    let mut at = 0;
    for d in designs {
        out.view_mut((at, 0), (d.nrows(), p)).copy_from(d);
        at += d.nrows();
    }
    out
}

/// Design-only study stand-ins (zero outcomes) for the analytic routines,
/// which read nothing but the design matrices.
fn design_studies(config: &GeneratorConfig) -> Vec<StudyData> {
    config
        .train_designs()
        .iter()
        .enumerate()
        .map(|(k, x)| {
            StudyData::new(format!("design-{k}"), x.clone(), DVector::zeros(x.nrows()))
                .expect("validated designs construct")
        })
        .collect()
}

/// Theoretical transition results for each configured learner under the
/// sweep's weight scheme. Optimal schemes report the optimally-weighted
/// fixed point, re-expressed by freezing the optimal weights at the
/// crossing; a learner whose optimal crossing is degenerate is omitted.
pub fn theoretical_taus(config: &SweepConfig) -> Result<Vec<LearnerTau>> {
    let gen = &config.generator;
    let studies = design_studies(gen);
    let x0 = stack_rows(gen.test_designs());
    let cols = gen.re().columns().to_vec();
    let sigma_eps2 = gen.sigma_eps2();
    let equal = EnsembleWeights::equal(studies.len())?;
    let mut out = Vec::new();
    for &learner in &config.learners {
        let result = match (learner, config.weight_scheme) {
            (Learner::LeastSquares, WeightScheme::Equal) => {
                Some(tau_ls(&studies, &cols, sigma_eps2, &equal, &x0)?)
            }
            (Learner::LeastSquares, _) => {
                match optimal_transition_point_ls(&studies, &cols, sigma_eps2, &x0) {
                    Ok(star) => {
                        let re = scaled_re(gen, star)?;
                        let w = optimal_weights_ls(&studies, &re, sigma_eps2, &x0)?;
                        Some(tau_ls(&studies, &cols, sigma_eps2, &w.weights, &x0)?)
                    }
                    Err(Error::NoCrossing { .. }) => None,
                    Err(e) => return Err(e),
                }
            }
            (Learner::Ridge, scheme) => {
                let rc = config.ridge.as_ref().expect("validated at construction");
                let beta = gen.beta();
                match scheme {
                    WeightScheme::Equal => {
                        Some(tau_ridge(&studies, &cols, sigma_eps2, beta, rc, &equal, &x0)?)
                    }
                    _ => match optimal_transition_point_ridge(
                        &studies, &cols, sigma_eps2, beta, rc, &x0,
                    ) {
                        Ok(star) => {
                            let re = scaled_re(gen, star)?;
                            let w = optimal_weights_ridge(
                                &studies, &re, sigma_eps2, beta, rc, &x0,
                            )?;
                            Some(tau_ridge(
                                &studies, &cols, sigma_eps2, beta, rc, &w.weights, &x0,
                            )?)
                        }
                        Err(Error::NoCrossing { .. }) => None,
                        Err(e) => return Err(e),
                    },
                }
            }
        };
        if let Some(result) = result {
            out.push(LearnerTau { learner, result });
        }
    }
    Ok(out)
}

fn scaled_re(gen: &GeneratorConfig, sigma_bar2: f64) -> Result<RandomEffectsStructure> {
    gen.re().scaled_to(sigma_bar2, gen.beta().len())
}

/// The final evaluation schedule: the user grid, with each learner's valid
/// theoretical transition point inserted (deduplicated at relative 1e-9),
/// and an independent derived seed per point.
pub fn sweep_points(config: &SweepConfig) -> Result<Vec<PointSpec>> {
    let mut levels = config.sigma_bar2_grid.clone();
    let mut inserted_levels = Vec::new();
    for tau in theoretical_taus(config)? {
        let candidates = [tau.result.point, tau.result.lower, tau.result.upper];
        for level in candidates.iter().flatten() {
            let duplicate = levels
                .iter()
                .chain(inserted_levels.iter())
                .any(|&g| (g - level).abs() <= 1e-9 * level.max(1.0));
            if *level > 0.0 && !duplicate {
                inserted_levels.push(*level);
            }
        }
    }
    levels.extend(inserted_levels.iter().copied());
    levels.sort_by(|a, b| a.partial_cmp(b).expect("grid levels are finite"));
    let master = config.generator.seed();
    Ok(levels
        .iter()
        .enumerate()
        .map(|(idx, &sigma_bar2)| PointSpec {
            sigma_bar2,
            seed: stream_seed(master, POINT_LANE, idx as u64),
            inserted: !config.sigma_bar2_grid.contains(&sigma_bar2),
        })
        .collect())
}

/// Prefactored per-point solvers and analytic references for one learner.
struct ArmKit {
    learner: Learner,
    study_solvers: Vec<SpdSolver>,
    merged_solver: SpdSolver,
    /// Fixed ensemble weights; `None` under estimated weights.
    fixed_weights: Option<EnsembleWeights>,
    analytic_merged: f64,
    analytic_ensemble: f64,
}

fn build_arm_kit(
    config: &SweepConfig,
    learner: Learner,
    studies: &[StudyData],
    re: &RandomEffectsStructure,
    x0: &DMatrix<f64>,
    raw_offset: f64,
) -> Result<ArmKit> {
    let gen = &config.generator;
    let sigma_eps2 = gen.sigma_eps2();
    let beta = gen.beta();
    let k = studies.len();
    let p = beta.len();

    let mut study_solvers = Vec::with_capacity(k);
    let merged_solver;
    match learner {
        Learner::LeastSquares => {
            let mut r_sum = DMatrix::zeros(p, p);
            for s in studies {
                let r = s.gram();
                r_sum += &r;
                study_solvers.push(SpdSolver::new(&r, &format!("Gram matrix of study {}", s.id()))?);
            }
            merged_solver = SpdSolver::new(&r_sum, "merged Gram matrix")?;
        }
        Learner::Ridge => {
            let rc = config.ridge.as_ref().expect("validated at construction");
            let mut r_sum = DMatrix::zeros(p, p);
            for (idx, s) in studies.iter().enumerate() {
                let mut m = s.gram();
                r_sum += &m;
                let scaling = scaling_diag(s.x(), rc.scaling, rc.intercept)?;
                let shrink = shrink_diag(rc.lambda_per_study[idx], &scaling, rc.intercept);
                for i in 0..p {
                    m[(i, i)] += shrink[i];
                }
                study_solvers.push(SpdSolver::new(
                    &m,
                    &format!("ridge system of study {}", s.id()),
                )?);
            }
            let stacked = stack_rows(gen.train_designs());
            let scaling = scaling_diag(&stacked, rc.scaling, rc.intercept)?;
            let shrink = shrink_diag(rc.lambda_merged, &scaling, rc.intercept);
            let mut m = r_sum;
            for i in 0..p {
                m[(i, i)] += shrink[i];
            }
            merged_solver = SpdSolver::new(&m, "merged ridge system")?;
        }
    }

    // Oracle-optimal or equal weights are fixed for the whole point; the
    // analytic ensemble reference always uses these (the estimated scheme
    // has no analytic counterpart of its own).
    let reference_weights = match config.weight_scheme {
        WeightScheme::Equal => EnsembleWeights::equal(k)?,
        WeightScheme::OptimalOracle | WeightScheme::OptimalEstimated => match learner {
            Learner::LeastSquares => optimal_weights_ls(studies, re, sigma_eps2, x0)?.weights,
            Learner::Ridge => {
                let rc = config.ridge.as_ref().expect("validated at construction");
                optimal_weights_ridge(studies, re, sigma_eps2, beta, rc, x0)?.weights
            }
        },
    };

    let (analytic_merged, analytic_ensemble) = match learner {
        Learner::LeastSquares => (
            excess_mspe_ls_merged(studies, re, sigma_eps2, x0)?.excess(),
            excess_mspe_ls_ensemble(studies, re, sigma_eps2, &reference_weights, x0)?.excess(),
        ),
        Learner::Ridge => {
            let rc = config.ridge.as_ref().expect("validated at construction");
            (
                excess_mspe_ridge_merged(studies, re, sigma_eps2, beta, rc, x0)?.excess(),
                excess_mspe_ridge_ensemble(studies, re, sigma_eps2, beta, rc, &reference_weights, x0)?
                    .excess(),
            )
        }
    };
    let n0_total = x0.nrows() as f64;
    let (analytic_merged, analytic_ensemble) = if config.raw_mspe {
        (
            (analytic_merged + raw_offset) / n0_total,
            (analytic_ensemble + raw_offset) / n0_total,
        )
    } else {
        (analytic_merged, analytic_ensemble)
    };

    let fixed_weights = match config.weight_scheme {
        WeightScheme::OptimalEstimated => None,
        _ => Some(reference_weights),
    };
    Ok(ArmKit {
        learner,
        study_solvers,
        merged_solver,
        fixed_weights,
        analytic_merged,
        analytic_ensemble,
    })
}

/// Plug-in optimal weights from one replicate's realized studies.
fn estimated_weights(
    config: &SweepConfig,
    learner: Learner,
    studies: &[StudyData],
    merged_coef: &DVector<f64>,
    x0: &DMatrix<f64>,
) -> Result<EnsembleWeights> {
    let cols = config.generator.re().columns().to_vec();
    let est = estimate_varcomp(studies, &cols)?;
    let variances: Vec<f64> = cols.iter().map(|&c| est.sigma_hat2[c]).collect();
    let re_hat = RandomEffectsStructure::new(cols, variances)?;
    let w = match learner {
        Learner::LeastSquares => {
            optimal_weights_ls(studies, &re_hat, est.sigma_eps_hat2, x0)?
        }
        Learner::Ridge => {
            let rc = config.ridge.as_ref().expect("validated at construction");
            optimal_weights_ridge(studies, &re_hat, est.sigma_eps_hat2, merged_coef, rc, x0)?
        }
    };
    Ok(w.weights)
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, libm::sqrt(var / m))
}

/// Evaluate one scheduled grid point: regenerate outcomes `replicates`
/// times, fit every arm on shared draws, and summarize. A replicate whose
/// fit or plug-in weighting fails is excluded (all arms together, keeping
/// pairs intact); more than 1% exclusions fails the point.
pub fn evaluate_point(config: &SweepConfig, spec: &PointSpec) -> Result<PointResult> {
    let gen = &config.generator;
    let re = scaled_re(gen, spec.sigma_bar2)?;
    let gen_point = gen.with_re(re.clone())?.with_seed(spec.seed);
    let x0 = stack_rows(gen.test_designs());
    let raw_offset = irreducible_mspe(&re, gen.sigma_eps2(), &x0)?;
    let k_train = gen.n_train();
    let n_test = gen.n_test();
    let beta = gen.beta();

    let base_studies = design_studies(&gen_point);
    let kits: Vec<ArmKit> = config
        .learners
        .iter()
        .map(|&learner| build_arm_kit(config, learner, &base_studies, &re, &x0, raw_offset))
        .collect::<Result<_>>()?;

    let mut samples: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(config.replicates); kits.len()];
    let mut excluded = 0usize;
    for rep in 0..config.replicates as u64 {
        match evaluate_replicate(config, &gen_point, &kits, &x0, beta, k_train, n_test, rep) {
            Ok(rows) => {
                for (kit_samples, row) in samples.iter_mut().zip(rows) {
                    kit_samples.push(row);
                }
            }
            Err(Error::StudyIndex { .. }) | Err(Error::DimensionMismatch { .. }) => {
                // Structural problems are real errors, not bad luck.
                return Err(Error::DegenerateSystem {
                    context: "sweep replicate hit a structural inconsistency".to_string(),
                });
            }
            Err(_) => excluded += 1,
        }
    }
    let total = config.replicates;
    if excluded * 100 > total {
        return Err(Error::ExcessiveExclusions { excluded, total });
    }

    let mut learners = Vec::with_capacity(kits.len());
    for (kit, kit_samples) in kits.iter().zip(&samples) {
        let merged_vals: Vec<f64> = kit_samples.iter().map(|&(m, _)| m).collect();
        let ens_vals: Vec<f64> = kit_samples.iter().map(|&(_, e)| e).collect();
        let diffs: Vec<f64> = kit_samples.iter().map(|&(m, e)| m - e).collect();
        let (m_mean, m_se) = mean_and_se(&merged_vals);
        let (e_mean, e_se) = mean_and_se(&ens_vals);
        let (d_mean, d_se) = mean_and_se(&diffs);
        let merged = ArmStats {
            mc_mean: m_mean,
            mc_se: m_se,
            analytic: kit.analytic_merged,
            within_3se: (m_mean - kit.analytic_merged).abs() <= 3.0 * m_se,
        };
        let ensemble = ArmStats {
            mc_mean: e_mean,
            mc_se: e_se,
            analytic: kit.analytic_ensemble,
            within_3se: (e_mean - kit.analytic_ensemble).abs() <= 3.0 * e_se,
        };
        learners.push(LearnerPoint {
            learner: kit.learner,
            merged,
            ensemble,
            log_ratio: libm::log(e_mean / m_mean),
            diff_mean: d_mean,
            diff_se: d_se,
            samples: kit_samples.clone(),
        });
    }
    Ok(PointResult {
        sigma_bar2: spec.sigma_bar2,
        inserted: spec.inserted,
        excluded,
        learners,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_replicate(
    config: &SweepConfig,
    gen_point: &GeneratorConfig,
    kits: &[ArmKit],
    x0: &DMatrix<f64>,
    beta: &DVector<f64>,
    k_train: usize,
    n_test: usize,
    rep: u64,
) -> Result<Vec<(f64, f64)>> {
    let studies: Vec<StudyData> = (0..k_train)
        .map(|k| generate_study(gen_point, k, rep))
        .collect::<Result<_>>()?;
    let xtys: Vec<DVector<f64>> = studies.iter().map(StudyData::xty).collect();
    let mut xty_sum = DVector::zeros(beta.len());
    for v in &xtys {
        xty_sum += v;
    }
    // Raw mode draws fresh test outcomes, shared across learners.
    let test_studies: Option<Vec<StudyData>> = if config.raw_mspe {
        Some(
            (0..n_test)
                .map(|t| generate_study(gen_point, k_train + t, rep))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let mut rows = Vec::with_capacity(kits.len());
    for kit in kits {
        let merged_coef = kit.merged_solver.solve_vec(&xty_sum);
        let study_coefs: Vec<DVector<f64>> = kit
            .study_solvers
            .iter()
            .zip(&xtys)
            .map(|(solver, xty)| solver.solve_vec(xty))
            .collect();
        let weights = match &kit.fixed_weights {
            Some(w) => w.clone(),
            None => estimated_weights(config, kit.learner, &studies, &merged_coef, x0)?,
        };
        let mut ens_coef = DVector::zeros(beta.len());
        for (w, c) in weights.as_slice().iter().zip(&study_coefs) {
            ens_coef.axpy(*w, c, 1.0);
        }
        let row = match &test_studies {
            None => {
                let merged = (x0 * (&merged_coef - beta)).norm_squared();
                let ensemble = (x0 * (&ens_coef - beta)).norm_squared();
                (merged, ensemble)
            }
            Some(tests) => {
                let mut merged = 0.0;
                let mut ensemble = 0.0;
                let mut rows_total = 0usize;
                for t in tests {
                    merged += (t.y() - t.x() * &merged_coef).norm_squared();
                    ensemble += (t.y() - t.x() * &ens_coef).norm_squared();
                    rows_total += t.n();
                }
                (merged / rows_total as f64, ensemble / rows_total as f64)
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Combine per-point results (in schedule order) into a [`SweepResult`].
pub fn assemble_sweep(config: &SweepConfig, points: Vec<PointResult>) -> Result<SweepResult> {
    let specs = sweep_points(config)?;
    if specs.len() != points.len() {
        return Err(Error::InvalidConfig {
            context: format!(
                "assembled {} points but the schedule has {}",
                points.len(),
                specs.len()
            ),
        });
    }
    for (spec, point) in specs.iter().zip(&points) {
        if spec.sigma_bar2 != point.sigma_bar2 {
            return Err(Error::InvalidConfig {
                context: "assembled points out of schedule order".to_string(),
            });
        }
    }
    let excluded_total = points.iter().map(|p| p.excluded).sum();
    Ok(SweepResult {
        points,
        taus: theoretical_taus(config)?,
        weight_scheme: config.weight_scheme,
        raw_mspe: config.raw_mspe,
        replicates: config.replicates,
        excluded_total,
        master_seed: config.generator.seed(),
    })
}

/// Run the full sweep sequentially: schedule, evaluate each point, and
/// assemble. Deterministic in the configuration, including its seed.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let specs = sweep_points(config)?;
    let points = specs
        .iter()
        .map(|spec| evaluate_point(config, spec))
        .collect::<Result<Vec<_>>>()?;
    assemble_sweep(config, points)
}

/// Interpolated zero crossing of the sweep's log-ratio curve for one
/// learner, with a bootstrap-over-replicates 95% interval. A curve that
/// never changes sign reports the sign it kept instead of an estimate.
pub fn empirical_transition(result: &SweepResult, learner: Learner) -> Result<EmpiricalTransition> {
    let mut curve = Vec::new();
    let mut samples = Vec::new();
    for point in &result.points {
        match point.learners.iter().find(|lp| lp.learner == learner) {
            Some(lp) => {
                curve.push((point.sigma_bar2, lp.log_ratio));
                samples.push(&lp.samples);
            }
            None => {
                return Err(Error::InvalidConfig {
                    context: format!("sweep has no {} learner", learner.label()),
                })
            }
        }
    }
    if curve.len() < 2 {
        return Err(Error::InsufficientData {
            context: "empirical transition".to_string(),
            detail: "needs at least two grid points".to_string(),
        });
    }
    let estimate = crossing_from_curve(&curve);
    if estimate.is_none() {
        let prevailing = if curve.iter().all(|&(_, y)| y > 0.0) {
            Some(CurveSign::Positive)
        } else {
            Some(CurveSign::Negative)
        };
        return Ok(EmpiricalTransition {
            estimate: None,
            interval: None,
            prevailing,
        });
    }

    let mut crossings = Vec::with_capacity(CROSSING_BOOTSTRAP);
    for b in 0..CROSSING_BOOTSTRAP {
        let mut rng = stream_rng(result.master_seed, CROSSING_LANE, b as u64);
        let mut boot_curve = Vec::with_capacity(curve.len());
        for (&(sigma, _), point_samples) in curve.iter().zip(&samples) {
            let m = point_samples.len();
            let mut merged = 0.0;
            let mut ensemble = 0.0;
            for _ in 0..m {
                let (mv, ev) = point_samples[rng.random_range(0..m)];
                merged += mv;
                ensemble += ev;
            }
            boot_curve.push((sigma, libm::log(ensemble / merged)));
        }
        if let Some(c) = crossing_from_curve(&boot_curve) {
            crossings.push(c);
        }
    }
    let interval = if 2 * crossings.len() >= CROSSING_BOOTSTRAP {
        crossings.sort_by(|a, b| a.partial_cmp(b).expect("crossings are finite"));
        Some((
            percentile(&crossings, 0.025),
            percentile(&crossings, 0.975),
        ))
    } else {
        None
    };
    Ok(EmpiricalTransition {
        estimate,
        interval,
        prevailing: None,
    })
}

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

/// Absolute raw MSPE per learner and arm at selected heterogeneity levels
/// (fresh test outcomes, irreducible error included), one [`PointResult`]
/// per requested level in the given order.
pub fn compare_at(config: &SweepConfig, sigma_bar2_values: &[f64]) -> Result<Vec<PointResult>> {
    if sigma_bar2_values.is_empty() {
        return Err(Error::InvalidConfig {
            context: "compare_at needs at least one heterogeneity level".to_string(),
        });
    }
    for &v in sigma_bar2_values {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidVariance { value: v });
        }
    }
    let raw_config = config.clone().with_raw_mspe(true);
    let master = config.generator.seed();
    sigma_bar2_values
        .iter()
        .enumerate()
        .map(|(idx, &sigma_bar2)| {
            let spec = PointSpec {
                sigma_bar2,
                seed: stream_seed(master, COMPARE_LANE, idx as u64),
                inserted: false,
            };
            evaluate_point(&raw_config, &spec)
        })
        .collect()
}
