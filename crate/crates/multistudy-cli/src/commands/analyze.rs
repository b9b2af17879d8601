//! `analyze`: the end-to-end merge-vs-ensemble decision on a real dataset.
//!
//! Pipeline: estimate variance components from the training studies, plug
//! them into the transition bounds, compare the estimated heterogeneity
//! against those bounds for a recommendation, then fit both arms and report
//! test-set RMSPE with bootstrap intervals.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use multistudy::estimators::{
    ensemble_combine, fit_ols, fit_ols_merged, fit_ridge, fit_ridge_merged,
};
use multistudy::seed::stream_seed;
use multistudy::transition::{tau_ls_interval, tau_ridge_interval};
use multistudy::varcomp::bootstrap_rmspe;
use multistudy::weights::{optimal_weights_ls, optimal_weights_ridge};
use multistudy::{
    recommend, stack_studies, EnsembleWeights, Learner, LearnerFit, Recommendation, RidgeConfig,
    StudyData, TransitionResult,
};

use crate::commands::{
    plug_in, stacked_test_design, Format, LearnerChoice, PlugIn, ScalingChoice, WeightsChoice,
};
use crate::error::{CliError, CliResult};
use crate::manifest::{load_data, LoadedData};
use crate::output::{emit, print_json, recommendation_label, tau_block, write_json};

/// Seed lane for the per-arm bootstrap streams.
const ANALYZE_LANE: u64 = 0xA7A1;

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = LearnerChoice::Ls)]
    pub learner: LearnerChoice,
    /// Ensemble weighting for both the transition bounds and the fits.
    #[arg(long, value_enum, default_value_t = WeightsChoice::Equal)]
    pub weights: WeightsChoice,
    /// Ridge penalty (ridge paths only).
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Ridge penalty scaling (ridge paths only).
    #[arg(long, value_enum, default_value_t = ScalingChoice::InverseSd)]
    pub scaling: ScalingChoice,
    /// Predictor names carrying random effects (default: all predictors).
    #[arg(long, value_delimiter = ',')]
    pub re_columns: Option<Vec<String>>,
    /// Bootstrap resamples for the RMSPE intervals.
    #[arg(long, default_value_t = 200)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also write `analysis.json` into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct CoefficientEstimate {
    pub column: String,
    pub sigma_hat2: f64,
}

#[derive(Serialize)]
pub struct ArmRmspe {
    pub arm: String,
    pub rmspe: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

#[derive(Serialize)]
pub struct LearnerAnalysis {
    pub learner: String,
    pub transition: TransitionResult,
    pub sqrt_point: Option<f64>,
    pub sqrt_lower: Option<f64>,
    pub sqrt_upper: Option<f64>,
    pub recommendation: Recommendation,
    pub weights: Vec<f64>,
    pub weights_have_negative: bool,
    pub arms: Vec<ArmRmspe>,
}

#[derive(Serialize)]
pub struct AnalysisReport {
    pub k_train: usize,
    pub k_test: usize,
    pub p: usize,
    pub re_columns: Vec<String>,
    pub sigma_bar2_hat: f64,
    pub sigma_eps2_hat: f64,
    pub per_coefficient: Vec<CoefficientEstimate>,
    pub few_studies_warning: bool,
    pub uniform_fallback: bool,
    pub weighting: String,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    pub learners: Vec<LearnerAnalysis>,
    /// Decision from the first requested learner.
    pub recommendation: Recommendation,
}

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let data = load_data(&args.manifest)?;
    let report = build_report(&data, args)?;

    match args.format {
        Format::Text => emit(&render_text(&report)),
        Format::Json => print_json(&report)?,
    }
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        write_json(&dir.join("analysis.json"), &report)?;
    }

    if report.learners.iter().all(|l| !l.transition.is_valid()) {
        return Err(CliError::NoValidTransition(
            "every requested transition bound is degenerate for this dataset".to_string(),
        ));
    }
    Ok(())
}

pub fn build_report(data: &LoadedData, args: &AnalyzeArgs) -> CliResult<AnalysisReport> {
    let LoadedData {
        manifest,
        train,
        test,
    } = data;
    let re_indices = manifest.re_indices(args.re_columns.as_deref())?;
    let plug = plug_in(train, &re_indices)?;
    let x0 = stacked_test_design(test)?;
    let x0_study = stack_studies(test)?.data().clone();

    let mut learners = Vec::new();
    for (idx, learner) in args.learner.learners().into_iter().enumerate() {
        learners.push(analyze_learner(
            learner,
            train,
            &x0,
            &x0_study,
            &plug,
            args,
            manifest.intercept,
            idx,
        )?);
    }

    let per_coefficient = re_indices
        .iter()
        .map(|&c| CoefficientEstimate {
            column: manifest.column_name(c),
            sigma_hat2: plug.varcomp.sigma_hat2[c],
        })
        .collect();
    Ok(AnalysisReport {
        k_train: train.len(),
        k_test: test.len(),
        p: manifest.p(),
        re_columns: re_indices.iter().map(|&c| manifest.column_name(c)).collect(),
        sigma_bar2_hat: plug.varcomp.sigma_bar2_hat,
        sigma_eps2_hat: plug.varcomp.sigma_eps_hat2,
        per_coefficient,
        few_studies_warning: plug.varcomp.few_studies_warning,
        uniform_fallback: plug.uniform_fallback,
        weighting: match args.weights {
            WeightsChoice::Equal => "equal".to_string(),
            WeightsChoice::Optimal => "optimal".to_string(),
        },
        bootstrap_resamples: args.bootstrap,
        seed: args.seed,
        recommendation: learners[0].recommendation,
        learners,
    })
}

#[allow(clippy::too_many_arguments)]
fn analyze_learner(
    learner: Learner,
    train: &[StudyData],
    x0: &nalgebra::DMatrix<f64>,
    x0_study: &StudyData,
    plug: &PlugIn,
    args: &AnalyzeArgs,
    intercept: bool,
    learner_idx: usize,
) -> CliResult<LearnerAnalysis> {
    let k = train.len();
    let sigma_eps2 = plug.varcomp.sigma_eps_hat2;
    let ridge_cfg = RidgeConfig::uniform(args.lambda, k, args.scaling.mode(), intercept)?;
    // The merged coefficient fit doubles as the plug-in for beta.
    let (merged_fit, beta_hat) = match learner {
        Learner::LeastSquares => {
            let fit = fit_ols_merged(train)?;
            let beta = fit.coefficients.clone();
            (fit, beta)
        }
        Learner::Ridge => {
            let fit = fit_ridge_merged(train, &ridge_cfg)?;
            let beta = fit.coefficients.clone();
            (fit, beta)
        }
    };

    let (weights, weights_have_negative) = match args.weights {
        WeightsChoice::Equal => (EnsembleWeights::equal(k)?, false),
        WeightsChoice::Optimal => match learner {
            Learner::LeastSquares => {
                let w = optimal_weights_ls(train, &plug.re_estimated, sigma_eps2, x0)?;
                (w.weights, w.has_negative)
            }
            Learner::Ridge => {
                let w = optimal_weights_ridge(
                    train,
                    &plug.re_estimated,
                    sigma_eps2,
                    &beta_hat,
                    &ridge_cfg,
                    x0,
                )?;
                (w.weights, w.has_negative)
            }
        },
    };

    let transition = match learner {
        Learner::LeastSquares => {
            tau_ls_interval(train, &plug.re_direction, sigma_eps2, &weights, x0)?
        }
        Learner::Ridge => tau_ridge_interval(
            train,
            &plug.re_direction,
            sigma_eps2,
            &beta_hat,
            &ridge_cfg,
            &weights,
            x0,
        )?,
    };
    let recommendation = recommend(plug.varcomp.sigma_bar2_hat, &transition);

    let mut arms = Vec::new();
    for (arm_idx, arm) in ["merged", "ensemble"].iter().enumerate() {
        let arm_seed = stream_seed(args.seed, ANALYZE_LANE, (learner_idx * 2 + arm_idx) as u64);
        let weights = &weights;
        let ridge_cfg = &ridge_cfg;
        let merged_fit = &merged_fit;
        let fit: Box<dyn FnOnce(&[StudyData]) -> multistudy::Result<LearnerFit>> =
            match (*arm, learner) {
                ("merged", _) => Box::new(move |_s| Ok(merged_fit.clone())),
                (_, Learner::LeastSquares) => Box::new(move |s: &[StudyData]| {
                    let fits: Vec<LearnerFit> =
                        s.iter().map(fit_ols).collect::<multistudy::Result<_>>()?;
                    ensemble_combine(&fits, weights)
                }),
                (_, Learner::Ridge) => Box::new(move |s: &[StudyData]| {
                    let fits: Vec<LearnerFit> = s
                        .iter()
                        .enumerate()
                        .map(|(i, study)| {
                            fit_ridge(
                                study,
                                ridge_cfg.lambda_per_study[i],
                                ridge_cfg.scaling,
                                ridge_cfg.intercept,
                            )
                        })
                        .collect::<multistudy::Result<_>>()?;
                    ensemble_combine(&fits, weights)
                }),
            };
        let (rmspe, ci_lower, ci_upper) =
            bootstrap_rmspe(fit, train, x0_study, args.bootstrap, arm_seed)?;
        arms.push(ArmRmspe {
            arm: arm.to_string(),
            rmspe,
            ci_lower,
            ci_upper,
        });
    }

    let (lower, upper) = (transition.lower, transition.upper);
    Ok(LearnerAnalysis {
        learner: learner.label().to_string(),
        sqrt_point: transition.point.map(f64::sqrt),
        sqrt_lower: lower.map(f64::sqrt),
        sqrt_upper: upper.map(f64::sqrt),
        transition,
        recommendation,
        weights: weights.as_slice().to_vec(),
        weights_have_negative,
        arms,
    })
}

fn render_text(report: &AnalysisReport) -> Vec<String> {
    let mut lines = Vec::new();
    lines.push(format!(
        "dataset: {} training studies, {} test studies, {} design columns",
        report.k_train, report.k_test, report.p
    ));
    lines.push(format!(
        "random-effect columns: {}",
        report.re_columns.join(", ")
    ));
    lines.push(String::new());
    lines.push("heterogeneity (method of moments):".to_string());
    lines.push(format!(
        "  sigma_bar2_hat = {}  (sqrt = {})",
        report.sigma_bar2_hat,
        report.sigma_bar2_hat.sqrt()
    ));
    lines.push(format!("  sigma_eps2_hat = {}", report.sigma_eps2_hat));
    for c in &report.per_coefficient {
        lines.push(format!("  sigma_hat2[{}] = {}", c.column, c.sigma_hat2));
    }
    if report.few_studies_warning {
        lines.push(
            "  note: fewer than 5 training studies — variance components are imprecise"
                .to_string(),
        );
    }
    if report.uniform_fallback {
        lines.push(
            "  note: no heterogeneity detected; bounds use the uniform variance allocation"
                .to_string(),
        );
    }
    for l in &report.learners {
        lines.push(String::new());
        lines.extend(tau_block(&l.learner, &l.transition));
        lines.push(format!(
            "  recommendation ({}): {}",
            l.learner,
            recommendation_label(l.recommendation)
        ));
        let weights = l
            .weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        lines.push(format!(
            "  ensemble weights ({}): {weights}{}",
            report.weighting,
            if l.weights_have_negative {
                "  [contains negative weights]"
            } else {
                ""
            }
        ));
        for arm in &l.arms {
            lines.push(format!(
                "  test rmspe ({}): {} [{}, {}]",
                arm.arm, arm.rmspe, arm.ci_lower, arm.ci_upper
            ));
        }
    }
    lines.push(String::new());
    lines.push(format!(
        "recommendation: {}",
        recommendation_label(report.recommendation)
    ));
    lines
}
