//! `transition`: compute and print transition points/intervals for a
//! dataset manifest (plug-in estimates) or a generator config (oracle
//! quantities).

use std::path::PathBuf;

use clap::Args;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use multistudy::estimators::fit_ridge_merged;
use multistudy::transition::{tau_ls_interval, tau_ridge_interval};
use multistudy::weights::{optimal_weights_ls, optimal_weights_ridge};
use multistudy::{
    EnsembleWeights, Learner, RandomEffectsStructure, RidgeConfig, StudyData, TransitionResult,
};

use crate::commands::{
    design_studies, plug_in, stacked_design, stacked_test_design, Format, LearnerChoice,
    ScalingChoice, WeightsChoice,
};
use crate::config::{load_toml, GenSpec};
use crate::error::{CliError, CliResult};
use crate::manifest::load_data;
use crate::output::{emit, print_json, tau_block};

#[derive(Args, Debug)]
pub struct TransitionArgs {
    /// Dataset manifest (TOML); bounds use plug-in estimates.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    /// Generator config (TOML); bounds use the configured truth.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LearnerChoice::Ls)]
    pub learner: LearnerChoice,
    #[arg(long, value_enum, default_value_t = WeightsChoice::Equal)]
    pub weights: WeightsChoice,
    /// Ridge penalty when no `[ridge]` block supplies one.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Ridge penalty scaling when no `[ridge]` block supplies one.
    #[arg(long, value_enum, default_value_t = ScalingChoice::InverseSd)]
    pub scaling: ScalingChoice,
    /// Predictor names carrying random effects (manifest mode).
    #[arg(long, value_delimiter = ',')]
    pub re_columns: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

/// Everything the bound formulas need, assembled from either source.
struct Problem {
    studies: Vec<StudyData>,
    x0: DMatrix<f64>,
    sigma_eps2: f64,
    re_direction: RandomEffectsStructure,
    re_magnitudes: RandomEffectsStructure,
    intercept: bool,
    ridge_from_config: Option<RidgeConfig>,
    /// Plug-in beta for ridge paths; `None` means fit it on demand.
    beta: Option<DVector<f64>>,
}

#[derive(Serialize)]
struct TransitionReport {
    learner: String,
    weighting: String,
    transition: TransitionResult,
    sqrt_point: Option<f64>,
    sqrt_lower: Option<f64>,
    sqrt_upper: Option<f64>,
}

pub fn run(args: &TransitionArgs) -> CliResult<()> {
    let problem = match (&args.manifest, &args.config) {
        (Some(path), None) => from_manifest(path, args)?,
        (None, Some(path)) => from_config(path)?,
        _ => unreachable!("clap enforces exactly one source"),
    };

    let weighting = match args.weights {
        WeightsChoice::Equal => "equal",
        WeightsChoice::Optimal => "optimal",
    };
    let mut reports = Vec::new();
    for learner in args.learner.learners() {
        let result = solve(&problem, learner, args)?;
        reports.push(TransitionReport {
            learner: learner.label().to_string(),
            weighting: weighting.to_string(),
            sqrt_point: result.point.map(f64::sqrt),
            sqrt_lower: result.lower.map(f64::sqrt),
            sqrt_upper: result.upper.map(f64::sqrt),
            transition: result,
        });
    }

    match args.format {
        Format::Json => print_json(&reports)?,
        Format::Text => {
            let mut lines = Vec::new();
            for r in &reports {
                lines.extend(tau_block(&r.learner, &r.transition));
            }
            emit(&lines);
        }
    }

    if reports.iter().all(|r| !r.transition.is_valid()) {
        return Err(CliError::NoValidTransition(
            "every requested bound is degenerate for these studies".to_string(),
        ));
    }
    Ok(())
}

fn solve(problem: &Problem, learner: Learner, args: &TransitionArgs) -> CliResult<TransitionResult> {
    let k = problem.studies.len();
    let ridge_cfg = match &problem.ridge_from_config {
        Some(cfg) => cfg.clone(),
        None => RidgeConfig::uniform(args.lambda, k, args.scaling.mode(), problem.intercept)?,
    };
    let beta = match (&problem.beta, learner) {
        (_, Learner::LeastSquares) => None,
        (Some(b), Learner::Ridge) => Some(b.clone()),
        (None, Learner::Ridge) => Some(fit_ridge_merged(&problem.studies, &ridge_cfg)?.coefficients),
    };

    let weights = match args.weights {
        WeightsChoice::Equal => EnsembleWeights::equal(k)?,
        WeightsChoice::Optimal => match learner {
            Learner::LeastSquares => {
                optimal_weights_ls(
                    &problem.studies,
                    &problem.re_magnitudes,
                    problem.sigma_eps2,
                    &problem.x0,
                )?
                .weights
            }
            Learner::Ridge => {
                optimal_weights_ridge(
                    &problem.studies,
                    &problem.re_magnitudes,
                    problem.sigma_eps2,
                    beta.as_ref().expect("ridge beta assembled above"),
                    &ridge_cfg,
                    &problem.x0,
                )?
                .weights
            }
        },
    };

    let result = match learner {
        Learner::LeastSquares => tau_ls_interval(
            &problem.studies,
            &problem.re_direction,
            problem.sigma_eps2,
            &weights,
            &problem.x0,
        )?,
        Learner::Ridge => tau_ridge_interval(
            &problem.studies,
            &problem.re_direction,
            problem.sigma_eps2,
            beta.as_ref().expect("ridge beta assembled above"),
            &ridge_cfg,
            &weights,
            &problem.x0,
        )?,
    };
    Ok(result)
}

fn from_manifest(path: &PathBuf, args: &TransitionArgs) -> CliResult<Problem> {
    let data = load_data(path)?;
    let re_indices = data.manifest.re_indices(args.re_columns.as_deref())?;
    let plug = plug_in(&data.train, &re_indices)?;
    let x0 = stacked_test_design(&data.test)?;
    Ok(Problem {
        studies: data.train,
        x0,
        sigma_eps2: plug.varcomp.sigma_eps_hat2,
        re_direction: plug.re_direction,
        re_magnitudes: plug.re_estimated,
        intercept: data.manifest.intercept,
        ridge_from_config: None,
        // Ridge paths fit their own merged coefficients on demand.
        beta: None,
    })
}

fn from_config(path: &PathBuf) -> CliResult<Problem> {
    let spec: GenSpec = load_toml(path)?;
    let gen = spec.generator.materialize()?;
    let studies = design_studies(&gen)?;
    let ridge_from_config = spec
        .ridge
        .as_ref()
        .map(|r| r.to_config(studies.len(), spec.generator.intercept))
        .transpose()?;
    // A zero-heterogeneity config still defines bounds along the uniform
    // allocation direction.
    let re_direction = if gen.re().trace_g() == 0.0 {
        RandomEffectsStructure::uniform(gen.re().columns().to_vec(), 1.0)?
    } else {
        gen.re().clone()
    };
    Ok(Problem {
        x0: stacked_design(gen.test_designs()),
        sigma_eps2: gen.sigma_eps2(),
        re_direction,
        re_magnitudes: gen.re().clone(),
        intercept: spec.generator.intercept,
        ridge_from_config,
        beta: Some(gen.beta().clone()),
        studies,
    })
}
