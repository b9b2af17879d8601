//! `weights`: print the risk-optimal ensemble weights, either from a
//! dataset manifest (plug-in estimates) or from a generator config (oracle
//! quantities).

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use multistudy::estimators::fit_ridge_merged;
use multistudy::weights::{optimal_weights_ls, optimal_weights_ridge};
use multistudy::{Learner, OptimalWeights, RidgeConfig};

use crate::commands::{
    design_studies, plug_in, stacked_design, stacked_test_design, Format, ScalingChoice,
};
use crate::config::{load_toml, GenSpec};
use crate::error::{CliError, CliResult};
use crate::manifest::load_data;
use crate::output::{emit, print_json};

#[derive(Args, Debug)]
pub struct WeightsArgs {
    /// Dataset manifest (TOML); weights use plug-in estimates.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    /// Generator config (TOML); weights use the configured truth.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `ls` or `ridge` (the `both` choice is not meaningful here).
    #[arg(long, default_value = "ls")]
    pub learner: String,
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

#[derive(Serialize)]
struct WeightsReport {
    learner: String,
    study_ids: Vec<String>,
    weights: Vec<f64>,
    objective: f64,
    kkt_residual: f64,
    has_negative: bool,
}

fn parse_learner(raw: &str) -> CliResult<Learner> {
    match raw {
        "ls" => Ok(Learner::LeastSquares),
        "ridge" => Ok(Learner::Ridge),
        other => Err(CliError::Input(format!(
            "--learner must be 'ls' or 'ridge', got '{other}'"
        ))),
    }
}

pub fn run(args: &WeightsArgs) -> CliResult<()> {
    let learner = parse_learner(&args.learner)?;
    let (ids, optimal) = match (&args.manifest, &args.config) {
        (Some(path), None) => from_manifest(path, learner, args)?,
        (None, Some(path)) => from_config(path, learner, args)?,
        _ => unreachable!("clap enforces exactly one source"),
    };

    let report = WeightsReport {
        learner: learner.label().to_string(),
        study_ids: ids,
        weights: optimal.weights.as_slice().to_vec(),
        objective: optimal.objective,
        kkt_residual: optimal.kkt_residual,
        has_negative: optimal.has_negative,
    };
    match args.format {
        Format::Json => print_json(&report)?,
        Format::Text => {
            let mut lines = vec![format!("optimal ensemble weights ({})", report.learner)];
            for (id, w) in report.study_ids.iter().zip(&report.weights) {
                lines.push(format!("  {id}: {w}"));
            }
            lines.push(format!("objective (excess MSPE) = {}", report.objective));
            lines.push(format!("kkt residual = {}", report.kkt_residual));
            if report.has_negative {
                lines.push("note: some weights are negative".to_string());
            }
            emit(&lines);
        }
    }
    Ok(())
}

fn from_manifest(
    path: &PathBuf,
    learner: Learner,
    args: &WeightsArgs,
) -> CliResult<(Vec<String>, OptimalWeights)> {
    let data = load_data(path)?;
    let re_indices = data.manifest.re_indices(args.re_columns.as_deref())?;
    let plug = plug_in(&data.train, &re_indices)?;
    let x0 = stacked_test_design(&data.test)?;
    let sigma_eps2 = plug.varcomp.sigma_eps_hat2;
    let optimal = match learner {
        Learner::LeastSquares => {
            optimal_weights_ls(&data.train, &plug.re_estimated, sigma_eps2, &x0)?
        }
        Learner::Ridge => {
            let cfg = RidgeConfig::uniform(
                args.lambda,
                data.train.len(),
                args.scaling.mode(),
                data.manifest.intercept,
            )?;
            let beta_hat = fit_ridge_merged(&data.train, &cfg)?.coefficients;
            optimal_weights_ridge(
                &data.train,
                &plug.re_estimated,
                sigma_eps2,
                &beta_hat,
                &cfg,
                &x0,
            )?
        }
    };
    let ids = data.train.iter().map(|s| s.id().to_string()).collect();
    Ok((ids, optimal))
}

fn from_config(
    path: &PathBuf,
    learner: Learner,
    args: &WeightsArgs,
) -> CliResult<(Vec<String>, OptimalWeights)> {
    let spec: GenSpec = load_toml(path)?;
    let gen = spec.generator.materialize()?;
    let studies = design_studies(&gen)?;
    let x0 = stacked_design(gen.test_designs());
    let optimal = match learner {
        Learner::LeastSquares => optimal_weights_ls(&studies, gen.re(), gen.sigma_eps2(), &x0)?,
        Learner::Ridge => {
            let cfg = match &spec.ridge {
                Some(r) => r.to_config(studies.len(), spec.generator.intercept)?,
                None => RidgeConfig::uniform(
                    args.lambda,
                    studies.len(),
                    args.scaling.mode(),
                    spec.generator.intercept,
                )?,
            };
            optimal_weights_ridge(
                &studies,
                gen.re(),
                gen.sigma_eps2(),
                gen.beta(),
                &cfg,
                &x0,
            )?
        }
    };
    let ids = studies.iter().map(|s| s.id().to_string()).collect();
    Ok((ids, optimal))
}
