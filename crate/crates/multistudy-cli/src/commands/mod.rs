//! Subcommand implementations and the plumbing they share.

pub mod analyze;
pub mod gen;
pub mod simulate;
pub mod transition;
pub mod varcomp;
pub mod weights;

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};

use multistudy::{
    estimate_varcomp, stack_studies, GeneratorConfig, Learner, RandomEffectsStructure,
    ScalingMode, StudyData, VarCompEstimate,
};

use crate::error::{CliError, CliResult};

/// Environment variable selecting the worker-thread count for sweeps.
pub const THREADS_ENV: &str = "MULTISTUDY_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LearnerChoice {
    Ls,
    Ridge,
    Both,
}

impl LearnerChoice {
    pub fn learners(self) -> Vec<Learner> {
        match self {
            LearnerChoice::Ls => vec![Learner::LeastSquares],
            LearnerChoice::Ridge => vec![Learner::Ridge],
            LearnerChoice::Both => vec![Learner::LeastSquares, Learner::Ridge],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WeightsChoice {
    /// `1/K` for every study.
    Equal,
    /// Risk-optimal weights with plug-in (or configured) parameters.
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScalingChoice {
    Identity,
    InverseSd,
}

impl ScalingChoice {
    pub fn mode(self) -> ScalingMode {
        match self {
            ScalingChoice::Identity => ScalingMode::Identity,
            ScalingChoice::InverseSd => ScalingMode::InverseSd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

/// Worker threads for point-parallel sweeps: `MULTISTUDY_THREADS`, default 1.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(1),
        Err(e) => Err(CliError::Input(format!("{THREADS_ENV}: {e}"))),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Input(format!(
                "{THREADS_ENV} must be a positive integer, got '{raw}'"
            ))),
        },
    }
}

/// Row-stacked test design used as the prediction target `X_0`.
pub fn stacked_test_design(test: &[StudyData]) -> CliResult<DMatrix<f64>> {
    if test.is_empty() {
        return Err(CliError::Input(
            "at least one test study is required".to_string(),
        ));
    }
    Ok(stack_studies(test)?.data().x().clone())
}

/// Moment estimates from the training studies, packaged for plug-in use.
pub struct PlugIn {
    pub varcomp: VarCompEstimate,
    /// Estimated heterogeneity structure at its estimated magnitudes
    /// (possibly all zero), for optimal-weight plug-in.
    pub re_estimated: RandomEffectsStructure,
    /// Variance-allocation direction for transition bounds: the estimated
    /// proportions, or uniform when nothing was detected.
    pub re_direction: RandomEffectsStructure,
    /// True when `re_direction` fell back to the uniform allocation.
    pub uniform_fallback: bool,
}

/// Design-only study stand-ins (zero outcomes) for the analytic routines,
/// which read nothing but the designs.
pub fn design_studies(gen: &GeneratorConfig) -> CliResult<Vec<StudyData>> {
    gen.train_designs()
        .iter()
        .enumerate()
        .map(|(k, x)| {
            Ok(StudyData::new(
                format!("train-{}", k + 1),
                x.clone(),
                DVector::zeros(x.nrows()),
            )?)
        })
        .collect()
}

/// Row-stack a design list into one matrix.
pub fn stacked_design(designs: &[DMatrix<f64>]) -> DMatrix<f64> {
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

pub fn plug_in(train: &[StudyData], re_indices: &[usize]) -> CliResult<PlugIn> {
    let varcomp = estimate_varcomp(train, re_indices)?;
    let variances: Vec<f64> = re_indices.iter().map(|&c| varcomp.sigma_hat2[c]).collect();
    let re_estimated = RandomEffectsStructure::new(re_indices.to_vec(), variances.clone())?;
    let uniform_fallback = variances.iter().all(|&v| v == 0.0);
    let re_direction = if uniform_fallback {
        RandomEffectsStructure::uniform(re_indices.to_vec(), 1.0)?
    } else {
        re_estimated.clone()
    };
    Ok(PlugIn {
        varcomp,
        re_estimated,
        re_direction,
        uniform_fallback,
    })
}
