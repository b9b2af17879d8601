//! TOML configurations for the synthetic commands (`simulate`, `gen`, and
//! config-driven `transition`/`weights`).
//!
//! A `[generator]` block fully determines the data-generating process:
//! designs are standard normal (plus an optional ones column), drawn once
//! from the master seed, so two loads of the same file materialize
//! bit-identical generators.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use multistudy::seed::stream_rng;
use multistudy::simulation::{SweepConfig, WeightScheme};
use multistudy::{GeneratorConfig, Learner, RandomEffectsStructure, RidgeConfig, ScalingMode};

use crate::error::{io_err, CliError, CliResult};

/// Seed lane reserved for materializing design matrices.
const DESIGN_LANE: u64 = 0xDE51;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReSpec {
    /// Design-column indices carrying random effects.
    pub columns: Vec<usize>,
    /// Per-column variances; exactly one of `variances` / `sigma_bar2`.
    pub variances: Option<Vec<f64>>,
    /// Average heterogeneity tr(G)/p, spread uniformly over `columns`.
    pub sigma_bar2: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub beta: Vec<f64>,
    pub sigma_eps2: f64,
    /// Rows per training study; the length is the study count K.
    pub n_train: Vec<usize>,
    /// Rows per test study (at least one).
    pub n_test: Vec<usize>,
    /// Make design column 0 a ones column (its `beta` slot is the
    /// intercept).
    #[serde(default)]
    pub intercept: bool,
    pub random_effects: ReSpec,
}

impl GeneratorSpec {
    pub fn random_effects(&self) -> CliResult<RandomEffectsStructure> {
        let p = self.beta.len();
        let spec = &self.random_effects;
        if let Some(&col) = spec.columns.iter().find(|&&c| c >= p) {
            return Err(CliError::Input(format!(
                "random_effects: column {col} out of range for {p} coefficients"
            )));
        }
        let re = match (&spec.variances, spec.sigma_bar2) {
            (Some(v), None) => RandomEffectsStructure::new(spec.columns.clone(), v.clone())?,
            (None, Some(s)) => {
                RandomEffectsStructure::uniform(spec.columns.clone(), 1.0)?.scaled_to(s, p)?
            }
            _ => {
                return Err(CliError::Input(
                    "random_effects: set exactly one of `variances` / `sigma_bar2`".to_string(),
                ))
            }
        };
        Ok(re)
    }

    /// Draw the designs and assemble the generator.
    pub fn materialize(&self) -> CliResult<GeneratorConfig> {
        if self.beta.is_empty() {
            return Err(CliError::Input("generator: empty beta".to_string()));
        }
        if self.intercept && self.beta.len() < 2 {
            return Err(CliError::Input(
                "generator: an intercept-only model has no predictors to draw".to_string(),
            ));
        }
        if self.n_train.is_empty() || self.n_test.is_empty() {
            return Err(CliError::Input(
                "generator: n_train and n_test must each list at least one study".to_string(),
            ));
        }
        let re = self.random_effects()?;
        let p = self.beta.len();
        let design = |index: u64, n: usize| -> DMatrix<f64> {
            let mut rng = stream_rng(self.seed, DESIGN_LANE, index);
            DMatrix::from_fn(n, p, |_, c| {
                if self.intercept && c == 0 {
                    1.0
                } else {
                    rng.sample::<f64, _>(StandardNormal)
                }
            })
        };
        let k = self.n_train.len();
        let trains: Vec<DMatrix<f64>> = self
            .n_train
            .iter()
            .enumerate()
            .map(|(i, &n)| design(i as u64, n))
            .collect();
        let tests: Vec<DMatrix<f64>> = self
            .n_test
            .iter()
            .enumerate()
            .map(|(j, &n)| design((k + j) as u64, n))
            .collect();
        Ok(GeneratorConfig::new(
            DVector::from_vec(self.beta.clone()),
            re,
            self.sigma_eps2,
            trains,
            tests,
            self.seed,
        )?)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RidgeSpec {
    /// Uniform penalty for every system; or set the two explicit fields.
    pub lambda: Option<f64>,
    pub lambda_merged: Option<f64>,
    pub lambda_per_study: Option<Vec<f64>>,
    #[serde(default = "identity_scaling")]
    pub scaling: ScalingMode,
    /// Leave the intercept column unpenalized (only meaningful with an
    /// intercept in the design).
    #[serde(default = "default_true")]
    pub intercept_exempt: bool,
}

fn identity_scaling() -> ScalingMode {
    ScalingMode::Identity
}

fn default_true() -> bool {
    true
}

impl RidgeSpec {
    pub fn to_config(&self, k: usize, intercept: bool) -> CliResult<RidgeConfig> {
        let exempt = intercept && self.intercept_exempt;
        let config = match (self.lambda, &self.lambda_merged, &self.lambda_per_study) {
            (Some(l), None, None) => RidgeConfig::uniform(l, k, self.scaling, exempt)?,
            (None, Some(&lm), Some(lp)) => {
                let config = RidgeConfig {
                    lambda_merged: lm,
                    lambda_per_study: lp.clone(),
                    scaling: self.scaling,
                    intercept: exempt,
                };
                config.validate(k)?;
                config
            }
            _ => {
                return Err(CliError::Input(
                    "ridge: set `lambda` alone, or both `lambda_merged` and `lambda_per_study`"
                        .to_string(),
                ))
            }
        };
        Ok(config)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub sigma_bar2_grid: Vec<f64>,
    pub replicates: usize,
    pub learners: Vec<Learner>,
    #[serde(default = "equal_weights")]
    pub weights: WeightScheme,
    #[serde(default)]
    pub raw_mspe: bool,
}

fn equal_weights() -> WeightScheme {
    WeightScheme::Equal
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub generator: GeneratorSpec,
    pub sweep: SweepSpec,
    pub ridge: Option<RidgeSpec>,
}

impl SimulateSpec {
    pub fn to_sweep_config(
        &self,
        replicates: Option<usize>,
        seed: Option<u64>,
    ) -> CliResult<SweepConfig> {
        let mut gen_spec = self.generator.clone();
        if let Some(seed) = seed {
            gen_spec.seed = seed;
        }
        let generator = gen_spec.materialize()?;
        let ridge = self
            .ridge
            .as_ref()
            .map(|r| r.to_config(self.generator.n_train.len(), self.generator.intercept))
            .transpose()?;
        let config = SweepConfig::new(
            generator,
            self.sweep.sigma_bar2_grid.clone(),
            replicates.unwrap_or(self.sweep.replicates),
            self.sweep.learners.clone(),
            self.sweep.weights,
            ridge,
        )?;
        Ok(config.with_raw_mspe(self.sweep.raw_mspe))
    }
}

/// Config for `gen` and the config-driven analysis commands: a generator,
/// optionally with a ridge block for ridge-path reporting.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub generator: GeneratorSpec,
    pub ridge: Option<RidgeSpec>,
}

pub fn load_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub const GENERATOR_SCHEMA: &str = "\
[generator]                   # synthetic data-generating process
seed = 42                     # master seed (u64); designs and draws derive from it
beta = [1.0, -0.5]            # fixed effects; length p = design width
sigma_eps2 = 1.0              # residual noise variance (>= 0)
n_train = [40, 40, 40]        # rows per training study; length = K
n_test = [40]                 # rows per test study (>= 1 entry)
intercept = false             # make design column 0 a ones column

[generator.random_effects]    # between-study coefficient heterogeneity
columns = [1]                 # design-column indices with random effects
variances = [0.5]             # per-column variances ...
# sigma_bar2 = 0.25           # ... or one tr(G)/p level spread uniformly
                              # (exactly one of variances / sigma_bar2)
";

pub const RIDGE_SCHEMA: &str = "\
[ridge]                       # required when a ridge learner is requested
lambda = 0.5                  # uniform penalty ...
# lambda_merged = 0.5         # ... or an explicit merged penalty
# lambda_per_study = [0.5]    # ... with per-study penalties (K entries)
scaling = \"identity\"          # identity | inverse_sd
intercept_exempt = true       # leave the intercept unpenalized
";

pub const SWEEP_SCHEMA: &str = "\
[sweep]
sigma_bar2_grid = [0.0, 0.1]  # ascending, starting at 0; the theoretical
                              # transition point is inserted automatically
replicates = 500              # Monte Carlo replicates per point (>= 100)
learners = [\"least_squares\"]  # any of: least_squares, ridge
weights = \"equal\"             # equal | optimal_oracle | optimal_estimated
raw_mspe = false              # true: per-row MSPE against fresh test draws
";
