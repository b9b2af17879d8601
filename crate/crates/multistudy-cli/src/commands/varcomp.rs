//! `varcomp`: report the moment-based variance-component estimates for a
//! dataset's training studies.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use multistudy::estimate_varcomp;

use crate::commands::Format;
use crate::error::CliResult;
use crate::manifest::load_data;
use crate::output::{emit, print_json};

#[derive(Args, Debug)]
pub struct VarcompArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Predictor names carrying random effects (default: all predictors).
    #[arg(long, value_delimiter = ',')]
    pub re_columns: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Serialize)]
struct VarcompReport {
    k_train: usize,
    sigma_bar2_hat: f64,
    sigma_eps2_hat: f64,
    few_studies_warning: bool,
    per_coefficient: Vec<CoefficientRow>,
}

#[derive(Serialize)]
struct CoefficientRow {
    column: String,
    sigma_hat2: f64,
    q_statistic: f64,
}

pub fn run(args: &VarcompArgs) -> CliResult<()> {
    let data = load_data(&args.manifest)?;
    let re_indices = data.manifest.re_indices(args.re_columns.as_deref())?;
    let est = estimate_varcomp(&data.train, &re_indices)?;

    let report = VarcompReport {
        k_train: data.train.len(),
        sigma_bar2_hat: est.sigma_bar2_hat,
        sigma_eps2_hat: est.sigma_eps_hat2,
        few_studies_warning: est.few_studies_warning,
        per_coefficient: est
            .per_coefficient
            .iter()
            .map(|pc| CoefficientRow {
                column: data.manifest.column_name(pc.column),
                sigma_hat2: pc.sigma_hat2,
                q_statistic: pc.q_statistic,
            })
            .collect(),
    };

    match args.format {
        Format::Json => print_json(&report)?,
        Format::Text => {
            let mut lines = vec![
                format!("training studies: {}", report.k_train),
                format!(
                    "sigma_bar2_hat = {}  (sqrt = {})",
                    report.sigma_bar2_hat,
                    report.sigma_bar2_hat.sqrt()
                ),
                format!("sigma_eps2_hat = {}", report.sigma_eps2_hat),
            ];
            for row in &report.per_coefficient {
                lines.push(format!(
                    "sigma_hat2[{}] = {}  (Q = {})",
                    row.column, row.sigma_hat2, row.q_statistic
                ));
            }
            if report.few_studies_warning {
                lines.push(
                    "note: fewer than 5 training studies — estimates are imprecise".to_string(),
                );
            }
            emit(&lines);
        }
    }
    Ok(())
}
