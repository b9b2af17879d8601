//! `gen`: materialize a generator config into per-study CSV files, a
//! manifest pointing at them, and a `truth.json` recording the generating
//! parameters and theoretical transition results.
//!
//! Values are written with shortest round-trip float formatting, so reading
//! the CSVs back through the manifest reproduces the generated matrices
//! bit for bit.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use multistudy::transition::{tau_ls, tau_ridge};
use multistudy::{generate_study, EnsembleWeights, StudyData, TransitionResult};

use crate::commands::{design_studies, stacked_design};
use crate::config::{load_toml, GenSpec, GENERATOR_SCHEMA, RIDGE_SCHEMA};
use crate::error::{io_err, CliError, CliResult};
use crate::manifest::{DatasetManifest, Role, StudyEntry};
use crate::output::{emit, tau_block, write_json};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Generator config (TOML).
    #[arg(long, required_unless_present = "print_schema")]
    pub config: Option<PathBuf>,
    /// Directory for the CSVs, manifest, and truth file.
    #[arg(long, required_unless_present = "print_schema")]
    pub out_dir: Option<PathBuf>,
    /// Override the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rescale the heterogeneity to this tr(G)/p level, keeping the
    /// configured variance proportions.
    #[arg(long)]
    pub sigma_bar2: Option<f64>,
    /// Print the config schema and exit.
    #[arg(long)]
    pub print_schema: bool,
}

/// Generating parameters and theory, written next to the data.
#[derive(Serialize)]
struct Truth {
    seed: u64,
    beta: Vec<f64>,
    sigma_eps2: f64,
    sigma_bar2: f64,
    re_columns: Vec<usize>,
    re_variances: Vec<f64>,
    intercept: bool,
    /// Equal-weight transition results on the materialized designs.
    tau_ls: Option<TransitionResult>,
    tau_ridge: Option<TransitionResult>,
}

pub fn run(args: &GenArgs) -> CliResult<()> {
    if args.print_schema {
        emit(&[format!("{GENERATOR_SCHEMA}\n{RIDGE_SCHEMA}")]);
        return Ok(());
    }
    let config_path = args.config.as_ref().expect("clap enforces --config");
    let out_dir = args.out_dir.as_ref().expect("clap enforces --out-dir");
    let mut spec: GenSpec = load_toml(config_path)?;
    if let Some(seed) = args.seed {
        spec.generator.seed = seed;
    }
    let mut gen = spec.generator.materialize()?;
    if let Some(target) = args.sigma_bar2 {
        let re = gen.re().scaled_to(target, gen.p())?;
        gen = gen.with_re(re)?;
    }

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", out_dir.display())))?;

    // One realized draw per study; the draw index is reserved for sweeps.
    let k_train = gen.n_train();
    let n_predictors = gen.p() - usize::from(spec.generator.intercept);
    let names: Vec<String> = (1..=n_predictors).map(|i| format!("x{i}")).collect();
    let mut entries = Vec::new();
    for idx in 0..k_train + gen.n_test() {
        let study = generate_study(&gen, idx, 0)?;
        let (id, role) = if idx < k_train {
            (format!("train-{}", idx + 1), Role::Train)
        } else {
            (format!("test-{}", idx - k_train + 1), Role::Test)
        };
        let file = format!("{id}.csv");
        write_study_csv(&out_dir.join(&file), &study, spec.generator.intercept, &names)?;
        entries.push(StudyEntry {
            id,
            path: PathBuf::from(file),
            role,
        });
    }

    let manifest = DatasetManifest {
        outcome: "y".to_string(),
        predictors: names.clone(),
        intercept: spec.generator.intercept,
        studies: entries,
    };
    let manifest_text = toml::to_string(&manifest)
        .map_err(|e| CliError::Input(format!("serializing manifest: {e}")))?;
    std::fs::write(out_dir.join("manifest.toml"), manifest_text)
        .map_err(|e| io_err(&out_dir.join("manifest.toml"), e))?;

    let truth = compute_truth(&gen, &spec)?;
    write_json(&out_dir.join("truth.json"), &truth)?;

    let mut lines = vec![format!(
        "wrote {} training and {} test studies to {}",
        k_train,
        gen.n_test(),
        out_dir.display()
    )];
    lines.push(format!("sigma_bar2 = {}", truth.sigma_bar2));
    if let Some(t) = &truth.tau_ls {
        lines.extend(tau_block("ls", t));
    }
    if let Some(t) = &truth.tau_ridge {
        lines.extend(tau_block("ridge", t));
    }
    emit(&lines);
    Ok(())
}

fn compute_truth(gen: &multistudy::GeneratorConfig, spec: &GenSpec) -> CliResult<Truth> {
    let studies = design_studies(gen)?;
    let x0 = stacked_design(gen.test_designs());
    let equal = EnsembleWeights::equal(studies.len())?;
    let cols = gen.re().columns().to_vec();
    let tau_ls_result = tau_ls(&studies, &cols, gen.sigma_eps2(), &equal, &x0).ok();
    let tau_ridge_result = spec
        .ridge
        .as_ref()
        .and_then(|r| r.to_config(studies.len(), spec.generator.intercept).ok())
        .and_then(|cfg| {
            tau_ridge(
                &studies,
                &cols,
                gen.sigma_eps2(),
                gen.beta(),
                &cfg,
                &equal,
                &x0,
            )
            .ok()
        });
    Ok(Truth {
        seed: gen.seed(),
        beta: gen.beta().iter().copied().collect(),
        sigma_eps2: gen.sigma_eps2(),
        sigma_bar2: gen.re().trace_g() / gen.p() as f64,
        re_columns: cols,
        re_variances: gen.re().variances().to_vec(),
        intercept: spec.generator.intercept,
        tau_ls: tau_ls_result,
        tau_ridge: tau_ridge_result,
    })
}

fn write_study_csv(
    path: &Path,
    study: &StudyData,
    intercept: bool,
    names: &[String],
) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let offset = usize::from(intercept);
    let mut header = vec!["y".to_string()];
    header.extend(names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for r in 0..study.n() {
        let mut row = vec![study.y()[r].to_string()];
        for c in offset..study.p() {
            row.push(study.x()[(r, c)].to_string());
        }
        writer
            .write_record(&row)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| io_err(path, std::io::Error::other(e)))?;
    Ok(())
}
