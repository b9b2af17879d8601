//! Report rendering and file emission.
//!
//! Every float is printed with Rust's shortest round-trip formatting, so
//! repeated runs of a seeded command emit byte-identical text, CSV, and
//! JSON.

use std::io::Write;
use std::path::Path;

use multistudy::simulation::FlatRow;
use multistudy::transition::{ConditionStatus, TransitionResult};
use multistudy::Recommendation;

use crate::error::{io_err, CliError, CliResult};

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut buf = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Input(format!("serializing {}: {e}", path.display())))?;
    buf.push(b'\n');
    std::fs::write(path, buf).map_err(|e| io_err(path, e))
}

pub fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Input(format!("serializing report: {e}")))?;
    println!("{text}");
    Ok(())
}

pub fn write_flat_csv(path: &Path, rows: &[FlatRow]) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| {
        CliError::Input(format!("{}: {e}", path.display()))
    })?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| io_err(path, std::io::Error::other(e)))?;
    Ok(())
}

/// Write stdout lines through one buffered handle.
pub fn emit(lines: &[String]) {
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    for line in lines {
        writeln!(out, "{line}").expect("stdout write");
    }
    out.flush().expect("stdout flush");
}

pub fn recommendation_label(r: Recommendation) -> &'static str {
    match r {
        Recommendation::Merge => "merge",
        Recommendation::Ensemble => "ensemble",
        Recommendation::Indeterminate => "indeterminate",
    }
}

fn status_label(s: ConditionStatus) -> &'static str {
    match s {
        ConditionStatus::Holds => "holds",
        ConditionStatus::Degenerate => "degenerate",
        ConditionStatus::Violated => "violated",
    }
}

/// Human-readable block for one transition result; values are shown both as
/// `tau` and `sqrt(tau)` since squared scales are easy to misread.
pub fn tau_block(label: &str, result: &TransitionResult) -> Vec<String> {
    let mut lines = Vec::new();
    match (result.point, result.lower, result.upper) {
        (Some(tau), _, _) => {
            lines.push(format!("{label} transition point (exact crossing):"));
            lines.push(format!("  tau       = {tau}"));
            lines.push(format!("  sqrt(tau) = {}", tau.sqrt()));
        }
        (None, Some(lo), Some(hi)) => {
            lines.push(format!(
                "{label} transition interval (allocation-robust bounds):"
            ));
            lines.push(format!("  tau_lower = {lo}  sqrt = {}", lo.sqrt()));
            lines.push(format!("  tau_upper = {hi}  sqrt = {}", hi.sqrt()));
        }
        (None, Some(lo), None) => {
            lines.push(format!("{label} transition: only a lower bound is usable"));
            lines.push(format!("  tau_lower = {lo}  sqrt = {}", lo.sqrt()));
        }
        (None, None, Some(hi)) => {
            lines.push(format!("{label} transition: only an upper bound is usable"));
            lines.push(format!("  tau_upper = {hi}  sqrt = {}", hi.sqrt()));
        }
        (None, None, None) => {
            lines.push(format!(
                "{label} transition: degenerate — no usable bound (the learners' \
                 risks never separate)"
            ));
        }
    }
    for c in &result.conditions {
        lines.push(format!(
            "  condition {}: {} (value {}, scale {})",
            c.name,
            status_label(c.status),
            c.value,
            c.scale
        ));
    }
    lines
}
