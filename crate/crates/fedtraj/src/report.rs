//! Plain-text reports: metric JSDs, per-metric histograms, attack results
//! and DP budgets. Each starts with a versioned header line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedtraj_core::aggregation::DPBudget;
use fedtraj_core::attacks::{MIAResult, UniquenessResult};
use fedtraj_core::evaluation::{MetricDistribution, MetricReport};

use crate::error::{self, Result};

pub const METRIC_HEADER: &str = "# fedtraj metric report v1";
pub const HISTOGRAM_HEADER: &str = "# fedtraj histogram v1";
pub const ATTACK_HEADER: &str = "# fedtraj attack report v1";
pub const BUDGET_HEADER: &str = "# fedtraj dp budget v1";

/// `metric jsd` pairs, one per line.
pub fn format_metric_report(report: &MetricReport) -> String {
    let mut out = format!("{METRIC_HEADER}\n");
    for e in &report.entries {
        let _ = writeln!(out, "{} {}", e.real.metric.name(), e.jsd);
    }
    out
}

/// Two columns: bin midpoint (or rank label) and mass.
pub fn format_histogram(dist: &MetricDistribution, side: &str) -> String {
    let mut out = format!("{HISTOGRAM_HEADER} {} {side}\n", dist.metric.name());
    for (label, mass) in dist.labels().iter().zip(&dist.mass) {
        let _ = writeln!(out, "{label}\t{mass}");
    }
    out
}

/// Writes `metrics.txt` and `hist_<metric>_{real,synthetic}.tsv` into `dir`.
pub fn write_metric_report(dir: &Path, report: &MetricReport) -> Result<Vec<PathBuf>> {
    let mut written = vec![dir.join("metrics.txt")];
    error::write(&written[0], &format_metric_report(report))?;
    for e in &report.entries {
        for (side, dist) in [("real", &e.real), ("synthetic", &e.synthetic)] {
            let path = dir.join(format!("hist_{}_{side}.tsv", dist.metric.name()));
            error::write(&path, &format_histogram(dist, side))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn epsilon_text(budget: &DPBudget) -> String {
    if budget.epsilon.is_finite() {
        budget.epsilon.to_string()
    } else {
        "inf".into()
    }
}

pub fn format_attack_report(
    mia: &MIAResult,
    uniqueness: &UniquenessResult,
    budget: &DPBudget,
    beta: f64,
    per_class: usize,
) -> String {
    let mut out = format!("{ATTACK_HEADER}\n");
    let _ = writeln!(out, "epsilon {}", epsilon_text(budget));
    let kappa = budget.kappa.map_or("none".to_string(), |k| k.to_string());
    let _ = writeln!(out, "kappa {kappa}");
    let _ = writeln!(out, "beta {beta}");
    let _ = writeln!(out, "users {}", budget.num_users);
    let _ = writeln!(out, "per_class {per_class}");
    let _ = writeln!(out, "mia_features {}", mia.features);
    for (i, acc) in mia.fold_accuracies.iter().enumerate() {
        let _ = writeln!(out, "fold {} {acc}", i + 1);
    }
    let _ = writeln!(out, "mia_mean_accuracy {}", mia.mean_accuracy);
    let _ = writeln!(out, "uniqueness_mean {}", uniqueness.mean);
    let _ = writeln!(out, "uniqueness_max {}", uniqueness.max);
    out
}

/// `key=value` lines for ε, κ, |U|, λ and, when compensated, λ_c.
pub fn format_budget(budget: &DPBudget) -> String {
    let mut out = format!("{BUDGET_HEADER}\n");
    let _ = writeln!(out, "ε={}", epsilon_text(budget));
    let kappa = budget.kappa.map_or("none".to_string(), |k| k.to_string());
    let _ = writeln!(out, "κ={kappa}");
    let _ = writeln!(out, "|U|={}", budget.num_users);
    let _ = writeln!(out, "λ={}", budget.lambda_mean);
    if budget.kappa.is_some() {
        let _ = writeln!(out, "λ_c={}", budget.lambda_var);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedtraj_core::aggregation::budget_for;

    #[test]
    fn budget_lines() {
        let text = format_budget(&budget_for(1.0, 100, None).unwrap());
        assert!(text.lines().any(|l| l == "λ=0.01"), "{text}");
        assert!(!text.contains("λ_c"));
        let text = format_budget(&budget_for(1.0, 100, Some(2.0)).unwrap());
        assert!(text.lines().any(|l| l == "λ=0.02"), "{text}");
        assert!(text.lines().any(|l| l == "λ_c=0.06"), "{text}");
    }
}
