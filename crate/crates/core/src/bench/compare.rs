use std::fmt::Write as _;

use super::metrics::{convergence_epoch, validation_accuracy_pct};
use super::run::{run_sequential_tasks, Divergence, RunConfig, RunOutcome, TaskData};
use crate::error::{Error, Result};

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub algorithm: String,
    /// Wall-clock seconds; machine-dependent.
    pub training_time_s: f64,
    pub convergence_epochs: usize,
    pub validation_accuracy_pct: f64,
    pub divergence: Option<Divergence>,
    /// No epoch had non-zero validation accuracy.
    pub degenerate: bool,
}

/// Rows for one task source.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonBlock {
    pub source: String,
    pub rows: Vec<ComparisonRow>,
}

pub const COMPARISON_COLUMNS: [&str; 4] = [
    "algorithm",
    "training_time_s",
    "convergence_epochs",
    "validation_accuracy_pct",
];

pub fn row_from_outcome(algorithm: &str, outcome: &RunOutcome, fraction: f64) -> Result<ComparisonRow> {
    let conv = convergence_epoch(&outcome.records, fraction)?;
    Ok(ComparisonRow {
        algorithm: algorithm.to_string(),
        training_time_s: outcome.wall_ms as f64 / 1000.0,
        convergence_epochs: conv.epoch,
        validation_accuracy_pct: validation_accuracy_pct(&outcome.records),
        divergence: outcome.divergence.clone(),
        degenerate: conv.degenerate,
    })
}

/// Runs every labelled config on `data`, in order. The configs must share a
/// seed so that only the optimizer differs between rows.
pub fn compare_optimizers(
    configs: &[(String, RunConfig)],
    data: &TaskData,
    fraction: f64,
) -> Result<Vec<(ComparisonRow, RunOutcome)>> {
    if let Some((_, first)) = configs.first() {
        if let Some((label, _)) = configs.iter().find(|(_, c)| c.seed != first.seed) {
            return Err(Error::contract(format!(
                "config {label:?} uses a different seed; compared runs must share it"
            )));
        }
    }
    configs
        .iter()
        .map(|(label, cfg)| {
            let outcome = run_sequential_tasks(cfg, data)?;
            let row = row_from_outcome(label, &outcome, fraction)?;
            Ok((row, outcome))
        })
        .collect()
}

/// Values reported for the original five-way comparison, quoted in the
/// output footer for reference only.
const PUBLISHED: [[(&str, f64, u32, f64); 5]; 2] = [
    [
        ("SGD", 1200.0, 30, 75.2),
        ("Momentum", 1050.0, 28, 76.5),
        ("RAdam", 1250.0, 26, 77.8),
        ("AdamW", 1100.0, 27, 78.3),
        ("WarpedAdam", 1000.0, 24, 79.6),
    ],
    [
        ("SGD", 450.0, 15, 98.2),
        ("Momentum", 400.0, 13, 98.5),
        ("RAdam", 470.0, 12, 98.8),
        ("AdamW", 420.0, 14, 99.0),
        ("WarpedAdam", 380.0, 11, 99.2),
    ],
];

/// Renders the blocks as CSV with `#` comment lines.
///
/// Each block starts with `# block N: <source>` and the column header.
/// Divergence and degenerate curves are noted in comments after the block's
/// rows. A footer quotes the published reference values.
pub fn comparison_csv(blocks: &[ComparisonBlock]) -> String {
    let mut out = String::new();
    out.push_str("# training_time_s is wall-clock time and depends on the machine\n");
    for (i, block) in blocks.iter().enumerate() {
        let _ = writeln!(out, "# block {}: {}", i + 1, block.source);
        out.push_str(&COMPARISON_COLUMNS.join(","));
        out.push('\n');
        for r in &block.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.algorithm, r.training_time_s, r.convergence_epochs, r.validation_accuracy_pct
            );
        }
        for r in &block.rows {
            if let Some(d) = &r.divergence {
                let _ = writeln!(
                    out,
                    "# diverged: {} at task {} step {}: {}",
                    r.algorithm, d.task_index, d.step, d.reason
                );
            }
            if r.degenerate {
                let _ = writeln!(
                    out,
                    "# degenerate: {} never reached non-zero validation accuracy",
                    r.algorithm
                );
            }
        }
    }
    out.push_str(
        "# reference: published values for the original comparison, measured on other\n\
         # hardware, data and models; quoted for context, not reproduced or asserted\n",
    );
    for (i, block) in PUBLISHED.iter().enumerate() {
        let cells: Vec<String> = block
            .iter()
            .map(|(name, secs, epochs, acc)| format!("{name} {secs} s / {epochs} epochs / {acc} %"))
            .collect();
        let _ = writeln!(out, "# reference block {}: {}", i + 1, cells.join("; "));
    }
    out
}
