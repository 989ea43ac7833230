//! Result files. CSV headers use 1-based indices.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use dnumkit_core::model::KktReport;
use dnumkit_core::scenarios::ScenarioFile;
use dnumkit_core::{Allocation, DualState, Grid, SolveReport, TraceRow};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Contents of `results.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultsFile {
    pub solver: String,
    pub allocation: Allocation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual: Option<DualState>,
    pub report: SolveReport,
    pub kkt: KktReport,
    /// Solver-specific extras (barrier stages, step size, ...).
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
    pub scenario: ScenarioFile,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows labelled `row_label` 1..n, columns `col_prefix`1..m.
pub fn write_grid(path: &Path, grid: &Grid, row_label: &str, col_prefix: &str) -> Result<()> {
    let header = std::iter::once(row_label.to_string())
        .chain((1..=grid.cols()).map(|j| format!("{col_prefix}{j}")))
        .collect();
    let rows = (0..grid.rows())
        .map(|i| std::iter::once((i + 1).to_string()).chain(grid.row(i).iter().map(|v| v.to_string())).collect());
    write_csv(path, header, rows)
}

/// `rates.csv` (S×T), `margins.csv` (T×L) and `delays.csv` (S×T).
pub fn write_allocation(dir: &Path, alloc: &Allocation) -> Result<()> {
    write_grid(&dir.join("rates.csv"), &alloc.rates, "source", "t")?;
    write_grid(&dir.join("margins.csv"), &alloc.margins, "period", "l")?;
    write_grid(&dir.join("delays.csv"), &alloc.delays, "source", "t")
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let header = ["iteration", "dual_objective", "max_primal_change", "max_kkt_residual", "inner_iterations"]
        .map(String::from)
        .to_vec();
    let rows = trace.iter().map(|r| {
        vec![
            r.iteration.to_string(),
            r.dual_objective.to_string(),
            r.max_primal_change.to_string(),
            r.max_kkt_residual.to_string(),
            r.inner_iterations.map(|n| n.to_string()).unwrap_or_default(),
        ]
    });
    write_csv(path, header, rows)
}

/// Reads a `period,l1,...` capacity file.
pub fn read_grid(path: &Path) -> Result<Grid> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("row {}: bad number `{v}`", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    Grid::from_rows(&rows).with_context(|| format!("{}: rows have different lengths", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = Grid::from_rows(&[vec![1.5, 2.0], vec![0.1, 3.25]]).unwrap();
        write_grid(&path, &g, "period", "l").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("period,l1,l2\n1,1.5,2\n"));
        assert_eq!(read_grid(&path).unwrap(), g);
    }
}
