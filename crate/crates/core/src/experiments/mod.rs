//! Seeded sweep runners and their tabular output.

pub mod config;
mod runners;

use std::io::Write;

use serde::Serialize;

use crate::error::{validation, Result};

pub use config::{parse_list, ExperimentConfig, ExperimentKind, Spectrum, Sweep};
pub use runners::{
    fig1b, fig3, fig4, fig5, run_experiment, run_fig1b, run_fig3, run_fig4, run_fig5, run_scaling, scaling,
    Fig1bPoint, Fig3Point, Fig4Point, Fig5Point, ScalingPoint, ScalingResult,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            // shortest round-trip form, so reruns are byte-identical
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Rows of one experiment. Wall times are kept beside the rows rather than in
/// them so the CSV stays byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub row_wall_time_ms: Vec<f64>,
}

impl ResultTable {
    pub fn new(columns: &[&str]) -> Self {
        ResultTable {
            metadata: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            row_wall_time_ms: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<Cell>, wall_time_ms: f64) -> Result<()> {
        if row.len() != self.columns.len() {
            return validation(format!("row has {} cells, table has {} columns", row.len(), self.columns.len()));
        }
        if let Some(i) = self.column("stderr") {
            if let Some(se) = row[i].as_f64() {
                if !(se >= 0.0) {
                    return validation(format!("stderr must be >= 0, got {se}"));
                }
            }
        }
        self.rows.push(row);
        self.row_wall_time_ms.push(wall_time_ms);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Named pass/fail outcome of a runner's built-in assertion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunOutput {
    pub experiment: ExperimentKind,
    pub table: ResultTable,
    pub checks: Vec<Check>,
    pub wall_time_ms: f64,
}

impl RunOutput {
    /// JSON sidecar: timings and check outcomes, which are not part of the CSV.
    pub fn sidecar_json(&self, config: &ExperimentConfig) -> String {
        let v = serde_json::json!({
            "experiment": self.experiment,
            "wall_time_ms": self.wall_time_ms,
            "row_wall_time_ms": self.table.row_wall_time_ms,
            "checks": self.checks,
            "config": config,
        });
        serde_json::to_string_pretty(&v).expect("sidecar serializes")
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return validation("slope needs at least two paired points");
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return validation("log-log slope needs positive values");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return validation("x values are all equal");
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 4.0, 16.0, 64.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn table_rejects_bad_rows() {
        let mut t = ResultTable::new(&["R", "value", "stderr"]);
        assert!(t.push(vec![Cell::Int(1), Cell::Num(1.0)], 0.0).is_err());
        assert!(t.push(vec![Cell::Int(1), Cell::Num(1.0), Cell::Num(-1.0)], 0.0).is_err());
        t.meta("sigma", 0.5);
        t.push(vec![50usize.into(), 0.25.into(), 0.0.into()], 3.0).unwrap();
        assert_eq!(t.to_csv_string(), "# sigma=0.5\nR,value,stderr\n50,0.25,0\n");
    }
}
