use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sweep::SweepResult;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            _ => Err(Error::Usage(format!("unknown report format {s:?}"))),
        }
    }
}

/// One CSV line per (method, fraction) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub fraction: u32,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Successful seeds.
    pub seeds: usize,
    #[serde(rename = "D_l")]
    pub d_l: Option<f64>,
    pub rho_min: Option<f64>,
    #[serde(rename = "K_hat")]
    pub k_hat: Option<f64>,
    pub dl2w2: Option<f64>,
}

fn rows(result: &SweepResult) -> Vec<CsvRow> {
    result
        .cells
        .iter()
        .map(|c| CsvRow {
            method: c.method.to_string(),
            fraction: c.fraction,
            mean: c.mean,
            std: c.std,
            seeds: c.runs.len() - c.failures,
            d_l: c.d_l,
            rho_min: c.rho_min,
            k_hat: c.k_hat,
            dl2w2: c.dl2w2,
        })
        .collect()
}

pub fn to_csv(result: &SweepResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows(result) {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<CsvRow>, _>>()
        .map_err(|e| Error::Format(e.to_string()))
}

/// Accuracy table: one row per method, one column per fraction, `mean±std` cells.
pub fn to_markdown(result: &SweepResult) -> String {
    let fractions = &result.spec.fractions;
    let mut s = String::from("| method |");
    for f in fractions {
        let _ = write!(s, " {f}% |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---:|".repeat(fractions.len()));
    s.push('\n');
    for m in &result.spec.methods {
        let _ = write!(s, "| {m} |");
        for &f in fractions {
            let cell = match result.cell(m, f) {
                Some(c) => match (c.mean, c.std) {
                    (Some(mu), Some(sd)) if c.failures == 0 => format!("{mu:.2}±{sd:.2}"),
                    (Some(mu), Some(sd)) => format!("{mu:.2}±{sd:.2} ({} failed)", c.failures),
                    _ => "failed".into(),
                },
                None => "-".into(),
            };
            let _ = write!(s, " {cell} |");
        }
        s.push('\n');
    }
    s
}

/// Writes `result` to `path` in `format`.
pub fn write_report(result: &SweepResult, format: ReportFormat, path: &Path) -> Result<()> {
    if result.cells.is_empty() {
        return Err(Error::Usage("refusing to write a report with no cells".into()));
    }
    let text = match format {
        ReportFormat::Csv => to_csv(result)?,
        ReportFormat::Markdown => to_markdown(result),
        ReportFormat::Json => serde_json::to_string_pretty(result)?,
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::{CellResult, RunRecord, SweepSpec};
    use crate::harness::{Method, RunConfig};

    fn rec(seed: u64, acc: f64) -> RunRecord {
        RunRecord { seed, test_accuracy: Some(acc), error: None, wall_seconds: 0.5, steps: 10, bounds: None }
    }

    fn grid() -> SweepResult {
        let methods: Vec<Method> = vec!["ce".parse().unwrap(), "mh+lm-0.001".parse().unwrap()];
        let fractions = vec![1, 20];
        let spec = SweepSpec { base: RunConfig::default(), methods: methods.clone(), fractions: fractions.clone(), seeds: vec![0, 1], jobs: 1 };
        let mut cells = Vec::new();
        for (i, m) in methods.iter().enumerate() {
            for (j, &f) in fractions.iter().enumerate() {
                let base = 90.0 + 4.0 * i as f64 + 3.0 * j as f64;
                let mut c = CellResult::from_runs(*m, f, 30, vec![rec(0, base + 0.25), rec(1, base - 0.25)]);
                c.d_l = Some(1.5 + i as f64);
                c.rho_min = Some(0.125);
                c.k_hat = Some(12.0);
                c.dl2w2 = Some(144.0);
                cells.push(c);
            }
        }
        SweepResult { spec, cells, wall_seconds: 2.0 }
    }

    #[test]
    fn csv_round_trips() {
        let r = grid();
        let text = to_csv(&r).unwrap();
        assert!(text.starts_with("method,fraction,mean,std,seeds,D_l,rho_min,K_hat,dl2w2\n"));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back, rows(&r));
        assert_eq!(back[3].method, "mh+lm-0.001");
        assert_eq!(back[3].mean, Some(97.0));
        assert_eq!(back[3].std, Some(0.25));
    }

    #[test]
    fn markdown_matches_golden() {
        let golden = include_str!("../../tests/golden/table_2x2.md");
        assert_eq!(to_markdown(&grid()), golden);
    }

    #[test]
    fn empty_result_is_rejected() {
        let mut r = grid();
        r.cells.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(&r, ReportFormat::Csv, &dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn failed_cells_are_marked() {
        let mut r = grid();
        r.cells[0] = CellResult::from_runs(r.cells[0].method, 1, 30, vec![RunRecord { test_accuracy: None, error: Some("diverged".into()), ..rec(0, 0.0) }]);
        assert!(to_markdown(&r).contains("| ce | failed |"));
        let rows = parse_csv(&to_csv(&r).unwrap()).unwrap();
        assert_eq!((rows[0].mean, rows[0].seeds), (None, 0));
    }
}
