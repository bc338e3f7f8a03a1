//! Report types and their JSON / CSV renderings.
//!
//! Rendering is a pure function of report content, so equal reports give
//! byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use lmo_core::analysis::GreedyComparison;
use lmo_core::budget::BudgetMode;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format `{other}` (expected json or csv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerAudit {
    pub allowance: u64,
    pub within_allowance: bool,
    /// Itemized extra steps sum to the reported total.
    pub itemization_consistent: bool,
}

impl LedgerAudit {
    pub fn ok(&self) -> bool {
        self.within_allowance && self.itemization_consistent
    }
}

/// Outcome of one (method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub method: String,
    pub seed: u64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub avg_test_loss: Option<f64>,
    pub final_test_losses: Vec<f64>,
    pub ood_test_loss: Option<f64>,
    /// Method minus stratified on the same seed; negative is better.
    pub delta_vs_stratified: Option<f64>,
    pub extra_steps_used: u64,
    pub extra_steps: BTreeMap<String, u64>,
    pub init_steps: u64,
    /// Static or last-round proportions.
    pub proportions: Option<Vec<f64>>,
    pub schedule: Option<Vec<Vec<f64>>>,
    pub audit: LedgerAudit,
}

impl CellReport {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub seed: u64,
    pub avg_test_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    pub succeeded: usize,
    pub failed: usize,
    pub mean_avg_test_loss: Option<f64>,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std_avg_test_loss: Option<f64>,
    pub mean_delta_vs_stratified: Option<f64>,
    pub max_extra_steps_used: u64,
    pub ledger_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub steps: u64,
    pub budget: BudgetMode,
    pub allowance: u64,
    pub num_groups: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<String>,
    pub baseline: Vec<BaselineRun>,
    /// Method-major, seeds in config order.
    pub cells: Vec<CellReport>,
    pub aggregates: Vec<MethodAggregate>,
}

impl ExperimentReport {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_ok()).count()
    }

    pub fn cell(&self, method: &str, seed: u64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.method == method && c.seed == seed)
    }

    pub fn aggregate(&self, method: &str) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }
}

pub(crate) fn num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub(crate) fn csv_string<F>(write: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Csv(e.to_string()))
}

pub(crate) fn json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Json(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn render_report(report: &ExperimentReport, format: Format) -> Result<String> {
    match format {
        Format::Json => json_string(report),
        Format::Csv => csv_string(|w| {
            w.write_record(["method", "seed", "avg_test_loss", "delta_vs_stratified", "extra_steps_used"])?;
            for c in &report.cells {
                w.write_record([
                    c.method.clone(),
                    c.seed.to_string(),
                    num(c.avg_test_loss),
                    num(c.delta_vs_stratified),
                    c.extra_steps_used.to_string(),
                ])?;
            }
            Ok(())
        }),
    }
}

pub fn emit_report(report: &ExperimentReport, format: Format, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &render_report(report, format)?)
}

/// One configuration of a similarity study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub method: String,
    pub config: String,
    pub gradient_noise: f64,
    pub similarity: f64,
    pub delta_vs_stratified: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    /// Pearson correlation of similarity with improvement over stratified.
    pub correlation: Option<f64>,
}

impl StudyReport {
    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => json_string(self),
            Format::Csv => csv_string(|w| {
                w.write_record(["method", "config", "similarity", "delta_vs_stratified"])?;
                for r in &self.rows {
                    w.write_record([r.method.clone(), r.config.clone(), r.similarity.to_string(), r.delta_vs_stratified.to_string()])?;
                }
                Ok(())
            }),
        }
    }
}

pub fn render_greedy(cmp: &GreedyComparison, format: Format) -> Result<String> {
    match format {
        Format::Json => json_string(cmp),
        Format::Csv => csv_string(|w| {
            let m = cmp.greedy.num_groups();
            let mut header = vec!["schedule".to_string(), "final_val_loss".into(), "round".into()];
            header.extend((0..m).map(|j| format!("p_{j}")));
            w.write_record(&header)?;
            for (name, sched, loss) in [("greedy", &cmp.greedy, cmp.greedy_loss), ("exhaustive", &cmp.exhaustive, cmp.exhaustive_loss)] {
                for (t, p) in sched.rounds().iter().enumerate() {
                    let mut row = vec![name.to_string(), loss.to_string(), t.to_string()];
                    row.extend(p.iter().map(|x| x.to_string()));
                    w.write_record(&row)?;
                }
            }
            Ok(())
        }),
    }
}
