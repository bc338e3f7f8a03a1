//! Tabular formats: loss logs for fitting, sweep tables, trajectories and residuals.
//!
//! Loss logs are CSV files with a header. Static logs carry `p_0..p_{m-1}` and
//! `loss_0..loss_{m-1}`; dynamic logs carry `before_*`, `p_*` and `after_*`.
//! Other columns are ignored, so a sweep table is a valid static log.

use std::path::Path;

use lmo_core::laws::{fit_dynamic, fit_static, DynamicTriple, FitReport, StaticFitConfig, StaticLawParams, StaticSample};
use lmo_core::trainer::TrajectoryPoint;
use lmo_core::{InteractionMatrix, MixtureProportions};
use serde::{Deserialize, Serialize};

use crate::config::read;
use crate::error::{HarnessError, Result};
use crate::report::{csv_string, json_string, Format};

#[derive(Debug, Clone, PartialEq)]
pub enum LossLog {
    Static(Vec<StaticSample>),
    Dynamic(Vec<DynamicTriple>),
}

impl LossLog {
    pub fn len(&self) -> usize {
        match self {
            LossLog::Static(s) => s.len(),
            LossLog::Dynamic(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Column positions of `{prefix}0..{prefix}{m-1}`, or `None` if the prefix is absent.
fn indexed_columns(header: &csv::StringRecord, prefix: &str) -> Result<Option<Vec<usize>>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if let Some(idx) = name.trim().strip_prefix(prefix) {
            let j: usize = idx
                .parse()
                .map_err(|_| HarnessError::validation(format!("header.{name}"), format!("expected {prefix}<index>")))?;
            found.push((j, col));
        }
    }
    if found.is_empty() {
        return Ok(None);
    }
    found.sort_unstable();
    for (expected, (j, _)) in found.iter().enumerate() {
        if *j != expected {
            return Err(HarnessError::validation(
                "header",
                format!("{prefix}* columns must be numbered 0..{} without gaps", found.len()),
            ));
        }
    }
    Ok(Some(found.into_iter().map(|(_, c)| c).collect()))
}

fn values(record: &csv::StringRecord, cols: &[usize], header: &csv::StringRecord, row: usize) -> Result<Vec<f64>> {
    cols.iter()
        .map(|&c| {
            let raw = record.get(c).unwrap_or("").trim();
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                HarnessError::validation(format!("row {row}.{}", &header[c]), format!("`{raw}` is not a finite number"))
            })
        })
        .collect()
}

pub fn parse_loss_log(text: &str) -> Result<LossLog> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let p_cols = indexed_columns(&header, "p_")?.ok_or_else(|| HarnessError::validation("header", "missing p_* columns"))?;
    let m = p_cols.len();
    let loss = indexed_columns(&header, "loss_")?;
    let before = indexed_columns(&header, "before_")?;
    let after = indexed_columns(&header, "after_")?;
    let width = |cols: &Option<Vec<usize>>, name: &str| -> Result<()> {
        match cols {
            Some(c) if c.len() != m => {
                Err(HarnessError::validation("header", format!("{} {name}* columns for {m} p_* columns", c.len())))
            }
            _ => Ok(()),
        }
    };
    width(&loss, "loss_")?;
    width(&before, "before_")?;
    width(&after, "after_")?;

    let proportions = |rec: &csv::StringRecord, row: usize| -> Result<MixtureProportions> {
        MixtureProportions::new(values(rec, &p_cols, &header, row)?)
            .map_err(|e| HarnessError::validation(format!("row {row}.p"), e.to_string()))
    };
    match (loss, before, after) {
        (Some(loss), None, None) => {
            let mut out = Vec::new();
            for (row, rec) in reader.records().enumerate() {
                let rec = rec?;
                out.push(StaticSample { p: proportions(&rec, row)?, losses: values(&rec, &loss, &header, row)? });
            }
            Ok(LossLog::Static(out))
        }
        (None, Some(before), Some(after)) => {
            let mut out = Vec::new();
            for (row, rec) in reader.records().enumerate() {
                let rec = rec?;
                out.push(DynamicTriple {
                    before: values(&rec, &before, &header, row)?,
                    p: proportions(&rec, row)?,
                    after: values(&rec, &after, &header, row)?,
                });
            }
            Ok(LossLog::Dynamic(out))
        }
        _ => Err(HarnessError::validation("header", "expected loss_* columns, or before_* and after_* columns")),
    }
}

pub fn read_loss_log(path: impl AsRef<Path>) -> Result<LossLog> {
    parse_loss_log(&read(path.as_ref())?)
}

/// Fitted law plus goodness of fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    /// `log_linear_static` or `linear_dynamic`.
    pub law: String,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_params: Option<StaticLawParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionMatrix>,
    pub report: FitReport,
}

pub fn fit_loss_log(log: &LossLog, config: &StaticFitConfig) -> Result<FitSummary> {
    Ok(match log {
        LossLog::Static(samples) => {
            let (params, report) = fit_static(samples, config)?;
            FitSummary { law: "log_linear_static".into(), samples: samples.len(), static_params: Some(params), interaction: None, report }
        }
        LossLog::Dynamic(triples) => {
            let (a, report) = fit_dynamic(triples)?;
            FitSummary { law: "linear_dynamic".into(), samples: triples.len(), static_params: None, interaction: Some(a), report }
        }
    })
}

/// JSON summary, or CSV residuals with columns `sample, group, residual`.
pub fn render_fit(summary: &FitSummary, format: Format) -> Result<String> {
    match format {
        Format::Json => json_string(summary),
        Format::Csv => csv_string(|w| {
            w.write_record(["sample", "group", "residual"])?;
            let res = &summary.report.residuals;
            let n = res.first().map_or(0, Vec::len);
            for s in 0..n {
                for (g, r) in res.iter().enumerate() {
                    w.write_record([s.to_string(), g.to_string(), r[s].to_string()])?;
                }
            }
            Ok(())
        }),
    }
}

/// One trained candidate of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub seed: u64,
    pub candidate: usize,
    pub p: Vec<f64>,
    /// Validation losses after the run.
    pub losses: Vec<f64>,
}

pub fn render_sweep(rows: &[SweepRow], format: Format) -> Result<String> {
    match format {
        Format::Json => json_string(&rows),
        Format::Csv => csv_string(|w| {
            let m = rows.first().map_or(0, |r| r.p.len());
            let mut header = vec!["seed".to_string(), "candidate".into()];
            header.extend((0..m).map(|j| format!("p_{j}")));
            header.extend((0..m).map(|j| format!("loss_{j}")));
            w.write_record(&header)?;
            for r in rows {
                let mut rec = vec![r.seed.to_string(), r.candidate.to_string()];
                rec.extend(r.p.iter().map(f64::to_string));
                rec.extend(r.losses.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            Ok(())
        }),
    }
}

/// Columns `step, split, loss_0..loss_{m-1}`.
pub fn render_trajectory(points: &[TrajectoryPoint]) -> Result<String> {
    csv_string(|w| {
        let m = points.first().map_or(0, |p| p.losses.len());
        let mut header = vec!["step".to_string(), "split".into()];
        header.extend((0..m).map(|j| format!("loss_{j}")));
        w.write_record(&header)?;
        for p in points {
            let mut rec = vec![p.step.to_string(), p.split.name().to_string()];
            rec.extend(p.losses.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}
