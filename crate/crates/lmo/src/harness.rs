//! Runs experiment cells, sweeps and analyses.
//!
//! Every (method, seed) cell owns its trainers; cells run on a rayon pool and
//! are reassembled in config order, so reports do not depend on scheduling.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use lmo_core::analysis::{doge_study_point, greedy_vs_exhaustive, study_correlation, GreedyComparison};
use lmo_core::budget::{allocation, BudgetLedger, BudgetMode};
use lmo_core::methods::{
    run_aioli, run_aioli_ood, run_dml, run_doge, run_doremi, run_grid_search, run_skill_it, run_stratified, AioliParams,
    MethodResult,
};
use lmo_core::trainer::{Split, Trainer, TrainerConfig};
use rayon::prelude::*;

use crate::config::{AnalysisConfig, CandidateSpec, ExperimentConfig, MethodSpec, SweepConfig};
use crate::error::{HarnessError, Result};
use crate::io::{render_trajectory, SweepRow};
use crate::report::{
    write_file, BaselineRun, CellReport, CellStatus, ExperimentReport, LedgerAudit, MethodAggregate, StudyReport, StudyRow,
};

/// A report plus the full results behind its successful cells.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    /// Aligned with `report.cells`.
    pub results: Vec<Option<MethodResult>>,
}

impl ExperimentOutcome {
    /// Writes `{method}_seed{seed}.csv` per successful cell.
    pub fn write_trajectories(&self, dir: &Path) -> Result<()> {
        for (cell, result) in self.report.cells.iter().zip(&self.results) {
            if let Some(r) = result {
                let name = format!("{}_seed{}.csv", cell.method.replace(['/', '\\'], "_"), cell.seed);
                write_file(&dir.join(name), &render_trajectory(&r.trajectory)?)?;
            }
        }
        Ok(())
    }
}

fn with_pool<T: Send>(parallelism: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = parallelism {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

fn isolate<T>(f: impl FnOnce() -> lmo_core::Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(match panic.downcast_ref::<&str>() {
            Some(s) => format!("panicked: {s}"),
            None => match panic.downcast_ref::<String>() {
                Some(s) => format!("panicked: {s}"),
                None => "panicked".to_string(),
            },
        }),
    }
}

/// Runs one method on one simulator config.
pub fn run_method(spec: &MethodSpec, sim: &TrainerConfig, steps: u64, mode: BudgetMode) -> lmo_core::Result<MethodResult> {
    let m = sim.num_groups();
    let mut ledger = BudgetLedger::new(steps, mode);
    match spec {
        MethodSpec::Stratified => run_stratified(sim, steps),
        MethodSpec::GridSearch { candidates } => run_grid_search(sim, steps, &candidates.build(m)?, mode, &mut ledger),
        MethodSpec::Dml { candidates, params } => run_dml(sim, steps, &candidates.build(m)?, mode, &mut ledger, params),
        MethodSpec::SkillIt(p) => run_skill_it(sim, steps, mode, &mut ledger, p),
        MethodSpec::DoReMi(p) => run_doremi(sim, steps, mode, &mut ledger, p),
        MethodSpec::Doge(p) => run_doge(sim, steps, mode, &mut ledger, p),
        MethodSpec::Aioli { params, base: None } => run_aioli(sim, steps, params),
        MethodSpec::Aioli { params, base: Some(base) } => {
            let budgeted = base.kind().budgeted().ok_or(lmo_core::Error::InvalidConfig("base method spends no budget".into()))?;
            let base_result = run_method(base, sim, steps, mode)?;
            let p_init = base_result
                .learned_proportions()
                .cloned()
                .ok_or(lmo_core::Error::InvalidConfig("base method learned no proportions".into()))?;
            let params = AioliParams {
                init_steps: allocation(budgeted, m, steps, mode).steps_per_run,
                init_proportions: Some(p_init),
                ..params.clone()
            };
            let mut r = run_aioli(sim, steps, &params)?;
            r.method = format!("aioli+{}", base_result.method);
            r.ledger = base_result.ledger;
            Ok(r)
        }
        MethodSpec::AioliOod(p) => run_aioli_ood(sim, steps, p),
    }
}

fn audit(ledger: &BudgetLedger, allowance: u64) -> LedgerAudit {
    let itemized: u64 = ledger.itemized().iter().map(|(_, n)| n).sum();
    LedgerAudit {
        allowance,
        within_allowance: ledger.consumed() <= allowance,
        itemization_consistent: itemized == ledger.consumed(),
    }
}

fn cell_report(method: &str, seed: u64, outcome: &std::result::Result<MethodResult, String>, baseline: Option<f64>, allowance: u64) -> CellReport {
    match outcome {
        Ok(r) => CellReport {
            method: method.to_string(),
            seed,
            status: CellStatus::Ok,
            error: None,
            avg_test_loss: Some(r.average_test_loss),
            final_test_losses: r.final_test_losses.clone(),
            ood_test_loss: r.ood_test_loss,
            delta_vs_stratified: baseline.map(|b| r.average_test_loss - b),
            extra_steps_used: r.ledger.consumed(),
            extra_steps: r.ledger.itemized().into_iter().map(|(p, n)| (p.name().to_string(), n)).collect::<BTreeMap<_, _>>(),
            init_steps: r.init_steps,
            proportions: r.learned_proportions().map(|p| p.as_slice().to_vec()),
            schedule: r.schedule.as_ref().map(|s| s.rounds().iter().map(|p| p.as_slice().to_vec()).collect()),
            audit: audit(&r.ledger, allowance),
        },
        Err(e) => CellReport {
            method: method.to_string(),
            seed,
            status: CellStatus::Failed,
            error: Some(e.clone()),
            avg_test_loss: None,
            final_test_losses: Vec::new(),
            ood_test_loss: None,
            delta_vs_stratified: None,
            extra_steps_used: 0,
            extra_steps: BTreeMap::new(),
            init_steps: 0,
            proportions: None,
            schedule: None,
            audit: LedgerAudit { allowance, within_allowance: true, itemization_consistent: true },
        },
    }
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 { 0.0 } else { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    (Some(mean), Some(std))
}

fn aggregate(method: &str, cells: &[CellReport]) -> MethodAggregate {
    let ok: Vec<&CellReport> = cells.iter().filter(|c| c.is_ok()).collect();
    let losses: Vec<f64> = ok.iter().filter_map(|c| c.avg_test_loss).collect();
    let deltas: Vec<f64> = ok.iter().filter_map(|c| c.delta_vs_stratified).collect();
    let (mean, std) = mean_std(&losses);
    MethodAggregate {
        method: method.to_string(),
        succeeded: ok.len(),
        failed: cells.len() - ok.len(),
        mean_avg_test_loss: mean,
        std_avg_test_loss: std,
        mean_delta_vs_stratified: mean_std(&deltas).0,
        max_extra_steps_used: ok.iter().map(|c| c.extra_steps_used).max().unwrap_or(0),
        ledger_ok: ok.iter().all(|c| c.audit.ok()),
    }
}

/// Executes every (method, seed) cell plus a stratified baseline per seed.
///
/// A failing cell is recorded with its error; other cells are unaffected.
pub fn run_experiment(config: &ExperimentConfig, parallelism: Option<usize>) -> Result<ExperimentOutcome> {
    let steps = config.steps;
    let mode = config.budget;
    let allowance = mode.allowance(steps);
    let sim_for = |seed: u64| config.simulator.clone().with_seed(seed);
    let tasks: Vec<(usize, u64)> =
        (0..config.methods.len()).flat_map(|i| config.seeds.iter().map(move |&s| (i, s))).collect();

    let (baseline, outcomes) = with_pool(parallelism, || {
        let baseline: Vec<std::result::Result<f64, String>> = config
            .seeds
            .par_iter()
            .map(|&seed| isolate(|| run_stratified(&sim_for(seed), steps).map(|r| r.average_test_loss)))
            .collect();
        let outcomes: Vec<std::result::Result<MethodResult, String>> = tasks
            .par_iter()
            .map(|&(i, seed)| isolate(|| run_method(&config.methods[i].spec, &sim_for(seed), steps, mode)))
            .collect();
        (baseline, outcomes)
    })?;

    let baseline_of: BTreeMap<u64, f64> =
        config.seeds.iter().zip(&baseline).filter_map(|(s, b)| b.as_ref().ok().map(|v| (*s, *v))).collect();
    let cells: Vec<CellReport> = tasks
        .iter()
        .zip(&outcomes)
        .map(|(&(i, seed), o)| cell_report(&config.methods[i].label, seed, o, baseline_of.get(&seed).copied(), allowance))
        .collect();
    let n_seeds = config.seeds.len();
    let aggregates = config
        .methods
        .iter()
        .enumerate()
        .map(|(i, e)| aggregate(&e.label, &cells[i * n_seeds..(i + 1) * n_seeds]))
        .collect();
    let report = ExperimentReport {
        steps,
        budget: mode,
        allowance,
        num_groups: config.num_groups(),
        seeds: config.seeds.clone(),
        methods: config.methods.iter().map(|e| e.label.clone()).collect(),
        baseline: config
            .seeds
            .iter()
            .zip(&baseline)
            .map(|(&seed, b)| BaselineRun { seed, avg_test_loss: b.as_ref().ok().copied(), error: b.as_ref().err().cloned() })
            .collect(),
        cells,
        aggregates,
    };
    Ok(ExperimentOutcome { report, results: outcomes.into_iter().map(|o| o.ok()).collect() })
}

/// Trains every candidate from scratch for each seed and records validation losses.
pub fn run_sweep(config: &SweepConfig, parallelism: Option<usize>) -> Result<Vec<SweepRow>> {
    let m = config.simulator.num_groups();
    let candidates = config.candidates.build(m)?;
    let tasks: Vec<(u64, usize)> =
        config.seeds.iter().flat_map(|&s| (0..candidates.len()).map(move |c| (s, c))).collect();
    let rows = with_pool(parallelism, || {
        tasks
            .par_iter()
            .map(|&(seed, c)| {
                let p = &candidates.candidates()[c];
                let mut t = Trainer::new(config.simulator.clone().with_seed(seed))?;
                t.train(p, config.steps)?;
                Ok(SweepRow { seed, candidate: c, p: p.as_slice().to_vec(), losses: t.observe_losses(Split::Val) })
            })
            .collect::<lmo_core::Result<Vec<_>>>()
    })??;
    Ok(rows)
}

/// DoGE similarity-versus-improvement table over gradient-noise levels.
pub fn run_similarity_study(config: &AnalysisConfig, parallelism: Option<usize>) -> Result<StudyReport> {
    let study = config
        .similarity
        .as_ref()
        .ok_or_else(|| HarnessError::validation("similarity", "missing similarity section"))?;
    let rows = with_pool(parallelism, || {
        study
            .gradient_noise
            .par_iter()
            .map(|&g| {
                let label = format!("gradient_noise={g}");
                let sim = config.simulator.clone().with_gradient_noise(g);
                let point = doge_study_point(&label, &sim, config.steps, &study.seeds, &study.params)?;
                Ok(StudyRow {
                    method: "doge".into(),
                    config: point.label,
                    gradient_noise: g,
                    similarity: point.similarity,
                    delta_vs_stratified: -point.improvement,
                })
            })
            .collect::<lmo_core::Result<Vec<_>>>()
    })??;
    let points: Vec<_> = rows
        .iter()
        .map(|r| lmo_core::analysis::StudyPoint {
            label: r.config.clone(),
            similarity: r.similarity,
            improvement: -r.delta_vs_stratified,
        })
        .collect();
    Ok(StudyReport { correlation: study_correlation(&points), rows })
}

pub fn run_greedy(config: &AnalysisConfig) -> Result<GreedyComparison> {
    let g = config.greedy.as_ref().ok_or_else(|| HarnessError::validation("greedy", "missing greedy section"))?;
    let m = config.simulator.num_groups();
    let candidates = g.candidates.clone().unwrap_or_else(|| CandidateSpec::default_for(m)).build(m)?;
    Ok(greedy_vs_exhaustive(
        || Trainer::new(config.simulator.clone()),
        candidates.candidates(),
        &g.round_steps,
        g.limit,
    )?)
}
