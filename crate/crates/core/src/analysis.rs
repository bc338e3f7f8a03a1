//! Parameter analyses: optimal-`A` estimation, the similarity metric, greedy versus
//! exhaustive schedule search, and diagonal projections.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::budget::{BudgetLedger, BudgetMode};
use crate::laws::{fit_dynamic, DynamicTriple};
use crate::methods::{run_doge, run_stratified, DogeParams, MethodResult};
use crate::simplex::{candidate_sweep, SweepSpec};
use crate::stats::{cosine, pearson, spearman};
use crate::trainer::{Split, Trainer, TrainerConfig};
use crate::{Error, InteractionMatrix, MixtureProportions, MixtureSchedule, Result};

/// Default width of the trailing mean applied to per-step parameter traces.
pub const DEFAULT_SMOOTHING_WIDTH: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub value: f64,
    pub cosine: f64,
    pub spearman: f64,
}

fn normalized_column_sums(a: &InteractionMatrix, b: f64) -> Result<Vec<f64>> {
    let sums: Vec<f64> = a.column_sums().into_iter().map(|s| b * s).collect();
    let norm = libm::sqrt(sums.iter().map(|s| s * s).sum());
    if !(norm > 0.0) {
        return Err(Error::ZeroColumnSums);
    }
    Ok(sums.into_iter().map(|s| s / norm).collect())
}

/// `0.5·cos(ã, a*) + 0.5·spearman(ã, a*)` over L2-normalized column sums of `b·A_method` and `A*`.
pub fn similarity(a_method: &InteractionMatrix, b: f64, a_star: &InteractionMatrix) -> Result<SimilarityScore> {
    if a_method.dim() != a_star.dim() {
        return Err(Error::DimensionMismatch { expected: a_star.dim(), got: a_method.dim() });
    }
    let x = normalized_column_sums(a_method, b)?;
    let y = normalized_column_sums(a_star, 1.0)?;
    let c = cosine(&x, &y).clamp(-1.0, 1.0);
    let s = spearman(&x, &y).clamp(-1.0, 1.0);
    Ok(SimilarityScore { value: 0.5 * c + 0.5 * s, cosine: c, spearman: s })
}

/// Branches from the trainer's current state, trains each candidate for `horizon` steps and
/// fits the linear dynamic law to the observed drops. The trainer is left unchanged.
pub fn estimate_a_star(trainer: &mut Trainer, candidates: &[MixtureProportions], horizon: u64) -> Result<InteractionMatrix> {
    let token = trainer.snapshot();
    let mut triples = Vec::with_capacity(candidates.len());
    let mut outcome = Ok(());
    for p in candidates {
        trainer.restore(token)?;
        let before = trainer.observe_losses(Split::Val);
        if let Err(e) = trainer.train(p, horizon) {
            outcome = Err(e);
            break;
        }
        triples.push(DynamicTriple { before, p: p.clone(), after: trainer.observe_losses(Split::Val) });
    }
    trainer.restore(token)?;
    trainer.drop_snapshot(token);
    outcome?;
    fit_dynamic(&triples).map(|(a, _)| a)
}

/// Zeroes the off-diagonal entries.
pub fn diagonal_projection(a: &InteractionMatrix) -> InteractionMatrix {
    let m = a.dim();
    InteractionMatrix::diagonal(&(0..m).map(|i| a.get(i, i)).collect::<Vec<_>>())
}

/// Index of the largest column sum (first on ties).
pub fn argmax_column(a: &InteractionMatrix) -> usize {
    let sums = a.column_sums();
    (0..sums.len()).fold(0, |best, j| if sums[j] > sums[best] { j } else { best })
}

/// Trailing mean of `b·A` over the trace entries with round in `(round - width, round]`.
pub fn smoothed_parameters(result: &MethodResult, round: usize, width: usize) -> Result<InteractionMatrix> {
    let lo = round.saturating_sub(width);
    let scaled: Vec<InteractionMatrix> = result
        .trace
        .iter()
        .filter(|e| e.round > lo && e.round <= round)
        .map(|e| e.a.scale_rows(&e.b))
        .collect::<Result<_>>()?;
    if scaled.is_empty() {
        return Err(Error::RoundNotTraced(round));
    }
    InteractionMatrix::mean(scaled.iter())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyComparison {
    pub greedy: MixtureSchedule,
    pub greedy_loss: f64,
    pub exhaustive: MixtureSchedule,
    pub exhaustive_loss: f64,
    /// Greedy reached the exhaustive optimum.
    pub matched: bool,
    pub schedules_evaluated: usize,
}

/// Greedy per-round selection versus exhaustive search over all `|C|^T` schedules.
///
/// `round_steps[t]` is the length of round `t`. Schedules are scored by the average
/// validation loss observed after the last round. `limit` caps the schedule count.
pub fn greedy_vs_exhaustive<F>(
    factory: F,
    candidates: &[MixtureProportions],
    round_steps: &[u64],
    limit: usize,
) -> Result<GreedyComparison>
where
    F: Fn() -> Result<Trainer>,
{
    if candidates.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if round_steps.is_empty() {
        return Err(Error::InvalidHyperParams { field: "rounds", reason: "must be at least 1" });
    }
    let t = round_steps.len();
    let schedules = u32::try_from(t)
        .ok()
        .and_then(|t| candidates.len().checked_pow(t))
        .filter(|&n| n <= limit)
        .ok_or(Error::ComplexityLimitExceeded { schedules: (candidates.len() as u64).saturating_pow(t as u32), limit: limit as u64 })?;

    let mut trainer = factory()?;
    let mut greedy = Vec::with_capacity(t);
    for &steps in round_steps {
        let token = trainer.snapshot();
        let mut best: Option<(f64, usize)> = None;
        for (c, p) in candidates.iter().enumerate() {
            trainer.restore(token)?;
            trainer.train(p, steps)?;
            let loss = trainer.observe_average(Split::Val);
            if best.is_none_or(|(l, _)| loss < l) {
                best = Some((loss, c));
            }
        }
        let (_, c) = best.expect("non-empty candidates");
        trainer.restore(token)?;
        trainer.drop_snapshot(token);
        trainer.train(&candidates[c], steps)?;
        greedy.push(c);
    }

    let mut losses = vec![0.0; schedules];
    let mut root = factory()?;
    let mut path = Vec::with_capacity(t);
    exhaustive_dfs(&mut root, candidates, round_steps, &mut path, &mut losses)?;
    let (best_idx, exhaustive_loss) = losses
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, l)| if l < acc.1 { (i, l) } else { acc });
    let greedy_idx = greedy.iter().fold(0, |acc, &c| acc * candidates.len() + c);
    let greedy_loss = losses[greedy_idx];
    let to_schedule = |idx: usize| {
        let mut picks = vec![0; t];
        let mut rest = idx;
        for slot in picks.iter_mut().rev() {
            *slot = rest % candidates.len();
            rest /= candidates.len();
        }
        MixtureSchedule::new(picks.into_iter().map(|c| candidates[c].clone()).collect())
    };
    Ok(GreedyComparison {
        greedy: to_schedule(greedy_idx)?,
        greedy_loss,
        exhaustive: to_schedule(best_idx)?,
        exhaustive_loss,
        matched: greedy_loss <= exhaustive_loss,
        schedules_evaluated: schedules,
    })
}

/// Depth-first enumeration sharing prefixes through snapshots; `losses` is indexed by the
/// schedule read as a base-`|C|` number with the first round most significant.
fn exhaustive_dfs(
    trainer: &mut Trainer,
    candidates: &[MixtureProportions],
    round_steps: &[u64],
    path: &mut Vec<usize>,
    losses: &mut [f64],
) -> Result<()> {
    if path.len() == round_steps.len() {
        let idx = path.iter().fold(0, |acc, &c| acc * candidates.len() + c);
        losses[idx] = trainer.observe_average(Split::Val);
        return Ok(());
    }
    let steps = round_steps[path.len()];
    let token = trainer.snapshot();
    for (c, p) in candidates.iter().enumerate() {
        trainer.restore(token)?;
        trainer.train(p, steps)?;
        path.push(c);
        exhaustive_dfs(trainer, candidates, round_steps, path, losses)?;
        path.pop();
    }
    trainer.restore(token)?;
    trainer.drop_snapshot(token);
    Ok(())
}

/// One point of a similarity-versus-improvement study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPoint {
    pub label: alloc::string::String,
    pub similarity: f64,
    /// Stratified average test loss minus the method's (positive is better).
    pub improvement: f64,
}

/// Pearson correlation between similarity and improvement across study points.
pub fn study_correlation(points: &[StudyPoint]) -> Option<f64> {
    let s: Vec<f64> = points.iter().map(|p| p.similarity).collect();
    let d: Vec<f64> = points.iter().map(|p| p.improvement).collect();
    pearson(&s, &d)
}

/// Settings for scoring DoGE's parameters against checkpoint-swept `A*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyParams {
    pub doge: DogeParams,
    /// Proxy step at which parameters are compared.
    pub probe_step: u64,
    pub smoothing_width: usize,
    /// Steps each `A*` sweep branch trains.
    pub horizon: u64,
    pub sweep: SweepSpec,
}

impl Default for StudyParams {
    fn default() -> Self {
        Self {
            doge: DogeParams { eta: 1.0, smoothing: 0.0, checkpoint_step: None },
            probe_step: 1000,
            smoothing_width: DEFAULT_SMOOTHING_WIDTH,
            horizon: 100,
            sweep: SweepSpec::Dirichlet { alpha: 1.0, count: 12, oversample: 4, seed: 7 },
        }
    }
}

/// Similarity and improvement of one DoGE run, both measured on `config`.
pub fn doge_study_run(config: &TrainerConfig, steps: u64, params: &StudyParams) -> Result<(f64, f64)> {
    let m = config.num_groups();
    let candidates = candidate_sweep(m, &params.sweep)?;
    let stratified = run_stratified(config, steps)?.average_test_loss;
    let doge = DogeParams { checkpoint_step: Some(params.probe_step), ..params.doge };
    let mut ledger = BudgetLedger::new(steps, BudgetMode::Unrestricted);
    let result = run_doge(config, steps, BudgetMode::Unrestricted, &mut ledger, &doge)?;
    let checkpoint = result.checkpoint.as_ref().ok_or(Error::RoundNotTraced(params.probe_step as usize))?;
    let a_star = estimate_a_star(&mut checkpoint.trainer()?, candidates.candidates(), params.horizon)?;
    let a_method = smoothed_parameters(&result, params.probe_step as usize, params.smoothing_width)?;
    let score = similarity(&a_method, 1.0, &a_star)?;
    Ok((score.value, stratified - result.average_test_loss))
}

/// Seed-averaged study point for one configuration.
pub fn doge_study_point(label: &str, config: &TrainerConfig, steps: u64, seeds: &[u64], params: &StudyParams) -> Result<StudyPoint> {
    if seeds.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let (mut sim, mut imp) = (0.0, 0.0);
    for &seed in seeds {
        let (s, d) = doge_study_run(&config.clone().with_seed(seed), steps, params)?;
        sim += s;
        imp += d;
    }
    let n = seeds.len() as f64;
    Ok(StudyPoint { label: label.into(), similarity: sim / n, improvement: imp / n })
}
