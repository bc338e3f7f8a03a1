//! AIOLI: estimates the dynamic interaction matrix online and follows it with EGD.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{check_positive, derive_seed, final_trainer, split_steps, Checkpoint, MethodResult, OodTraceEntry, TraceEntry};
use crate::budget::{BudgetLedger, RunPurpose};
use crate::egd::{egd_step, egd_step_scores, ema_interaction, ema_vector, normalize_interaction, normalize_vector};
use crate::linalg::lstsq;
use crate::simplex::interleave_order_with;
use crate::trainer::{Split, Trainer, TrainerConfig};
use crate::{Error, InteractionMatrix, MixtureProportions, MixtureSchedule, Result, SimRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AioliParams {
    pub rounds: usize,
    /// Sweeps per round; each round runs `m * k` learning intervals.
    pub k: usize,
    /// One-hot smoothing of the learning mixtures.
    pub epsilon: f64,
    pub eta: f64,
    /// Fraction of each round spent learning the interaction matrix.
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Steps trained on `init_proportions` before the first round.
    pub init_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_proportions: Option<MixtureProportions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_step: Option<u64>,
}

impl Default for AioliParams {
    fn default() -> Self {
        Self {
            rounds: 20,
            k: 4,
            epsilon: 0.75,
            eta: 0.2,
            delta: 0.128,
            gamma: None,
            init_steps: 0,
            init_proportions: None,
            checkpoint_step: None,
        }
    }
}

impl AioliParams {
    pub fn validate(&self, m: usize, steps: u64) -> Result<()> {
        check_positive("eta", self.eta)?;
        if self.rounds == 0 {
            return Err(Error::InvalidHyperParams { field: "rounds", reason: "must be at least 1" });
        }
        if self.k == 0 {
            return Err(Error::InvalidHyperParams { field: "k", reason: "must be at least 1" });
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::EpsilonOutOfRange(self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidHyperParams { field: "delta", reason: "must lie in (0, 1)" });
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::GammaOutOfRange(g));
            }
        }
        if self.init_steps > steps {
            return Err(Error::InvalidHyperParams { field: "init_steps", reason: "exceeds the run length" });
        }
        if self.init_steps > 0 {
            match &self.init_proportions {
                None => return Err(Error::InvalidHyperParams { field: "init_proportions", reason: "required when init_steps > 0" }),
                Some(p) if p.len() != m => return Err(Error::DimensionMismatch { expected: m, got: p.len() }),
                _ => {}
            }
        }
        let shortest = split_steps(steps - self.init_steps, self.rounds).into_iter().min().unwrap_or(0);
        if learning_steps(shortest, self.delta, m * self.k) == 0 {
            return Err(Error::InvalidHyperParams { field: "delta", reason: "rounds too short for one step per learning interval" });
        }
        Ok(())
    }
}

/// Learning steps in a round of `len` steps: `δ·len` rounded down to a multiple of `intervals`.
fn learning_steps(len: u64, delta: f64, intervals: usize) -> u64 {
    let k = intervals as u64;
    (libm::floor(delta * len as f64) as u64 / k) * k
}

fn learning_mixtures(m: usize, epsilon: f64) -> Result<Vec<MixtureProportions>> {
    if epsilon == 1.0 {
        return Err(Error::SingularP);
    }
    (0..m).map(|i| MixtureProportions::smoothed_onehot(i, m, epsilon)).collect()
}

/// Solves `P x_i = β_i` for every target `i`, where row `j` of `P` is mixture `j`.
/// `beta[j][i]` is the drop of target `i` attributed to mixture `j`. Returns `x[i][l]`.
fn solve_rows(mixtures: &[MixtureProportions], beta: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let m = mixtures.len();
    let design: Vec<Vec<f64>> = mixtures.iter().map(|p| p.as_slice().to_vec()).collect();
    let sol = lstsq(&design, beta)?;
    if sol.rank < m {
        return Err(Error::SingularP);
    }
    let targets = beta[0].len();
    Ok((0..targets).map(|i| (0..m).map(|l| sol.coef[(l, i)]).collect()).collect())
}

fn check_interval_split(m: usize, k: usize, steps: u64) -> Result<u64> {
    let intervals = (m * k) as u64;
    if k == 0 {
        return Err(Error::InvalidHyperParams { field: "k", reason: "must be at least 1" });
    }
    if steps == 0 || steps % intervals != 0 {
        return Err(Error::IndivisibleSteps { steps, intervals });
    }
    Ok(steps / intervals)
}

/// Trains `steps` steps in `m * k` interleaved intervals of smoothed one-hot mixtures and
/// returns the interaction matrix implied by the per-mixture validation-loss drops.
pub fn learn_params(trainer: &mut Trainer, steps: u64, k: usize, epsilon: f64, order_seed: u64) -> Result<InteractionMatrix> {
    let m = trainer.num_groups();
    let interval = check_interval_split(m, k, steps)?;
    let mixtures = learning_mixtures(m, epsilon)?;
    let order = interleave_order_with(m, k, &mut SimRng::seed_from_u64(order_seed))?;
    let mut beta = vec![vec![0.0; m]; m];
    let mut prev = trainer.observe_losses(Split::Val);
    for j in order {
        trainer.train(&mixtures[j], interval)?;
        let now = trainer.observe_losses(Split::Val);
        for i in 0..m {
            beta[j][i] += prev[i] - now[i];
        }
        prev = now;
    }
    for row in beta.iter_mut() {
        for v in row.iter_mut() {
            *v /= k as f64;
        }
    }
    let rows = solve_rows(&mixtures, &beta)?;
    InteractionMatrix::from_rows(&rows)
}

/// Out-of-domain variant of [`learn_params`]: one vector over training groups.
pub fn learn_params_ood(trainer: &mut Trainer, steps: u64, k: usize, epsilon: f64, order_seed: u64) -> Result<Vec<f64>> {
    let m = trainer.num_groups();
    let interval = check_interval_split(m, k, steps)?;
    let mixtures = learning_mixtures(m, epsilon)?;
    let order = interleave_order_with(m, k, &mut SimRng::seed_from_u64(order_seed))?;
    let mut beta = vec![vec![0.0]; m];
    let mut prev = trainer.observe_ood()?;
    for j in order {
        trainer.train(&mixtures[j], interval)?;
        let now = trainer.observe_ood()?;
        beta[j][0] += prev - now;
        prev = now;
    }
    for row in beta.iter_mut() {
        row[0] /= k as f64;
    }
    let mut rows = solve_rows(&mixtures, &beta)?;
    Ok(rows.swap_remove(0))
}

/// Sweep estimator: trains each mixture for `steps` from the current state in a separate
/// branch and solves for `A`. The trainer is left where it started.
pub fn learn_params_sweep(trainer: &mut Trainer, mixtures: &[MixtureProportions], steps: u64) -> Result<InteractionMatrix> {
    let m = trainer.num_groups();
    if mixtures.len() < m {
        return Err(Error::InsufficientSamples { needed: m, got: mixtures.len() });
    }
    let token = trainer.snapshot();
    let mut beta = Vec::with_capacity(mixtures.len());
    let mut outcome = Ok(());
    for p in mixtures {
        trainer.restore(token)?;
        let before = trainer.observe_losses(Split::Val);
        if let Err(e) = trainer.train(p, steps) {
            outcome = Err(e);
            break;
        }
        let after = trainer.observe_losses(Split::Val);
        beta.push(before.iter().zip(&after).map(|(b, a)| b - a).collect::<Vec<f64>>());
    }
    trainer.restore(token)?;
    trainer.drop_snapshot(token);
    outcome?;
    let rows = solve_rows(mixtures, &beta).map_err(|e| match e {
        Error::SingularP => Error::SingularDesign { rank: 0, m },
        e => e,
    })?;
    InteractionMatrix::from_rows(&rows)
}

/// Trace and schedule of the dynamic phase.
#[derive(Debug, Clone, PartialEq)]
pub struct AioliRun {
    pub trace: Vec<TraceEntry>,
    pub schedule: MixtureSchedule,
    pub checkpoint: Option<Checkpoint>,
}

/// Runs the `T` rounds of AIOLI for `steps` steps on an existing trainer.
pub fn run_aioli_on(trainer: &mut Trainer, steps: u64, params: &AioliParams, seed: u64) -> Result<AioliRun> {
    let m = trainer.num_groups();
    let dynamic = AioliParams { init_steps: 0, init_proportions: None, ..params.clone() };
    dynamic.validate(m, steps)?;
    let intervals = m * params.k;
    let p0 = MixtureProportions::uniform(m)?;
    let mut p = p0.clone();
    let mut ema: Option<InteractionMatrix> = None;
    let mut trace = Vec::with_capacity(params.rounds);
    let mut trained = Vec::with_capacity(params.rounds);
    let mut checkpoint = None;

    for (t, len) in split_steps(steps, params.rounds).into_iter().enumerate() {
        if checkpoint.is_none() && params.checkpoint_step.is_some_and(|c| trainer.step() >= c) {
            checkpoint = Some(Checkpoint::of(trainer));
        }
        let start = trainer.step();
        let learn = learning_steps(len, params.delta, intervals);
        let order_seed = derive_seed(seed, RunPurpose::Final, t as u64);
        let estimate = learn_params(trainer, learn, params.k, params.epsilon, order_seed)?;
        let normalized = match normalize_interaction(&estimate) {
            Ok(a) => a,
            Err(Error::ZeroMatrix) => InteractionMatrix::zeros(m),
            Err(e) => return Err(e),
        };
        let (a, base) = match params.gamma {
            None => (normalized, p.clone()),
            Some(g) => {
                let next = ema_interaction(ema.as_ref(), &normalized, g)?;
                ema = Some(next.clone());
                (next, p0.clone())
            }
        };
        let b = vec![1.0; m];
        let next = egd_step(&base, &a, &b, params.eta)?;
        trainer.train(&next, len - learn)?;
        trace.push(TraceEntry {
            round: t + 1,
            step: start,
            a,
            b,
            eta: params.eta,
            p_before: base,
            p_after: next.clone(),
            p_trained: next.clone(),
            estimate: Some(estimate),
        });
        trained.push(next.clone());
        p = next;
    }
    Ok(AioliRun { trace, schedule: MixtureSchedule::new(trained)?, checkpoint })
}

fn start_final(config: &TrainerConfig, steps: u64, params: &AioliParams) -> Result<Trainer> {
    params.validate(config.num_groups(), steps)?;
    let mut trainer = final_trainer(config)?;
    if params.init_steps > 0 {
        let p = params.init_proportions.as_ref().expect("validated");
        trainer.train(p, params.init_steps)?;
    }
    Ok(trainer)
}

pub fn run_aioli(config: &TrainerConfig, steps: u64, params: &AioliParams) -> Result<MethodResult> {
    let mut trainer = start_final(config, steps, params)?;
    let run = run_aioli_on(&mut trainer, steps - params.init_steps, params, config.seed)?;
    let mut r = MethodResult::finish("aioli", trainer, BudgetLedger::with_allowance(steps, 0));
    r.schedule = Some(run.schedule);
    r.trace = run.trace;
    r.checkpoint = run.checkpoint;
    r.init_steps = params.init_steps;
    Ok(r)
}

/// AIOLI driven by a single out-of-domain validation loss.
pub fn run_aioli_ood(config: &TrainerConfig, steps: u64, params: &AioliParams) -> Result<MethodResult> {
    if config.ood.is_none() {
        return Err(Error::MissingOodChannel);
    }
    let m = config.num_groups();
    let mut trainer = start_final(config, steps, params)?;
    let intervals = m * params.k;
    let p0 = MixtureProportions::uniform(m)?;
    let mut p = p0.clone();
    let mut ema: Option<Vec<f64>> = None;
    let mut trace = Vec::with_capacity(params.rounds);
    let mut trained = Vec::with_capacity(params.rounds);

    for (t, len) in split_steps(steps - params.init_steps, params.rounds).into_iter().enumerate() {
        let start = trainer.step();
        let learn = learning_steps(len, params.delta, intervals);
        let order_seed = derive_seed(config.seed, RunPurpose::Final, t as u64);
        let estimate = learn_params_ood(&mut trainer, learn, params.k, params.epsilon, order_seed)?;
        let normalized = match normalize_vector(&estimate) {
            Ok(a) => a,
            Err(Error::ZeroMatrix) => vec![0.0; m],
            Err(e) => return Err(e),
        };
        let (a, base) = match params.gamma {
            None => (normalized, p.clone()),
            Some(g) => {
                let next = ema_vector(ema.as_deref(), &normalized, g)?;
                ema = Some(next.clone());
                (next, p0.clone())
            }
        };
        let next = egd_step_scores(&base, &a, params.eta)?;
        trainer.train(&next, len - learn)?;
        trace.push(OodTraceEntry { round: t + 1, step: start, a, eta: params.eta, p_before: base, p_after: next.clone() });
        trained.push(next.clone());
        p = next;
    }

    let mut r = MethodResult::finish("aioli_ood", trainer, BudgetLedger::with_allowance(steps, 0));
    r.schedule = Some(MixtureSchedule::new(trained)?);
    r.ood_trace = trace;
    r.init_steps = params.init_steps;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::OodChannel;

    fn linear(a: &[Vec<f64>]) -> TrainerConfig {
        TrainerConfig::linear(vec![6.0; a.len()], InteractionMatrix::from_rows(a).unwrap(), 0.01)
    }

    #[test]
    fn learn_params_recovers_linear_matrix() {
        let a = vec![vec![0.002, 0.0005], vec![-0.0003, 0.0012]];
        let mut t = Trainer::new(linear(&a)).unwrap();
        let est = learn_params(&mut t, 800, 4, 0.5, 3).unwrap();
        // each interval lasts 100 steps
        let truth = InteractionMatrix::from_rows(&a).unwrap().scaled(100.0);
        assert!(est.max_abs_diff(&truth) < 1e-10, "{est:?}");
        assert_eq!(t.step(), 800);
    }

    #[test]
    fn learn_params_three_groups() {
        let a = vec![vec![0.002, 0.0005, 0.0], vec![0.0001, 0.0012, 0.0004], vec![0.0, -0.0002, 0.0009]];
        let mut t = Trainer::new(linear(&a)).unwrap();
        let est = learn_params(&mut t, 1200, 4, 0.75, 9).unwrap();
        let truth = InteractionMatrix::from_rows(&a).unwrap().scaled(100.0);
        assert!(est.max_abs_diff(&truth) < 1e-9);
    }

    #[test]
    fn learn_params_errors() {
        let mut t = Trainer::new(linear(&[vec![0.001, 0.0], vec![0.0, 0.001]])).unwrap();
        assert_eq!(learn_params(&mut t, 96, 4, 1.0, 0), Err(Error::SingularP));
        assert_eq!(learn_params(&mut t, 10, 4, 0.5, 0), Err(Error::IndivisibleSteps { steps: 10, intervals: 8 }));
        assert_eq!(learn_params(&mut t, 0, 4, 0.5, 0), Err(Error::IndivisibleSteps { steps: 0, intervals: 8 }));
        assert_eq!(t.step(), 0);
    }

    #[test]
    fn sweep_estimator_leaves_state() {
        let a = vec![vec![0.002, 0.0005], vec![-0.0003, 0.0012]];
        let mut t = Trainer::new(linear(&a)).unwrap();
        t.train(&MixtureProportions::uniform(2).unwrap(), 50).unwrap();
        let before = t.checkpoint();
        let mixtures: Vec<MixtureProportions> = (0..2).map(|i| MixtureProportions::smoothed_onehot(i, 2, 0.2).unwrap()).collect();
        let est = learn_params_sweep(&mut t, &mixtures, 40).unwrap();
        assert!(est.max_abs_diff(&InteractionMatrix::from_rows(&a).unwrap().scaled(40.0)) < 1e-10);
        assert_eq!(t.checkpoint(), before);
    }

    #[test]
    fn aioli_moves_toward_larger_column_sum() {
        let cfg = linear(&[vec![0.002, 0.0], vec![0.001, 0.0004]]);
        let r = run_aioli(&cfg, 2000, &AioliParams::default()).unwrap();
        let last = r.schedule.as_ref().unwrap().rounds().last().unwrap().clone();
        assert!(last[0] > 0.6, "{last:?}");
        assert_eq!(r.trace.len(), 20);
        assert_eq!(r.ledger.consumed(), 0);
    }

    #[test]
    fn symmetric_dynamics_keep_uniform() {
        let cfg = linear(&[vec![0.001, 0.0002], vec![0.0002, 0.001]]);
        let r = run_aioli(&cfg, 2000, &AioliParams::default()).unwrap();
        for p in r.schedule.unwrap().rounds() {
            assert!((p[0] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn ema_updates_from_initial_proportions() {
        let cfg = linear(&[vec![0.002, 0.0], vec![0.001, 0.0004]]);
        let params = AioliParams { gamma: Some(0.5), ..AioliParams::default() };
        let r = run_aioli(&cfg, 2000, &params).unwrap();
        let u = MixtureProportions::uniform(2).unwrap();
        for e in &r.trace {
            assert_eq!(e.p_before, u);
        }
    }

    #[test]
    fn init_phase_runs_first() {
        let cfg = linear(&[vec![0.002, 0.0], vec![0.001, 0.0004]]);
        let params = AioliParams {
            init_steps: 500,
            init_proportions: Some(MixtureProportions::new(vec![0.9, 0.1]).unwrap()),
            ..AioliParams::default()
        };
        let r = run_aioli(&cfg, 2500, &params).unwrap();
        assert_eq!(r.trace[0].step, 500);
        assert_eq!(r.trace[0].p_before, MixtureProportions::uniform(2).unwrap());
        assert_eq!(r.init_steps, 500);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let cfg = linear(&[vec![0.001, 0.0], vec![0.0, 0.001]]);
        let short = run_aioli(&cfg, 100, &AioliParams::default()).unwrap_err();
        assert!(matches!(short, Error::InvalidHyperParams { field: "delta", .. }));
        let missing = AioliParams { init_steps: 10, ..AioliParams::default() };
        assert!(matches!(run_aioli(&cfg, 2000, &missing), Err(Error::InvalidHyperParams { field: "init_proportions", .. })));
        let eps = AioliParams { epsilon: 1.0, ..AioliParams::default() };
        assert_eq!(run_aioli(&cfg, 2000, &eps).unwrap_err(), Error::EpsilonOutOfRange(1.0));
    }

    #[test]
    fn ood_prefers_relevant_group() {
        let cfg = linear(&[vec![0.001, 0.0, 0.0], vec![0.0, 0.001, 0.0], vec![0.0, 0.0, 0.001]])
            .with_ood(OodChannel { initial_loss: 6.0, interaction: vec![0.0, 0.0015, 0.0002] });
        let params = AioliParams { delta: 0.288, ..AioliParams::default() };
        let r = run_aioli_ood(&cfg, 3000, &params).unwrap();
        let last = r.schedule.unwrap().rounds().last().unwrap().clone();
        assert!(last[1] > last[0] && last[1] > last[2]);
        for e in &r.ood_trace {
            let replay = egd_step_scores(&e.p_before, &e.a, e.eta).unwrap();
            assert!(replay.distance(&e.p_after) < 1e-12);
        }
        assert_eq!(run_aioli_ood(&linear(&[vec![0.001, 0.0], vec![0.0, 0.001]]), 2000, &params).unwrap_err(), Error::MissingOodChannel);
    }
}
