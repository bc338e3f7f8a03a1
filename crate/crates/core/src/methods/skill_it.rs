//! Skill-It: a skills graph learned from per-group runs, reweighted by current losses.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_positive, extra_trainer, final_trainer, multiplicative_update, split_steps, Checkpoint, MethodResult, TraceEntry};
use crate::budget::{allocation, BudgetLedger, BudgetMode, BudgetedMethod, RunPurpose};
use crate::trainer::{Split, TrainerConfig};
use crate::{Error, InteractionMatrix, MixtureProportions, MixtureSchedule, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillItParams {
    pub rounds: usize,
    pub eta: f64,
    /// Trailing window of past proportions averaged for training.
    pub window: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_step: Option<u64>,
}

impl Default for SkillItParams {
    fn default() -> Self {
        Self { rounds: 10, eta: 0.2, window: 3, checkpoint_step: None }
    }
}

impl SkillItParams {
    fn validate(&self) -> Result<()> {
        check_positive("eta", self.eta)?;
        if self.rounds == 0 {
            return Err(Error::InvalidHyperParams { field: "rounds", reason: "must be at least 1" });
        }
        if self.window == 0 {
            return Err(Error::InvalidHyperParams { field: "window", reason: "must be at least 1" });
        }
        Ok(())
    }
}

/// Skills graph `A^SG_ij`: relative validation-loss decrease of group `i` after training only on `j`.
fn skills_graph(config: &TrainerConfig, steps_per_run: u64, ledger: &mut BudgetLedger) -> Result<InteractionMatrix> {
    let m = config.num_groups();
    let mut graph = InteractionMatrix::zeros(m);
    for j in 0..m {
        let mut t = extra_trainer(config, RunPurpose::SkillsGraph, j as u64)?;
        let start = t.observe_losses(Split::Val);
        ledger.charge(RunPurpose::SkillsGraph, steps_per_run)?;
        t.train(&MixtureProportions::onehot(j, m)?, steps_per_run)?;
        let end = t.observe_losses(Split::Val);
        for i in 0..m {
            graph.set(i, j, (start[i] - end[i]) / start[i]);
        }
    }
    Ok(graph)
}

pub fn run_skill_it(
    config: &TrainerConfig,
    steps: u64,
    mode: BudgetMode,
    ledger: &mut BudgetLedger,
    params: &SkillItParams,
) -> Result<MethodResult> {
    params.validate()?;
    let m = config.num_groups();
    let alloc = allocation(BudgetedMethod::SkillIt, m, steps, mode);
    ledger.check(alloc.total())?;
    let graph = skills_graph(config, alloc.steps_per_run, ledger)?;

    let mut trainer = final_trainer(config)?;
    let mut checkpoint = None;
    let mut p = MixtureProportions::uniform(m)?;
    let mut window: VecDeque<MixtureProportions> = VecDeque::with_capacity(params.window);
    let mut trace = Vec::with_capacity(params.rounds);
    let mut trained = Vec::with_capacity(params.rounds);

    for (t, len) in split_steps(steps, params.rounds).into_iter().enumerate() {
        if checkpoint.is_none() && params.checkpoint_step.is_some_and(|c| trainer.step() >= c) {
            checkpoint = Some(Checkpoint::of(&trainer));
        }
        let val = trainer.observe_losses(Split::Val);
        // p_j ∝ p_j exp(η Σ_i A^SG_ij L_i)
        let scores: Vec<f64> = (0..m).map(|j| (0..m).map(|i| graph.get(i, j) * val[i]).sum()).collect();
        let next = multiplicative_update(&p, &scores, params.eta)?;
        if window.len() == params.window {
            window.pop_front();
        }
        window.push_back(next.clone());
        let p_train = MixtureProportions::mean(window.iter())?;
        trainer.train(&p_train, len)?;
        trace.push(TraceEntry {
            round: t + 1,
            step: trainer.step() - len,
            a: graph.scale_rows(&val)?,
            b: vec![1.0; m],
            eta: params.eta,
            p_before: p,
            p_after: next.clone(),
            p_trained: p_train.clone(),
            estimate: None,
        });
        trained.push(p_train);
        p = next;
    }

    let mut r = MethodResult::finish("skill_it", trainer, ledger.clone());
    r.schedule = Some(MixtureSchedule::new(trained)?);
    r.trace = trace;
    r.checkpoint = checkpoint;
    Ok(r)
}
