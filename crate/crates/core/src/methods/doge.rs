//! DoGE: a proxy run reweights groups by gradient alignment with the validation objective.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_positive, check_unit, extra_trainer, final_trainer, multiplicative_update, smooth_toward_uniform, Checkpoint, MethodResult, TraceEntry};
use crate::budget::{allocation, BudgetLedger, BudgetMode, BudgetedMethod, RunPurpose};
use crate::trainer::TrainerConfig;
use crate::{MixtureProportions, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DogeParams {
    pub eta: f64,
    pub smoothing: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_step: Option<u64>,
}

impl Default for DogeParams {
    fn default() -> Self {
        Self { eta: 0.01, smoothing: 0.0, checkpoint_step: None }
    }
}

pub fn run_doge(
    config: &TrainerConfig,
    steps: u64,
    mode: BudgetMode,
    ledger: &mut BudgetLedger,
    params: &DogeParams,
) -> Result<MethodResult> {
    check_positive("eta", params.eta)?;
    check_unit("smoothing", params.smoothing)?;
    let m = config.num_groups();
    let alloc = allocation(BudgetedMethod::DoGE, m, steps, mode);
    ledger.check(alloc.total())?;
    let n = alloc.steps_per_run;

    let mut proxy = extra_trainer(config, RunPurpose::Proxy, 0)?;
    ledger.charge(RunPurpose::Proxy, n)?;
    let mut checkpoint = None;
    let mut p = MixtureProportions::uniform(m)?;
    let mut trace = Vec::with_capacity(n as usize);
    for t in 0..n {
        if checkpoint.is_none() && params.checkpoint_step.is_some_and(|c| proxy.step() >= c) {
            checkpoint = Some(Checkpoint::of(&proxy));
        }
        let g = proxy.gradient_alignment();
        // <grad L_train_j, sum_i grad L_val_i>
        let scores: Vec<f64> = (0..m).map(|j| (0..m).map(|i| g.get(i, j)).sum()).collect();
        let raw = multiplicative_update(&p, &scores, params.eta)?;
        let used = smooth_toward_uniform(&raw, params.smoothing)?;
        proxy.train(&used, 1)?;
        trace.push(TraceEntry {
            round: t as usize + 1,
            step: t,
            a: g,
            b: vec![1.0; m],
            eta: params.eta,
            p_before: p,
            p_after: raw,
            p_trained: used.clone(),
            estimate: None,
        });
        p = used;
    }
    let learned = MixtureProportions::mean(trace.iter().map(|e| &e.p_trained))?;

    let mut trainer = final_trainer(config)?;
    trainer.train(&learned, steps)?;
    let mut r = MethodResult::finish("doge", trainer, ledger.clone());
    r.static_proportions = Some(learned);
    r.trace = trace;
    r.checkpoint = checkpoint;
    Ok(r)
}
