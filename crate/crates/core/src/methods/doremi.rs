//! DoReMi: excess loss of a proxy run over a reference run drives per-step reweighting.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_positive, check_unit, extra_trainer, final_trainer, multiplicative_update, smooth_toward_uniform, Checkpoint, MethodResult, TraceEntry};
use crate::budget::{allocation, BudgetLedger, BudgetMode, BudgetedMethod, RunPurpose};
use crate::trainer::{Split, TrainerConfig};
use crate::{InteractionMatrix, MixtureProportions, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoReMiParams {
    pub eta: f64,
    /// Mixing weight toward uniform applied after every update.
    pub smoothing: f64,
    /// Proxy step at which to capture a checkpoint.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_step: Option<u64>,
}

impl Default for DoReMiParams {
    fn default() -> Self {
        Self { eta: 0.01, smoothing: 1e-3, checkpoint_step: None }
    }
}

pub fn run_doremi(
    config: &TrainerConfig,
    steps: u64,
    mode: BudgetMode,
    ledger: &mut BudgetLedger,
    params: &DoReMiParams,
) -> Result<MethodResult> {
    check_positive("eta", params.eta)?;
    check_unit("smoothing", params.smoothing)?;
    let m = config.num_groups();
    let alloc = allocation(BudgetedMethod::DoReMi, m, steps, mode);
    ledger.check(alloc.total())?;
    let n = alloc.steps_per_run;
    let u = MixtureProportions::uniform(m)?;

    let mut reference = extra_trainer(config, RunPurpose::Reference, 0)?;
    ledger.charge(RunPurpose::Reference, n)?;
    reference.train(&u, n)?;
    let ref_loss = reference.observe_losses(Split::Train);

    let mut proxy = extra_trainer(config, RunPurpose::Proxy, 0)?;
    ledger.charge(RunPurpose::Proxy, n)?;
    let mut checkpoint = None;
    let mut p = u;
    let mut trace = Vec::with_capacity(n as usize);
    for t in 0..n {
        if checkpoint.is_none() && params.checkpoint_step.is_some_and(|c| proxy.step() >= c) {
            checkpoint = Some(Checkpoint::of(&proxy));
        }
        let loss = proxy.observe_losses(Split::Train);
        let excess: Vec<f64> = loss.iter().zip(&ref_loss).map(|(l, r)| (l - r).max(0.0)).collect();
        let raw = multiplicative_update(&p, &excess, params.eta)?;
        let used = smooth_toward_uniform(&raw, params.smoothing)?;
        proxy.train(&used, 1)?;
        trace.push(TraceEntry {
            round: t as usize + 1,
            step: t,
            a: InteractionMatrix::diagonal(&excess),
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
    let mut r = MethodResult::finish("doremi", trainer, ledger.clone());
    r.static_proportions = Some(learned);
    r.trace = trace;
    r.checkpoint = checkpoint;
    Ok(r)
}
