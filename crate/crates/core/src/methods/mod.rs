//! Data-mixing methods driven by the trainer oracle.
//!
//! Every method returns a [`MethodResult`]; online methods also record, per
//! update, the `(A^t, b^t)` of the linear dynamic law their update corresponds to,
//! so the update can be replayed through the generic [`crate::egd::egd_step`].

mod aioli;
mod doge;
mod doremi;
mod offline;
mod skill_it;

pub use aioli::{learn_params, learn_params_ood, learn_params_sweep, run_aioli, run_aioli_ood, run_aioli_on, AioliParams};
pub use doge::{run_doge, DogeParams};
pub use doremi::{run_doremi, DoReMiParams};
pub use offline::{run_dml, run_grid_search, run_stratified, DmlParams};
pub use skill_it::{run_skill_it, SkillItParams};

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::budget::{BudgetLedger, RunPurpose};
use crate::trainer::{Split, Trainer, TrainerConfig, TrainerState, TrajectoryPoint};
use crate::{Error, InteractionMatrix, MixtureProportions, MixtureSchedule, Result};

/// Trajectory sampling interval for final runs.
pub const TRAJECTORY_EVERY: u64 = 100;

/// One proportion update of an online method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 1-based round (per-step methods: step index).
    pub round: usize,
    /// Trainer step at which the update happened.
    pub step: u64,
    pub a: InteractionMatrix,
    pub b: Vec<f64>,
    pub eta: f64,
    /// Proportions the update was applied to.
    pub p_before: MixtureProportions,
    /// Output of the method's update rule.
    pub p_after: MixtureProportions,
    /// Proportions actually trained on (after smoothing or windowing).
    pub p_trained: MixtureProportions,
    /// Un-normalized estimate, for methods that normalize before updating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<InteractionMatrix>,
}

/// One update of an out-of-domain method: a vector over training groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodTraceEntry {
    pub round: usize,
    pub step: u64,
    pub a: Vec<f64>,
    pub eta: f64,
    pub p_before: MixtureProportions,
    pub p_after: MixtureProportions,
}

/// Trainer state captured mid-run for parameter analyses.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: TrainerConfig,
    pub state: TrainerState,
}

impl Checkpoint {
    pub(crate) fn of(trainer: &Trainer) -> Self {
        Self { step: trainer.step(), config: trainer.config().clone(), state: trainer.checkpoint() }
    }

    pub fn trainer(&self) -> Result<Trainer> {
        Trainer::from_state(self.config.clone(), self.state.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    /// Per-round proportions of dynamic methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<MixtureSchedule>,
    /// Proportions used by the final run of static methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_proportions: Option<MixtureProportions>,
    pub final_test_losses: Vec<f64>,
    pub average_test_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_test_loss: Option<f64>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub trace: Vec<TraceEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ood_trace: Vec<OodTraceEntry>,
    pub ledger: BudgetLedger,
    /// Steps of the base method that preceded the dynamic phase (AIOLI `S_init`).
    #[serde(default)]
    pub init_steps: u64,
    #[serde(skip)]
    pub checkpoint: Option<Checkpoint>,
}

impl MethodResult {
    fn finish(method: &str, mut trainer: Trainer, ledger: BudgetLedger) -> Self {
        let final_test_losses = trainer.observe_losses(Split::Test);
        let average_test_loss = final_test_losses.iter().sum::<f64>() / final_test_losses.len() as f64;
        let ood_test_loss = trainer.observe_ood().ok();
        Self {
            method: method.into(),
            schedule: None,
            static_proportions: None,
            final_test_losses,
            average_test_loss,
            ood_test_loss,
            trajectory: trainer.take_trajectory(),
            trace: Vec::new(),
            ood_trace: Vec::new(),
            ledger,
            init_steps: 0,
            checkpoint: None,
        }
    }

    /// Proportions a restricted-setting follow-up should start from.
    pub fn learned_proportions(&self) -> Option<&MixtureProportions> {
        self.static_proportions
            .as_ref()
            .or_else(|| self.schedule.as_ref().and_then(|s| s.rounds().last()))
    }
}

/// `(A^t, b^t)` the method used at `round`.
pub fn extract_parameters(result: &MethodResult, round: usize) -> Result<(InteractionMatrix, Vec<f64>)> {
    result
        .trace
        .iter()
        .find(|e| e.round == round)
        .map(|e| (e.a.clone(), e.b.clone()))
        .ok_or(Error::RoundNotTraced(round))
}

/// Splits `total` steps into `rounds` near-equal lengths, earlier rounds taking the remainder.
pub fn split_steps(total: u64, rounds: usize) -> Vec<u64> {
    let r = rounds as u64;
    (0..r).map(|i| total / r + u64::from(i < total % r)).collect()
}

/// SplitMix64-style derivation of independent run seeds.
pub fn derive_seed(base: u64, purpose: RunPurpose, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(purpose as u64 + 1))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fresh trainer for an extra run, seeded independently of the final run.
pub(crate) fn extra_trainer(config: &TrainerConfig, purpose: RunPurpose, index: u64) -> Result<Trainer> {
    let cfg = config.clone().with_seed(derive_seed(config.seed, purpose, index));
    Ok(Trainer::new(cfg)?.with_purpose(purpose))
}

/// Fresh final-run trainer; every method shares the configured seed here.
pub(crate) fn final_trainer(config: &TrainerConfig) -> Result<Trainer> {
    let mut t = Trainer::new(config.clone())?;
    t.record_trajectory(TRAJECTORY_EVERY);
    Ok(t)
}

/// `p_j ∝ p_j exp(η s_j)` evaluated directly, as the published methods write it.
pub(crate) fn multiplicative_update(p: &MixtureProportions, scores: &[f64], eta: f64) -> Result<MixtureProportions> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidStepSize(eta));
    }
    let w: Vec<f64> = p.iter().zip(scores).map(|(pj, s)| pj * libm::exp(eta * s)).collect();
    MixtureProportions::normalized(w)
}

/// `(1 - c) p + c uniform`.
pub(crate) fn smooth_toward_uniform(p: &MixtureProportions, c: f64) -> Result<MixtureProportions> {
    if c == 0.0 {
        return Ok(p.clone());
    }
    let u = 1.0 / p.len() as f64;
    MixtureProportions::normalized(p.iter().map(|w| (1.0 - c) * w + c * u).collect())
}

pub(crate) fn check_positive(field: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::InvalidHyperParams { field, reason: "must be positive and finite" });
    }
    Ok(())
}

pub(crate) fn check_unit(field: &'static str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidHyperParams { field, reason: "must lie in [0, 1]" });
    }
    Ok(())
}
