//! Stratified sampling, grid search and data mixing laws (DML).

use alloc::vec::Vec;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{extra_trainer, final_trainer, MethodResult};
use crate::budget::{allocation, BudgetLedger, BudgetMode, BudgetedMethod, RunPurpose};
use crate::laws::{eval_static, fit_static, StaticFitConfig, StaticSample};
use crate::simplex::{sample_dirichlet, CandidateSet};
use crate::trainer::{Split, TrainerConfig};
use crate::{Error, MixtureProportions, Result, SimRng};

pub fn run_stratified(config: &TrainerConfig, steps: u64) -> Result<MethodResult> {
    let mut trainer = final_trainer(config)?;
    let p = MixtureProportions::uniform(trainer.num_groups())?;
    trainer.train(&p, steps)?;
    let mut r = MethodResult::finish("stratified", trainer, BudgetLedger::with_allowance(steps, 0));
    r.static_proportions = Some(p);
    Ok(r)
}

struct SweepOutcome {
    samples: Vec<StaticSample>,
    steps_per_run: u64,
}

/// One shortened (or full) run per candidate, charged to the ledger up front.
fn sweep(
    config: &TrainerConfig,
    candidates: &CandidateSet,
    steps_per_run: u64,
    ledger: &mut BudgetLedger,
) -> Result<SweepOutcome> {
    let m = config.num_groups();
    if candidates.num_groups() != m {
        return Err(Error::DimensionMismatch { expected: m, got: candidates.num_groups() });
    }
    if steps_per_run == 0 {
        return Err(Error::BudgetExceeded { requested: 1, remaining: 0 });
    }
    ledger.check(candidates.len() as u64 * steps_per_run)?;
    let mut samples = Vec::with_capacity(candidates.len());
    for (idx, p) in candidates.candidates().iter().enumerate() {
        let mut t = extra_trainer(config, RunPurpose::Sweep, idx as u64)?;
        ledger.charge(RunPurpose::Sweep, steps_per_run)?;
        t.train(p, steps_per_run)?;
        samples.push(StaticSample { p: p.clone(), losses: t.observe_losses(Split::Val) });
    }
    Ok(SweepOutcome { samples, steps_per_run })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn final_static_run(name: &str, config: &TrainerConfig, steps: u64, p: MixtureProportions, ledger: BudgetLedger, init_steps: u64) -> Result<MethodResult> {
    let mut trainer = final_trainer(config)?;
    trainer.train(&p, steps)?;
    let mut r = MethodResult::finish(name, trainer, ledger);
    r.static_proportions = Some(p);
    r.init_steps = init_steps;
    Ok(r)
}

/// Sweeps every candidate and retrains the one with the lowest average validation loss.
pub fn run_grid_search(
    config: &TrainerConfig,
    steps: u64,
    candidates: &CandidateSet,
    mode: BudgetMode,
    ledger: &mut BudgetLedger,
) -> Result<MethodResult> {
    let per_run = allocation(BudgetedMethod::GridSearch, config.num_groups(), steps, mode).steps_per_run;
    let out = sweep(config, candidates, per_run, ledger)?;
    let best = out
        .samples
        .iter()
        .enumerate()
        .min_by(|a, b| mean(&a.1.losses).total_cmp(&mean(&b.1.losses)).then(a.0.cmp(&b.0)))
        .map(|(_, s)| s.p.clone())
        .expect("non-empty candidate set");
    final_static_run("grid_search", config, steps, best, ledger.clone(), out.steps_per_run)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmlParams {
    pub fit: StaticFitConfig,
    /// Dirichlet(1) points scored by the fitted law, in addition to the candidates.
    pub dense_samples: usize,
    pub dense_seed: u64,
}

impl Default for DmlParams {
    fn default() -> Self {
        Self { fit: StaticFitConfig::default(), dense_samples: 10_000, dense_seed: 0 }
    }
}

/// Sweeps the candidates, fits the log-linear static law and retrains on its minimizer.
pub fn run_dml(
    config: &TrainerConfig,
    steps: u64,
    candidates: &CandidateSet,
    mode: BudgetMode,
    ledger: &mut BudgetLedger,
    params: &DmlParams,
) -> Result<MethodResult> {
    let m = config.num_groups();
    if candidates.len() < m + 1 {
        return Err(Error::InsufficientSamples { needed: m + 1, got: candidates.len() });
    }
    let per_run = allocation(BudgetedMethod::Dml, m, steps, mode).steps_per_run;
    let minimum = (m as u64 + 1) * per_run.max(1);
    if per_run == 0 || ledger.check(minimum).is_err() {
        return Err(Error::BudgetExceeded { requested: minimum, remaining: ledger.remaining() });
    }
    let out = sweep(config, candidates, per_run, ledger)?;
    let (law, _) = fit_static(&out.samples, &params.fit)?;

    let mut rng = SimRng::seed_from_u64(params.dense_seed);
    let mut pool: Vec<MixtureProportions> = candidates.candidates().to_vec();
    for _ in 0..params.dense_samples {
        pool.push(MixtureProportions::normalized(sample_dirichlet(1.0, m, &mut rng)?)?);
    }
    let mut best: Option<(f64, MixtureProportions)> = None;
    for p in pool {
        let predicted = mean(&eval_static(&law, &p)?);
        if best.as_ref().is_none_or(|(v, _)| predicted < *v) {
            best = Some((predicted, p));
        }
    }
    let (_, p) = best.expect("non-empty pool");
    final_static_run("dml", config, steps, p, ledger.clone(), out.steps_per_run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::{candidate_sweep, SweepSpec};
    use crate::trainer::Dynamics;
    use crate::{InteractionMatrix, laws::StaticLawParams};
    use alloc::vec;

    fn symmetric() -> TrainerConfig {
        let a = InteractionMatrix::from_rows(&[vec![0.002, 0.0005], vec![0.0005, 0.002]]).unwrap();
        TrainerConfig::linear(vec![5.0, 5.0], a, 0.01)
    }

    #[test]
    fn stratified_symmetry_and_closed_form() {
        let r = run_stratified(&symmetric(), 1000).unwrap();
        assert!((r.final_test_losses[0] - r.final_test_losses[1]).abs() < 1e-12);
        assert_eq!(r.ledger.consumed(), 0);

        let a = 0.001;
        let cfg = TrainerConfig::linear(vec![5.0, 5.0], InteractionMatrix::diagonal(&[a, a]), 0.01);
        let r = run_stratified(&cfg, 2000).unwrap();
        assert!((r.final_test_losses[0] - (5.0 - 2000.0 * a / 2.0)).abs() < 1e-9);
        let avg = (r.final_test_losses[0] + r.final_test_losses[1]) / 2.0;
        assert_eq!(r.average_test_loss, avg);
    }

    #[test]
    fn grid_search_picks_exhaustive_optimum() {
        // clamping makes the interior optimal: group 0 bottoms out at p0 = 0.6
        let cfg = TrainerConfig::linear(vec![3.0, 3.0], InteractionMatrix::diagonal(&[0.001, 0.0004]), 0.6);
        let cands = candidate_sweep(2, &SweepSpec::Grid).unwrap();
        let steps = 4000;
        // exhaustive oracle: final average loss for each candidate, closed form
        let oracle = |p0: f64| {
            let l0 = (3.0 - 0.001 * p0 * steps as f64).max(0.6);
            let l1 = (3.0 - 0.0004 * (1.0 - p0) * steps as f64).max(0.6);
            (l0 + l1) / 2.0
        };
        let best = cands
            .candidates()
            .iter()
            .min_by(|a, b| oracle(a[0]).total_cmp(&oracle(b[0])))
            .unwrap()
            .clone();
        let mut ledger = BudgetLedger::new(steps, BudgetMode::Unrestricted);
        let r = run_grid_search(&cfg, steps, &cands, BudgetMode::Unrestricted, &mut ledger).unwrap();
        assert_eq!(r.static_proportions.as_ref().unwrap(), &best);
        assert_eq!(ledger.consumed_for(RunPurpose::Sweep), 9 * steps);
    }

    #[test]
    fn grid_search_restricted_allocation() {
        let cands = candidate_sweep(2, &SweepSpec::Dirichlet { alpha: 1.0, count: 10, oversample: 4, seed: 1 }).unwrap();
        let mut ledger = BudgetLedger::new(5000, BudgetMode::Restricted);
        run_grid_search(&symmetric(), 5000, &cands, BudgetMode::Restricted, &mut ledger).unwrap();
        assert_eq!(ledger.consumed_for(RunPurpose::Sweep), 10 * 250);
    }

    #[test]
    fn grid_search_single_candidate() {
        let only = MixtureProportions::new(vec![0.3, 0.7]).unwrap();
        let cands = CandidateSet::explicit(vec![only.clone()]).unwrap();
        let mut ledger = BudgetLedger::new(500, BudgetMode::Unrestricted);
        let r = run_grid_search(&symmetric(), 500, &cands, BudgetMode::Unrestricted, &mut ledger).unwrap();
        assert_eq!(r.static_proportions.unwrap(), only);
    }

    fn law_config(law: StaticLawParams, horizon: u64) -> TrainerConfig {
        TrainerConfig {
            initial_losses: crate::trainer::SplitLosses::same(vec![0.0, 0.0]),
            dynamics: Dynamics::LogLinear { law, horizon },
            loss_floor: 0.1,
            noise_sigma: 0.0,
            gradient_noise_sigma: 0.0,
            seed: 0,
            ood: None,
        }
    }

    #[test]
    fn dml_beats_every_candidate_on_its_own_law() {
        let law = StaticLawParams::new(
            InteractionMatrix::from_rows(&[vec![2.0, 0.3], vec![0.2, 1.0]]).unwrap(),
            vec![2.0, 3.0],
            vec![1.0, 1.5],
        )
        .unwrap();
        let steps = 200;
        let cfg = law_config(law, steps);
        let cands = candidate_sweep(2, &SweepSpec::Grid).unwrap();
        let mut ledger = BudgetLedger::new(steps, BudgetMode::Unrestricted);
        let params = DmlParams { dense_samples: 2000, ..DmlParams::default() };
        let r = run_dml(&cfg, steps, &cands, BudgetMode::Unrestricted, &mut ledger, &params).unwrap();
        let chosen = r.static_proportions.unwrap();
        let (fitted, _) = {
            let samples: Vec<StaticSample> = cands
                .candidates()
                .iter()
                .map(|p| StaticSample { p: p.clone(), losses: eval_static(match &cfg.dynamics { Dynamics::LogLinear { law, .. } => law, _ => unreachable!() }, p).unwrap() })
                .collect();
            fit_static(&samples, &params.fit).unwrap()
        };
        let predicted = mean(&eval_static(&fitted, &chosen).unwrap());
        for p in cands.candidates() {
            let observed = mean(&eval_static(match &cfg.dynamics { Dynamics::LogLinear { law, .. } => law, _ => unreachable!() }, p).unwrap());
            assert!(predicted <= observed + 1e-9, "{predicted} > {observed}");
        }
    }

    #[test]
    fn dml_symmetric_law_picks_center() {
        let law = StaticLawParams::new(
            InteractionMatrix::from_rows(&[vec![1.5, 0.0], vec![0.0, 1.5]]).unwrap(),
            vec![2.0, 2.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let cfg = law_config(law, 100);
        let cands = candidate_sweep(2, &SweepSpec::Grid).unwrap();
        let mut ledger = BudgetLedger::new(100, BudgetMode::Unrestricted);
        let params = DmlParams { dense_samples: 2000, ..DmlParams::default() };
        let r = run_dml(&cfg, 100, &cands, BudgetMode::Unrestricted, &mut ledger, &params).unwrap();
        assert!((r.static_proportions.unwrap()[0] - 0.5).abs() < 0.05);
    }

    #[test]
    fn dml_budget_too_small() {
        let cands = candidate_sweep(2, &SweepSpec::Grid).unwrap();
        let mut ledger = BudgetLedger::new(1000, BudgetMode::Custom(5));
        let err = run_dml(&symmetric(), 1000, &cands, BudgetMode::Custom(5), &mut ledger, &DmlParams::default()).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        assert_eq!(ledger.consumed(), 0);
    }
}
