//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lmo::config::AnalysisConfig;
use lmo::core::analysis::{argmax_column, diagonal_projection, greedy_vs_exhaustive, similarity};
use lmo::core::budget::{allocation, BudgetLedger, BudgetMode, BudgetedMethod};
use lmo::core::egd::egd_step;
use lmo::core::laws::{eval_dynamic, eval_static, fit_dynamic, fit_static, DynamicTriple, StaticFitConfig, StaticLawParams, StaticSample};
use lmo::core::methods::{
    extract_parameters, learn_params, run_aioli, run_doge, run_doremi, run_skill_it, run_stratified, AioliParams, DoReMiParams,
    DogeParams, MethodResult, SkillItParams,
};
use lmo::core::simplex::{candidate_sweep, sample_dirichlet, SweepSpec};
use lmo::core::trainer::{Dynamics, DynamicsSchedule, DynamicsSegment, Split, Trainer, TrainerConfig};
use lmo::core::{InteractionMatrix, MixtureProportions, SimRng};
use lmo::harness::run_similarity_study;
use lmo::report::ExperimentReport;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct Criterion {
    id: u32,
    title: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, title: "EGD closed form", limit: Duration::from_secs(1), run: egd_closed_form },
        Criterion { id: 2, title: "existing methods are EGD on traced parameters", limit: Duration::from_secs(10), run: method_equivalence },
        Criterion { id: 3, title: "LearnParams exactness and noisy similarity", limit: Duration::from_secs(30), run: learn_params_exactness },
        Criterion { id: 4, title: "mixing-law fitting fidelity", limit: Duration::from_secs(60), run: law_fitting },
        Criterion { id: 5, title: "AIOLI beats stratified near the static optimum", limit: Duration::from_secs(60), run: aioli_asymmetric },
        Criterion { id: 6, title: "greedy versus exhaustive schedules", limit: Duration::from_secs(120), run: greedy_exhaustive },
        Criterion { id: 7, title: "similarity metric properties", limit: Duration::from_secs(5), run: similarity_metric },
        Criterion { id: 8, title: "training budget allocations", limit: Duration::from_secs(1), run: budget_table },
        Criterion { id: 9, title: "diagonal versus full argmax flip", limit: Duration::from_secs(1), run: argmax_flip },
        Criterion { id: 10, title: "determinism, isolation and exit codes", limit: Duration::from_secs(30), run: determinism_isolation },
        Criterion { id: 11, title: "parameter accuracy correlates with improvement", limit: Duration::from_secs(300), run: accuracy_correlation },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if elapsed <= c.limit {
                Ok(d)
            } else {
                Err(format!("{d}; exceeded {:?}", c.limit))
            }
        });
        match outcome {
            Ok(d) => println!("PASS criterion {}: {} ({d}; {elapsed:.2?})", c.id, c.title),
            Err(e) => {
                failed += 1;
                println!("FAIL criterion {}: {} ({e}; {elapsed:.2?})", c.id, c.title);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_simplex(rng: &mut SimRng, m: usize) -> MixtureProportions {
    MixtureProportions::normalized((0..m).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
}

fn random_matrix(rng: &mut SimRng, m: usize, lo: f64, hi: f64) -> InteractionMatrix {
    InteractionMatrix::from_row_major(m, (0..m * m).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `p_j exp(η Σ_i b_i A_ij)` normalized, evaluated term by term.
fn direct_egd(p: &[f64], a: &InteractionMatrix, b: &[f64], eta: f64) -> Vec<f64> {
    let m = p.len();
    let w: Vec<f64> = (0..m).map(|j| p[j] * (eta * (0..m).map(|i| b[i] * a.get(i, j)).sum::<f64>()).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter().map(|x| x / z).collect()
}

fn egd_closed_form() -> Outcome {
    let mut rng = SimRng::seed_from_u64(1);
    let mut worst_step = 0.0f64;
    for _ in 0..1000 {
        let m = rng.random_range(2..=8);
        let p = random_simplex(&mut rng, m);
        let a = random_matrix(&mut rng, m, -1.0, 1.0);
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
        let eta = rng.random_range(0.01..1.0);
        let got = ok(egd_step(&p, &a, &b, eta))?;
        worst_step = worst_step.max(max_diff(got.as_slice(), &direct_egd(p.as_slice(), &a, &b, eta)));
    }
    ensure!(worst_step <= 1e-12, "single step off by {worst_step:e}");

    let mut worst_unrolled = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(2..=8);
        let rounds = rng.random_range(1..=20);
        let eta = rng.random_range(0.01..1.0);
        let p0 = random_simplex(&mut rng, m);
        let mut p = p0.clone();
        let mut exponent = vec![0.0; m];
        for _ in 0..rounds {
            let a = random_matrix(&mut rng, m, -1.0, 1.0);
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            p = ok(egd_step(&p, &a, &b, eta))?;
            for (j, e) in exponent.iter_mut().enumerate() {
                *e += (0..m).map(|i| b[i] * a.get(i, j)).sum::<f64>();
            }
        }
        let top = exponent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = (0..m).map(|j| p0[j] * (eta * (exponent[j] - top)).exp()).collect();
        let z: f64 = w.iter().sum();
        let closed: Vec<f64> = w.iter().map(|x| x / z).collect();
        worst_unrolled = worst_unrolled.max(max_diff(p.as_slice(), &closed));
    }
    ensure!(worst_unrolled <= 1e-10, "unrolled form off by {worst_unrolled:e}");
    Ok(format!("1000 steps max err {worst_step:.1e}, 200 unrolled runs max err {worst_unrolled:.1e}"))
}

fn random_simulator(rng: &mut SimRng) -> TrainerConfig {
    let m = rng.random_range(2..=4);
    let mut a = InteractionMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            a.set(i, j, if i == j { rng.random_range(5e-4..3e-3) } else { rng.random_range(-2e-4..5e-4) });
        }
    }
    let initial = (0..m).map(|_| rng.random_range(2.0..6.0)).collect();
    TrainerConfig::linear(initial, a, 0.01)
        .with_noise(rng.random_range(0.0..0.02))
        .with_gradient_noise(rng.random_range(0.0..0.01))
        .with_seed(rng.random())
}

/// Largest gap between each traced update and `egd_step` on its extracted parameters.
fn replay_error(r: &MethodResult) -> Result<f64, String> {
    ensure!(!r.trace.is_empty(), "{} produced no trace", r.method);
    let mut worst = 0.0f64;
    for e in &r.trace {
        let (a, b) = ok(extract_parameters(r, e.round))?;
        let replay = ok(egd_step(&e.p_before, &a, &b, e.eta))?;
        worst = worst.max(replay.distance(&e.p_after));
    }
    Ok(worst)
}

fn method_equivalence() -> Outcome {
    let mut rng = SimRng::seed_from_u64(2);
    let steps = 200;
    let mode = BudgetMode::Unrestricted;
    let mut worst = [0.0f64; 3];
    let mut updates = [0usize; 3];
    for _ in 0..100 {
        let cfg = random_simulator(&mut rng);
        let skill = SkillItParams { eta: rng.random_range(0.05..1.0), window: rng.random_range(1..=3), ..SkillItParams::default() };
        let doremi = DoReMiParams { eta: rng.random_range(0.005..0.5), ..DoReMiParams::default() };
        let doge = DogeParams { eta: rng.random_range(0.005..1.0), ..DogeParams::default() };
        let results = [
            ok(run_skill_it(&cfg, steps, mode, &mut BudgetLedger::new(steps, mode), &skill))?,
            ok(run_doremi(&cfg, steps, mode, &mut BudgetLedger::new(steps, mode), &doremi))?,
            ok(run_doge(&cfg, steps, mode, &mut BudgetLedger::new(steps, mode), &doge))?,
        ];
        for (k, r) in results.iter().enumerate() {
            worst[k] = worst[k].max(replay_error(r)?);
            updates[k] += r.trace.len();
        }
    }
    for (k, name) in ["skill_it", "doremi", "doge"].iter().enumerate() {
        ensure!(worst[k] <= 1e-12, "{name} replay off by {:e}", worst[k]);
    }
    Ok(format!(
        "100 states each; max replay err skill_it {:.1e} ({} updates), doremi {:.1e} ({}), doge {:.1e} ({})",
        worst[0], updates[0], worst[1], updates[1], worst[2], updates[2]
    ))
}

/// Positive interaction matrix with well separated column sums.
fn structured_interaction(m: usize) -> InteractionMatrix {
    let mut a = InteractionMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            a.set(i, j, if i == j { 1e-3 * (1.0 + 0.5 * j as f64) } else { 5e-5 * ((3 * i + j) % 4) as f64 });
        }
    }
    a
}

fn learn_params_exactness() -> Outcome {
    let interval = 50u64;
    let mut worst_rel = 0.0f64;
    for m in [2usize, 3, 7] {
        let a = structured_interaction(m);
        for k in [1usize, 4] {
            let mut t = ok(Trainer::new(TrainerConfig::linear(vec![100.0; m], a.clone(), 0.01)))?;
            let est = ok(learn_params(&mut t, (m * k) as u64 * interval, k, 0.75, 3))?;
            let truth = a.scaled(interval as f64);
            let scale = truth.entries().iter().fold(0.0f64, |s, x| s.max(x.abs()));
            let rel = est.max_abs_diff(&truth) / scale;
            ensure!(rel <= 1e-9, "m={m} k={k}: relative error {rel:e}");
            worst_rel = worst_rel.max(rel);
        }
    }
    let mut sims = Vec::new();
    for m in [2usize, 3, 7] {
        let a = structured_interaction(m);
        let mut total = 0.0;
        for seed in 0..20u64 {
            let cfg = TrainerConfig::linear(vec![100.0; m], a.clone(), 0.01).with_noise(1e-3).with_seed(seed);
            let mut t = ok(Trainer::new(cfg))?;
            let est = ok(learn_params(&mut t, (m * 4) as u64 * interval, 4, 0.75, seed))?;
            total += ok(similarity(&est, 1.0, &a))?.value;
        }
        let mean = total / 20.0;
        ensure!(mean >= 0.95, "m={m}: mean similarity {mean} under noise");
        sims.push(format!("m={m} {mean:.4}"));
    }
    Ok(format!("noiseless max rel err {worst_rel:.1e}; sigma=1e-3 mean similarity {}", sims.join(", ")))
}

fn law_fitting() -> Outcome {
    let mut rng = SimRng::seed_from_u64(4);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut r2 = Vec::new();
    for m in [2usize, 3] {
        let a = random_matrix(&mut rng, m, 0.5, 3.0);
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..3.0)).collect();
        let c: Vec<f64> = (0..m).map(|_| rng.random_range(1.0..3.0)).collect();
        let law = ok(StaticLawParams::new(a, b, c))?;
        let points: Vec<MixtureProportions> = (0..30)
            .map(|_| MixtureProportions::normalized(sample_dirichlet(1.0, m, &mut rng).unwrap()).unwrap())
            .collect();
        for sigma in [0.0, 0.01] {
            let samples: Vec<StaticSample> = points
                .iter()
                .map(|p| {
                    let losses = eval_static(&law, p).unwrap().into_iter().map(|l| l + sigma * noise.sample(&mut rng) / 0.01).collect();
                    StaticSample { p: p.clone(), losses }
                })
                .collect();
            let (_, report) = ok(fit_static(&samples, &StaticFitConfig::default()))?;
            let need = if sigma == 0.0 { 0.999 } else { 0.95 };
            ensure!(report.r_squared >= need, "m={m} sigma={sigma}: R^2 {} < {need}", report.r_squared);
            r2.push(format!("m={m} sigma={sigma} R^2={:.4}", report.r_squared));
        }
    }
    let mut worst = 0.0f64;
    for m in [2usize, 3, 7] {
        let a = random_matrix(&mut rng, m, -0.5, 1.0);
        let triples: Vec<DynamicTriple> = (0..2 * m)
            .map(|_| {
                let before: Vec<f64> = (0..m).map(|_| rng.random_range(5.0..10.0)).collect();
                let p = random_simplex(&mut rng, m);
                let after = eval_dynamic(&a, &before, &p).unwrap();
                DynamicTriple { before, p, after }
            })
            .collect();
        let (fit, _) = ok(fit_dynamic(&triples))?;
        let err = fit.max_abs_diff(&a);
        ensure!(err <= 1e-9, "m={m}: dynamic fit off by {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("{}; dynamic max err {worst:.1e}", r2.join(", ")))
}

fn aioli_asymmetric() -> Outcome {
    let steps = 5000;
    let cfg = TrainerConfig::linear(vec![30.0, 30.0], InteractionMatrix::diagonal(&[0.002, 0.0005]), 0.01);
    let mut best = (f64::INFINITY, 0.0);
    for k in 1..=99 {
        let p1 = k as f64 / 100.0;
        let mut t = ok(Trainer::new(cfg.clone()))?;
        t.train(&ok(MixtureProportions::new(vec![p1, 1.0 - p1]))?, steps).map_err(|e| e.to_string())?;
        let loss = t.observe_average(Split::Test);
        // closed form for diagonal linear dynamics above the floor
        let oracle = 0.5 * ((30.0 - 0.002 * 5000.0 * p1) + (30.0 - 0.0005 * 5000.0 * (1.0 - p1)));
        ensure!((loss - oracle).abs() <= 1e-9, "grid point {p1}: trainer {loss} vs closed form {oracle}");
        if loss < best.0 {
            best = (loss, p1);
        }
    }
    let mut worst_ratio = 0.0f64;
    for seed in 0..5 {
        let cfg = cfg.clone().with_seed(seed);
        let strat = ok(run_stratified(&cfg, steps))?.average_test_loss;
        let aioli = ok(run_aioli(&cfg, steps, &AioliParams::default()))?.average_test_loss;
        ensure!(aioli < strat, "seed {seed}: aioli {aioli} not below stratified {strat}");
        let ratio = aioli / best.0;
        ensure!(ratio <= 1.05, "seed {seed}: aioli {aioli} is {ratio:.4} of the grid optimum {}", best.0);
        worst_ratio = worst_ratio.max(ratio);
    }
    Ok(format!("grid optimum p1={} loss {:.4}; worst aioli/optimum {worst_ratio:.4} over 5 seeds", best.1, best.0))
}

fn brute_force_best(cfg: &TrainerConfig, grid: &[MixtureProportions], rounds: &[u64]) -> Result<f64, String> {
    let mut best = f64::INFINITY;
    let n = grid.len();
    for idx in 0..n.pow(rounds.len() as u32) {
        let mut t = ok(Trainer::new(cfg.clone()))?;
        let mut code = idx;
        let mut choice = Vec::new();
        for _ in rounds {
            choice.push(code % n);
            code /= n;
        }
        choice.reverse();
        for (c, &len) in choice.iter().zip(rounds) {
            ok(t.train(&grid[*c], len))?;
        }
        best = best.min(t.observe_average(Split::Val));
    }
    Ok(best)
}

fn greedy_exhaustive() -> Outcome {
    let grid = ok(candidate_sweep(2, &SweepSpec::Grid))?.into_inner();
    let rounds = [500u64, 500];
    let a = ok(InteractionMatrix::from_rows(&[vec![0.001, 0.0002], vec![0.0001, 0.0006]]))?;
    let steady = TrainerConfig::linear(vec![3.0, 3.0], a, 0.01);
    let cmp = ok(greedy_vs_exhaustive(|| Trainer::new(steady.clone()), &grid, &rounds, 1000))?;
    ensure!(cmp.schedules_evaluated == 81, "evaluated {} schedules", cmp.schedules_evaluated);
    ensure!(cmp.matched && cmp.greedy_loss == cmp.exhaustive_loss, "time-invariant greedy {} vs exhaustive {}", cmp.greedy_loss, cmp.exhaustive_loss);
    let oracle = brute_force_best(&steady, &grid, &rounds)?;
    ensure!((oracle - cmp.exhaustive_loss).abs() <= 1e-12, "exhaustive {} vs brute force {oracle}", cmp.exhaustive_loss);
    let single = ok(greedy_vs_exhaustive(|| Trainer::new(steady.clone()), &grid, &[1000], 1000))?;
    ensure!(single.matched, "T=1 greedy differs from exhaustive");

    let round = 1000u64;
    let per_step = |rows: [[f64; 2]; 2]| InteractionMatrix::from_rows(&[rows[0].to_vec(), rows[1].to_vec()]).map(|a| a.scaled(1.0 / round as f64));
    let early = ok(per_step([[0.148, 0.011], [-0.013, 0.087]]))?;
    let late = ok(per_step([[0.015, 0.001], [0.001, 0.015]]))?;
    let mut flip = TrainerConfig::linear(vec![3.0, 3.0], early.clone(), 0.01);
    flip.dynamics = Dynamics::Linear {
        schedule: ok(DynamicsSchedule::new(vec![
            DynamicsSegment { start: 0, matrix: early },
            DynamicsSegment { start: round, matrix: late },
        ]))?,
    };
    let cmp = ok(greedy_vs_exhaustive(|| Trainer::new(flip.clone()), &grid, &[round, round], 1000))?;
    ensure!(cmp.exhaustive_loss <= cmp.greedy_loss, "exhaustive {} above greedy {}", cmp.exhaustive_loss, cmp.greedy_loss);
    let oracle = brute_force_best(&flip, &grid, &[round, round])?;
    ensure!((oracle - cmp.exhaustive_loss).abs() <= 1e-12, "flip exhaustive {} vs brute force {oracle}", cmp.exhaustive_loss);
    Ok(format!(
        "time-invariant matched over 81 schedules; flip schedule exhaustive {:.6} <= greedy {:.6}, diverged: {}",
        cmp.exhaustive_loss,
        cmp.greedy_loss,
        !cmp.matched
    ))
}

/// Ranks by counting, ties averaged.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn oracle_similarity(a: &InteractionMatrix, b: f64, star: &InteractionMatrix) -> f64 {
    let m = a.dim();
    let col = |x: &InteractionMatrix, s: f64| -> Vec<f64> {
        let v: Vec<f64> = (0..m).map(|j| s * (0..m).map(|i| x.get(i, j)).sum::<f64>()).collect();
        let n = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        v.into_iter().map(|t| t / n).collect()
    };
    let (x, y) = (col(a, b), col(star, 1.0));
    let cos = x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>()
        / (x.iter().map(|t| t * t).sum::<f64>().sqrt() * y.iter().map(|t| t * t).sum::<f64>().sqrt());
    0.5 * cos + 0.5 * brute_pearson(&brute_ranks(&x), &brute_ranks(&y))
}

fn similarity_metric() -> Outcome {
    let mut rng = SimRng::seed_from_u64(7);
    for _ in 0..1000 {
        let m = rng.random_range(2..=8);
        let a = random_matrix(&mut rng, m, -1.0, 1.0);
        let own = ok(similarity(&a, 1.0, &a))?.value;
        let anti = ok(similarity(&a, 1.0, &a.scaled(-1.0)))?.value;
        ensure!(own == 1.0 && anti == -1.0, "self {own}, antipodal {anti}");
    }
    let x = InteractionMatrix::diagonal(&[1.0, 2.0, 3.0]);
    let y = InteractionMatrix::diagonal(&[1.0, 3.0, 2.0]);
    let s = ok(similarity(&x, 1.0, &y))?;
    ensure!(s.spearman == 0.5, "worked example spearman {}", s.spearman);
    ensure!((s.value - oracle_similarity(&x, 1.0, &y)).abs() <= 1e-12, "worked example {} vs oracle", s.value);

    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let m = rng.random_range(2..=8);
        let a = random_matrix(&mut rng, m, -1.0, 1.0);
        let star = random_matrix(&mut rng, m, -1.0, 1.0);
        let b = rng.random_range(0.1..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let v = ok(similarity(&a, b, &star))?.value;
        ensure!((-1.0..=1.0).contains(&v), "value {v} outside [-1, 1]");
        worst = worst.max((v - oracle_similarity(&a, b, &star)).abs());
    }
    ensure!(worst <= 1e-12, "oracle gap {worst:e}");
    Ok(format!("self/antipodal exact on 1000 matrices; 10000 pairs in range, max oracle gap {worst:.1e}"))
}

fn budget_table() -> Outcome {
    use BudgetMode::{Restricted, Unrestricted};
    use BudgetedMethod::{DoGE, DoReMi, Dml, SkillIt};
    let rows: [(BudgetMode, usize, BudgetedMethod, u64, u64); 24] = [
        (Unrestricted, 2, Dml, 10, 5000),
        (Unrestricted, 2, SkillIt, 2, 5000),
        (Unrestricted, 2, DoReMi, 2, 5000),
        (Unrestricted, 2, DoGE, 1, 5000),
        (Unrestricted, 3, Dml, 10, 5000),
        (Unrestricted, 3, SkillIt, 3, 5000),
        (Unrestricted, 3, DoReMi, 2, 5000),
        (Unrestricted, 3, DoGE, 1, 5000),
        (Unrestricted, 7, Dml, 10, 40000),
        (Unrestricted, 7, SkillIt, 7, 40000),
        (Unrestricted, 7, DoReMi, 2, 40000),
        (Unrestricted, 7, DoGE, 1, 40000),
        (Restricted, 2, Dml, 10, 250),
        (Restricted, 2, SkillIt, 2, 1250),
        (Restricted, 2, DoReMi, 2, 1250),
        (Restricted, 2, DoGE, 1, 2500),
        (Restricted, 3, Dml, 10, 250),
        (Restricted, 3, SkillIt, 3, 833),
        (Restricted, 3, DoReMi, 2, 1250),
        (Restricted, 3, DoGE, 1, 2500),
        (Restricted, 7, Dml, 10, 2000),
        (Restricted, 7, SkillIt, 7, 2814),
        (Restricted, 7, DoReMi, 2, 10000),
        (Restricted, 7, DoGE, 1, 20000),
    ];
    for (mode, m, method, runs, steps) in rows {
        let s = if m == 7 { 40_000 } else { 5000 };
        let got = allocation(method, m, s, mode);
        ensure!(
            (got.runs, got.steps_per_run) == (runs, steps),
            "{mode:?} m={m} {method:?}: {} runs of {} steps, expected {runs} of {steps}",
            got.runs,
            got.steps_per_run
        );
        ensure!(got.total() <= mode.allowance(s), "{mode:?} m={m} {method:?} exceeds the allowance");
        if method == Dml {
            ensure!(allocation(BudgetedMethod::GridSearch, m, s, mode) == got, "grid search differs from DML at m={m}");
        }
    }
    Ok("24 rows match, grid search shares the DML rows, every row within its allowance".into())
}

fn argmax_flip() -> Outcome {
    let full = ok(InteractionMatrix::from_rows(&[vec![0.249, 0.058], vec![0.025, 0.224]]))?;
    let refit = ok(InteractionMatrix::from_rows(&[vec![0.284, 0.0], vec![0.0, 0.238]]))?;
    let sums = full.column_sums();
    ensure!(max_diff(&sums, &[0.274, 0.282]) <= 1e-12, "column sums {sums:?}");
    ensure!(diagonal_projection(&refit) == refit, "diagonal analogue is not diagonal");
    let projected = diagonal_projection(&full);
    ensure!(projected.is_diagonal(), "projection left off-diagonal entries");
    let (f, d, p) = (argmax_column(&full), argmax_column(&refit), argmax_column(&projected));
    ensure!(f == 1 && d == 0 && p == 0, "argmax full {f}, diagonal analogue {d}, projection {p}");
    let early = ok(InteractionMatrix::from_rows(&[vec![0.148, 0.011], vec![-0.013, 0.087]]))?;
    ensure!(max_diff(&early.column_sums(), &[0.135, 0.098]) <= 1e-12, "direction-flip column sums {:?}", early.column_sums());
    Ok(format!("full argmax column {f}, diagonal analogue and projection argmax column {d}"))
}

const ISOLATION_CONFIG: &str = r#"{
  "simulator": {"initial_losses": [4.0, 3.5], "interaction": [[0.0010, 0.0002], [0.0001, 0.0006]], "loss_floor": 0.01, "noise_sigma": 0.01},
  "steps": 2000,
  "budget": {"custom": 5},
  "seeds": [0, 1, 2],
  "methods": [METHODS]
}"#;

fn experiment_text(methods: &str) -> String {
    ISOLATION_CONFIG.replace("METHODS", methods)
}

fn lmo(args: &[&str]) -> Result<(i32, String), String> {
    let out = ok(Command::new(env!("CARGO_BIN_EXE_lmo")).args(args).output())?;
    Ok((out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned()))
}

fn sha(path: &Path) -> Result<Vec<u8>, String> {
    Ok(Sha256::digest(ok(std::fs::read(path))?).to_vec())
}

fn determinism_isolation() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let path = |name: &str| dir.path().join(name);
    let s = |p: &Path| p.to_str().unwrap().to_string();

    let good = path("good.json");
    ok(std::fs::write(&good, experiment_text(r#"{"method": "stratified"}, {"method": "aioli", "params": {"rounds": 5}}, {"method": "doremi", "name": "doremi_small"}"#)))?;
    let mut digests = Vec::new();
    for (name, threads) in [("a.json", "1"), ("b.json", "3"), ("c.json", "1")] {
        let (code, err) = lmo(&["run", &s(&good), "--out", &s(&path(name)), "--parallelism", threads])?;
        ensure!(code == 0, "clean run exited {code}: {err}");
        digests.push(sha(&path(name))?);
    }
    ensure!(digests.windows(2).all(|w| w[0] == w[1]), "json reports differ across runs");
    for name in ["a.csv", "b.csv"] {
        let (code, _) = lmo(&["run", &s(&good), "--out", &s(&path(name)), "--format", "csv"])?;
        ensure!(code == 0, "csv run exited {code}");
    }
    ensure!(sha(&path("a.csv"))? == sha(&path("b.csv"))?, "csv reports differ");

    let clean: ExperimentReport = ok(serde_json::from_str(&ok(std::fs::read_to_string(path("a.json")))?))?;
    ensure!(clean.failed_cells() == 0, "clean run has failed cells");
    for c in clean.cells.iter().filter(|c| c.method == "stratified") {
        ensure!(c.delta_vs_stratified == Some(0.0), "stratified delta {:?} on seed {}", c.delta_vs_stratified, c.seed);
    }

    let mixed = path("mixed.json");
    ok(std::fs::write(
        &mixed,
        experiment_text(r#"{"method": "stratified"}, {"method": "dml"}, {"method": "aioli", "params": {"rounds": 5}}, {"method": "doremi", "name": "doremi_small"}"#),
    ))?;
    let (code, _) = lmo(&["run", &s(&mixed), "--out", &s(&path("mixed_report.json"))])?;
    ensure!(code == 2, "partial failure exited {code}, expected 2");
    let partial: ExperimentReport = ok(serde_json::from_str(&ok(std::fs::read_to_string(path("mixed_report.json")))?))?;
    let dml_failed = partial.cells.iter().filter(|c| c.method == "dml").all(|c| !c.is_ok() && c.error.as_deref().is_some_and(|e| e.contains("budget")));
    ensure!(dml_failed, "dml cells did not fail on the budget");
    for c in &clean.cells {
        ensure!(partial.cell(&c.method, c.seed) == Some(c), "sibling cell {} seed {} changed", c.method, c.seed);
    }

    let bad = path("bad.json");
    ok(std::fs::write(&bad, experiment_text(r#"{"method": "stratified"}, {"method": "aioli", "params": {"delta": 0.0}}"#)))?;
    let (code, err) = lmo(&["run", &s(&bad)])?;
    ensure!(code == 1 && err.contains("methods[1].params.delta"), "invalid delta exited {code}: {err}");
    let (code, _) = lmo(&["run", &s(&path("missing.json"))])?;
    ensure!(code == 1, "missing config exited {code}");
    Ok("3 identical reports across thread counts; dml cells failed alone with exit 2; config errors exit 1".into())
}

fn accuracy_correlation() -> Outcome {
    let cfg = ok(AnalysisConfig::from_json(
        r#"{
          "simulator": {
            "initial_losses": [30.0, 30.0, 30.0],
            "interaction": [[0.002, 0.0003, 0.0001], [0.0002, 0.0008, 0.0002], [0.0001, 0.0001, 0.0005]],
            "loss_floor": 0.01,
            "noise_sigma": 0.001
          },
          "steps": 3000,
          "similarity": {
            "gradient_noise": [0.0, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128],
            "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15],
            "params": {"doge": {"eta": 1.0, "smoothing": 0.0}, "probe_step": 1000, "smoothing_width": 100, "horizon": 100}
          }
        }"#,
    ))?;
    let study = ok(run_similarity_study(&cfg, None))?;
    ensure!(study.rows.len() >= 8, "only {} configurations", study.rows.len());
    let r = study.correlation.ok_or("degenerate correlation")?;
    ensure!(r > 0.3, "correlation {r}");
    let sims: Vec<String> = study.rows.iter().map(|row| format!("{:.2}", row.similarity)).collect();
    Ok(format!("{} configurations, similarity [{}], Pearson r = {r:.3}", study.rows.len(), sims.join(", ")))
}

