//! Mixing laws: the log-linear static law and the linear dynamic law, their
//! evaluation, fitting, and goodness-of-fit metrics.
//!
//! Static:  `L_i(p) = c_i + b_i * exp(-sum_j A_ij p_j)`
//! Dynamic: `L_i^{t+1} = L_i^t - sum_j A_ij p_j^t`

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::linalg::lstsq;
use crate::optim::{self, LbfgsOptions};
use crate::{Error, InteractionMatrix, MixtureProportions, Result, SimRng};

/// Parameters `(A, b, c)` of the log-linear static law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStaticLaw", into = "RawStaticLaw")]
pub struct StaticLawParams {
    a: InteractionMatrix,
    b: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawStaticLaw {
    a: InteractionMatrix,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TryFrom<RawStaticLaw> for StaticLawParams {
    type Error = Error;

    fn try_from(r: RawStaticLaw) -> Result<Self> {
        Self::new(r.a, r.b, r.c)
    }
}

impl From<StaticLawParams> for RawStaticLaw {
    fn from(p: StaticLawParams) -> Self {
        Self { a: p.a, b: p.b, c: p.c }
    }
}

impl StaticLawParams {
    pub fn new(a: InteractionMatrix, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let m = a.dim();
        if b.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: b.len() });
        }
        if c.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: c.len() });
        }
        if b.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParams("b must be positive"));
        }
        if c.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParams("c must be non-negative"));
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &InteractionMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }
}

/// Predicted per-group losses under the static law.
pub fn eval_static(params: &StaticLawParams, p: &MixtureProportions) -> Result<Vec<f64>> {
    let exposure = params.a.apply(p.as_slice())?;
    Ok(exposure
        .iter()
        .zip(&params.b)
        .zip(&params.c)
        .map(|((e, b), c)| c + b * libm::exp(-e))
        .collect())
}

/// One step of the linear dynamic law: `L - A p`.
pub fn eval_dynamic(a: &InteractionMatrix, losses: &[f64], p: &MixtureProportions) -> Result<Vec<f64>> {
    if losses.len() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: losses.len() });
    }
    let drop = a.apply(p.as_slice())?;
    Ok(losses.iter().zip(drop).map(|(l, d)| l - d).collect())
}

/// Goodness of fit of a law against observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mse: f64,
    /// Pooled over all (group, sample) cells.
    pub r_squared: f64,
    pub per_group_r_squared: Vec<f64>,
    /// `residuals[group][sample] = predicted - observed`.
    pub residuals: Vec<Vec<f64>>,
    pub restarts_used: usize,
}

fn r_squared(ss_res: f64, ss_tot: f64) -> f64 {
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// MSE and R² of `predicted` against `observed`, both indexed `[sample][group]`.
pub fn goodness(predicted: &[Vec<f64>], observed: &[Vec<f64>]) -> Result<FitReport> {
    if predicted.len() != observed.len() {
        return Err(Error::ShapeMismatch("predicted and observed sample counts differ"));
    }
    if observed.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: observed.len() });
    }
    let m = observed[0].len();
    if m == 0 || observed.iter().chain(predicted).any(|r| r.len() != m) {
        return Err(Error::ShapeMismatch("rows must share one non-zero group count"));
    }
    let n = observed.len();
    let cells = (n * m) as f64;
    let mean = observed.iter().flatten().sum::<f64>() / cells;

    let mut residuals = alloc::vec![alloc::vec![0.0; n]; m];
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (s, (pr, ob)) in predicted.iter().zip(observed).enumerate() {
        for g in 0..m {
            let r = pr[g] - ob[g];
            residuals[g][s] = r;
            ss_res += r * r;
            ss_tot += (ob[g] - mean) * (ob[g] - mean);
        }
    }
    let per_group_r_squared = (0..m)
        .map(|g| {
            let gm = observed.iter().map(|o| o[g]).sum::<f64>() / n as f64;
            let tot: f64 = observed.iter().map(|o| (o[g] - gm) * (o[g] - gm)).sum();
            let res: f64 = residuals[g].iter().map(|r| r * r).sum();
            r_squared(res, tot)
        })
        .collect();
    Ok(FitReport {
        mse: ss_res / cells,
        r_squared: r_squared(ss_res, ss_tot),
        per_group_r_squared,
        residuals,
        restarts_used: 0,
    })
}

/// Options for [`fit_static`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticFitConfig {
    pub huber_delta: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for StaticFitConfig {
    fn default() -> Self {
        Self { huber_delta: 1e-3, restarts: 32, max_iterations: 2000, seed: 0 }
    }
}

/// An observed static run: proportions and the per-group losses they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSample {
    pub p: MixtureProportions,
    pub losses: Vec<f64>,
}

/// Huber loss scaled by `1/delta`: `r^2 / (2 delta)` inside, `|r| - delta/2` outside.
fn huber(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r / delta, r / delta)
    } else {
        (r.abs() - 0.5 * delta, r.signum())
    }
}

// theta layout: [A row-major (m*m), ln b (m), w (m)] with c = w^2.
fn unpack(theta: &[f64], m: usize) -> (&[f64], &[f64], &[f64]) {
    let (a, rest) = theta.split_at(m * m);
    let (lb, w) = rest.split_at(m);
    (a, lb, w)
}

fn static_objective(theta: &[f64], grad: &mut [f64], samples: &[StaticSample], m: usize, delta: f64) -> f64 {
    let (a, lb, w) = unpack(theta, m);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut total = 0.0;
    let scale = 1.0 / (samples.len() * m) as f64;
    for s in samples {
        let p = s.p.as_slice();
        for i in 0..m {
            let row = &a[i * m..(i + 1) * m];
            let e: f64 = row.iter().zip(p).map(|(x, y)| x * y).sum();
            let be = libm::exp(lb[i] - e);
            let pred = w[i] * w[i] + be;
            let (h, dh) = huber(pred - s.losses[i], delta);
            if !h.is_finite() {
                return f64::INFINITY;
            }
            total += h * scale;
            let d = dh * scale;
            for j in 0..m {
                grad[i * m + j] -= d * be * p[j];
            }
            grad[m * m + i] += d * be;
            grad[m * m + m + i] += d * 2.0 * w[i];
        }
    }
    total
}

/// Fits the static law by minimizing the Huber loss from `config.restarts` random starts.
pub fn fit_static(samples: &[StaticSample], config: &StaticFitConfig) -> Result<(StaticLawParams, FitReport)> {
    let m = samples.first().map(|s| s.p.len()).ok_or(Error::InsufficientSamples { needed: 3, got: 0 })?;
    if samples.len() < m + 1 {
        return Err(Error::InsufficientSamples { needed: m + 1, got: samples.len() });
    }
    if samples.iter().any(|s| s.p.len() != m || s.losses.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: samples.iter().map(|s| s.losses.len()).max().unwrap_or(0) });
    }
    if !(config.huber_delta > 0.0) || config.restarts == 0 {
        return Err(Error::InvalidHyperParams { field: "fit", reason: "need huber_delta > 0 and restarts >= 1" });
    }
    let floor: Vec<f64> = (0..m)
        .map(|i| samples.iter().map(|s| s.losses[i]).fold(f64::INFINITY, f64::min).max(0.0))
        .collect();

    let mut rng = SimRng::seed_from_u64(config.seed);
    let opts = LbfgsOptions { max_iterations: config.max_iterations, ..LbfgsOptions::default() };
    let mut best: Option<optim::Minimum> = None;
    for _ in 0..config.restarts {
        let mut theta = Vec::with_capacity(m * m + 2 * m);
        theta.extend((0..m * m).map(|_| rng.random_range(0.0..5.0)));
        theta.extend((0..m).map(|_| libm::log(rng.random_range(0.1..30.0))));
        theta.extend(floor.iter().map(|&f| libm::sqrt(rng.random::<f64>() * f)));
        let run = optim::minimize(
            |x, g| static_objective(x, g, samples, m, config.huber_delta),
            theta,
            &opts,
        );
        if run.termination.converged() && best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best = best.ok_or(Error::NonConvergence)?;
    let (a, lb, w) = unpack(&best.x, m);
    let params = StaticLawParams::new(
        InteractionMatrix::from_row_major(m, a.to_vec())?,
        lb.iter().map(|x| libm::exp(*x)).collect(),
        w.iter().map(|x| x * x).collect(),
    )?;
    let predicted = samples.iter().map(|s| eval_static(&params, &s.p)).collect::<Result<Vec<_>>>()?;
    let observed: Vec<Vec<f64>> = samples.iter().map(|s| s.losses.clone()).collect();
    let mut report = goodness(&predicted, &observed)?;
    report.restarts_used = config.restarts;
    Ok((params, report))
}

/// `(L^t, p^t, L^{t+1})` observed over one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicTriple {
    pub before: Vec<f64>,
    pub p: MixtureProportions,
    pub after: Vec<f64>,
}

impl DynamicTriple {
    pub fn drops(&self) -> impl Iterator<Item = f64> + '_ {
        self.before.iter().zip(&self.after).map(|(b, a)| b - a)
    }
}

fn check_triples(triples: &[DynamicTriple]) -> Result<usize> {
    let m = triples.first().map(|t| t.p.len()).ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    for t in triples {
        for len in [t.p.len(), t.before.len(), t.after.len()] {
            if len != m {
                return Err(Error::DimensionMismatch { expected: m, got: len });
            }
        }
    }
    Ok(m)
}

/// Ordinary least-squares fit of the linear dynamic law, one row of `A` per group.
pub fn fit_dynamic(triples: &[DynamicTriple]) -> Result<(InteractionMatrix, FitReport)> {
    let m = check_triples(triples)?;
    if triples.len() < m {
        return Err(Error::InsufficientSamples { needed: m, got: triples.len() });
    }
    let design: Vec<Vec<f64>> = triples.iter().map(|t| t.p.as_slice().to_vec()).collect();
    let rhs: Vec<Vec<f64>> = triples.iter().map(|t| t.drops().collect()).collect();
    let sol = lstsq(&design, &rhs)?;
    if sol.rank < m {
        return Err(Error::SingularDesign { rank: sol.rank, m });
    }
    let a = InteractionMatrix::from_row_major(m, (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| sol.coef[(j, i)]).collect())?;
    let predicted = triples.iter().map(|t| eval_dynamic(&a, &t.before, &t.p)).collect::<Result<Vec<_>>>()?;
    let observed: Vec<Vec<f64>> = triples.iter().map(|t| t.after.clone()).collect();
    let report = goodness(&predicted, &observed)?;
    Ok((a, report))
}

/// Least-squares scalar `b` with `L^t - L^{t+1} ≈ b * A p` pooled over groups and samples.
pub fn fit_scalar_b(method_a: &InteractionMatrix, triples: &[DynamicTriple]) -> Result<f64> {
    let m = check_triples(triples)?;
    if method_a.dim() != m {
        return Err(Error::DimensionMismatch { expected: m, got: method_a.dim() });
    }
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for t in triples {
        let x = method_a.apply(t.p.as_slice())?;
        for (xi, yi) in x.iter().zip(t.drops()) {
            sxy += xi * yi;
            sxx += xi * xi;
        }
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateScale);
    }
    Ok(sxy / sxx)
}
