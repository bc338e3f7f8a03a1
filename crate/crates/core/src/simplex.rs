//! Points, schedules and candidate sets on the probability simplex.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::{Error, Result, SimRng};

/// Tolerance on `|sum(p) - 1|` accepted by [`MixtureProportions::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Candidates closer than this (L2) are considered the same mixture.
pub const DUPLICATE_TOL: f64 = 1e-9;

/// Sampling proportions over `m >= 2` data groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixtureProportions(Vec<f64>);

impl MixtureProportions {
    /// Validates `weights` without renormalizing them.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::TooFewGroups(weights.len()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("mixture weights"));
        }
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| w < 0.0) {
            return Err(Error::NegativeWeight { index, value });
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::SumNotOne { sum });
        }
        Ok(Self(weights))
    }

    /// Stratified sampling: every group gets `1/m`.
    pub fn uniform(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::TooFewGroups(m));
        }
        Ok(Self(alloc::vec![1.0 / m as f64; m]))
    }

    /// `(1 - eps) * e_index + eps * uniform(m)`.
    pub fn smoothed_onehot(index: usize, m: usize, eps: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::TooFewGroups(m));
        }
        if index >= m {
            return Err(Error::IndexOutOfRange { index, m });
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::EpsilonOutOfRange(eps));
        }
        let base = eps / m as f64;
        let mut w = alloc::vec![base; m];
        w[index] = (1.0 - eps) + base;
        Ok(Self(w))
    }

    /// Point mass on one group.
    pub fn onehot(index: usize, m: usize) -> Result<Self> {
        Self::smoothed_onehot(index, m, 0.0)
    }

    /// Renormalizes non-negative weights with positive total mass.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("mixture weights"));
        }
        if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| w < 0.0) {
            return Err(Error::NegativeWeight { index, value });
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    /// Arithmetic mean of several proportion vectors of equal length.
    pub fn mean<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a MixtureProportions>,
    {
        let mut acc: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for p in items {
            if acc.is_empty() {
                acc = alloc::vec![0.0; p.len()];
            } else if acc.len() != p.len() {
                return Err(Error::DimensionMismatch { expected: acc.len(), got: p.len() });
            }
            for (a, w) in acc.iter_mut().zip(p.iter()) {
                *a += w;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::TooFewGroups(0));
        }
        Self::normalized(acc.into_iter().map(|a| a / n as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Euclidean distance to another point.
    pub fn distance(&self, other: &Self) -> f64 {
        l2_distance(&self.0, &other.0)
    }
}

impl core::ops::Index<usize> for MixtureProportions {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for MixtureProportions {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MixtureProportions> for Vec<f64> {
    fn from(p: MixtureProportions) -> Vec<f64> {
        p.0
    }
}

/// Free-function form of [`MixtureProportions::new`].
pub fn validate(weights: &[f64]) -> Result<MixtureProportions> {
    MixtureProportions::new(weights.to_vec())
}

/// Free-function form of [`MixtureProportions::uniform`].
pub fn uniform(m: usize) -> Result<MixtureProportions> {
    MixtureProportions::uniform(m)
}

/// Free-function form of [`MixtureProportions::smoothed_onehot`].
pub fn smoothed_onehot(index: usize, m: usize, eps: f64) -> Result<MixtureProportions> {
    MixtureProportions::smoothed_onehot(index, m, eps)
}

/// A dynamic mixture: one proportion vector per round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MixtureProportions>", into = "Vec<MixtureProportions>")]
pub struct MixtureSchedule(Vec<MixtureProportions>);

impl MixtureSchedule {
    pub fn new(rounds: Vec<MixtureProportions>) -> Result<Self> {
        let first = rounds.first().ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
        let m = first.len();
        if let Some(bad) = rounds.iter().find(|p| p.len() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: bad.len() });
        }
        Ok(Self(rounds))
    }

    pub fn rounds(&self) -> &[MixtureProportions] {
        &self.0
    }

    pub fn num_rounds(&self) -> usize {
        self.0.len()
    }

    pub fn num_groups(&self) -> usize {
        self.0[0].len()
    }
}

impl TryFrom<Vec<MixtureProportions>> for MixtureSchedule {
    type Error = Error;

    fn try_from(v: Vec<MixtureProportions>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MixtureSchedule> for Vec<MixtureProportions> {
    fn from(s: MixtureSchedule) -> Self {
        s.0
    }
}

/// How a candidate sweep is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SweepSpec {
    /// `{[0.1, 0.9], ..., [0.9, 0.1]}`; two groups only.
    Grid,
    /// Oversample from a symmetric Dirichlet, then merge closest pairs.
    Dirichlet { alpha: f64, count: usize, oversample: usize, seed: u64 },
    /// Caller-provided points.
    Explicit,
}

/// A deduplicated list of candidate mixtures plus how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    candidates: Vec<MixtureProportions>,
    spec: SweepSpec,
}

impl CandidateSet {
    /// Wraps explicit candidates, rejecting mismatched dimensions and near-duplicates.
    pub fn explicit(candidates: Vec<MixtureProportions>) -> Result<Self> {
        Self::with_spec(candidates, SweepSpec::Explicit)
    }

    fn with_spec(candidates: Vec<MixtureProportions>, spec: SweepSpec) -> Result<Self> {
        let m = candidates
            .first()
            .ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?
            .len();
        for (a, p) in candidates.iter().enumerate() {
            if p.len() != m {
                return Err(Error::DimensionMismatch { expected: m, got: p.len() });
            }
            for (b, q) in candidates.iter().enumerate().skip(a + 1) {
                if p.distance(q) <= DUPLICATE_TOL {
                    return Err(Error::DuplicateCandidates(a, b));
                }
            }
        }
        Ok(Self { candidates, spec })
    }

    pub fn candidates(&self) -> &[MixtureProportions] {
        &self.candidates
    }

    pub fn spec(&self) -> &SweepSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.candidates[0].len()
    }

    pub fn into_inner(self) -> Vec<MixtureProportions> {
        self.candidates
    }
}

/// Generates the sweep described by `spec` over `m` groups.
pub fn candidate_sweep(m: usize, spec: &SweepSpec) -> Result<CandidateSet> {
    if m < 2 {
        return Err(Error::TooFewGroups(m));
    }
    match *spec {
        SweepSpec::Grid => {
            if m != 2 {
                return Err(Error::GridRequiresTwoGroups(m));
            }
            let points = (1..=9)
                .map(|k| {
                    let p1 = k as f64 / 10.0;
                    MixtureProportions::new(alloc::vec![p1, 1.0 - p1])
                })
                .collect::<Result<Vec<_>>>()?;
            CandidateSet::with_spec(points, spec.clone())
        }
        SweepSpec::Dirichlet { alpha, count, oversample, seed } => {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::InvalidAlpha("alpha must be positive and finite"));
            }
            if count == 0 {
                return Err(Error::InvalidAlpha("count must be at least 1"));
            }
            if oversample == 0 {
                return Err(Error::InvalidAlpha("oversample factor must be at least 1"));
            }
            let mut rng = SimRng::seed_from_u64(seed);
            let draws = (0..count * oversample)
                .map(|_| sample_dirichlet(alpha, m, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let merged = merge_closest(draws, count);
            let points = merged
                .into_iter()
                .map(MixtureProportions::normalized)
                .collect::<Result<Vec<_>>>()?;
            CandidateSet::with_spec(points, spec.clone())
        }
        SweepSpec::Explicit => Err(Error::InvalidAlpha("explicit sweeps carry their own points")),
    }
}

/// One draw from a symmetric Dirichlet(`alpha`) on `m` groups, via normalized Gamma draws.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, m: usize, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|_| Error::InvalidAlpha("gamma shape"))?;
    // tiny alpha can underflow every coordinate; redraw
    for _ in 0..64 {
        let g: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return Ok(g.into_iter().map(|x| x / s).collect());
        }
    }
    Err(Error::InvalidAlpha("Dirichlet draws underflowed"))
}

/// Repeatedly replaces the globally closest pair by its midpoint until `target` points remain.
fn merge_closest(mut points: Vec<Vec<f64>>, target: usize) -> Vec<Vec<f64>> {
    while points.len() > target {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..points.len() {
            for b in a + 1..points.len() {
                let d = l2_distance(&points[a], &points[b]);
                if d < best.2 {
                    best = (a, b, d);
                }
            }
        }
        let (a, b, _) = best;
        let q = points.swap_remove(b);
        for (x, y) in points[a].iter_mut().zip(q) {
            *x = 0.5 * (*x + y);
        }
    }
    points
}

pub(crate) fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Shuffled order containing each of the `m` group indices exactly `k` times.
pub fn interleave_order(m: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = SimRng::seed_from_u64(seed);
    interleave_order_with(m, k, &mut rng)
}

pub(crate) fn interleave_order_with<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m < 2 {
        return Err(Error::TooFewGroups(m));
    }
    if k == 0 {
        return Err(Error::InvalidHyperParams { field: "k", reason: "must be at least 1" });
    }
    let mut order: Vec<usize> = (0..m).flat_map(|i| core::iter::repeat_n(i, k)).collect();
    order.shuffle(rng);
    Ok(order)
}
