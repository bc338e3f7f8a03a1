//! A seeded discrete-time trainer oracle.
//!
//! The oracle replaces language-model training: per-group losses evolve under a
//! configurable ground truth, are read through Gaussian observation noise, and
//! can be snapshotted and restored (RNG included) for branching sweeps.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::budget::RunPurpose;
use crate::laws::StaticLawParams;
use crate::{Error, InteractionMatrix, MixtureProportions, Result, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Ground-truth per-step interaction matrix active from `start` until the next segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSegment {
    pub start: u64,
    pub matrix: InteractionMatrix,
}

/// Piecewise-constant ground truth over trainer steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DynamicsSegment>", into = "Vec<DynamicsSegment>")]
pub struct DynamicsSchedule {
    segments: Vec<DynamicsSegment>,
}

impl DynamicsSchedule {
    /// Segments must start at 0, strictly increase, and share one dimension.
    pub fn new(segments: Vec<DynamicsSegment>) -> Result<Self> {
        let first = segments.first().ok_or_else(|| Error::InvalidConfig("empty dynamics schedule".into()))?;
        if first.start != 0 {
            return Err(Error::InvalidConfig("first dynamics segment must start at step 0".into()));
        }
        let m = first.matrix.dim();
        for w in segments.windows(2) {
            if w[1].start <= w[0].start {
                return Err(Error::InvalidConfig("dynamics segments must have increasing starts".into()));
            }
        }
        if let Some(s) = segments.iter().find(|s| s.matrix.dim() != m) {
            return Err(Error::DimensionMismatch { expected: m, got: s.matrix.dim() });
        }
        Ok(Self { segments })
    }

    pub fn constant(matrix: InteractionMatrix) -> Self {
        Self { segments: alloc::vec![DynamicsSegment { start: 0, matrix }] }
    }

    pub fn segments(&self) -> &[DynamicsSegment] {
        &self.segments
    }

    pub fn dim(&self) -> usize {
        self.segments[0].matrix.dim()
    }

    /// Matrix governing the transition out of `step`.
    pub fn active(&self, step: u64) -> &InteractionMatrix {
        let idx = self.segments.partition_point(|s| s.start <= step);
        &self.segments[idx - 1].matrix
    }
}

impl TryFrom<Vec<DynamicsSegment>> for DynamicsSchedule {
    type Error = Error;

    fn try_from(v: Vec<DynamicsSegment>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DynamicsSchedule> for Vec<DynamicsSegment> {
    fn from(s: DynamicsSchedule) -> Self {
        s.segments
    }
}

/// Ground-truth loss dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `L <- max(floor, L - A(step) p)` every step.
    Linear { schedule: DynamicsSchedule },
    /// After cumulative exposure `e = (sum of p over steps) / horizon`, every split reads
    /// `c + b exp(-A e)`; a full static run of `horizon` steps lands on the static law.
    /// Configured initial losses are ignored; runs start at `c + b`.
    LogLinear { law: StaticLawParams, horizon: u64 },
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Linear { schedule } => schedule.dim(),
            Dynamics::LogLinear { law, .. } => law.dim(),
        }
    }
}

/// An extra out-of-domain validation loss driven by a row vector over training groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodChannel {
    pub initial_loss: f64,
    /// Per-step loss decrease per unit proportion on each training group.
    pub interaction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLosses {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
    pub test: Vec<f64>,
}

impl SplitLosses {
    pub fn same(losses: Vec<f64>) -> Self {
        Self { train: losses.clone(), val: losses.clone(), test: losses }
    }

    pub fn get(&self, split: Split) -> &[f64] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub initial_losses: SplitLosses,
    pub dynamics: Dynamics,
    pub loss_floor: f64,
    /// Standard deviation of Gaussian noise added to every loss read.
    #[serde(default)]
    pub noise_sigma: f64,
    /// Standard deviation of the entrywise noise in [`Trainer::gradient_alignment`].
    #[serde(default)]
    pub gradient_noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood: Option<OodChannel>,
}

impl TrainerConfig {
    /// Constant linear dynamics with identical initial losses on every split.
    pub fn linear(initial: Vec<f64>, per_step: InteractionMatrix, loss_floor: f64) -> Self {
        Self {
            initial_losses: SplitLosses::same(initial),
            dynamics: Dynamics::Linear { schedule: DynamicsSchedule::constant(per_step) },
            loss_floor,
            noise_sigma: 0.0,
            gradient_noise_sigma: 0.0,
            seed: 0,
            ood: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_gradient_noise(mut self, sigma: f64) -> Self {
        self.gradient_noise_sigma = sigma;
        self
    }

    pub fn with_ood(mut self, ood: OodChannel) -> Self {
        self.ood = Some(ood);
        self
    }

    pub fn num_groups(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_groups();
        if m < 2 {
            return Err(Error::TooFewGroups(m));
        }
        if !(self.loss_floor > 0.0) || !self.loss_floor.is_finite() {
            return Err(Error::InvalidConfig(format!("loss floor must be positive, got {}", self.loss_floor)));
        }
        for (name, s) in [("noise_sigma", self.noise_sigma), ("gradient_noise_sigma", self.gradient_noise_sigma)] {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {s}")));
            }
        }
        match &self.dynamics {
            Dynamics::Linear { .. } => {
                for split in Split::ALL {
                    let l = self.initial_losses.get(split);
                    if l.len() != m {
                        return Err(Error::InvalidConfig(format!(
                            "{} initial losses have {} entries, expected {m}",
                            split.name(),
                            l.len()
                        )));
                    }
                    if let Some(bad) = l.iter().find(|&&x| !(x > self.loss_floor)) {
                        return Err(Error::InvalidConfig(format!(
                            "{} initial loss {bad} is not above the floor {}",
                            split.name(),
                            self.loss_floor
                        )));
                    }
                }
            }
            Dynamics::LogLinear { law, horizon } => {
                if *horizon == 0 {
                    return Err(Error::InvalidConfig("log-linear horizon must be positive".into()));
                }
                if law.c().iter().any(|&c| c < self.loss_floor) {
                    return Err(Error::InvalidConfig("log-linear asymptotes must be at least the floor".into()));
                }
            }
        }
        if let Some(ood) = &self.ood {
            if ood.interaction.len() != m {
                return Err(Error::InvalidConfig(format!("ood interaction has {} entries, expected {m}", ood.interaction.len())));
            }
            if !(ood.initial_loss > self.loss_floor) {
                return Err(Error::InvalidConfig("ood initial loss must exceed the floor".into()));
            }
        }
        Ok(())
    }
}

/// Snapshot-able mutable state of a trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub step: u64,
    /// True losses, indexed by [`Split`].
    losses: [Vec<f64>; 3],
    ood_loss: Option<f64>,
    /// Cumulative `sum p / horizon` (log-linear dynamics only).
    exposure: Vec<f64>,
    rng: SimRng,
    steps_by_purpose: [u64; RunPurpose::COUNT],
}

impl TrainerState {
    pub fn losses(&self, split: Split) -> &[f64] {
        &self.losses[split.index()]
    }

    pub fn ood_loss(&self) -> Option<f64> {
        self.ood_loss
    }

    pub fn steps_for(&self, purpose: RunPurpose) -> u64 {
        self.steps_by_purpose[purpose as usize]
    }
}

/// Opaque handle returned by [`Trainer::snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnapshotToken(pub u64);

/// One trajectory sample of true losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: u64,
    pub split: Split,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainerConfig,
    state: TrainerState,
    purpose: RunPurpose,
    snapshots: BTreeMap<u64, TrainerState>,
    next_token: u64,
    log_every: u64,
    trajectory: Vec<TrajectoryPoint>,
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let m = config.num_groups();
        let losses = match &config.dynamics {
            Dynamics::Linear { .. } => [
                config.initial_losses.train.clone(),
                config.initial_losses.val.clone(),
                config.initial_losses.test.clone(),
            ],
            Dynamics::LogLinear { law, .. } => {
                let start: Vec<f64> = law.b().iter().zip(law.c()).map(|(b, c)| b + c).collect();
                [start.clone(), start.clone(), start]
            }
        };
        let state = TrainerState {
            step: 0,
            losses,
            ood_loss: config.ood.as_ref().map(|o| o.initial_loss),
            exposure: alloc::vec![0.0; m],
            rng: SimRng::seed_from_u64(config.seed),
            steps_by_purpose: [0; RunPurpose::COUNT],
        };
        Ok(Self {
            config,
            state,
            purpose: RunPurpose::Final,
            snapshots: BTreeMap::new(),
            next_token: 0,
            log_every: 0,
            trajectory: Vec::new(),
        })
    }

    /// Rebuilds a trainer around a previously captured state.
    pub fn from_state(config: TrainerConfig, state: TrainerState) -> Result<Self> {
        let mut t = Self::new(config)?;
        t.state = state;
        Ok(t)
    }

    pub fn with_purpose(mut self, purpose: RunPurpose) -> Self {
        self.purpose = purpose;
        self
    }

    pub fn purpose(&self) -> RunPurpose {
        self.purpose
    }

    /// Records true losses of every split each `every` steps (0 disables).
    pub fn record_trajectory(&mut self, every: u64) {
        self.log_every = every;
        if every > 0 {
            self.log_point();
        }
    }

    pub fn trajectory(&self) -> &[TrajectoryPoint] {
        &self.trajectory
    }

    pub fn take_trajectory(&mut self) -> Vec<TrajectoryPoint> {
        core::mem::take(&mut self.trajectory)
    }

    fn log_point(&mut self) {
        for split in Split::ALL {
            self.trajectory.push(TrajectoryPoint {
                step: self.state.step,
                split,
                losses: self.state.losses[split.index()].clone(),
            });
        }
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn num_groups(&self) -> usize {
        self.config.num_groups()
    }

    pub fn step(&self) -> u64 {
        self.state.step
    }

    pub fn true_losses(&self, split: Split) -> &[f64] {
        self.state.losses(split)
    }

    /// Trains `steps` steps on proportions `p`.
    pub fn train(&mut self, p: &MixtureProportions, steps: u64) -> Result<()> {
        let m = self.num_groups();
        if p.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: p.len() });
        }
        for _ in 0..steps {
            self.advance(p.as_slice());
        }
        Ok(())
    }

    fn advance(&mut self, p: &[f64]) {
        let floor = self.config.loss_floor;
        let st = &mut self.state;
        match &self.config.dynamics {
            Dynamics::Linear { schedule } => {
                let a = schedule.active(st.step);
                for (i, _) in p.iter().enumerate() {
                    let drop: f64 = a.row(i).iter().zip(p).map(|(x, y)| x * y).sum();
                    for losses in st.losses.iter_mut() {
                        losses[i] = (losses[i] - drop).max(floor);
                    }
                }
            }
            Dynamics::LogLinear { law, horizon } => {
                let h = *horizon as f64;
                for (e, w) in st.exposure.iter_mut().zip(p) {
                    *e += w / h;
                }
                let ae = law.a().apply(&st.exposure).expect("dimension checked");
                for i in 0..p.len() {
                    let l = (law.c()[i] + law.b()[i] * libm::exp(-ae[i])).max(floor);
                    for losses in st.losses.iter_mut() {
                        losses[i] = l;
                    }
                }
            }
        }
        if let (Some(ood), Some(l)) = (&self.config.ood, st.ood_loss.as_mut()) {
            let drop: f64 = ood.interaction.iter().zip(p).map(|(x, y)| x * y).sum();
            *l = (*l - drop).max(floor);
        }
        st.step += 1;
        st.steps_by_purpose[self.purpose as usize] += 1;
        if self.log_every > 0 && st.step % self.log_every == 0 {
            self.log_point();
        }
    }

    fn noise(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, sigma).expect("sigma validated").sample(&mut self.state.rng)
    }

    /// True losses plus fresh observation noise.
    pub fn observe_losses(&mut self, split: Split) -> Vec<f64> {
        let sigma = self.config.noise_sigma;
        let mut out = self.state.losses[split.index()].clone();
        for l in out.iter_mut() {
            *l += self.noise(sigma);
        }
        out
    }

    /// Mean of the observed per-group losses on `split`.
    pub fn observe_average(&mut self, split: Split) -> f64 {
        let l = self.observe_losses(split);
        l.iter().sum::<f64>() / l.len() as f64
    }

    /// Observed out-of-domain validation loss.
    pub fn observe_ood(&mut self) -> Result<f64> {
        let truth = self.state.ood_loss.ok_or(Error::MissingOodChannel)?;
        let sigma = self.config.noise_sigma;
        Ok(truth + self.noise(sigma))
    }

    /// Ground-truth per-step interaction matrix at the current step.
    pub fn active_interaction(&self) -> InteractionMatrix {
        match &self.config.dynamics {
            Dynamics::Linear { schedule } => schedule.active(self.state.step).clone(),
            Dynamics::LogLinear { law, horizon } => {
                let ae = law.a().apply(&self.state.exposure).expect("dimension checked");
                let gain: Vec<f64> = law
                    .b()
                    .iter()
                    .zip(&ae)
                    .map(|(b, e)| b * libm::exp(-e) / *horizon as f64)
                    .collect();
                law.a().scale_rows(&gain).expect("dimension checked")
            }
        }
    }

    /// Synthetic gradient inner products `<grad L_val_i, grad L_train_j>`: the active
    /// ground truth plus fresh entrywise Gaussian noise.
    pub fn gradient_alignment(&mut self) -> InteractionMatrix {
        let a = self.active_interaction();
        let sigma = self.config.gradient_noise_sigma;
        let m = a.dim();
        let entries = a.entries().iter().map(|x| x + self.noise(sigma)).collect();
        InteractionMatrix::from_row_major(m, entries).expect("finite entries")
    }

    /// Stores the full state (RNG included) and returns a token for [`Trainer::restore`].
    pub fn snapshot(&mut self) -> SnapshotToken {
        let token = self.next_token;
        self.next_token += 1;
        self.snapshots.insert(token, self.state.clone());
        SnapshotToken(token)
    }

    pub fn restore(&mut self, token: SnapshotToken) -> Result<()> {
        let state = self.snapshots.get(&token.0).ok_or(Error::UnknownToken(token.0))?;
        self.state = state.clone();
        Ok(())
    }

    pub fn drop_snapshot(&mut self, token: SnapshotToken) {
        self.snapshots.remove(&token.0);
    }

    /// Clone of the current state, shareable across trainers with the same config.
    pub fn checkpoint(&self) -> TrainerState {
        self.state.clone()
    }
}
