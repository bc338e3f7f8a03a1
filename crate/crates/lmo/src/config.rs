//! Experiment, sweep and analysis configs: JSON documents with explicit seeds.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use lmo_core::analysis::StudyParams;
use lmo_core::budget::{allocation, BudgetMode, BudgetedMethod, RunAllocation};
use lmo_core::methods::{AioliParams, DmlParams, DoReMiParams, DogeParams, SkillItParams};
use lmo_core::simplex::{candidate_sweep, CandidateSet, SweepSpec};
use lmo_core::trainer::{OodChannel, TrainerConfig};
use lmo_core::{InteractionMatrix, MixtureProportions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

/// Default fraction of each AIOLI round spent learning, keyed by group count.
pub fn default_delta(m: usize) -> f64 {
    match m {
        3 => 0.288,
        7 => 0.07,
        _ => 0.128,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Stratified,
    GridSearch,
    Dml,
    SkillIt,
    Doremi,
    Doge,
    Aioli,
    AioliOod,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Stratified => "stratified",
            MethodKind::GridSearch => "grid_search",
            MethodKind::Dml => "dml",
            MethodKind::SkillIt => "skill_it",
            MethodKind::Doremi => "doremi",
            MethodKind::Doge => "doge",
            MethodKind::Aioli => "aioli",
            MethodKind::AioliOod => "aioli_ood",
        }
    }

    pub fn budgeted(self) -> Option<BudgetedMethod> {
        match self {
            MethodKind::GridSearch => Some(BudgetedMethod::GridSearch),
            MethodKind::Dml => Some(BudgetedMethod::Dml),
            MethodKind::SkillIt => Some(BudgetedMethod::SkillIt),
            MethodKind::Doremi => Some(BudgetedMethod::DoReMi),
            MethodKind::Doge => Some(BudgetedMethod::DoGE),
            _ => None,
        }
    }
}

/// Where candidate mixtures come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum CandidateSpec {
    Grid,
    Dirichlet { alpha: f64, count: usize, oversample: usize, seed: u64 },
    Explicit { points: Vec<MixtureProportions> },
}

impl CandidateSpec {
    /// The 9-point grid for two groups, ten Dirichlet(1) points otherwise.
    pub fn default_for(m: usize) -> Self {
        if m == 2 {
            CandidateSpec::Grid
        } else {
            CandidateSpec::Dirichlet { alpha: 1.0, count: 10, oversample: 4, seed: 0 }
        }
    }

    pub fn build(&self, m: usize) -> lmo_core::Result<CandidateSet> {
        match self {
            CandidateSpec::Grid => candidate_sweep(m, &SweepSpec::Grid),
            CandidateSpec::Dirichlet { alpha, count, oversample, seed } => candidate_sweep(
                m,
                &SweepSpec::Dirichlet { alpha: *alpha, count: *count, oversample: *oversample, seed: *seed },
            ),
            CandidateSpec::Explicit { points } => {
                if let Some(p) = points.iter().find(|p| p.len() != m) {
                    return Err(lmo_core::Error::DimensionMismatch { expected: m, got: p.len() });
                }
                CandidateSet::explicit(points.clone())
            }
        }
    }
}

/// A fully resolved method with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    Stratified,
    GridSearch { candidates: CandidateSpec },
    Dml { candidates: CandidateSpec, params: DmlParams },
    SkillIt(SkillItParams),
    DoReMi(DoReMiParams),
    Doge(DogeParams),
    /// With a base method, AIOLI starts from the base's learned proportions.
    Aioli { params: AioliParams, base: Option<Box<MethodSpec>> },
    AioliOod(AioliParams),
}

impl MethodSpec {
    pub fn kind(&self) -> MethodKind {
        match self {
            MethodSpec::Stratified => MethodKind::Stratified,
            MethodSpec::GridSearch { .. } => MethodKind::GridSearch,
            MethodSpec::Dml { .. } => MethodKind::Dml,
            MethodSpec::SkillIt(_) => MethodKind::SkillIt,
            MethodSpec::DoReMi(_) => MethodKind::Doremi,
            MethodSpec::Doge(_) => MethodKind::Doge,
            MethodSpec::Aioli { .. } => MethodKind::Aioli,
            MethodSpec::AioliOod(_) => MethodKind::AioliOod,
        }
    }

    fn default_label(&self) -> String {
        match self {
            MethodSpec::Aioli { base: Some(b), .. } => format!("aioli+{}", b.default_label()),
            other => other.kind().name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodEntry {
    pub label: String,
    pub spec: MethodSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// JSON report.
    #[serde(default)]
    pub report: Option<PathBuf>,
    /// CSV summary, one row per (method, seed).
    #[serde(default)]
    pub csv: Option<PathBuf>,
    /// Directory receiving one trajectory CSV per successful cell.
    #[serde(default)]
    pub trajectories: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub simulator: TrainerConfig,
    /// Final-run length `S`.
    pub steps: u64,
    pub budget: BudgetMode,
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodEntry>,
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn num_groups(&self) -> usize {
        self.simulator.num_groups()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, "config")
    }

    fn parse(text: &str, source_name: &str) -> Result<Self> {
        let raw: RawExperiment = parse_str(text, source_name)?;
        let simulator = parse_simulator(raw.simulator, source_name)?;
        if raw.steps == 0 {
            return Err(HarnessError::validation("steps", "must be positive"));
        }
        check_seeds(&raw.seeds, "seeds")?;
        if raw.methods.is_empty() {
            return Err(HarnessError::validation("methods", "at least one method is required"));
        }
        let mut methods = Vec::with_capacity(raw.methods.len());
        let mut labels = BTreeSet::new();
        for (i, rm) in raw.methods.into_iter().enumerate() {
            let path = format!("methods[{i}]");
            let name = rm.name.clone();
            let spec = resolve_method(rm, &path, source_name, &simulator, raw.steps, raw.budget, false)?;
            let label = name.unwrap_or_else(|| spec.default_label());
            if !labels.insert(label.clone()) {
                return Err(HarnessError::validation(format!("{path}.name"), format!("duplicate method label `{label}`")));
            }
            methods.push(MethodEntry { label, spec });
        }
        Ok(Self { simulator, steps: raw.steps, budget: raw.budget, seeds: raw.seeds, methods, output: raw.output })
    }

    /// Extra-run allocation of every budget-spending entry, by label.
    pub fn allocations(&self) -> Vec<(String, RunAllocation)> {
        let m = self.num_groups();
        self.methods
            .iter()
            .filter_map(|e| {
                let kind = match &e.spec {
                    MethodSpec::Aioli { base: Some(b), .. } => b.kind(),
                    other => other.kind(),
                };
                kind.budgeted().map(|b| (e.label.clone(), allocation(b, m, self.steps, self.budget)))
            })
            .collect()
    }

    /// Replaces the seed list with a single seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }
}

/// Reads and validates an experiment config.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = read(path)?;
    ExperimentConfig::parse(&text, &path.display().to_string())
}

pub(crate) fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    simulator: Value,
    steps: u64,
    #[serde(default = "unrestricted")]
    budget: BudgetMode,
    seeds: Vec<u64>,
    methods: Vec<RawMethod>,
    #[serde(default)]
    output: OutputPaths,
}

fn unrestricted() -> BudgetMode {
    BudgetMode::Unrestricted
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethod {
    method: MethodKind,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    params: Option<Value>,
    #[serde(default)]
    candidates: Option<CandidateSpec>,
    #[serde(default)]
    base: Option<Box<RawMethod>>,
}

/// Shorthand for constant linear dynamics with identical initial losses on every split.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearSimulator {
    initial_losses: Vec<f64>,
    /// Per-step interaction matrix, row-major rows.
    interaction: Vec<Vec<f64>>,
    loss_floor: f64,
    #[serde(default)]
    noise_sigma: f64,
    #[serde(default)]
    gradient_noise_sigma: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    ood: Option<OodChannel>,
}

fn parse_str<T: DeserializeOwned>(text: &str, source_name: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Parse {
        source_name: source_name.into(),
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn parse_value<T: DeserializeOwned>(value: Value, prefix: &str, source_name: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        HarnessError::Parse { source_name: source_name.into(), path, message: e.inner().to_string() }
    })
}

/// Accepts a full trainer config (with `dynamics`) or the linear shorthand.
pub(crate) fn parse_simulator(value: Value, source_name: &str) -> Result<TrainerConfig> {
    let full = value.as_object().is_some_and(|o| o.contains_key("dynamics"));
    let config = if full {
        parse_value::<TrainerConfig>(value, "simulator", source_name)?
    } else {
        let s: LinearSimulator = parse_value(value, "simulator", source_name)?;
        let a = InteractionMatrix::from_rows(&s.interaction)
            .map_err(|e| HarnessError::validation("simulator.interaction", e.to_string()))?;
        let mut c = TrainerConfig::linear(s.initial_losses, a, s.loss_floor)
            .with_noise(s.noise_sigma)
            .with_gradient_noise(s.gradient_noise_sigma)
            .with_seed(s.seed);
        c.ood = s.ood;
        c
    };
    config.validate().map_err(|e| HarnessError::validation("simulator", e.to_string()))?;
    Ok(config)
}

fn check_seeds(seeds: &[u64], path: &str) -> Result<()> {
    if seeds.is_empty() {
        return Err(HarnessError::validation(path, "at least one seed is required"));
    }
    let mut seen = BTreeSet::new();
    for (i, s) in seeds.iter().enumerate() {
        if !seen.insert(*s) {
            return Err(HarnessError::validation(format!("{path}[{i}]"), format!("duplicate seed {s}")));
        }
    }
    Ok(())
}

fn core_field(e: &lmo_core::Error) -> Option<&'static str> {
    match e {
        lmo_core::Error::InvalidHyperParams { field, .. } => Some(field),
        lmo_core::Error::EpsilonOutOfRange(_) => Some("epsilon"),
        lmo_core::Error::GammaOutOfRange(_) => Some("gamma"),
        _ => None,
    }
}

fn param_error(path: &str, e: lmo_core::Error) -> HarnessError {
    match core_field(&e) {
        Some(f) => HarnessError::validation(format!("{path}.params.{f}"), e.to_string()),
        None => HarnessError::validation(format!("{path}.params"), e.to_string()),
    }
}

fn check_positive(path: &str, field: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(HarnessError::validation(format!("{path}.params.{field}"), format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

fn check_unit(path: &str, field: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(HarnessError::validation(format!("{path}.params.{field}"), format!("must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn resolve_method(
    raw: RawMethod,
    path: &str,
    source_name: &str,
    sim: &TrainerConfig,
    steps: u64,
    budget: BudgetMode,
    is_base: bool,
) -> Result<MethodSpec> {
    let m = sim.num_groups();
    let kind = raw.method;
    if is_base && kind.budgeted().is_none() {
        return Err(HarnessError::validation(
            format!("{path}.method"),
            format!("`{}` cannot be an AIOLI base; use grid_search, dml, skill_it, doremi or doge", kind.name()),
        ));
    }
    if is_base && raw.name.is_some() {
        return Err(HarnessError::validation(format!("{path}.name"), "base methods are labelled by their parent"));
    }
    if raw.candidates.is_some() && !matches!(kind, MethodKind::GridSearch | MethodKind::Dml) {
        return Err(HarnessError::validation(format!("{path}.candidates"), format!("`{}` takes no candidates", kind.name())));
    }
    if raw.base.is_some() && kind != MethodKind::Aioli {
        return Err(HarnessError::validation(format!("{path}.base"), "only aioli accepts a base method"));
    }
    let params_path = format!("{path}.params");
    let params = raw.params.unwrap_or_else(|| Value::Object(Default::default()));
    let candidates = |raw_c: Option<CandidateSpec>| -> Result<CandidateSpec> {
        let spec = raw_c.unwrap_or_else(|| CandidateSpec::default_for(m));
        let set = spec.build(m).map_err(|e| HarnessError::validation(format!("{path}.candidates"), e.to_string()))?;
        if kind == MethodKind::Dml && set.len() < m + 1 {
            return Err(HarnessError::validation(
                format!("{path}.candidates"),
                format!("dml needs at least {} candidates, got {}", m + 1, set.len()),
            ));
        }
        Ok(spec)
    };

    let spec = match kind {
        MethodKind::Stratified => {
            if params.as_object().is_none_or(|o| !o.is_empty()) {
                return Err(HarnessError::validation(params_path, "stratified takes no parameters"));
            }
            MethodSpec::Stratified
        }
        MethodKind::GridSearch => {
            if params.as_object().is_none_or(|o| !o.is_empty()) {
                return Err(HarnessError::validation(params_path, "grid_search takes no parameters"));
            }
            MethodSpec::GridSearch { candidates: candidates(raw.candidates)? }
        }
        MethodKind::Dml => {
            let params: DmlParams = parse_value(params, &params_path, source_name)?;
            check_positive(path, "fit.huber_delta", params.fit.huber_delta)?;
            MethodSpec::Dml { candidates: candidates(raw.candidates)?, params }
        }
        MethodKind::SkillIt => {
            let p: SkillItParams = parse_value(params, &params_path, source_name)?;
            check_positive(path, "eta", p.eta)?;
            if p.rounds == 0 {
                return Err(HarnessError::validation(format!("{params_path}.rounds"), "must be at least 1"));
            }
            if p.window == 0 {
                return Err(HarnessError::validation(format!("{params_path}.window"), "must be at least 1"));
            }
            MethodSpec::SkillIt(p)
        }
        MethodKind::Doremi => {
            let p: DoReMiParams = parse_value(params, &params_path, source_name)?;
            check_positive(path, "eta", p.eta)?;
            check_unit(path, "smoothing", p.smoothing)?;
            MethodSpec::DoReMi(p)
        }
        MethodKind::Doge => {
            let p: DogeParams = parse_value(params, &params_path, source_name)?;
            check_positive(path, "eta", p.eta)?;
            check_unit(path, "smoothing", p.smoothing)?;
            MethodSpec::Doge(p)
        }
        MethodKind::Aioli | MethodKind::AioliOod => {
            let has_delta = params.as_object().is_some_and(|o| o.contains_key("delta"));
            let mut p: AioliParams = parse_value(params, &params_path, source_name)?;
            if !has_delta {
                p.delta = default_delta(m);
            }
            if kind == MethodKind::AioliOod && sim.ood.is_none() {
                return Err(HarnessError::validation("simulator.ood", "aioli_ood needs an ood channel"));
            }
            let base = match raw.base {
                Some(b) => {
                    if p.init_steps != 0 || p.init_proportions.is_some() {
                        return Err(HarnessError::validation(
                            params_path,
                            "init_steps and init_proportions come from the base method",
                        ));
                    }
                    let base = resolve_method(*b, &format!("{path}.base"), source_name, sim, steps, budget, true)?;
                    let s_init = allocation(base.kind().budgeted().expect("checked"), m, steps, budget).steps_per_run;
                    let probe = AioliParams {
                        init_steps: s_init,
                        init_proportions: Some(MixtureProportions::uniform(m).map_err(|e| param_error(path, e))?),
                        ..p.clone()
                    };
                    probe.validate(m, steps).map_err(|e| param_error(path, e))?;
                    Some(Box::new(base))
                }
                None => {
                    p.validate(m, steps).map_err(|e| param_error(path, e))?;
                    None
                }
            };
            if kind == MethodKind::AioliOod {
                MethodSpec::AioliOod(p)
            } else {
                MethodSpec::Aioli { params: p, base }
            }
        }
    };
    Ok(spec)
}

/// Candidate sweep run outside any method: every candidate trained from scratch per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub simulator: TrainerConfig,
    pub steps: u64,
    pub candidates: CandidateSpec,
    pub seeds: Vec<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    simulator: Value,
    steps: u64,
    #[serde(default)]
    candidates: Option<CandidateSpec>,
    seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, "config")
    }

    fn parse(text: &str, source_name: &str) -> Result<Self> {
        let raw: RawSweep = parse_str(text, source_name)?;
        let simulator = parse_simulator(raw.simulator, source_name)?;
        let m = simulator.num_groups();
        if raw.steps == 0 {
            return Err(HarnessError::validation("steps", "must be positive"));
        }
        check_seeds(&raw.seeds, "seeds")?;
        let candidates = raw.candidates.unwrap_or_else(|| CandidateSpec::default_for(m));
        candidates.build(m).map_err(|e| HarnessError::validation("candidates", e.to_string()))?;
        Ok(Self { simulator, steps: raw.steps, candidates, seeds: raw.seeds })
    }
}

pub fn load_sweep_config(path: impl AsRef<Path>) -> Result<SweepConfig> {
    let path = path.as_ref();
    SweepConfig::parse(&read(path)?, &path.display().to_string())
}

/// Similarity-versus-improvement study over gradient-noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityStudyConfig {
    /// One study configuration per DoGE gradient-noise level.
    pub gradient_noise: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub params: StudyParams,
}

/// Greedy versus exhaustive schedule search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreedyConfig {
    #[serde(default)]
    pub candidates: Option<CandidateSpec>,
    /// Length of every round, in steps.
    pub round_steps: Vec<u64>,
    #[serde(default = "default_schedule_limit")]
    pub limit: usize,
}

fn default_schedule_limit() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub simulator: TrainerConfig,
    /// Run length of each study run.
    pub steps: u64,
    pub similarity: Option<SimilarityStudyConfig>,
    pub greedy: Option<GreedyConfig>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    simulator: Value,
    #[serde(default)]
    steps: u64,
    #[serde(default)]
    similarity: Option<SimilarityStudyConfig>,
    #[serde(default)]
    greedy: Option<GreedyConfig>,
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::parse(text, "config")
    }

    fn parse(text: &str, source_name: &str) -> Result<Self> {
        let raw: RawAnalysis = parse_str(text, source_name)?;
        let simulator = parse_simulator(raw.simulator, source_name)?;
        let m = simulator.num_groups();
        if let Some(s) = &raw.similarity {
            if raw.steps == 0 {
                return Err(HarnessError::validation("steps", "must be positive for a similarity study"));
            }
            if s.gradient_noise.is_empty() {
                return Err(HarnessError::validation("similarity.gradient_noise", "at least one level is required"));
            }
            if let Some((i, g)) = s.gradient_noise.iter().enumerate().find(|(_, g)| !(**g >= 0.0) || !g.is_finite()) {
                return Err(HarnessError::validation(format!("similarity.gradient_noise[{i}]"), format!("must be >= 0, got {g}")));
            }
            check_seeds(&s.seeds, "similarity.seeds")?;
            if s.params.probe_step >= raw.steps {
                return Err(HarnessError::validation("similarity.params.probe_step", "must fall inside the run"));
            }
        }
        if let Some(g) = &raw.greedy {
            if g.round_steps.is_empty() || g.round_steps.contains(&0) {
                return Err(HarnessError::validation("greedy.round_steps", "need at least one round, each of positive length"));
            }
            let spec = g.candidates.clone().unwrap_or_else(|| CandidateSpec::default_for(m));
            spec.build(m).map_err(|e| HarnessError::validation("greedy.candidates", e.to_string()))?;
        }
        if raw.similarity.is_none() && raw.greedy.is_none() {
            return Err(HarnessError::validation("similarity", "a similarity or greedy section is required"));
        }
        Ok(Self { simulator, steps: raw.steps, similarity: raw.similarity, greedy: raw.greedy })
    }
}

pub fn load_analysis_config(path: impl AsRef<Path>) -> Result<AnalysisConfig> {
    let path = path.as_ref();
    AnalysisConfig::parse(&read(path)?, &path.display().to_string())
}
