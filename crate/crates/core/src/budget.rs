//! Extra-step budgets and per-method run allocations.
//!
//! The final run always has `S` steps. Methods that learn proportions with
//! separate runs draw those steps from an extra allowance: `10S` in the
//! unrestricted setting, `0.5S` in the restricted one.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Why a trainer run exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPurpose {
    Final = 0,
    Reference = 1,
    Proxy = 2,
    Sweep = 3,
    SkillsGraph = 4,
}

impl RunPurpose {
    pub const COUNT: usize = 5;
    pub const EXTRA: [RunPurpose; 4] = [RunPurpose::Reference, RunPurpose::Proxy, RunPurpose::Sweep, RunPurpose::SkillsGraph];

    pub fn name(self) -> &'static str {
        match self {
            RunPurpose::Final => "final",
            RunPurpose::Reference => "reference",
            RunPurpose::Proxy => "proxy",
            RunPurpose::Sweep => "sweep",
            RunPurpose::SkillsGraph => "skills_graph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Up to `10S` extra steps.
    Unrestricted,
    /// Up to `0.5S` extra steps.
    Restricted,
    /// Explicit extra-step allowance.
    Custom(u64),
}

impl BudgetMode {
    pub fn allowance(self, final_steps: u64) -> u64 {
        match self {
            BudgetMode::Unrestricted => 10 * final_steps,
            BudgetMode::Restricted => final_steps / 2,
            BudgetMode::Custom(n) => n,
        }
    }
}

/// Methods that spend extra budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetedMethod {
    GridSearch,
    Dml,
    SkillIt,
    DoReMi,
    DoGE,
}

impl BudgetedMethod {
    pub const ALL: [BudgetedMethod; 5] =
        [BudgetedMethod::GridSearch, BudgetedMethod::Dml, BudgetedMethod::SkillIt, BudgetedMethod::DoReMi, BudgetedMethod::DoGE];
}

/// Number of extra runs and steps per run a method may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunAllocation {
    pub runs: u64,
    pub steps_per_run: u64,
}

impl RunAllocation {
    pub fn total(self) -> u64 {
        self.runs * self.steps_per_run
    }
}

/// Literal restricted Skill-It allocations that do not follow `S / (2m)`.
const SKILL_IT_RESTRICTED_OVERRIDES: &[(usize, u64, u64)] = &[(7, 40_000, 2814)];

/// Default extra-run allocation for `method` with `m` groups and final length `s`.
///
/// Unrestricted: GS/DML 10 runs, Skill-It `m` runs, DoReMi 2 runs, DoGE 1 run, all of `S` steps.
/// Restricted: GS/DML 10 runs of `S/20`, Skill-It `m` runs of `S/(2m)`, DoReMi 2 runs of `S/4`,
/// DoGE 1 run of `S/2`. A custom allowance keeps the unrestricted run counts and shrinks
/// runs evenly to fit.
pub fn allocation(method: BudgetedMethod, m: usize, s: u64, mode: BudgetMode) -> RunAllocation {
    let runs = match method {
        BudgetedMethod::GridSearch | BudgetedMethod::Dml => 10,
        BudgetedMethod::SkillIt => m as u64,
        BudgetedMethod::DoReMi => 2,
        BudgetedMethod::DoGE => 1,
    };
    let steps_per_run = match mode {
        BudgetMode::Unrestricted => s,
        BudgetMode::Restricted => match method {
            BudgetedMethod::GridSearch | BudgetedMethod::Dml => s / 20,
            BudgetedMethod::SkillIt => SKILL_IT_RESTRICTED_OVERRIDES
                .iter()
                .find(|&&(om, os, _)| om == m && os == s)
                .map_or(s / (2 * m as u64), |&(_, _, steps)| steps),
            BudgetedMethod::DoReMi => s / 4,
            BudgetedMethod::DoGE => s / 2,
        },
        BudgetMode::Custom(n) => s.min(n / runs),
    };
    RunAllocation { runs, steps_per_run }
}

/// Tracks extra steps consumed against the allowance, itemized by purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub final_steps: u64,
    pub allowance: u64,
    consumed: [u64; RunPurpose::COUNT],
}

impl BudgetLedger {
    pub fn new(final_steps: u64, mode: BudgetMode) -> Self {
        Self { final_steps, allowance: mode.allowance(final_steps), consumed: [0; RunPurpose::COUNT] }
    }

    pub fn with_allowance(final_steps: u64, allowance: u64) -> Self {
        Self { final_steps, allowance, consumed: [0; RunPurpose::COUNT] }
    }

    pub fn consumed(&self) -> u64 {
        self.consumed.iter().sum()
    }

    pub fn consumed_for(&self, purpose: RunPurpose) -> u64 {
        self.consumed[purpose as usize]
    }

    pub fn remaining(&self) -> u64 {
        self.allowance - self.consumed()
    }

    pub fn itemized(&self) -> Vec<(RunPurpose, u64)> {
        RunPurpose::EXTRA.iter().map(|&p| (p, self.consumed_for(p))).collect()
    }

    /// Fails without charging if fewer than `steps` remain.
    pub fn check(&self, steps: u64) -> Result<()> {
        if steps > self.remaining() {
            return Err(Error::BudgetExceeded { requested: steps, remaining: self.remaining() });
        }
        Ok(())
    }

    pub fn charge(&mut self, purpose: RunPurpose, steps: u64) -> Result<()> {
        if purpose == RunPurpose::Final {
            return Ok(());
        }
        self.check(steps)?;
        self.consumed[purpose as usize] += steps;
        Ok(())
    }
}
