//! Oracle-driven diffusion samplers.
//!
//! Every sampler starts from the fully masked sequence and runs `S` reverse
//! steps `t = S, ..., 1` on the linear schedule. At each step the exact
//! posterior marginals of the current state are recomputed once and shared
//! by all position updates of that step.
//!
//! Configuration keys (TOML):
//!
//! | key               | families             | default          |
//! |-------------------|----------------------|------------------|
//! | `family`          | all                  | `"mdlm"`         |
//! | `steps`           | diffusion families   | 128              |
//! | `beta`            | `sedd`, `ar`         | 1.0              |
//! | `eta_cap`         | `remdm-*`            | 0.02             |
//! | `t_on`, `t_off`   | `remdm-loop`         | 0.55, 0.05       |
//! | `nucleus_p`       | `remdm-*`            | 1.0              |
//! | `remask_strategy` | `llada`              | `"low-confidence"` |
//! | `unmask_rule`     | `mdlm`               | `"bernoulli"`    |
//! | `prompt`          | diffusion families   | `[]`             |
//! | `seed`            | all                  | 123              |

mod engine;
mod filters;
mod law;
mod schedule;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelError;
use crate::posterior::PosteriorError;

pub use engine::{
    llada_sample, mdlm_sample, remdm_sample, run_trajectory, sample, sedd_sample, SampleBatch, TrajectoryRecord,
};
pub use filters::{nucleus_filter, tempered_scores};
pub use law::{apply_law, mdlm_law, remdm_law, remdm_step, sedd_law, SiteLaw, StepLaw, StepOutcome};
pub use schedule::{sigma_max, unmask_probability, NoiseSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("sequence {sequence} still has {masked} masked positions after the final step")]
    Unresolved { sequence: usize, masked: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Ancestral sampling from the chain itself (optionally sharpened).
    Ar,
    Sedd,
    Mdlm,
    Llada,
    RemdmConf,
    RemdmLoop,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Ar,
        Family::Sedd,
        Family::Mdlm,
        Family::Llada,
        Family::RemdmConf,
        Family::RemdmLoop,
    ];

    /// Model label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Family::Ar => "AR",
            Family::Sedd => "SEDD",
            Family::Mdlm => "MDLM",
            Family::Llada => "LLaDA",
            Family::RemdmConf => "ReMDM",
            Family::RemdmLoop => "ReMDM-loop",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Family::Ar => "ar",
            Family::Sedd => "sedd",
            Family::Mdlm => "mdlm",
            Family::Llada => "llada",
            Family::RemdmConf => "remdm-conf",
            Family::RemdmLoop => "remdm-loop",
        }
    }

    pub fn is_diffusion(self) -> bool {
        self != Family::Ar
    }

    pub fn is_remdm(self) -> bool {
        matches!(self, Family::RemdmConf | Family::RemdmLoop)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for Family {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, SamplerError> {
        Family::ALL
            .into_iter()
            .find(|f| f.key().eq_ignore_ascii_case(s) || f.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| SamplerError::Config(format!("unknown family {s:?}")))
    }
}

/// Which positions LLaDA keeps after drawing candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemaskStrategy {
    /// Keep the most confident candidates.
    #[default]
    LowConfidence,
    /// Keep a uniformly random subset.
    Random,
}

/// How MDLM chooses positions to reveal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnmaskRule {
    /// Each masked position reveals independently with the schedule rate.
    #[default]
    Bernoulli,
    /// Exactly `ceil(masked / t)` uniformly chosen positions reveal; with
    /// `S = T` this is one position per step.
    FixedCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub family: Family,
    pub steps: usize,
    pub beta: f64,
    pub eta_cap: f64,
    pub t_on: f64,
    pub t_off: f64,
    pub nucleus_p: f64,
    pub remask_strategy: RemaskStrategy,
    pub unmask_rule: UnmaskRule,
    pub prompt: Vec<u32>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            family: Family::Mdlm,
            steps: 128,
            beta: 1.0,
            eta_cap: 0.02,
            t_on: 0.55,
            t_off: 0.05,
            nucleus_p: 1.0,
            remask_strategy: RemaskStrategy::LowConfidence,
            unmask_rule: UnmaskRule::Bernoulli,
            prompt: Vec::new(),
            seed: 123,
        }
    }
}

impl SamplerConfig {
    pub fn new(family: Family, steps: usize, seed: u64) -> Self {
        Self {
            family,
            steps,
            seed,
            ..Self::default()
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SamplerError> {
        let cfg: Self = toml::from_str(s).map_err(|e| SamplerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule::linear(self.steps)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::Config(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta {} must be positive", self.beta));
        }
        if !(0.0..=1.0).contains(&self.eta_cap) {
            return bad(format!("eta_cap {} not in [0, 1]", self.eta_cap));
        }
        if !(0.0 <= self.t_off && self.t_off < self.t_on && self.t_on <= 1.0) {
            return bad(format!("need 0 <= t_off < t_on <= 1, got t_off {} t_on {}", self.t_off, self.t_on));
        }
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return bad(format!("nucleus_p {} not in (0, 1]", self.nucleus_p));
        }
        if self.family == Family::Ar && !self.prompt.is_empty() {
            return bad("prompts apply to diffusion families only".into());
        }
        Ok(())
    }

    /// Checks shape-dependent constraints against a chain.
    pub fn validate_for(&self, vocab_size: usize, len: usize) -> Result<(), SamplerError> {
        self.validate()?;
        if self.prompt.len() > len {
            return Err(SamplerError::Config(format!(
                "prompt of length {} exceeds sequence length {len}",
                self.prompt.len()
            )));
        }
        if let Some(&id) = self.prompt.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(SamplerError::Config(format!("prompt token {id} out of range")));
        }
        Ok(())
    }
}

/// Sidecar record stored next to sampled sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub family: Family,
    pub steps: usize,
    pub seed: u64,
    pub schedule: String,
    pub length: usize,
    pub count: usize,
    pub wall_time_s: f64,
    pub config: SamplerConfig,
}

impl SampleMetadata {
    pub fn new(config: &SamplerConfig, length: usize, count: usize, wall_time_s: f64) -> Self {
        Self {
            family: config.family,
            steps: config.steps,
            seed: config.seed,
            schedule: "linear".into(),
            length,
            count,
            wall_time_s,
            config: config.clone(),
        }
    }
}
