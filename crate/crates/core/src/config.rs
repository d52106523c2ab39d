//! Run configuration: one TOML document with a section per module.
//!
//! ```toml
//! seed = 7
//! episodes = 5000
//! output_dir = "runs/desk"
//! eval_every = 50
//!
//! [scenario]
//! grid_rows = 4
//! grid_cols = 4
//! num_active = 4
//! noise_variance = 1e-3
//! geometry = { dims = [1, 8, 4] }
//! channel = { num_subcarriers = 16, num_taps = 4, symbol_period = 1e-8, path_loss = 1.0, num_paths = 1 }
//!
//! [codebook]
//! size = 32
//! phase_bits = 3
//!
//! [rate]
//! snr = 1e-3
//! reward_mode = "threshold"    # rate_threshold omitted: min-max rate of the training split
//!
//! [network]
//! layers = [128, 128, 256, 256, 32]
//!
//! [agent]
//! learning_rate = 1e-3
//! batch_size = 512
//! replay_capacity = 8192
//! ```
//!
//! Missing sections and keys take the desk-scale defaults. Unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, StopRule};
use crate::error::{Error, Result};
use crate::rate::{RateConfig, RewardMode};
use crate::scenario::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookConfig {
    pub size: usize,
    pub phase_bits: u32,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        CodebookConfig {
            size: 32,
            phase_bits: 3,
        }
    }
}

/// Rate model. Without `rate_threshold` the threshold is derived from the
/// scenario as the smallest optimal rate over the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateSection {
    pub snr: f64,
    pub rate_threshold: Option<f64>,
    pub reward_mode: RewardMode,
}

impl Default for RateSection {
    fn default() -> Self {
        RateSection {
            snr: 1e-3,
            rate_threshold: None,
            reward_mode: RewardMode::Threshold,
        }
    }
}

impl RateSection {
    /// Complete rate model given the threshold to use when none is configured.
    pub fn resolve(&self, derived_threshold: f64) -> RateConfig {
        RateConfig {
            snr: self.snr,
            rate_threshold: self.rate_threshold.unwrap_or(derived_threshold),
            reward_mode: self.reward_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Full layer widths, input first and output last.
    pub layers: Vec<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            layers: vec![128, 128, 256, 256, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Episode budget T.
    pub episodes: usize,
    pub output_dir: PathBuf,
    /// Greedy test-split evaluation cadence in episodes; 0 disables it.
    pub eval_every: usize,
    /// Load channels from this file instead of generating them.
    pub scenario_path: Option<PathBuf>,
    pub stop: Option<StopRule>,
    pub scenario: ScenarioConfig,
    pub codebook: CodebookConfig,
    pub rate: RateSection,
    pub network: NetworkConfig,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            episodes: 5000,
            output_dir: PathBuf::from("irs-sim-out"),
            eval_every: 50,
            scenario_path: None,
            stop: None,
            scenario: ScenarioConfig::default(),
            codebook: CodebookConfig::default(),
            rate: RateSection::default(),
            network: NetworkConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    /// Seeds for the independent random streams of one run.
    pub fn seeds(&self) -> RunSeeds {
        RunSeeds {
            scenario: self.seed,
            network: self.seed.wrapping_add(1),
            agent: self.seed.wrapping_add(2),
            evaluation: self.seed.wrapping_add(3),
        }
    }

    /// Checks every section and the cross-section shape constraints.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.agent.validate()?;
        self.rate.resolve(0.0).validate()?;
        if self.codebook.size < 2 {
            return Err(Error::Config("codebook needs at least two beams".into()));
        }
        if !(1..=16).contains(&self.codebook.phase_bits) {
            return Err(Error::Config("phase_bits must be in 1..=16".into()));
        }
        if let Some(stop) = self.stop {
            if stop.window == 0 || !stop.ratio.is_finite() {
                return Err(Error::Config("stop rule needs a positive window and finite ratio".into()));
            }
        }
        let layers = &self.network.layers;
        if layers.len() < 2 || layers.contains(&0) {
            return Err(Error::Config(format!("invalid network layers {layers:?}")));
        }
        let state_dim = self.scenario.state_dim();
        if layers[0] != state_dim {
            return Err(Error::Config(format!(
                "network input {} must equal 2 * subcarriers_used * num_active = {state_dim}",
                layers[0]
            )));
        }
        if *layers.last().expect("checked length") != self.codebook.size {
            return Err(Error::Config(format!(
                "network output {} must equal the codebook size {}",
                layers.last().expect("checked length"),
                self.codebook.size
            )));
        }
        if self.agent.k_b > self.codebook.size {
            return Err(Error::Config(format!(
                "k_b {} exceeds the codebook size {}",
                self.agent.k_b, self.codebook.size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSeeds {
    pub scenario: u64,
    pub network: u64,
    pub agent: u64,
    pub evaluation: u64,
}
