//! Achievable rate, clipped reward and the exhaustive-search oracle.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSet;
use crate::codebook::{Codebook, InteractionVector};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Relative tolerance for "rate equals the optimum" in ideal reward mode.
pub const IDEAL_REWARD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// +1 when the rate strictly exceeds the threshold.
    #[default]
    Threshold,
    /// +1 when the rate matches the oracle optimum.
    Ideal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    /// Linear SNR applied to `|effective gain|^2`.
    pub snr: f64,
    /// Bits/s/Hz.
    pub rate_threshold: f64,
    #[serde(default)]
    pub reward_mode: RewardMode,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            snr: 1.0,
            rate_threshold: 0.0,
            reward_mode: RewardMode::Threshold,
        }
    }
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::Config(format!("SNR must be positive, got {}", self.snr)));
        }
        if !self.rate_threshold.is_finite() {
            return Err(Error::Config("rate threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Subcarrier-averaged `log2(1 + snr |combined_k^T psi|^2)`.
pub fn achievable_rate(channels: &ChannelSet, psi: &InteractionVector, config: &RateConfig) -> Result<f64> {
    if psi.len() != channels.num_elements() {
        return Err(Error::Dimension(format!(
            "interaction vector has {} entries, channel has {} elements",
            psi.len(),
            channels.num_elements()
        )));
    }
    Ok(rate_unchecked(channels, psi, config.snr))
}

pub(crate) fn rate_unchecked(channels: &ChannelSet, psi: &InteractionVector, snr: f64) -> f64 {
    let total: f64 = channels
        .combined()
        .iter()
        .map(|h_k| (1.0 + snr * psi.gain_unchecked(h_k).norm_sqr()).log2())
        .sum();
    total / channels.num_subcarriers() as f64
}

/// Rate of every codebook beam, in codebook order.
pub fn beam_rates(
    channels: &ChannelSet,
    codebook: &Codebook,
    config: &RateConfig,
    exec: Execution,
) -> Result<Vec<f64>> {
    if codebook.num_elements() != channels.num_elements() {
        return Err(Error::Dimension(format!(
            "codebook has {} elements, channel has {}",
            codebook.num_elements(),
            channels.num_elements()
        )));
    }
    let snr = config.snr;
    Ok(par::map_indexed(exec, codebook.len(), |i| {
        rate_unchecked(channels, &codebook.vectors()[i], snr)
    }))
}

/// Best beam by exhaustive search; ties go to the lowest index.
pub fn oracle_search(channels: &ChannelSet, codebook: &Codebook, config: &RateConfig) -> Result<(usize, f64)> {
    oracle_search_with(channels, codebook, config, Execution::Sequential)
}

/// [`oracle_search`] with the per-beam rates evaluated under `exec`.
pub fn oracle_search_with(
    channels: &ChannelSet,
    codebook: &Codebook,
    config: &RateConfig,
    exec: Execution,
) -> Result<(usize, f64)> {
    let rates = beam_rates(channels, codebook, config, exec)?;
    Ok(argmax_first(&rates))
}

/// Oracle for many positions at once, fanned out across positions.
pub fn oracle_sweep(
    positions: &[&ChannelSet],
    codebook: &Codebook,
    config: &RateConfig,
    exec: Execution,
) -> Result<Vec<(usize, f64)>> {
    par::map_indexed(exec, positions.len(), |i| {
        oracle_search(positions[i], codebook, config)
    })
    .into_iter()
    .collect()
}

/// Index and value of the maximum, lowest index on ties.
pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Clips a rate to a +1 / -1 reward.
pub fn quantize_reward(rate: f64, oracle_rate: f64, config: &RateConfig) -> i8 {
    let good = match config.reward_mode {
        RewardMode::Threshold => rate > config.rate_threshold,
        RewardMode::Ideal => {
            let scale = oracle_rate.abs().max(f64::MIN_POSITIVE);
            (rate - oracle_rate).abs() <= IDEAL_REWARD_TOLERANCE * scale
        }
    };
    if good {
        1
    } else {
        -1
    }
}
