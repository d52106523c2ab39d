//! Experiment world: receiver grid, per-position channels, train/test split,
//! state encoding and the on-disk scenario format.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! "IRS1"
//! u64 num_positions, u64 K, u64 M, u64 M_active, u64 L
//! per position:
//!     M_active x u64 active element indices
//!     K x M complex h_tx   (f64 re, f64 im), subcarrier-major
//!     K x M complex h_rx
//! ```
//!
//! A JSON sidecar next to the binary (same stem, `.json`) carries the grid,
//! split, noise level, normalization constant and seed.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::channel::{
    freq_channel, generate_rays, random_active_indices, sample_and_noise, validate_active,
    ArrayGeometry, ChannelConfig, ChannelSet, SampledChannel,
};
use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rate::{oracle_sweep, RateConfig};
use crate::rng;

const MAGIC: &[u8; 4] = b"IRS1";

// stream ids under the master seed
const STREAM_TX: u64 = 1;
const STREAM_ACTIVE: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_NORMALIZE: u64 = 4;
const STREAM_POSITION: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// One constant from the whole training split.
    #[default]
    Dataset,
    /// Running maximum over the states observed so far.
    Running,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub geometry: ArrayGeometry,
    pub channel: ChannelConfig,
    /// Receiver-side path loss; the transmitter side uses `channel.path_loss`.
    #[serde(default)]
    pub rx_path_loss: Option<f64>,
    pub num_active: usize,
    pub noise_variance: f64,
    /// Subcarriers fed to the network; defaults to `min(K, 64)`.
    #[serde(default)]
    pub subcarriers_used: Option<usize>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub normalization: NormalizationMode,
}

fn default_train_fraction() -> f64 {
    0.7
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            grid_rows: 4,
            grid_cols: 4,
            geometry: ArrayGeometry {
                dims: [1, 8, 4],
                spacing: 0.5,
            },
            channel: ChannelConfig::default(),
            rx_path_loss: None,
            num_active: 4,
            noise_variance: 1e-3,
            subcarriers_used: None,
            train_fraction: default_train_fraction(),
            normalization: NormalizationMode::Dataset,
        }
    }
}

impl ScenarioConfig {
    pub fn num_positions(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn subcarriers_used(&self) -> usize {
        self.subcarriers_used
            .unwrap_or_else(|| self.channel.num_subcarriers.min(64))
    }

    /// Network input width, `2 * K_in * M_active`.
    pub fn state_dim(&self) -> usize {
        2 * self.subcarriers_used() * self.num_active
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.channel.validate()?;
        if self.num_positions() == 0 {
            return Err(Error::Config("receiver grid is empty".into()));
        }
        if let Some(rho) = self.rx_path_loss {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::Config("receiver path loss must be positive".into()));
            }
        }
        if self.num_active == 0 || self.num_active > self.geometry.num_elements() {
            return Err(Error::Config(format!(
                "active element count {} must be in 1..={}",
                self.num_active,
                self.geometry.num_elements()
            )));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::Config("noise variance must be non-negative".into()));
        }
        let k_in = self.subcarriers_used();
        if k_in == 0 || k_in > self.channel.num_subcarriers {
            return Err(Error::Config(format!(
                "subcarriers_used {k_in} must be in 1..={}",
                self.channel.num_subcarriers
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train fraction must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// One receiver location.
#[derive(Debug, Clone, PartialEq)]
pub struct Position {
    pub grid: [usize; 2],
    pub channels: ChannelSet,
    pub active_indices: Vec<usize>,
}

/// Sidecar metadata stored next to the binary channel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub positions: Vec<[usize; 2]>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub subcarriers_used: usize,
    pub noise_variance: f64,
    pub normalization_constant: f64,
    #[serde(default)]
    pub normalization: NormalizationMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    positions: Vec<Position>,
    num_paths: usize,
    meta: ScenarioMeta,
}

impl Scenario {
    pub fn generate(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        Self::generate_with(config, seed, Execution::default())
    }

    /// Builds every position's channels; positions are generated under `exec`.
    pub fn generate_with(config: &ScenarioConfig, seed: u64, exec: Execution) -> Result<Self> {
        config.validate()?;
        let geometry = config.geometry;
        let tx_cfg = config.channel;
        let rx_cfg = ChannelConfig {
            path_loss: config.rx_path_loss.unwrap_or(tx_cfg.path_loss),
            ..tx_cfg
        };
        let tx_seed = rng::stream(seed, STREAM_TX).next_u64();
        let h_tx = freq_channel(&generate_rays(&tx_cfg, tx_seed), &geometry, &tx_cfg);
        let active = random_active_indices(
            geometry.num_elements(),
            config.num_active,
            &mut rng::stream(seed, STREAM_ACTIVE),
        )?;

        let n = config.num_positions();
        let positions = par::map_indexed(exec, n, |i| {
            let rx_seed = rng::stream(seed, STREAM_POSITION + i as u64).next_u64();
            let h_rx = freq_channel(&generate_rays(&rx_cfg, rx_seed), &geometry, &rx_cfg);
            ChannelSet::new(h_tx.clone(), h_rx).map(|channels| Position {
                grid: [i / config.grid_cols, i % config.grid_cols],
                channels,
                active_indices: active.clone(),
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let (train, test) = split_indices(n, config.train_fraction, seed);
        let k_in = config.subcarriers_used();
        let mut norm_rng = rng::stream(seed, STREAM_NORMALIZE);
        let samples = train
            .iter()
            .map(|&i| {
                let p = &positions[i];
                sample_and_noise(&p.channels, &p.active_indices, config.noise_variance, &mut norm_rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let normalization_constant = compute_normalization(&samples, k_in)?;

        Ok(Scenario {
            positions,
            num_paths: config.channel.num_paths,
            meta: ScenarioMeta {
                seed: Some(seed),
                grid_rows: config.grid_rows,
                grid_cols: config.grid_cols,
                positions: (0..n).map(|i| [i / config.grid_cols, i % config.grid_cols]).collect(),
                train,
                test,
                subcarriers_used: k_in,
                noise_variance: config.noise_variance,
                normalization_constant,
                normalization: config.normalization,
            },
        })
    }

    pub fn num_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn position(&self, index: usize) -> &Position {
        &self.positions[index]
    }

    pub fn train(&self) -> &[usize] {
        &self.meta.train
    }

    pub fn test(&self) -> &[usize] {
        &self.meta.test
    }

    pub fn meta(&self) -> &ScenarioMeta {
        &self.meta
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn num_subcarriers(&self) -> usize {
        self.positions[0].channels.num_subcarriers()
    }

    pub fn num_elements(&self) -> usize {
        self.positions[0].channels.num_elements()
    }

    pub fn num_active(&self) -> usize {
        self.positions[0].active_indices.len()
    }

    pub fn subcarriers_used(&self) -> usize {
        self.meta.subcarriers_used
    }

    pub fn noise_variance(&self) -> f64 {
        self.meta.noise_variance
    }

    pub fn normalization_constant(&self) -> f64 {
        self.meta.normalization_constant
    }

    pub fn normalization_mode(&self) -> NormalizationMode {
        self.meta.normalization
    }

    pub fn state_dim(&self) -> usize {
        2 * self.subcarriers_used() * self.num_active()
    }

    /// Fresh noisy estimate of position `index`'s sampled channel.
    pub fn observe<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> SampledChannel {
        let p = &self.positions[index];
        sample_and_noise(&p.channels, &p.active_indices, self.meta.noise_variance, rng)
            .expect("scenario positions are validated")
    }

    /// Encodes with the scenario's dataset normalization constant.
    pub fn encode(&self, sampled: &SampledChannel) -> Vec<f64> {
        encode_state(sampled, self.subcarriers_used(), self.normalization_constant())
            .expect("scenario dimensions are validated")
    }

    /// Exhaustive-search optimum for every position, in position order.
    pub fn oracle_table(
        &self,
        codebook: &Codebook,
        rate: &RateConfig,
        exec: Execution,
    ) -> Result<Vec<(usize, f64)>> {
        let sets: Vec<&ChannelSet> = self.positions.iter().map(|p| &p.channels).collect();
        oracle_sweep(&sets, codebook, rate, exec)
    }

    /// Smallest per-position optimum over the training split.
    pub fn min_max_rate(&self, codebook: &Codebook, rate: &RateConfig, exec: Execution) -> Result<f64> {
        if self.train().is_empty() {
            return Err(Error::Config(
                "training split is empty, min-max rate is undefined".into(),
            ));
        }
        let table = self.oracle_table(codebook, rate, exec)?;
        Ok(self
            .train()
            .iter()
            .map(|&i| table[i].1)
            .fold(f64::INFINITY, f64::min))
    }

    /// Serializes the channel data in the binary scenario layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let k = self.num_subcarriers();
        let m = self.num_elements();
        let m_active = self.num_active();
        let mut out = Vec::with_capacity(4 + 40 + self.positions.len() * (8 * m_active + 32 * k * m));
        out.extend_from_slice(MAGIC);
        for v in [self.positions.len(), k, m, m_active, self.num_paths] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for p in &self.positions {
            for &a in &p.active_indices {
                out.extend_from_slice(&(a as u64).to_le_bytes());
            }
            for link in [p.channels.tx(), p.channels.rx()] {
                for z in link.iter().flatten() {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parses the binary layout and attaches `meta` (or a default sidecar).
    pub fn from_bytes(bytes: &[u8], meta: Option<ScenarioMeta>, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::malformed(path, reason);
        if bytes.len() < 4 + 40 || &bytes[..4] != MAGIC {
            return Err(bad("missing IRS1 magic or header".into()));
        }
        let header: Vec<u64> = bytes[4..44]
            .chunks_exact(8)
            .map(|w| u64::from_le_bytes(w.try_into().expect("8 bytes")))
            .collect();
        let to_usize = |v: u64| usize::try_from(v).map_err(|_| bad(format!("header value {v} overflows")));
        let n = to_usize(header[0])?;
        let k = to_usize(header[1])?;
        let m = to_usize(header[2])?;
        let m_active = to_usize(header[3])?;
        let num_paths = to_usize(header[4])?;
        if n == 0 || k == 0 || m == 0 || m_active == 0 || m_active > m {
            return Err(bad(format!(
                "invalid header: positions {n}, K {k}, M {m}, active {m_active}"
            )));
        }
        let per_position = k
            .checked_mul(m)
            .and_then(|km| km.checked_mul(32))
            .and_then(|c| c.checked_add(8 * m_active))
            .ok_or_else(|| bad("header sizes overflow".into()))?;
        let expected = n
            .checked_mul(per_position)
            .and_then(|b| b.checked_add(44))
            .ok_or_else(|| bad("header sizes overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Dimension(format!(
                "{}: header declares {n} positions of K={k}, M={m}, M_active={m_active} \
                 ({expected} bytes) but file has {} bytes",
                path.display(),
                bytes.len()
            )));
        }

        let mut cursor = &bytes[44..];
        let take_f64 = |cursor: &mut &[u8]| {
            let (head, tail) = cursor.split_at(8);
            *cursor = tail;
            f64::from_le_bytes(head.try_into().expect("8 bytes"))
        };
        let mut positions = Vec::with_capacity(n);
        for i in 0..n {
            let mut active = Vec::with_capacity(m_active);
            for _ in 0..m_active {
                let (head, tail) = cursor.split_at(8);
                cursor = tail;
                active.push(to_usize(u64::from_le_bytes(head.try_into().expect("8 bytes")))?);
            }
            validate_active(&active, m).map_err(|e| bad(format!("position {i}: {e}")))?;
            let mut links = Vec::with_capacity(2);
            for _ in 0..2 {
                let link: Vec<Vec<Complex64>> = (0..k)
                    .map(|_| {
                        (0..m)
                            .map(|_| {
                                let re = take_f64(&mut cursor);
                                let im = take_f64(&mut cursor);
                                Complex64::new(re, im)
                            })
                            .collect()
                    })
                    .collect();
                links.push(link);
            }
            let h_rx = links.pop().expect("two links");
            let h_tx = links.pop().expect("two links");
            if h_tx.iter().chain(&h_rx).flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(bad(format!("position {i} has non-finite channel values")));
            }
            positions.push(Position {
                grid: [0, i],
                channels: ChannelSet::new(h_tx, h_rx)?,
                active_indices: active,
            });
        }

        let meta = match meta {
            Some(meta) => meta,
            None => default_meta(&positions, k)?,
        };
        validate_meta(&meta, n, k).map_err(|e| bad(format!("sidecar: {e}")))?;
        for (p, grid) in positions.iter_mut().zip(&meta.positions) {
            p.grid = *grid;
        }
        Ok(Scenario {
            positions,
            num_paths,
            meta,
        })
    }

    /// Writes the binary file and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta).expect("sidecar serializes");
        std::fs::write(&side, json).map_err(|e| Error::io(side, e))
    }

    /// Reads a scenario; the sidecar is optional for externally produced files.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let meta = match std::fs::read_to_string(&side) {
            Ok(text) => Some(
                serde_json::from_str::<ScenarioMeta>(&text)
                    .map_err(|e| Error::malformed(&side, e.to_string()))?,
            ),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(side, e)),
        };
        Self::from_bytes(&bytes, meta, path)
    }
}

/// `scenario.bin` -> `scenario.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn default_meta(positions: &[Position], k: usize) -> Result<ScenarioMeta> {
    let n = positions.len();
    let (train, test) = split_indices(n, default_train_fraction(), 0);
    let k_in = k.min(64);
    let samples: Vec<SampledChannel> = train
        .iter()
        .map(|&i| {
            let p = &positions[i];
            let mut rng = rng::stream(0, 0);
            sample_and_noise(&p.channels, &p.active_indices, 0.0, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(ScenarioMeta {
        seed: None,
        grid_rows: 1,
        grid_cols: n,
        positions: (0..n).map(|i| [0, i]).collect(),
        train,
        test,
        subcarriers_used: k_in,
        noise_variance: 0.0,
        normalization_constant: compute_normalization(&samples, k_in)?,
        normalization: NormalizationMode::Dataset,
    })
}

fn validate_meta(meta: &ScenarioMeta, n: usize, k: usize) -> std::result::Result<(), String> {
    if meta.positions.len() != n {
        return Err(format!("{} grid entries for {n} positions", meta.positions.len()));
    }
    let mut seen = vec![false; n];
    for &i in meta.train.iter().chain(&meta.test) {
        if i >= n || seen[i] {
            return Err(format!("split is not a partition of 0..{n}"));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(format!("split is not a partition of 0..{n}"));
    }
    if meta.subcarriers_used == 0 || meta.subcarriers_used > k {
        return Err(format!("subcarriers_used {} exceeds K={k}", meta.subcarriers_used));
    }
    if !(meta.normalization_constant > 0.0 && meta.normalization_constant.is_finite()) {
        return Err("normalization constant must be positive".into());
    }
    if !(meta.noise_variance >= 0.0 && meta.noise_variance.is_finite()) {
        return Err("noise variance must be non-negative".into());
    }
    Ok(())
}

/// Random train/test partition: `floor(fraction * n)` training positions,
/// at least one.
fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_train = (((fraction * n as f64) + 1e-9).floor() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, STREAM_SPLIT));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Flattens the first `k_in` subcarriers into `(re, im)` pairs,
/// subcarrier-major then element-major, divided by `normalization`.
pub fn encode_state(sampled: &SampledChannel, k_in: usize, normalization: f64) -> Result<Vec<f64>> {
    if k_in == 0 || k_in > sampled.samples().len() {
        return Err(Error::Dimension(format!(
            "cannot use {k_in} of {} subcarriers",
            sampled.samples().len()
        )));
    }
    if !(normalization > 0.0 && normalization.is_finite()) {
        return Err(Error::Config("normalization constant must be positive".into()));
    }
    let mut out = Vec::with_capacity(2 * k_in * sampled.num_active());
    for z in sampled.samples()[..k_in].iter().flatten() {
        out.push(z.re / normalization);
        out.push(z.im / normalization);
    }
    Ok(out)
}

/// Largest `|re|` or `|im|` among the first `k_in` subcarriers of `samples`.
pub fn compute_normalization(samples: &[SampledChannel], k_in: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("normalization needs at least one training sample".into()));
    }
    let max = samples
        .iter()
        .flat_map(|s| s.samples().iter().take(k_in).flatten())
        .fold(0.0f64, |acc, z| acc.max(z.re.abs()).max(z.im.abs()));
    if max > 0.0 {
        Ok(max)
    } else {
        Err(Error::ZeroNormalization)
    }
}

/// Online normalization: the running maximum over states seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningMax {
    max: f64,
}

impl RunningMax {
    pub fn update(&mut self, sampled: &SampledChannel, k_in: usize) {
        self.max = sampled
            .samples()
            .iter()
            .take(k_in)
            .flatten()
            .fold(self.max, |acc, z| acc.max(z.re.abs()).max(z.im.abs()));
    }

    /// Current constant, `None` until a nonzero entry has been seen.
    pub fn value(&self) -> Option<f64> {
        (self.max > 0.0).then_some(self.max)
    }
}
