//! `irs-sim` command line: `run`, `eval` and `oracle`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
//! 4 I/O error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, Agent, Environment, EpisodeLog, EvalSummary};
use crate::codebook::Codebook;
use crate::config::{RunConfig, RunSeeds};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::qnetwork::QNetwork;
use crate::scenario::Scenario;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const CURVE_FILE: &str = "learning_curve.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCENARIO_FILE: &str = "scenario.bin";
pub const CODEBOOK_FILE: &str = "codebook.json";
pub const ORACLE_FILE: &str = "oracle.json";
pub const ORACLE_CSV_FILE: &str = "oracle.csv";

/// `v<crate version>`, in the style of `git describe`.
pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

#[derive(Debug, Parser)]
#[command(name = "irs-sim", version, about = "IRS beam selection with deep Q-learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate (or load) a scenario, train, and write the learning curve.
    Run {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint with k_B refinement.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Run config for the codebook and SNR; defaults to the manifest
        /// next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "k-b", default_value_t = 1)]
        k_b: usize,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Seed for the evaluation pilot noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive-search optimum per position and the derived threshold.
    Oracle {
        #[arg(long)]
        scenario: PathBuf,
        /// Run config for the codebook and SNR; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the scenario's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Dimension(_)
        | Error::DuplicateBeam { .. }
        | Error::InsufficientSamples { .. }
        | Error::ZeroNormalization => EXIT_CONFIG,
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Io { .. } | Error::Malformed { .. } => EXIT_IO,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    par::configure_threads_from_env();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("irs-sim: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let report = cmd_run(&cfg, Execution::default())?;
            println!(
                "{} episodes, test mean rate {:.4} of {:.4} bits/s/Hz, outputs in {}",
                report.manifest.episodes_run,
                report.manifest.final_eval.test_mean_rate,
                report.manifest.final_eval.test_oracle_mean_rate,
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            scenario,
            config,
            k_b,
            split,
            seed,
            out,
        } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => config_from_manifest(&parent_dir(&checkpoint).join(MANIFEST_FILE))?,
            };
            let out = out.unwrap_or_else(|| parent_dir(&checkpoint));
            let (summary, path) = cmd_eval(&cfg, &checkpoint, &scenario, k_b, split, seed, &out)?;
            println!(
                "k_B={} mean rate {:.4} of {:.4} bits/s/Hz over {} positions, wrote {}",
                summary.k_b,
                summary.mean_rate,
                summary.mean_oracle_rate,
                summary.records.len(),
                path.display()
            );
            Ok(())
        }
        Command::Oracle {
            scenario,
            config,
            out,
        } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let out = out.unwrap_or_else(|| parent_dir(&scenario));
            let report = cmd_oracle(&cfg, &scenario, &out)?;
            println!(
                "{} positions, threshold {:.4} bits/s/Hz",
                report.positions.len(),
                report.rate_threshold
            );
            Ok(())
        }
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Recovers the run config echoed in a manifest.
pub fn config_from_manifest(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
    manifest.config.validate()?;
    Ok(manifest.config)
}

/// One learning-curve row. Evaluation columns are empty except on
/// evaluation episodes; `loss` is empty while training is skipped.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub episode: usize,
    pub epsilon: f64,
    pub train_rate: f64,
    pub oracle_rate: f64,
    pub reward: i8,
    pub loss: Option<f64>,
    pub eval_mean_rate: Option<f64>,
    pub eval_oracle_mean_rate: Option<f64>,
}

/// Reflection-beam bookkeeping for the training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    pub training_episodes: usize,
    /// Beams reflected during training, counted from the episode log.
    pub training_beams: usize,
    pub beams_per_episode: f64,
    /// Beams the exhaustive sweep needs at every position.
    pub exhaustive_beams_per_position: usize,
    /// `beams_per_episode / exhaustive_beams_per_position`.
    pub ratio: f64,
}

impl Overhead {
    pub fn from_logs(logs: &[EpisodeLog], codebook_size: usize) -> Self {
        let episodes = logs.len();
        // every log row carries exactly one reflected beam
        let beams = logs.iter().filter(|l| l.action < codebook_size).count();
        let per_episode = if episodes == 0 {
            0.0
        } else {
            beams as f64 / episodes as f64
        };
        Overhead {
            training_episodes: episodes,
            training_beams: beams,
            beams_per_episode: per_episode,
            exhaustive_beams_per_position: codebook_size,
            ratio: per_episode / codebook_size as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    pub train_mean_rate: f64,
    pub train_oracle_mean_rate: f64,
    pub test_mean_rate: f64,
    pub test_oracle_mean_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: RunConfig,
    pub seeds: ManifestSeeds,
    pub rate_threshold: f64,
    pub episodes_run: usize,
    pub train_positions: usize,
    pub test_positions: usize,
    pub overhead: Overhead,
    pub final_eval: FinalEval,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSeeds {
    pub scenario: u64,
    pub network: u64,
    pub agent: u64,
    pub evaluation: u64,
}

impl From<RunSeeds> for ManifestSeeds {
    fn from(s: RunSeeds) -> Self {
        ManifestSeeds {
            scenario: s.scenario,
            network: s.network,
            agent: s.agent,
            evaluation: s.evaluation,
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub logs: Vec<EpisodeLog>,
    pub manifest: Manifest,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable output");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn build_codebook(cfg: &RunConfig) -> Result<Codebook> {
    Codebook::build(&cfg.scenario.geometry, cfg.codebook.size, cfg.codebook.phase_bits)
}

fn check_scenario(cfg: &RunConfig, scenario: &Scenario) -> Result<()> {
    if scenario.num_elements() != cfg.scenario.geometry.num_elements() {
        return Err(Error::Config(format!(
            "scenario has {} elements, geometry has {}",
            scenario.num_elements(),
            cfg.scenario.geometry.num_elements()
        )));
    }
    if scenario.state_dim() != cfg.network.layers[0] {
        return Err(Error::Config(format!(
            "scenario state dimension {} differs from network input {}",
            scenario.state_dim(),
            cfg.network.layers[0]
        )));
    }
    Ok(())
}

/// Full training run; writes every output into `cfg.output_dir`.
///
/// All validation happens before the output directory is touched, so a
/// configuration error leaves no files behind.
pub fn cmd_run(cfg: &RunConfig, exec: Execution) -> Result<RunReport> {
    cfg.validate()?;
    let seeds = cfg.seeds();
    let codebook = build_codebook(cfg)?;
    let scenario = match &cfg.scenario_path {
        Some(path) => Scenario::load(path)?,
        None => Scenario::generate_with(&cfg.scenario, seeds.scenario, exec)?,
    };
    check_scenario(cfg, &scenario)?;
    let threshold = match cfg.rate.rate_threshold {
        Some(t) => t,
        None => scenario.min_max_rate(&codebook, &cfg.rate.resolve(0.0), exec)?,
    };
    let rate = cfg.rate.resolve(threshold);
    let env = Environment::new(&scenario, &codebook, rate, exec)?;
    let network = QNetwork::init(&cfg.network.layers, seeds.network)?;
    let mut agent = Agent::new(cfg.agent.clone(), network, seeds.agent)?.with_execution(exec);

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    scenario.save(&out.join(SCENARIO_FILE))?;
    codebook.save(&out.join(CODEBOOK_FILE))?;

    let curve_path = out.join(CURVE_FILE);
    let mut writer = csv::Writer::from_path(&curve_path).map_err(|e| csv_error(&curve_path, e))?;
    let test = scenario.test().to_vec();
    let eval_every = cfg.eval_every;
    let logs = agent.train(&env, cfg.episodes, cfg.stop, |agent, log| {
        let mut row = CurveRow {
            episode: log.episode,
            epsilon: log.epsilon,
            train_rate: log.rate,
            oracle_rate: log.oracle_rate,
            reward: log.reward,
            loss: log.loss,
            eval_mean_rate: None,
            eval_oracle_mean_rate: None,
        };
        if eval_every > 0 && (log.episode + 1) % eval_every == 0 && !test.is_empty() {
            let summary = agent.evaluate(&env, &test, 1, seeds.evaluation, exec)?;
            row.eval_mean_rate = Some(summary.mean_rate);
            row.eval_oracle_mean_rate = Some(summary.mean_oracle_rate);
        }
        writer.serialize(&row).map_err(|e| csv_error(&curve_path, e))
    })?;
    writer.flush().map_err(|e| Error::io(&curve_path, e))?;

    agent.online().save(&out.join(CHECKPOINT_FILE))?;

    let k_b = cfg.agent.k_b;
    let mean_pair = |positions: &[usize]| -> Result<(f64, f64)> {
        if positions.is_empty() {
            return Ok((0.0, 0.0));
        }
        let s = agent.evaluate(&env, positions, k_b, seeds.evaluation, exec)?;
        Ok((s.mean_rate, s.mean_oracle_rate))
    };
    let (train_mean_rate, train_oracle_mean_rate) = mean_pair(scenario.train())?;
    let (test_mean_rate, test_oracle_mean_rate) = mean_pair(scenario.test())?;

    let manifest = Manifest {
        version: version_string(),
        config: cfg.clone(),
        seeds: seeds.into(),
        rate_threshold: threshold,
        episodes_run: logs.len(),
        train_positions: scenario.train().len(),
        test_positions: scenario.test().len(),
        overhead: Overhead::from_logs(&logs, codebook.len()),
        final_eval: FinalEval {
            train_mean_rate,
            train_oracle_mean_rate,
            test_mean_rate,
            test_oracle_mean_rate,
        },
        files: [
            CURVE_FILE,
            CHECKPOINT_FILE,
            SCENARIO_FILE,
            "scenario.json",
            CODEBOOK_FILE,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(RunReport { logs, manifest })
}

fn split_positions(scenario: &Scenario, split: Split) -> Vec<usize> {
    match split {
        Split::Train => scenario.train().to_vec(),
        Split::Test => scenario.test().to_vec(),
        Split::All => (0..scenario.num_positions()).collect(),
    }
}

/// Evaluates a saved network; writes `eval_k<k_B>.json` into `out`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    scenario_path: &Path,
    k_b: usize,
    split: Split,
    seed: u64,
    out: &Path,
) -> Result<(EvalSummary, PathBuf)> {
    let codebook = build_codebook(cfg)?;
    let network = QNetwork::load(checkpoint)?;
    let scenario = Scenario::load(scenario_path)?;
    if codebook.num_elements() != scenario.num_elements() {
        return Err(Error::Dimension(format!(
            "codebook has {} elements, scenario has {}",
            codebook.num_elements(),
            scenario.num_elements()
        )));
    }
    let rate = cfg.rate.resolve(0.0);
    let exec = Execution::default();
    let env = Environment::new(&scenario, &codebook, rate, exec)?;
    let positions = split_positions(&scenario, split);
    let summary = evaluate(
        &network,
        &env,
        &positions,
        k_b,
        scenario.normalization_constant(),
        seed,
        exec,
    )?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(format!("eval_k{k_b}.json"));
    write_json(&path, &summary)?;
    Ok((summary, path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub position: usize,
    pub row: usize,
    pub col: usize,
    pub split: String,
    pub best_index: usize,
    pub oracle_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    /// Smallest optimal rate over the training split.
    pub rate_threshold: f64,
    pub positions: Vec<OracleRow>,
}

/// Exhaustive sweep; writes `oracle.json` and `oracle.csv` into `out`.
pub fn cmd_oracle(cfg: &RunConfig, scenario_path: &Path, out: &Path) -> Result<OracleReport> {
    let codebook = build_codebook(cfg)?;
    let scenario = Scenario::load(scenario_path)?;
    let rate = cfg.rate.resolve(0.0);
    let exec = Execution::default();
    if codebook.num_elements() != scenario.num_elements() {
        return Err(Error::Dimension(format!(
            "codebook has {} elements, scenario has {}",
            codebook.num_elements(),
            scenario.num_elements()
        )));
    }
    let threshold = scenario.min_max_rate(&codebook, &rate, exec)?;
    let table = scenario.oracle_table(&codebook, &rate, exec)?;
    let positions = table
        .iter()
        .enumerate()
        .map(|(i, &(best_index, oracle_rate))| {
            let [row, col] = scenario.position(i).grid;
            let split = if scenario.train().binary_search(&i).is_ok() {
                "train"
            } else {
                "test"
            };
            OracleRow {
                position: i,
                row,
                col,
                split: split.to_string(),
                best_index,
                oracle_rate,
            }
        })
        .collect::<Vec<_>>();
    let report = OracleReport {
        rate_threshold: threshold,
        positions,
    };

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(ORACLE_FILE), &report)?;
    let csv_path = out.join(ORACLE_CSV_FILE);
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    for row in &report.positions {
        writer.serialize(row).map_err(|e| csv_error(&csv_path, e))?;
    }
    writer.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(report)
}
