//! The learning surface: episode loop, epsilon-greedy beam choice, clipped
//! rate feedback, replay training and greedy evaluation with k_B refinement.
//!
//! Each episode is one coherence block. The agent holds the current state
//! estimate, reflects one beam, receives the rate, estimates the next block's
//! state, stores the transition and trains on one minibatch once the replay
//! buffer can fill it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::qnetwork::{QNetwork, Sample};
use crate::rate::{argmax_first, quantize_reward, rate_unchecked, RateConfig};
use crate::replay::{Experience, ReplayBuffer};
use crate::rng;
use crate::scenario::{encode_state, NormalizationMode, RunningMax, Scenario};

/// Which output receives the bootstrapped reward in the training target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetIndexMode {
    /// The argmax of the next state's Q-values.
    #[default]
    PaperLiteral,
    /// The action that was actually taken (standard deep Q-learning).
    TakenAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub epsilon_start: f64,
    pub epsilon_floor: f64,
    /// Multiplier applied every `epsilon_period` training iterations.
    pub epsilon_factor: f64,
    pub epsilon_period: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub target_index_mode: TargetIndexMode,
    pub k_b: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Training iterations between target-network copies; `0` evaluates the
    /// bootstrap term on the online network itself.
    pub target_sync_period: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            epsilon_start: 0.99,
            epsilon_floor: 0.1,
            epsilon_factor: 0.995,
            epsilon_period: 40,
            gamma: 0.0,
            learning_rate: 1e-3,
            target_index_mode: TargetIndexMode::PaperLiteral,
            k_b: 1,
            batch_size: 512,
            replay_capacity: 8192,
            target_sync_period: 100,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0 <= self.epsilon_floor
            && self.epsilon_floor <= self.epsilon_start
            && self.epsilon_start <= 1.0)
        {
            return bad(format!(
                "need 0 <= epsilon_floor ({}) <= epsilon_start ({}) <= 1",
                self.epsilon_floor, self.epsilon_start
            ));
        }
        if !(self.epsilon_factor > 0.0 && self.epsilon_factor < 1.0) {
            return bad(format!("epsilon_factor {} must be in (0, 1)", self.epsilon_factor));
        }
        if self.epsilon_period == 0 {
            return bad("epsilon_period must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must be in [0, 1]", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive".into());
        }
        if self.k_b == 0 {
            return bad("k_b must be at least 1".into());
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad(format!(
                "batch size {} must be positive and fit in the replay capacity {}",
                self.batch_size, self.replay_capacity
            ));
        }
        Ok(())
    }
}

/// One training episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub position: usize,
    pub action: usize,
    pub explored: bool,
    pub rate: f64,
    pub reward: i8,
    pub oracle_rate: f64,
    /// Exploration probability used to pick this episode's beam.
    pub epsilon: f64,
    /// Absent while the buffer is too small to train.
    pub loss: Option<f64>,
}

/// Stops training once the moving mean of `rate / oracle_rate` reaches
/// `ratio` over the last `window` episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    pub window: usize,
    pub ratio: f64,
}

/// Read-only world the agent acts in: scenario, action space, rate model and
/// the per-position optimum.
#[derive(Debug)]
pub struct Environment<'a> {
    scenario: &'a Scenario,
    codebook: &'a Codebook,
    rate: RateConfig,
    oracle: Vec<(usize, f64)>,
}

impl<'a> Environment<'a> {
    pub fn new(
        scenario: &'a Scenario,
        codebook: &'a Codebook,
        rate: RateConfig,
        exec: Execution,
    ) -> Result<Self> {
        rate.validate()?;
        if codebook.num_elements() != scenario.num_elements() {
            return Err(Error::Dimension(format!(
                "codebook beams have {} entries, scenario has {} elements",
                codebook.num_elements(),
                scenario.num_elements()
            )));
        }
        let oracle = scenario.oracle_table(codebook, &rate, exec)?;
        Ok(Environment {
            scenario,
            codebook,
            rate,
            oracle,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook
    }

    pub fn rate_config(&self) -> &RateConfig {
        &self.rate
    }

    /// `(best beam, optimal rate)` per position.
    pub fn oracle(&self) -> &[(usize, f64)] {
        &self.oracle
    }

    /// Rate of beam `action` at position `position` on the true channel.
    pub fn rate(&self, position: usize, action: usize) -> f64 {
        rate_unchecked(
            &self.scenario.position(position).channels,
            &self.codebook.vectors()[action],
            self.rate.snr,
        )
    }
}

/// Epsilon-greedy choice: uniform random beam with probability `epsilon`,
/// otherwise the network's best beam. Returns `(action, explored)`.
pub fn select_action<R: Rng + ?Sized>(
    qnet: &QNetwork,
    state: &[f64],
    epsilon: f64,
    codebook_size: usize,
    rng: &mut R,
) -> Result<(usize, bool)> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} must be in [0, 1]")));
    }
    let xi: f64 = rng.random();
    if epsilon > 0.0 && xi <= epsilon {
        Ok((rng.random_range(0..codebook_size), true))
    } else {
        Ok((qnet.predict_topk(state, 1)?[0], false))
    }
}

/// Training target: the online prediction for `state`, with one entry
/// replaced by `reward + gamma * max_a Q_target(next_state, a)`.
#[allow(clippy::too_many_arguments)]
pub fn build_target(
    online: &QNetwork,
    target_net: &QNetwork,
    state: &[f64],
    next_state: &[f64],
    action_taken: usize,
    reward: f64,
    gamma: f64,
    mode: TargetIndexMode,
) -> Result<Vec<f64>> {
    let mut target = online.forward(state)?;
    if action_taken >= target.len() {
        return Err(Error::Dimension(format!(
            "action {action_taken} outside {} outputs",
            target.len()
        )));
    }
    let next_q = target_net.forward(next_state)?;
    let (best_next, bootstrap) = argmax_first(&next_q);
    let index = match mode {
        TargetIndexMode::PaperLiteral => best_next,
        TargetIndexMode::TakenAction => action_taken,
    };
    target[index] = reward + gamma * bootstrap;
    Ok(target)
}

#[derive(Debug, Clone)]
struct Observation {
    position: usize,
    encoded: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    online: QNetwork,
    target: Option<QNetwork>,
    buffer: ReplayBuffer,
    epsilon: f64,
    train_iterations: usize,
    episodes: usize,
    rng: ChaCha8Rng,
    current: Option<Observation>,
    running: RunningMax,
    exec: Execution,
}

impl Agent {
    pub fn new(config: AgentConfig, network: QNetwork, seed: u64) -> Result<Self> {
        config.validate()?;
        let target = (config.target_sync_period > 0).then(|| network.sync_target());
        Ok(Agent {
            buffer: ReplayBuffer::new(config.replay_capacity)?,
            epsilon: config.epsilon_start,
            train_iterations: 0,
            episodes: 0,
            rng: rng::stream(seed, 0xA6E7),
            current: None,
            running: RunningMax::default(),
            exec: Execution::default(),
            online: network,
            target,
            config,
        })
    }

    /// Execution mode for minibatch gradients; results are identical either way.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    /// Network used for the bootstrap term.
    pub fn target(&self) -> &QNetwork {
        self.target.as_ref().unwrap_or(&self.online)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn train_iterations(&self) -> usize {
        self.train_iterations
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Normalization constant currently applied to observed states.
    pub fn normalization(&self, env: &Environment<'_>) -> f64 {
        match env.scenario.normalization_mode() {
            NormalizationMode::Dataset => env.scenario.normalization_constant(),
            NormalizationMode::Running => self
                .running
                .value()
                .unwrap_or_else(|| env.scenario.normalization_constant()),
        }
    }

    fn check_env(&self, env: &Environment<'_>) -> Result<()> {
        if env.scenario.train().is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        if self.online.input_dim() != env.scenario.state_dim() {
            return Err(Error::Dimension(format!(
                "network input {} differs from state dimension {}",
                self.online.input_dim(),
                env.scenario.state_dim()
            )));
        }
        if self.online.output_dim() != env.codebook.len() {
            return Err(Error::Dimension(format!(
                "network output {} differs from codebook size {}",
                self.online.output_dim(),
                env.codebook.len()
            )));
        }
        Ok(())
    }

    /// Pilot estimation at a uniformly drawn training position.
    fn observe(&mut self, env: &Environment<'_>) -> Observation {
        let train = env.scenario.train();
        let position = train[self.rng.random_range(0..train.len())];
        let sampled = env.scenario.observe(position, &mut self.rng);
        if env.scenario.normalization_mode() == NormalizationMode::Running {
            self.running.update(&sampled, env.scenario.subcarriers_used());
        }
        let encoded = encode_state(&sampled, env.scenario.subcarriers_used(), self.normalization(env))
            .expect("scenario dimensions are validated");
        Observation { position, encoded }
    }

    /// Runs one coherence block: act, collect feedback, store, train, decay.
    pub fn run_episode(&mut self, env: &Environment<'_>) -> Result<EpisodeLog> {
        self.check_env(env)?;
        let current = match self.current.take() {
            Some(obs) => obs,
            None => self.observe(env),
        };
        let epsilon = self.epsilon;
        let (action, explored) = select_action(
            &self.online,
            &current.encoded,
            epsilon,
            env.codebook.len(),
            &mut self.rng,
        )?;

        let rate = env.rate(current.position, action);
        let oracle_rate = env.oracle[current.position].1;
        let reward = quantize_reward(rate, oracle_rate, &env.rate);

        let next = self.observe(env);
        self.buffer.push(Experience {
            state: current.encoded,
            action,
            reward,
            next_state: next.encoded.clone(),
        });

        let loss = if self.buffer.len() >= self.config.batch_size {
            Some(self.train_once()?)
        } else {
            None
        };

        let log = EpisodeLog {
            episode: self.episodes,
            position: current.position,
            action,
            explored,
            rate,
            reward,
            oracle_rate,
            epsilon,
            loss,
        };
        self.episodes += 1;
        self.current = Some(next);
        Ok(log)
    }

    fn train_once(&mut self) -> Result<f64> {
        let cfg = &self.config;
        let batch = self.buffer.sample(cfg.batch_size, &mut self.rng)?;
        let bootstrap_free = cfg.gamma == 0.0 && cfg.target_index_mode == TargetIndexMode::TakenAction;
        let target_net = self.target.as_ref().unwrap_or(&self.online);
        let targets = par::map_indexed(self.exec, batch.len(), |i| {
            let e = batch[i];
            if bootstrap_free {
                let mut t = self.online.forward(&e.state)?;
                t[e.action] = f64::from(e.reward);
                Ok(t)
            } else {
                build_target(
                    &self.online,
                    target_net,
                    &e.state,
                    &e.next_state,
                    e.action,
                    f64::from(e.reward),
                    cfg.gamma,
                    cfg.target_index_mode,
                )
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let samples: Vec<Sample<'_>> = batch
            .iter()
            .zip(&targets)
            .map(|(e, t)| (&e.state[..], &t[..]))
            .collect();
        let lr = cfg.learning_rate;
        let loss = self.online.train_step_with(&samples, lr, self.exec)?;

        self.train_iterations += 1;
        if self.train_iterations.is_multiple_of(self.config.epsilon_period) {
            self.epsilon = (self.epsilon * self.config.epsilon_factor).max(self.config.epsilon_floor);
        }
        let sync = self.config.target_sync_period;
        if sync > 0 && self.train_iterations.is_multiple_of(sync) {
            self.target = Some(self.online.sync_target());
        }
        Ok(loss)
    }

    /// Runs up to `episodes` episodes, calling `on_episode` after each one.
    pub fn train<F>(
        &mut self,
        env: &Environment<'_>,
        episodes: usize,
        stop: Option<StopRule>,
        mut on_episode: F,
    ) -> Result<Vec<EpisodeLog>>
    where
        F: FnMut(&Agent, &EpisodeLog) -> Result<()>,
    {
        let mut logs = Vec::with_capacity(episodes);
        let mut ratios = std::collections::VecDeque::new();
        let mut ratio_sum = 0.0;
        for _ in 0..episodes {
            let log = self.run_episode(env)?;
            on_episode(self, &log)?;
            let finished = match stop {
                Some(rule) if rule.window > 0 => {
                    let r = rate_ratio(log.rate, log.oracle_rate);
                    ratios.push_back(r);
                    ratio_sum += r;
                    if ratios.len() > rule.window {
                        ratio_sum -= ratios.pop_front().expect("non-empty");
                    }
                    ratios.len() == rule.window && ratio_sum / rule.window as f64 >= rule.ratio
                }
                _ => false,
            };
            logs.push(log);
            if finished {
                break;
            }
        }
        Ok(logs)
    }

    /// Greedy evaluation of the online network; see [`evaluate`].
    pub fn evaluate(
        &self,
        env: &Environment<'_>,
        positions: &[usize],
        k_b: usize,
        seed: u64,
        exec: Execution,
    ) -> Result<EvalSummary> {
        evaluate(&self.online, env, positions, k_b, self.normalization(env), seed, exec)
    }
}

/// `rate / oracle`, with a zero optimum counting as fully achieved.
pub fn rate_ratio(rate: f64, oracle_rate: f64) -> f64 {
    if oracle_rate > 0.0 {
        rate / oracle_rate
    } else {
        1.0
    }
}

/// Greedy outcome at one position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub position: usize,
    /// Top-k_B beams by predicted Q-value.
    pub predicted: Vec<usize>,
    /// Best of the predicted beams after rate-testing them.
    pub refined: usize,
    pub rate: f64,
    pub oracle_index: usize,
    pub oracle_rate: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub k_b: usize,
    pub mean_rate: f64,
    pub mean_oracle_rate: f64,
    /// Beams rate-tested in total, `k_b` per position.
    pub beams_tested: usize,
    pub records: Vec<EvalRecord>,
}

/// Greedy evaluation with k_B refinement.
///
/// Each position gets one noisy state estimate (seeded by `seed` and the
/// position index), the network's `k_b` best beams are rate-tested on the
/// true channel, and the best of them is kept.
pub fn evaluate(
    qnet: &QNetwork,
    env: &Environment<'_>,
    positions: &[usize],
    k_b: usize,
    normalization: f64,
    seed: u64,
    exec: Execution,
) -> Result<EvalSummary> {
    if k_b == 0 || k_b > env.codebook.len() {
        return Err(Error::Config(format!(
            "k_b must be in 1..={}, got {k_b}",
            env.codebook.len()
        )));
    }
    if qnet.input_dim() != env.scenario.state_dim() || qnet.output_dim() != env.codebook.len() {
        return Err(Error::Dimension(format!(
            "network {:?} does not fit state dimension {} and {} beams",
            qnet.layer_sizes(),
            env.scenario.state_dim(),
            env.codebook.len()
        )));
    }
    if let Some(&bad) = positions.iter().find(|&&p| p >= env.scenario.num_positions()) {
        return Err(Error::Config(format!("position {bad} does not exist")));
    }
    let records = par::map_indexed(exec, positions.len(), |i| {
        let position = positions[i];
        let mut rng = rng::stream(seed, position as u64);
        let sampled = env.scenario.observe(position, &mut rng);
        let state = encode_state(&sampled, env.scenario.subcarriers_used(), normalization)?;
        let predicted = qnet.predict_topk(&state, k_b)?;
        let mut refined = predicted[0];
        let mut rate = env.rate(position, refined);
        for &beam in &predicted[1..] {
            let r = env.rate(position, beam);
            if r > rate {
                rate = r;
                refined = beam;
            }
        }
        let (oracle_index, oracle_rate) = env.oracle[position];
        Ok(EvalRecord {
            position,
            predicted,
            refined,
            rate,
            oracle_index,
            oracle_rate,
            ratio: rate_ratio(rate, oracle_rate),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = records.len().max(1) as f64;
    Ok(EvalSummary {
        k_b,
        mean_rate: records.iter().map(|r| r.rate).sum::<f64>() / n,
        mean_oracle_rate: records.iter().map(|r| r.oracle_rate).sum::<f64>() / n,
        beams_tested: k_b * records.len(),
        records,
    })
}
