//! Intelligent reflecting surface beam selection with deep Q-learning.
//!
//! The surface observes a noisy multipath signature through a handful of
//! active elements, picks a reflection beam from a quantized codebook, and
//! learns from clipped rate feedback. The crate bundles the channel generator,
//! the codebook, the exhaustive-search rate oracle, a from-scratch MLP
//! Q-network, the replay buffer, the training agent, scenario files and the
//! `irs-sim` command line front end.

pub mod agent;
pub mod channel;
pub mod cli;
pub mod codebook;
pub mod config;
pub mod error;
pub mod par;
pub mod qnetwork;
pub mod rate;
pub mod replay;
pub mod scenario;
mod rng;

pub use agent::{
    Agent, AgentConfig, Environment, EpisodeLog, EvalRecord, EvalSummary, StopRule, TargetIndexMode,
};
pub use channel::{
    ArrayGeometry, ChannelConfig, ChannelSet, PulseShape, RayPath, SampledChannel,
};
pub use codebook::{Codebook, InteractionVector};
pub use error::{Error, Result};
pub use par::Execution;
pub use qnetwork::QNetwork;
pub use rate::{RateConfig, RewardMode};
pub use replay::{Experience, ReplayBuffer};
pub use scenario::{Scenario, ScenarioConfig};

pub use num_complex::Complex64;
