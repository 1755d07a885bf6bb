//! Synthetic world, reasoning backends, closed-loop runner and latency bench.

mod backend;
mod bench;
mod episode;
mod world;

use thiserror::Error;

pub use backend::{
    BackendConfig, BackendError, ConstantBackend, DelayInjectingBackend, ExpertBackend,
    ExternalProcessBackend, ReasoningBackend, ToyPolicyBackend,
};
pub use bench::{compute_stats, round2, run_latency_bench, LatencyReport, LatencyStats, TABLE_ROWS};
pub use episode::{
    collect_dataset, collect_dataset_with_noise, episode_seeds, eval_seeds, evaluate, run_closed_loop, run_closed_loop_with,
    Decision, DemoNoise, EpisodeConfig, EpisodeResult, EvalSummary, PoseSample, EVAL_SEED_SALT,
};
pub use world::{
    expert_command, render_observation, step_unicycle, wrap_angle, Pose, Target, WorldState,
    ARENA_HALF, NUM_TARGETS,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Bridge(#[from] crate::bridge::BridgeError),
}

impl SimError {
    pub fn class(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Backend(e) => e.class(),
            Self::Bridge(_) => "bridge",
        }
    }
}
