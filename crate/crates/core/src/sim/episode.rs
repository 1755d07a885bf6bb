//! Discrete-event closed loop under a simulated clock.
//!
//! Two event streams share one integer-nanosecond timeline: reasoning
//! events every `reasoning_period` and heartbeat ticks every
//! `controller_dt`. A decision made from the frame captured at `t` is
//! published at `t + reasoning_period`, modelling inference latency. At
//! equal timestamps the reasoning event runs before the tick.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backend::{ExpertBackend, ReasoningBackend};
use super::world::{render_observation, step_unicycle, Pose, WorldState};
use super::SimError;
use crate::action_space::{ActionCommand, ActionVocabulary};
use crate::bridge::{
    Bus, Heartbeat, HeartbeatConfig, HeartbeatFrame, StampedCommand, COMMAND_TOPIC, OUTPUT_TOPIC,
};
use crate::parser::parse_action_tokens;
use crate::policy::{Observation, Sample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    /// Heartbeat period in seconds.
    pub controller_dt: f64,
    pub reasoning_period: f64,
    pub max_duration: f64,
    pub success_radius: f64,
    /// When set, the active target jumps at this time and success only
    /// counts afterwards.
    pub goal_shift_time: Option<f64>,
    /// Seconds; `None` holds the last command forever.
    pub staleness_limit: Option<f64>,
    pub image_h: usize,
    pub image_w: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            controller_dt: 0.01,
            reasoning_period: 0.1505,
            max_duration: 30.0,
            success_radius: 0.1,
            goal_shift_time: None,
            staleness_limit: Some(0.301),
            image_h: 16,
            image_w: 16,
        }
    }
}

fn to_ns(seconds: f64) -> u64 {
    (seconds * 1e9).round() as u64
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        let ok = finite_pos(self.controller_dt)
            && finite_pos(self.reasoning_period)
            && finite_pos(self.max_duration)
            && finite_pos(self.success_radius)
            && self.controller_dt < self.reasoning_period
            && self.goal_shift_time.is_none_or(|t| t.is_finite() && t >= 0.0)
            && self.staleness_limit.is_none_or(finite_pos)
            && self.image_h >= 2
            && self.image_w >= 2;
        if ok {
            Ok(())
        } else {
            Err(SimError::Config(format!("invalid episode config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    /// Frame capture time, seconds.
    pub time_s: f64,
    pub publish_time_s: f64,
    pub line: Option<String>,
    pub tokens: Option<Vec<u32>>,
    pub command: ActionCommand,
    pub failsafe: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoseSample {
    pub time_s: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub success: bool,
    /// Controller ticks executed.
    pub steps: usize,
    pub duration_s: f64,
    pub final_distance: f64,
    pub failsafe_count: usize,
    /// Ticks that published the stale zero command.
    pub stale_ticks: usize,
    /// Largest command age seen at the actuator while a command was live.
    pub max_command_age_s: f64,
    /// Pose at every frame capture.
    pub trajectory: Vec<PoseSample>,
    pub decision_log: Vec<Decision>,
}

pub fn run_closed_loop<B: ReasoningBackend + ?Sized>(
    backend: &mut B,
    config: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeResult, SimError> {
    run_closed_loop_with(backend, config, seed, |_, _| {})
}

/// Like [`run_closed_loop`], calling `on_decision` with each rendered frame
/// and the decision made from it.
pub fn run_closed_loop_with<B, F>(
    backend: &mut B,
    config: &EpisodeConfig,
    seed: u64,
    mut on_decision: F,
) -> Result<EpisodeResult, SimError>
where
    B: ReasoningBackend + ?Sized,
    F: FnMut(&Observation, &Decision),
{
    config.validate()?;
    let vocab = backend.vocab();
    let mut world = WorldState::random(&mut ChaCha8Rng::seed_from_u64(seed));

    let dt_ns = to_ns(config.controller_dt);
    let period_ns = to_ns(config.reasoning_period);
    let max_ns = to_ns(config.max_duration);
    let shift_ns = config.goal_shift_time.map(to_ns);

    let commands: Bus<StampedCommand> = Bus::new();
    let outputs: Bus<HeartbeatFrame> = Bus::new();
    let mut heartbeat = Heartbeat::new(
        &commands,
        COMMAND_TOPIC,
        &outputs,
        OUTPUT_TOPIC,
        HeartbeatConfig {
            rate_hz: 1.0 / config.controller_dt,
            staleness_limit: config.staleness_limit.map(std::time::Duration::from_secs_f64),
        },
        0,
    )?;

    let mut result = EpisodeResult {
        seed,
        success: false,
        steps: 0,
        duration_s: 0.0,
        final_distance: world.distance_to_goal(),
        failsafe_count: 0,
        stale_ticks: 0,
        max_command_age_s: 0.0,
        trajectory: Vec::new(),
        decision_log: Vec::new(),
    };
    let mut shifted = shift_ns.is_none();
    // turn direction of the latest decision; the shifted goal goes the other way
    let mut last_turn: Option<f64> = None;
    let mut pending: Option<StampedCommand> = None;
    let mut next_reason_ns = 0u64;

    let mut t = 0u64;
    while t < max_ns {
        while next_reason_ns <= t {
            let tau = next_reason_ns;
            if !shifted && shift_ns.is_some_and(|s| s <= tau) {
                world.shift_goal_against(last_turn.unwrap_or_else(|| world.heading_error()));
                shifted = true;
            }
            if let Some(cmd) = pending.take() {
                commands.publish(COMMAND_TOPIC, cmd);
            }
            world.time_ns = tau;
            let obs = render_observation(&world, config.image_h, config.image_w);
            backend.observe_world(&world);
            let decision = decide(backend, &obs, &vocab, tau, period_ns);
            if decision.failsafe {
                result.failsafe_count += 1;
                log::debug!("seed {seed}: fail-safe at {:.4} s: {:?}", decision.time_s, decision.error);
            }
            pending = Some(StampedCommand {
                command: decision.command,
                timestamp_ns: tau + period_ns,
            });
            result.trajectory.push(PoseSample {
                time_s: tau as f64 * 1e-9,
                pose: world.pose,
            });
            if !decision.failsafe {
                last_turn = Some(decision.command.angular_velocity);
            }
            on_decision(&obs, &decision);
            result.decision_log.push(decision);
            next_reason_ns += period_ns;
        }
        if !shifted && shift_ns.is_some_and(|s| s <= t) {
            world.shift_goal_against(last_turn.unwrap_or_else(|| world.heading_error()));
            shifted = true;
        }

        world.time_ns = t;
        let out = heartbeat.tick(t);
        if out.frame.stale {
            result.stale_ticks += 1;
        } else if let Some(age) = out.command_age_ns {
            result.max_command_age_s = result.max_command_age_s.max(age as f64 * 1e-9);
        }
        world.pose = step_unicycle(&world.pose, out.frame.twist.to_command(), config.controller_dt);
        result.steps += 1;
        t += dt_ns;

        if shifted && world.distance_to_goal() <= config.success_radius {
            result.success = true;
            break;
        }
    }
    result.duration_s = t as f64 * 1e-9;
    result.final_distance = world.distance_to_goal();
    Ok(result)
}

fn decide<B: ReasoningBackend + ?Sized>(
    backend: &mut B,
    obs: &Observation,
    vocab: &ActionVocabulary,
    tau: u64,
    period_ns: u64,
) -> Decision {
    let mut d = Decision {
        time_s: tau as f64 * 1e-9,
        publish_time_s: (tau + period_ns) as f64 * 1e-9,
        line: None,
        tokens: None,
        command: ActionCommand::ZERO,
        failsafe: true,
        error: None,
    };
    match backend.infer_line(obs) {
        Ok(line) => {
            match parse_action_tokens(&line, vocab) {
                Ok(tokens) => {
                    d.command = crate::action_space::decode_tokens(&tokens, vocab)
                        .expect("parser range-checks tokens");
                    d.tokens = Some(tokens.tokens().to_vec());
                    d.failsafe = false;
                }
                Err(e) => d.error = Some(format!("parse: {e}")),
            }
            d.line = Some(line);
        }
        Err(e) => d.error = Some(format!("{}: {e}", e.class())),
    }
    d
}

/// Deterministic per-episode seeds drawn from `base`.
pub fn episode_seeds(base: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..n).map(|_| rng.random()).collect()
}

/// Offset mixed into the evaluation seed stream so held-out episodes never
/// share a seed stream with training data.
pub const EVAL_SEED_SALT: u64 = 0x5eed_0f_e7a1;

pub fn eval_seeds(base: u64, n: usize) -> Vec<u64> {
    episode_seeds(base ^ EVAL_SEED_SALT, n)
}

/// Gaussian perturbation of the executed command during demonstrations.
///
/// Labels stay the clean expert tokens; only the rollout drifts, so the
/// dataset covers the recovery states a learned policy will visit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoNoise {
    pub v_std: f64,
    pub w_std: f64,
}

impl Default for DemoNoise {
    fn default() -> Self {
        Self {
            v_std: 0.1,
            w_std: 0.5,
        }
    }
}

impl DemoNoise {
    pub const NONE: DemoNoise = DemoNoise {
        v_std: 0.0,
        w_std: 0.0,
    };
}

struct NoisyExpert {
    expert: ExpertBackend,
    vocab: ActionVocabulary,
    noise: DemoNoise,
    rng: ChaCha8Rng,
    samples: Vec<Sample>,
}

impl ReasoningBackend for NoisyExpert {
    fn name(&self) -> String {
        "noisy expert".into()
    }

    fn config(&self) -> super::BackendConfig {
        self.expert.config()
    }

    fn vocab(&self) -> ActionVocabulary {
        self.vocab
    }

    fn observe_world(&mut self, world: &WorldState) {
        self.expert.observe_world(world)
    }

    fn infer(
        &mut self,
        obs: &Observation,
    ) -> Result<crate::action_space::ActionTokenSeq, super::BackendError> {
        let clean = self.expert.infer(obs)?;
        let cmd = crate::action_space::decode_tokens(&clean, &self.vocab)?;
        self.samples.push(Sample {
            observation: obs.clone(),
            target: clean,
        });
        let gauss = |rng: &mut ChaCha8Rng, std: f64| {
            if std > 0.0 {
                rand_distr::Distribution::sample(&rand_distr::Normal::new(0.0, std).expect("finite std"), rng)
            } else {
                0.0
            }
        };
        let noisy = ActionCommand::new(
            cmd.linear_velocity + gauss(&mut self.rng, self.noise.v_std),
            cmd.angular_velocity + gauss(&mut self.rng, self.noise.w_std),
        );
        Ok(crate::action_space::encode_command(noisy, &self.vocab)?)
    }
}

/// Expert demonstrations with the default [`DemoNoise`], rendered at the
/// reasoning cadence.
pub fn collect_dataset(
    n_episodes: usize,
    seed: u64,
    config: &EpisodeConfig,
    vocab: &ActionVocabulary,
) -> Result<Vec<Sample>, SimError> {
    collect_dataset_with_noise(n_episodes, seed, config, vocab, DemoNoise::default())
}

pub fn collect_dataset_with_noise(
    n_episodes: usize,
    seed: u64,
    config: &EpisodeConfig,
    vocab: &ActionVocabulary,
    noise: DemoNoise,
) -> Result<Vec<Sample>, SimError> {
    if !(noise.v_std >= 0.0 && noise.w_std >= 0.0 && noise.v_std.is_finite() && noise.w_std.is_finite()) {
        return Err(SimError::Config(format!("invalid demonstration noise {noise:?}")));
    }
    let mut backend = NoisyExpert {
        expert: ExpertBackend::new(*vocab),
        vocab: *vocab,
        noise,
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_65),
        samples: Vec::new(),
    };
    for s in episode_seeds(seed, n_episodes) {
        run_closed_loop(&mut backend, config, s)?;
    }
    Ok(backend.samples)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub backend: String,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub failsafe_activations: usize,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
}

/// Runs one episode per seed and aggregates.
pub fn evaluate<B: ReasoningBackend + ?Sized>(
    backend: &mut B,
    config: &EpisodeConfig,
    seeds: &[u64],
) -> Result<(EvalSummary, Vec<EpisodeResult>), SimError> {
    let results = seeds
        .iter()
        .map(|&s| run_closed_loop(backend, config, s))
        .collect::<Result<Vec<_>, _>>()?;
    let successes = results.iter().filter(|r| r.success).count();
    let n = results.len().max(1) as f64;
    let summary = EvalSummary {
        backend: backend.name(),
        episodes: results.len(),
        successes,
        success_rate: successes as f64 / n,
        mean_steps: results.iter().map(|r| r.steps as f64).sum::<f64>() / n,
        failsafe_activations: results.iter().map(|r| r.failsafe_count).sum(),
        seeds: seeds.to_vec(),
        failed_seeds: results.iter().filter(|r| !r.success).map(|r| r.seed).collect(),
    };
    Ok((summary, results))
}
