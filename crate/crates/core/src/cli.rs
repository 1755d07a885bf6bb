//! Command-line front end, one subcommand per pipeline stage.
//!
//! Each command prints a human-readable summary on stdout. With
//! `--report <file>` it also writes a JSON report that embeds the resolved
//! [`RunConfig`] and seed. Failures print a single JSON line
//! `{"error_class": ..., "message": ...}` on stderr and exit nonzero.

use std::ffi::OsString;
use std::fs;
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::action_space::ActionVocabulary;
use crate::bridge::{
    bridge_port, forward_to_udp, receive_from_udp, BridgeError, Bus, Clock, Heartbeat,
    HeartbeatConfig, HeartbeatFrame, StampedCommand, WallClock, COMMAND_TOPIC, OUTPUT_TOPIC,
};
use crate::container::{
    dataset_from_model, dataset_to_model, from_bytes, policy_from_model, policy_to_model,
    to_bytes, validate_container, ContainerError, ContainerModel, MetadataValue, PolicyBundle,
};
use crate::policy::{
    DecodeConfig, Observation, PolicyDims, PolicyError, PolicyParams, TrainConfig,
};
use crate::quantizer::{argmax_agreement, quantize_policy, QuantError};
use crate::sim::{
    collect_dataset_with_noise, eval_seeds, evaluate, render_observation, run_latency_bench,
    ConstantBackend, DelayInjectingBackend, DemoNoise, EpisodeConfig, ExpertBackend,
    ExternalProcessBackend, ReasoningBackend, SimError, ToyPolicyBackend, WorldState,
};

/// Metadata key holding the run configuration that produced a container.
pub const KEY_RUN_CONFIG: &str = "litevla.run_config";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraSettings {
    pub rank: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub episodes: usize,
    pub noise: DemoNoise,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            noise: DemoNoise::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub runs: usize,
    pub warmup: usize,
    /// Per-decision reply deadline for `exec:` backends.
    pub exec_timeout_ms: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            runs: 300,
            warmup: 10,
            exec_timeout_ms: 5000,
        }
    }
}

/// Pass thresholds for `compare-quant`. Both are chosen by this tool; no
/// published reference values exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub observations: usize,
    pub episodes: usize,
    pub min_agreement: f64,
    pub max_success_drop: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            observations: 1000,
            episodes: 100,
            min_agreement: 0.90,
            max_success_drop: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BridgeSettings {
    pub topic: String,
    pub rate_hz: f64,
    /// `None` disables the zero-velocity fail-safe.
    pub staleness_limit_ms: Option<f64>,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        Self {
            topic: OUTPUT_TOPIC.into(),
            rate_hz: 100.0,
            staleness_limit_ms: Some(301.0),
        }
    }
}

/// Everything a command needs. Precedence: defaults < `--config` file < flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives data collection, weight init, evaluation seeds and benchmark
    /// worlds. `train.seed` separately drives minibatch shuffling.
    pub seed: u64,
    pub vocab: ActionVocabulary,
    pub model: PolicyDims,
    /// Train a low-rank adapter on a frozen base instead of all weights.
    pub lora: Option<LoraSettings>,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub episode: EpisodeConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
    pub compare: CompareConfig,
    pub bridge: BridgeSettings,
    pub decode: DecodeConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.vocab
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.model.validate()?;
        self.decode.validate()?;
        self.episode.validate()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Container {
        path: PathBuf,
        source: ContainerError,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error("{path}: validation failed ({failed})")]
    Validation {
        path: PathBuf,
        failed: String,
        class: Option<&'static str>,
    },
    #[error("thresholds not met: {0}")]
    Threshold(String),
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn container(path: &Path, source: ContainerError) -> Self {
        Self::Container {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Stable `category` or `category:detail` string for scripts.
    pub fn class(&self) -> String {
        match self {
            Self::Usage(_) => "usage".into(),
            Self::Config(_) => "config".into(),
            Self::Io { .. } => "io".into(),
            Self::Container { source, .. } => format!("container:{}", source.class()),
            Self::Policy(_) => "policy".into(),
            Self::Quant(_) => "quant".into(),
            Self::Sim(e) => format!("sim:{}", e.class()),
            Self::Bridge(_) => "bridge".into(),
            Self::Validation { class, .. } => match class {
                Some(c) => format!("container:{c}"),
                None => "validation".into(),
            },
            Self::Threshold(_) => "threshold".into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "litevla", version, about = "Train, quantize, package, run and benchmark the toy action policy")]
pub struct Cli {
    /// JSON run configuration; missing fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Also write the machine-readable JSON report here.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record expert demonstrations into a dataset container.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Fine-tune the policy on a dataset and write an F32 policy container.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train a rank-r adapter instead of the full weights.
        #[arg(long)]
        lora_rank: Option<usize>,
        #[arg(long, requires = "lora_rank")]
        lora_alpha: Option<f64>,
    },
    /// Compress an F32 policy container to 4-bit blocks.
    Quantize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a container and list its metadata and tensors.
    Inspect { input: PathBuf },
    /// Closed-loop evaluation over held-out seeds.
    EvalLoop {
        /// Backend spec: a container path, toy:<path>, expert,
        /// constant:<v>:<w>, delay:<ms>[:<spec>] or exec:<command line>.
        backend: String,
        #[arg(long)]
        episodes: Option<usize>,
        /// Switch the active target at this time in seconds.
        #[arg(long)]
        goal_shift: Option<f64>,
    },
    /// Sequential end-to-end latency benchmark.
    BenchLatency {
        backend: String,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Decode agreement and closed-loop success of a quantized policy
    /// against its F32 reference.
    CompareQuant {
        reference: PathBuf,
        candidate: PathBuf,
        #[arg(long)]
        observations: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Receive command frames over UDP and republish them at a fixed rate.
    ServeBridge {
        #[arg(long)]
        topic: Option<String>,
        /// Defaults to $LITEVLA_BRIDGE_PORT, then 47474.
        #[arg(long)]
        port: Option<u16>,
        /// Send every heartbeat frame to this address.
        #[arg(long)]
        forward: Option<SocketAddr>,
        /// Stop after this many seconds instead of running until killed.
        #[arg(long)]
        duration: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::GenData { .. } => "gen-data",
            Self::Train { .. } => "train",
            Self::Quantize { .. } => "quantize",
            Self::Inspect { .. } => "inspect",
            Self::EvalLoop { .. } => "eval-loop",
            Self::BenchLatency { .. } => "bench-latency",
            Self::CompareQuant { .. } => "compare-quant",
            Self::ServeBridge { .. } => "serve-bridge",
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Errors are reported on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            report_error(&CliError::Usage(format!("{msg}\n{}", e.render())));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            e.exit_code()
        }
    }
}

fn report_error(e: &CliError) {
    eprintln!(
        "{}",
        json!({ "error_class": e.class(), "message": e.to_string() })
    );
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    let name = cli.command.name();
    let result = match cli.command {
        Command::GenData { out, episodes } => {
            if let Some(n) = episodes {
                cfg.data.episodes = n;
            }
            cfg.validate()?;
            gen_data(&cfg, &out)
        }
        Command::Train {
            data,
            out,
            epochs,
            lora_rank,
            lora_alpha,
        } => {
            if let Some(n) = epochs {
                cfg.train.epochs = n;
            }
            if let Some(rank) = lora_rank {
                cfg.lora = Some(LoraSettings {
                    rank,
                    alpha: lora_alpha.unwrap_or(rank as f64),
                });
            }
            cfg.validate()?;
            train(&cfg, &data, &out)
        }
        Command::Quantize { input, out } => quantize(&input, &out),
        Command::Inspect { input } => inspect(&input, &cfg, cli.report.as_deref()),
        Command::EvalLoop {
            backend,
            episodes,
            goal_shift,
        } => {
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            if goal_shift.is_some() {
                cfg.episode.goal_shift_time = goal_shift;
            }
            cfg.validate()?;
            eval_loop(&cfg, &backend)
        }
        Command::BenchLatency {
            backend,
            runs,
            warmup,
        } => {
            if let Some(n) = runs {
                cfg.bench.runs = n;
            }
            if let Some(n) = warmup {
                cfg.bench.warmup = n;
            }
            cfg.validate()?;
            bench_latency(&cfg, &backend)
        }
        Command::CompareQuant {
            reference,
            candidate,
            observations,
            episodes,
        } => {
            if let Some(n) = observations {
                cfg.compare.observations = n;
            }
            if let Some(n) = episodes {
                cfg.compare.episodes = n;
            }
            cfg.validate()?;
            let (result, verdict) = compare_quant(&cfg, &reference, &candidate)?;
            write_report(cli.report.as_deref(), name, &cfg, result)?;
            return verdict;
        }
        Command::ServeBridge {
            topic,
            port,
            forward,
            duration,
        } => {
            if let Some(t) = topic {
                cfg.bridge.topic = t;
            }
            serve_bridge(&cfg, port, forward, duration)
        }
    }?;
    write_report(cli.report.as_deref(), name, &cfg, result)
}

fn write_report(
    path: Option<&Path>,
    command: &str,
    cfg: &RunConfig,
    result: Value,
) -> Result<(), CliError> {
    let Some(path) = path else { return Ok(()) };
    let report = json!({
        "command": command,
        "seed": cfg.seed,
        "config": cfg,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_model(path: &Path) -> Result<ContainerModel, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    from_bytes(&bytes).map_err(|e| CliError::container(path, e))
}

fn write_model(path: &Path, model: &ContainerModel) -> Result<u64, CliError> {
    let bytes = to_bytes(model).map_err(|e| CliError::container(path, e))?;
    fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
    Ok(bytes.len() as u64)
}

fn load_policy(path: &Path) -> Result<PolicyBundle, CliError> {
    policy_from_model(&read_model(path)?).map_err(|e| CliError::container(path, e))
}

fn config_entry(cfg: &RunConfig) -> (String, MetadataValue) {
    let text = serde_json::to_string(cfg).expect("config serializes");
    (KEY_RUN_CONFIG.into(), MetadataValue::String(text))
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let samples = collect_dataset_with_noise(
        cfg.data.episodes,
        cfg.seed,
        &cfg.episode,
        &cfg.vocab,
        cfg.data.noise,
    )?;
    let model = dataset_to_model(
        &samples,
        &cfg.vocab,
        cfg.episode.image_h,
        cfg.episode.image_w,
        vec![config_entry(cfg)],
    )
    .map_err(|e| CliError::container(out, e))?;
    let bytes = write_model(out, &model)?;
    println!(
        "wrote {} samples from {} episodes to {} ({bytes} bytes)",
        samples.len(),
        cfg.data.episodes,
        out.display()
    );
    Ok(json!({
        "out": out,
        "episodes": cfg.data.episodes,
        "samples": samples.len(),
        "bytes": bytes,
    }))
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Value, CliError> {
    let (samples, vocab) =
        dataset_from_model(&read_model(data)?).map_err(|e| CliError::container(data, e))?;
    if vocab != cfg.vocab {
        return Err(CliError::Config(format!(
            "dataset vocabulary {vocab:?} differs from the configured {:?}",
            cfg.vocab
        )));
    }
    let mut params = PolicyParams::random(cfg.model, vocab, cfg.seed)?;
    if let Some(l) = cfg.lora {
        params.attach_lora(l.rank, l.alpha, cfg.seed.wrapping_add(1))?;
    }
    let started = Instant::now();
    let outcome = crate::policy::train_sft(params, &samples, &cfg.train)?;
    let mut model = policy_to_model(&outcome.params, &cfg.decode, None);
    model.metadata.push(config_entry(cfg));
    let bytes = write_model(out, &model)?;
    println!(
        "trained on {} samples for {} epochs in {:.1} s: loss {:.4} -> {:.4}",
        samples.len(),
        cfg.train.epochs,
        started.elapsed().as_secs_f64(),
        outcome.initial_loss(),
        outcome.final_loss()
    );
    println!("wrote {} ({bytes} bytes)", out.display());
    Ok(json!({
        "data": data,
        "out": out,
        "samples": samples.len(),
        "mode": if cfg.lora.is_some() { "lora" } else { "full" },
        "initial_loss": outcome.initial_loss(),
        "final_loss": outcome.final_loss(),
        "loss_curve": outcome.loss_curve,
        "bytes": bytes,
    }))
}

fn quantize(input: &Path, out: &Path) -> Result<Value, CliError> {
    let model = read_model(input)?;
    let bundle = policy_from_model(&model).map_err(|e| CliError::container(input, e))?;
    if bundle.codec != "f32" {
        return Err(CliError::Config(format!(
            "{} is already quantized ({})",
            input.display(),
            bundle.codec
        )));
    }
    let params = bundle.policy.thaw();
    let q = quantize_policy(&params)?;
    let mut packed = policy_to_model(&params, &bundle.decode, Some(&q));
    // provenance entries other than the policy schema carry over
    for (k, v) in &model.metadata {
        if packed.get(k).is_none() {
            packed.metadata.push((k.clone(), v.clone()));
        }
    }
    let in_bytes = fs::metadata(input).map_err(|e| CliError::io(input, e))?.len();
    let bytes = write_model(out, &packed)?;
    for s in &q.stats {
        println!(
            "{:<22} {:>6} elements {:>5} blocks {:>7} -> {:>6} bytes  max |err| {:.3e}",
            s.name, s.elements, s.blocks, s.f32_bytes, s.packed_bytes, s.max_abs_error
        );
    }
    println!(
        "wrote {} ({in_bytes} -> {bytes} bytes, {:.1}% smaller)",
        out.display(),
        100.0 * (1.0 - bytes as f64 / in_bytes as f64)
    );
    Ok(json!({
        "input": input,
        "out": out,
        "input_bytes": in_bytes,
        "bytes": bytes,
        "tensors": q.stats,
    }))
}

fn inspect(input: &Path, cfg: &RunConfig, report: Option<&Path>) -> Result<Value, CliError> {
    let bytes = fs::read(input).map_err(|e| CliError::io(input, e))?;
    let v = validate_container(&bytes);
    println!("{} ({} bytes)", input.display(), bytes.len());
    for c in &v.checks {
        println!("  {:<14} {:<7} {}", c.name, format!("{:?}", c.status).to_lowercase(), c.detail);
    }
    let mut metadata = serde_json::Map::new();
    let mut tensors = Vec::new();
    if let Some(model) = &v.model {
        println!("metadata:");
        for (k, val) in &model.metadata {
            println!("  {k} = {val}");
            metadata.insert(k.clone(), serde_json::to_value(val).expect("serializes"));
        }
        println!("tensors:");
        for t in &model.tensors {
            println!(
                "  {:<22} {:<6} dims {:?} {} bytes",
                t.name,
                t.dtype().name(),
                t.dims,
                t.payload_size()
            );
            tensors.push(json!({
                "name": t.name,
                "dtype": t.dtype().name(),
                "dims": t.dims,
                "bytes": t.payload_size(),
            }));
        }
    }
    let result = json!({
        "input": input,
        "bytes": bytes.len(),
        "passed": v.passed(),
        "validation": v,
        "metadata": metadata,
        "tensors": tensors,
    });
    if v.passed() {
        Ok(result)
    } else {
        write_report(report, "inspect", cfg, result)?;
        let failed: Vec<&str> = v
            .checks
            .iter()
            .filter(|c| c.status == crate::container::CheckStatus::Fail)
            .map(|c| c.name)
            .collect();
        Err(CliError::Validation {
            path: input.to_path_buf(),
            failed: failed.join(", "),
            class: v.error_class,
        })
    }
}

/// Builds a backend from a spec string; see [`Command::EvalLoop`].
pub fn backend_from_spec(
    spec: &str,
    cfg: &RunConfig,
) -> Result<Box<dyn ReasoningBackend>, CliError> {
    let bad = |why: &str| CliError::Config(format!("backend spec {spec:?}: {why}"));
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "expert" if rest.is_empty() => Ok(Box::new(ExpertBackend::new(cfg.vocab))),
        "constant" => {
            let (v, w) = rest.split_once(':').ok_or_else(|| bad("expected constant:<v>:<w>"))?;
            let v = v.parse().map_err(|_| bad("v bin is not an integer"))?;
            let w = w.parse().map_err(|_| bad("w bin is not an integer"))?;
            let b = ConstantBackend::new(cfg.vocab, v, w)
                .map_err(|e| CliError::Sim(SimError::Backend(e)))?;
            Ok(Box::new(b))
        }
        "delay" => {
            let (ms, inner) = rest.split_once(':').unwrap_or((rest, "expert"));
            let ms: f64 = ms.parse().map_err(|_| bad("delay is not a number"))?;
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(bad("delay must be finite and non-negative"));
            }
            let inner = backend_from_spec(inner, cfg)?;
            Ok(Box::new(DelayInjectingBackend::new(
                inner,
                Duration::from_secs_f64(ms / 1e3),
            )))
        }
        "exec" => {
            let argv: Vec<String> = rest.split_whitespace().map(String::from).collect();
            let timeout = Duration::from_millis(cfg.bench.exec_timeout_ms);
            let b = ExternalProcessBackend::spawn(&argv, cfg.vocab, timeout)
                .map_err(|e| CliError::Sim(SimError::Backend(e)))?;
            Ok(Box::new(b))
        }
        "toy" => toy_backend(Path::new(rest), cfg),
        _ if Path::new(spec).is_file() => toy_backend(Path::new(spec), cfg),
        _ => Err(bad("unknown backend kind and no such file")),
    }
}

fn toy_backend(path: &Path, cfg: &RunConfig) -> Result<Box<dyn ReasoningBackend>, CliError> {
    let bundle = load_policy(path)?;
    let d = bundle.policy.dims;
    if (d.image_h, d.image_w) != (cfg.episode.image_h, cfg.episode.image_w) {
        return Err(CliError::Config(format!(
            "{} expects {}x{} frames but the episode renders {}x{}",
            path.display(),
            d.image_h,
            d.image_w,
            cfg.episode.image_h,
            cfg.episode.image_w
        )));
    }
    Ok(Box::new(ToyPolicyBackend::from_bundle(&bundle)))
}

fn eval_loop(cfg: &RunConfig, spec: &str) -> Result<Value, CliError> {
    let mut backend = backend_from_spec(spec, cfg)?;
    let seeds = eval_seeds(cfg.seed, cfg.eval.episodes);
    let (summary, results) = evaluate(&mut backend, &cfg.episode, &seeds)?;
    println!("backend:              {}", summary.backend);
    println!(
        "success rate:         {:.1}% ({}/{})",
        100.0 * summary.success_rate,
        summary.successes,
        summary.episodes
    );
    println!("mean steps:           {:.1}", summary.mean_steps);
    println!("fail-safe activations: {}", summary.failsafe_activations);
    if !summary.failed_seeds.is_empty() {
        println!("failed seeds:         {:?}", summary.failed_seeds);
    }
    let episodes: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "seed": r.seed,
                "success": r.success,
                "steps": r.steps,
                "duration_s": r.duration_s,
                "final_distance": r.final_distance,
                "failsafe_count": r.failsafe_count,
                "stale_ticks": r.stale_ticks,
                "max_command_age_s": r.max_command_age_s,
            })
        })
        .collect();
    Ok(json!({ "backend_config": backend.config(), "summary": summary, "episodes": episodes }))
}

fn bench_latency(cfg: &RunConfig, spec: &str) -> Result<Value, CliError> {
    let mut backend = backend_from_spec(spec, cfg)?;
    let report = run_latency_bench(&mut backend, cfg.bench.runs, cfg.bench.warmup, cfg.seed)?;
    print!("{}", report.table());
    Ok(serde_json::to_value(&report).expect("report serializes"))
}

/// Observations rendered from freshly sampled worlds.
pub fn sample_observations(cfg: &RunConfig, n: usize) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6f62_7365_7276);
    (0..n)
        .map(|_| {
            let world = WorldState::random(&mut rng);
            render_observation(&world, cfg.episode.image_h, cfg.episode.image_w)
        })
        .collect()
}

fn compare_quant(
    cfg: &RunConfig,
    reference: &Path,
    candidate: &Path,
) -> Result<(Value, Result<(), CliError>), CliError> {
    let a = load_policy(reference)?;
    let b = load_policy(candidate)?;
    if a.policy.dims != b.policy.dims || a.policy.vocab != b.policy.vocab {
        return Err(CliError::Config(
            "reference and candidate differ in dimensions or vocabulary".into(),
        ));
    }
    let observations = sample_observations(cfg, cfg.compare.observations);
    let agreement = argmax_agreement(&a.policy, &b.policy, &observations, &a.decode)?;
    let seeds = eval_seeds(cfg.seed, cfg.compare.episodes);
    let (ref_summary, _) = evaluate(&mut ToyPolicyBackend::from_bundle(&a), &cfg.episode, &seeds)?;
    let (cand_summary, _) =
        evaluate(&mut ToyPolicyBackend::from_bundle(&b), &cfg.episode, &seeds)?;
    let drop = ref_summary.success_rate - cand_summary.success_rate;
    let c = cfg.compare;
    let agreement_ok = agreement.agreement >= c.min_agreement;
    let drop_ok = drop <= c.max_success_drop + 1e-12;

    println!(
        "decode agreement:  {:.4} ({}/{})  threshold >= {:.2} (artifact-chosen)  {}",
        agreement.agreement,
        agreement.agreeing,
        agreement.total,
        c.min_agreement,
        if agreement_ok { "pass" } else { "FAIL" }
    );
    println!(
        "success ({}):  {:.1}% -> {:.1}%  drop {:+.1} pp  threshold <= {:.1} pp (artifact-chosen)  {}",
        c.episodes,
        100.0 * ref_summary.success_rate,
        100.0 * cand_summary.success_rate,
        100.0 * drop,
        100.0 * c.max_success_drop,
        if drop_ok { "pass" } else { "FAIL" }
    );
    for d in &agreement.disagreements {
        println!(
            "  observation {:>4}: reference {:?} candidate {:?}",
            d.index, d.reference, d.candidate
        );
    }
    let result = json!({
        "reference": reference,
        "candidate": candidate,
        "reference_codec": a.codec,
        "candidate_codec": b.codec,
        "agreement": agreement,
        "reference_success_rate": ref_summary.success_rate,
        "candidate_success_rate": cand_summary.success_rate,
        "success_drop": drop,
        "thresholds": {
            "min_agreement": c.min_agreement,
            "max_success_drop": c.max_success_drop,
            "source": "artifact-chosen; no published reference values",
        },
        "agreement_ok": agreement_ok,
        "success_drop_ok": drop_ok,
    });
    let verdict = if agreement_ok && drop_ok {
        Ok(())
    } else {
        Err(CliError::Threshold(format!(
            "agreement {:.4} (min {}), success drop {:.3} (max {})",
            agreement.agreement, c.min_agreement, drop, c.max_success_drop
        )))
    };
    Ok((result, verdict))
}

fn serve_bridge(
    cfg: &RunConfig,
    port: Option<u16>,
    forward: Option<SocketAddr>,
    duration: Option<f64>,
) -> Result<Value, CliError> {
    let port = match port {
        Some(p) => p,
        None => bridge_port()?,
    };
    if let Some(d) = duration {
        if !(d.is_finite() && d >= 0.0) {
            return Err(CliError::Config(format!("duration {d} must be finite and non-negative")));
        }
    }
    let hb_config = HeartbeatConfig {
        rate_hz: cfg.bridge.rate_hz,
        staleness_limit: match cfg.bridge.staleness_limit_ms {
            Some(ms) if ms.is_finite() && ms > 0.0 => Some(Duration::from_secs_f64(ms / 1e3)),
            Some(ms) => {
                return Err(CliError::Config(format!("staleness limit {ms} ms must be positive")))
            }
            None => None,
        },
    };
    let topic = cfg.bridge.topic.clone();
    let bind = |addr: SocketAddr| UdpSocket::bind(addr).map_err(BridgeError::Io);
    let socket = bind(SocketAddr::from(([0, 0, 0, 0], port)))?;
    let local = socket.local_addr().map_err(BridgeError::Io)?;

    let clock = WallClock::new();
    let stop = Arc::new(AtomicBool::new(false));
    let commands: Bus<StampedCommand> = Bus::new();
    let frames: Bus<HeartbeatFrame> = Bus::new();
    let heartbeat = Heartbeat::new(
        &commands,
        COMMAND_TOPIC,
        &frames,
        &topic,
        hb_config,
        clock.now_ns(),
    )?;
    let sender = match forward {
        Some(target) => {
            let out = bind(SocketAddr::from(([0, 0, 0, 0], 0)))?;
            Some(forward_to_udp(frames.subscribe(&topic), out, target, Arc::clone(&stop)))
        }
        None => None,
    };
    let receiver = receive_from_udp(
        socket,
        commands.clone(),
        COMMAND_TOPIC.into(),
        clock,
        Arc::clone(&stop),
    )?;
    let heartbeat = heartbeat.spawn(clock);
    println!(
        "bridge listening on {local}, publishing '{topic}' at {} Hz{}",
        cfg.bridge.rate_hz,
        forward.map(|t| format!(", forwarding to {t}")).unwrap_or_default()
    );

    let started = Instant::now();
    loop {
        if duration.is_some_and(|d| started.elapsed().as_secs_f64() >= d) {
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    stop.store(true, Ordering::Relaxed);
    heartbeat.stop();
    let stats = receiver.join().expect("receiver thread panicked");
    let sent = sender.map(|h| h.join().expect("sender thread panicked"));
    println!(
        "accepted {} frames, rejected {:?}, forwarded {}",
        stats.accepted,
        stats.rejected,
        sent.unwrap_or(0)
    );
    Ok(json!({
        "port": local.port(),
        "topic": topic,
        "heartbeat": hb_config,
        "received": stats,
        "forwarded": sent,
        "elapsed_s": started.elapsed().as_secs_f64(),
    }))
}
