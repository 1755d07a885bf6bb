//! Pluggable reasoning backends.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use base64::Engine;
use serde::Serialize;
use thiserror::Error;

use super::world::{expert_command, WorldState};
use crate::action_space::{encode_command, ActionError, ActionTokenSeq, ActionVocabulary};
use crate::container::PolicyBundle;
use crate::parser::{format_action, parse_action_tokens, ParseError};
use crate::policy::{greedy_decode, DecodeConfig, FrozenPolicy, Observation, PolicyError};

/// Inference settings carried through reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BackendConfig {
    pub n_ctx: usize,
    pub max_tokens: usize,
    pub layers: u32,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            n_ctx: 512,
            max_tokens: 12,
            layers: 42,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("backend process: {0}")]
    Process(String),
    #[error("expert backend has no world state")]
    NoWorld,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    pub fn class(&self) -> &'static str {
        match self {
            Self::Policy(_) => "policy",
            Self::Action(_) => "action",
            Self::Parse(_) => "parse",
            Self::Timeout(_) => "timeout",
            Self::Process(_) => "process",
            Self::NoWorld => "no_world",
            Self::Io(_) => "io",
        }
    }
}

/// Maps an observation to action tokens. Implementations must be
/// deterministic for equal inputs.
pub trait ReasoningBackend {
    fn name(&self) -> String;

    fn config(&self) -> BackendConfig;

    fn vocab(&self) -> ActionVocabulary;

    /// Privileged world access, used only by the scripted expert.
    fn observe_world(&mut self, _world: &WorldState) {}

    fn infer(&mut self, obs: &Observation) -> Result<ActionTokenSeq, BackendError>;

    /// Model output as text; the pipeline always parses this line.
    fn infer_line(&mut self, obs: &Observation) -> Result<String, BackendError> {
        Ok(format_action(&self.infer(obs)?)?)
    }
}

impl<B: ReasoningBackend + ?Sized> ReasoningBackend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn config(&self) -> BackendConfig {
        (**self).config()
    }
    fn vocab(&self) -> ActionVocabulary {
        (**self).vocab()
    }
    fn observe_world(&mut self, world: &WorldState) {
        (**self).observe_world(world)
    }
    fn infer(&mut self, obs: &Observation) -> Result<ActionTokenSeq, BackendError> {
        (**self).infer(obs)
    }
    fn infer_line(&mut self, obs: &Observation) -> Result<String, BackendError> {
        (**self).infer_line(obs)
    }
}

/// Greedy decoding of the toy policy.
pub struct ToyPolicyBackend {
    policy: FrozenPolicy,
    decode: DecodeConfig,
    layers: u32,
    label: String,
}

impl ToyPolicyBackend {
    pub fn new(policy: FrozenPolicy, decode: DecodeConfig) -> Self {
        Self {
            policy,
            decode,
            layers: BackendConfig::default().layers,
            label: "toy-policy".into(),
        }
    }

    pub fn from_bundle(bundle: &PolicyBundle) -> Self {
        Self {
            policy: bundle.policy.clone(),
            decode: bundle.decode,
            layers: bundle.layers,
            label: format!("toy-policy ({})", bundle.codec),
        }
    }

    pub fn policy(&self) -> &FrozenPolicy {
        &self.policy
    }
}

impl ReasoningBackend for ToyPolicyBackend {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn config(&self) -> BackendConfig {
        BackendConfig {
            n_ctx: self.decode.context_budget,
            max_tokens: self.decode.max_tokens,
            layers: self.layers,
        }
    }

    fn vocab(&self) -> ActionVocabulary {
        self.policy.vocab
    }

    fn infer(&mut self, obs: &Observation) -> Result<ActionTokenSeq, BackendError> {
        Ok(greedy_decode(&self.policy, obs, &self.decode)?)
    }
}

/// The scripted expert, tokenized through the action vocabulary.
pub struct ExpertBackend {
    vocab: ActionVocabulary,
    world: Option<WorldState>,
}

impl ExpertBackend {
    pub fn new(vocab: ActionVocabulary) -> Self {
        Self { vocab, world: None }
    }
}

impl ReasoningBackend for ExpertBackend {
    fn name(&self) -> String {
        "expert".into()
    }

    fn config(&self) -> BackendConfig {
        BackendConfig::default()
    }

    fn vocab(&self) -> ActionVocabulary {
        self.vocab
    }

    fn observe_world(&mut self, world: &WorldState) {
        self.world = Some(world.clone());
    }

    fn infer(&mut self, _obs: &Observation) -> Result<ActionTokenSeq, BackendError> {
        let world = self.world.as_ref().ok_or(BackendError::NoWorld)?;
        Ok(encode_command(expert_command(world), &self.vocab)?)
    }
}

/// Always answers with the same token pair.
pub struct ConstantBackend {
    vocab: ActionVocabulary,
    tokens: ActionTokenSeq,
}

impl ConstantBackend {
    pub fn new(vocab: ActionVocabulary, v_bin: u32, w_bin: u32) -> Result<Self, BackendError> {
        let tokens = ActionTokenSeq::pair(v_bin, w_bin);
        tokens.validate(&vocab)?;
        Ok(Self { vocab, tokens })
    }
}

impl ReasoningBackend for ConstantBackend {
    fn name(&self) -> String {
        format!("constant {:?}", self.tokens.tokens())
    }

    fn config(&self) -> BackendConfig {
        BackendConfig::default()
    }

    fn vocab(&self) -> ActionVocabulary {
        self.vocab
    }

    fn infer(&mut self, _obs: &Observation) -> Result<ActionTokenSeq, BackendError> {
        Ok(self.tokens.clone())
    }
}

/// Pads every inference of `inner` to a fixed duration by spinning.
///
/// Spinning instead of sleeping keeps the overshoot in the microsecond
/// range, so measured latency reflects harness overhead only.
pub struct DelayInjectingBackend<B> {
    inner: B,
    delay: Duration,
}

impl<B: ReasoningBackend> DelayInjectingBackend<B> {
    pub fn new(inner: B, delay: Duration) -> Self {
        Self { inner, delay }
    }

    fn spin_until(start: Instant, delay: Duration) {
        while start.elapsed() < delay {
            std::hint::spin_loop();
        }
    }
}

impl<B: ReasoningBackend> ReasoningBackend for DelayInjectingBackend<B> {
    fn name(&self) -> String {
        format!("{} + {:.3} ms busy-wait", self.inner.name(), self.delay.as_secs_f64() * 1e3)
    }

    fn config(&self) -> BackendConfig {
        self.inner.config()
    }

    fn vocab(&self) -> ActionVocabulary {
        self.inner.vocab()
    }

    fn observe_world(&mut self, world: &WorldState) {
        self.inner.observe_world(world)
    }

    fn infer(&mut self, obs: &Observation) -> Result<ActionTokenSeq, BackendError> {
        let start = Instant::now();
        let out = self.inner.infer(obs);
        Self::spin_until(start, self.delay);
        out
    }

    fn infer_line(&mut self, obs: &Observation) -> Result<String, BackendError> {
        let start = Instant::now();
        let out = self.inner.infer_line(obs);
        Self::spin_until(start, self.delay);
        out
    }
}

/// Line protocol to a child process.
///
/// Request: `OBS <base64 of image bytes> GOAL <id>\n` on stdin, where image
/// bytes are `round(255 * x)` in row-major HWC order. Reply: one `ACTION`
/// line on stdout.
pub struct ExternalProcessBackend {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
    timeout: Duration,
    vocab: ActionVocabulary,
    command: String,
}

impl ExternalProcessBackend {
    pub fn spawn(
        argv: &[String],
        vocab: ActionVocabulary,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| BackendError::Process("empty command line".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            replies,
            timeout,
            vocab,
            command: argv.join(" "),
        })
    }

    pub fn request_line(obs: &Observation) -> String {
        let b64 = base64::engine::general_purpose::STANDARD.encode(obs.image.to_bytes());
        format!("OBS {b64} GOAL {}\n", obs.goal.goal_id)
    }
}

impl ReasoningBackend for ExternalProcessBackend {
    fn name(&self) -> String {
        format!("exec `{}`", self.command)
    }

    fn config(&self) -> BackendConfig {
        BackendConfig::default()
    }

    fn vocab(&self) -> ActionVocabulary {
        self.vocab
    }

    fn infer(&mut self, obs: &Observation) -> Result<ActionTokenSeq, BackendError> {
        let line = self.infer_line(obs)?;
        Ok(parse_action_tokens(&line, &self.vocab)?)
    }

    fn infer_line(&mut self, obs: &Observation) -> Result<String, BackendError> {
        // replies that missed an earlier deadline must not answer this request
        while self.replies.try_recv().is_ok() {}
        self.stdin.write_all(Self::request_line(obs).as_bytes())?;
        self.stdin.flush()?;
        match self.replies.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(e.into()),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(BackendError::Process("child closed its output".into()))
            }
        }
    }
}

impl Drop for ExternalProcessBackend {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
