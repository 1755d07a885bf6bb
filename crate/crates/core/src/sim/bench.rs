//! Wall-clock latency benchmark and its report.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::backend::{BackendConfig, ReasoningBackend};
use super::world::{render_observation, WorldState};
use super::SimError;
use crate::parser::parse_action_tokens;

/// Summary statistics of a latency sample in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 when `n == 1`.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// False when `n == 1` and the standard deviation is undefined.
    pub std_defined: bool,
    /// `1000 / mean` rounded half-up to two decimals.
    pub hz: f64,
}

/// Half-up rounding to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0 + 0.5).floor() / 100.0
}

/// One-pass (Welford) mean and variance with exact min/max.
///
/// Samples are shifted by the first one before accumulating, so tightly
/// clustered latencies far from zero keep full relative precision.
pub fn compute_stats(samples: &[f64]) -> Result<LatencyStats, SimError> {
    if samples.is_empty() {
        return Err(SimError::Config("no latency samples".into()));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(SimError::Config(format!("non-finite latency sample {x}")));
    }
    let shift = samples[0];
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &x) in samples.iter().enumerate() {
        let y = x - shift;
        let delta = y - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (y - mean);
        min = min.min(x);
        max = max.max(x);
    }
    let mean = shift + mean;
    let n = samples.len();
    let std = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(LatencyStats {
        n,
        mean,
        std,
        min,
        max,
        std_defined: n > 1,
        hz: round2(1000.0 / mean),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyReport {
    pub backend: String,
    pub backend_config: BackendConfig,
    pub runs: usize,
    pub warmup_excluded: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub hz: f64,
    pub std_defined: bool,
    pub seed: u64,
    pub warmup_ms: Vec<f64>,
    pub samples_ms: Vec<f64>,
}

/// Times `runs + warmup` sequential decisions from frame to parsed command.
///
/// Each decision renders a fresh random world, runs the backend, and
/// parses its output line. World sampling is outside the timed region.
pub fn run_latency_bench<B: ReasoningBackend + ?Sized>(
    backend: &mut B,
    runs: usize,
    warmup: usize,
    seed: u64,
) -> Result<LatencyReport, SimError> {
    if runs == 0 {
        return Err(SimError::Config("runs must be at least 1 after warm-up".into()));
    }
    let vocab = backend.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = Vec::with_capacity(runs + warmup);
    for _ in 0..runs + warmup {
        let world = WorldState::random(&mut rng);
        let start = Instant::now();
        let obs = render_observation(&world, 16, 16);
        backend.observe_world(&world);
        let line = backend.infer_line(&obs)?;
        let tokens = parse_action_tokens(&line, &vocab);
        let elapsed = start.elapsed();
        tokens.map_err(|e| SimError::Backend(e.into()))?;
        times.push(elapsed.as_secs_f64() * 1e3);
    }
    let samples = times.split_off(warmup);
    let stats = compute_stats(&samples)?;
    Ok(LatencyReport {
        backend: backend.name(),
        backend_config: backend.config(),
        runs,
        warmup_excluded: warmup,
        mean_ms: stats.mean,
        std_ms: stats.std,
        min_ms: stats.min,
        max_ms: stats.max,
        hz: stats.hz,
        std_defined: stats.std_defined,
        seed,
        warmup_ms: times,
        samples_ms: samples,
    })
}

/// Row labels of the report table, in order.
pub const TABLE_ROWS: [&str; 6] = [
    "Total Runs",
    "Mean Latency",
    "Std Deviation",
    "Minimum",
    "Maximum",
    "Reasoning Frequency",
];

impl LatencyReport {
    /// Plain-text two-column table.
    pub fn table(&self) -> String {
        let std = if self.std_defined {
            format!("{:.2} ms", self.std_ms)
        } else {
            "0.00 ms (undefined, n = 1)".into()
        };
        let values = [
            self.runs.to_string(),
            format!("{:.2} ms", self.mean_ms),
            std,
            format!("{:.2} ms", self.min_ms),
            format!("{:.2} ms", self.max_ms),
            format!("{:.2} Hz", self.hz),
        ];
        let width = TABLE_ROWS.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  Result", "Measurement");
        let _ = writeln!(out, "{}", "-".repeat(width + 2 + 24));
        for (label, value) in TABLE_ROWS.iter().zip(values) {
            let _ = writeln!(out, "{label:<width$}  {value}");
        }
        let _ = writeln!(
            out,
            "(warm-up runs excluded: {}; backend: {})",
            self.warmup_excluded, self.backend
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let s = compute_stats(&[150.4, 150.5, 150.6]).unwrap();
        assert!((s.mean - 150.5).abs() < 1e-12);
        assert!((s.std - 0.1).abs() < 1e-12);
        assert_eq!((s.min, s.max, s.hz), (150.4, 150.6, 6.64));
    }

    #[test]
    fn degenerate_cases() {
        let s = compute_stats(&[3.0; 10]).unwrap();
        assert_eq!(s.std, 0.0);
        let s = compute_stats(&[7.0]).unwrap();
        assert_eq!(s.std, 0.0);
        assert!(!s.std_defined);
        assert!(compute_stats(&[]).is_err());
        assert!(compute_stats(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round2(6.645), 6.65);
        assert_eq!(round2(1000.0 / 150.5), 6.64);
        assert_eq!(round2(6.6449), 6.64);
    }
}
