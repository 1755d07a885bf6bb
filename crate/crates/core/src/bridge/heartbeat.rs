//! Fixed-rate republishing of the latest command.
//!
//! Ticks fall on `start + k * period` in integer nanoseconds, so under
//! [`SimClock`](super::SimClock) a half-open window `[start, start + D)`
//! holds exactly `D / period` ticks when `D` is a multiple of the period.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Serialize;

use super::bus::{Bus, Subscription};
use super::clock::{Clock, WallClock};
use super::wire::{TwistMessage, WireFrame};
use super::BridgeError;
use crate::action_space::ActionCommand;

pub const DEFAULT_RATE_HZ: f64 = 100.0;
/// Two reasoning periods at 150.5 ms: one missed decision is tolerated.
pub const DEFAULT_STALENESS_LIMIT: Duration = Duration::from_micros(301_000);

/// A command as published by the reasoning side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StampedCommand {
    pub command: ActionCommand,
    pub timestamp_ns: u64,
}

/// One heartbeat output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeartbeatFrame {
    pub frame: WireFrame,
    /// Age of the command being republished, `None` before the first one.
    pub command_age_ns: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeartbeatConfig {
    pub rate_hz: f64,
    /// `None` disables the fail-safe and holds the last command forever.
    pub staleness_limit: Option<Duration>,
}

impl Default for HeartbeatConfig {
    fn default() -> Self {
        Self {
            rate_hz: DEFAULT_RATE_HZ,
            staleness_limit: Some(DEFAULT_STALENESS_LIMIT),
        }
    }
}

impl HeartbeatConfig {
    pub fn period_ns(&self) -> Result<u64, BridgeError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(BridgeError::Config(format!("rate must be > 0 Hz, got {}", self.rate_hz)));
        }
        let period = (1e9 / self.rate_hz).round();
        if period < 1.0 {
            return Err(BridgeError::Config(format!("rate {} Hz is too high", self.rate_hz)));
        }
        if self.staleness_limit == Some(Duration::ZERO) {
            return Err(BridgeError::Config("staleness limit must be positive".into()));
        }
        Ok(period as u64)
    }
}

pub struct Heartbeat {
    commands: Subscription<StampedCommand>,
    output: Bus<HeartbeatFrame>,
    output_topic: String,
    period_ns: u64,
    limit_ns: Option<u64>,
    next_tick_ns: u64,
    latest: Option<StampedCommand>,
    seq: u32,
}

impl Heartbeat {
    pub fn new(
        commands: &Bus<StampedCommand>,
        command_topic: &str,
        output: &Bus<HeartbeatFrame>,
        output_topic: &str,
        config: HeartbeatConfig,
        start_ns: u64,
    ) -> Result<Self, BridgeError> {
        let period_ns = config.period_ns()?;
        Ok(Self {
            commands: commands.subscribe(command_topic),
            output: output.clone(),
            output_topic: output_topic.to_string(),
            period_ns,
            limit_ns: config.staleness_limit.map(|d| d.as_nanos() as u64),
            next_tick_ns: start_ns,
            latest: None,
            seq: 0,
        })
    }

    pub fn period_ns(&self) -> u64 {
        self.period_ns
    }

    pub fn next_tick_ns(&self) -> u64 {
        self.next_tick_ns
    }

    /// Publishes one frame stamped `now_ns` from the freshest command seen.
    pub fn tick(&mut self, now_ns: u64) -> HeartbeatFrame {
        if let Some(last) = self.commands.drain().pop() {
            self.latest = Some(last);
        }
        let age = self.latest.map(|c| now_ns.saturating_sub(c.timestamp_ns));
        let fresh = match (self.latest, age, self.limit_ns) {
            (Some(c), _, None) => Some(c),
            (Some(c), Some(a), Some(limit)) if a <= limit => Some(c),
            _ => None,
        };
        let frame = HeartbeatFrame {
            frame: WireFrame {
                twist: fresh
                    .map(|c| TwistMessage::from_command(c.command))
                    .unwrap_or(TwistMessage::ZERO),
                seq: self.seq,
                timestamp_ns: now_ns,
                stale: fresh.is_none(),
            },
            command_age_ns: age,
        };
        self.seq = self.seq.wrapping_add(1);
        self.output.publish(&self.output_topic, frame);
        frame
    }

    /// Runs every scheduled tick at or before `now_ns`; returns how many.
    pub fn run_until(&mut self, now_ns: u64) -> usize {
        let mut n = 0;
        while self.next_tick_ns <= now_ns {
            let t = self.next_tick_ns;
            self.tick(t);
            self.next_tick_ns += self.period_ns;
            n += 1;
        }
        n
    }

    /// Runs on a background thread against the wall clock.
    ///
    /// The schedule is anchored to `clock`'s current time, so sleep overshoot
    /// does not accumulate as drift.
    pub fn spawn(mut self, clock: WallClock) -> HeartbeatHandle {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        self.next_tick_ns = clock.now_ns();
        let join = thread::spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                let now = clock.now_ns();
                if now < self.next_tick_ns {
                    thread::sleep(Duration::from_nanos(self.next_tick_ns - now));
                    continue;
                }
                self.tick(now);
                self.next_tick_ns += self.period_ns;
            }
            self
        });
        HeartbeatHandle { stop, join }
    }
}

pub struct HeartbeatHandle {
    stop: Arc<AtomicBool>,
    join: JoinHandle<Heartbeat>,
}

impl HeartbeatHandle {
    pub fn stop(self) -> Heartbeat {
        self.stop.store(true, Ordering::Relaxed);
        self.join.join().expect("heartbeat thread panicked")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(limit: Option<Duration>) -> (Bus<StampedCommand>, Subscription<HeartbeatFrame>, Heartbeat) {
        let cmds = Bus::new();
        let out = Bus::new();
        let sub = out.subscribe("out");
        let hb = Heartbeat::new(
            &cmds,
            "cmd",
            &out,
            "out",
            HeartbeatConfig {
                rate_hz: 100.0,
                staleness_limit: limit,
            },
            0,
        )
        .unwrap();
        (cmds, sub, hb)
    }

    #[test]
    fn rejects_bad_rates() {
        for rate in [0.0, -1.0, f64::NAN, f64::INFINITY, 1e10] {
            let cfg = HeartbeatConfig {
                rate_hz: rate,
                staleness_limit: None,
            };
            assert!(cfg.period_ns().is_err(), "{rate}");
        }
    }

    #[test]
    fn no_command_means_stale_zero() {
        let (_cmds, sub, mut hb) = setup(Some(DEFAULT_STALENESS_LIMIT));
        assert_eq!(hb.run_until(1_000_000_000), 101);
        let frames = sub.drain();
        assert_eq!(frames.len(), 101);
        assert!(frames
            .iter()
            .all(|f| f.frame.stale && f.frame.twist == TwistMessage::ZERO));
        assert!(frames.windows(2).all(|w| w[1].frame.seq == w[0].frame.seq + 1));
    }

    #[test]
    fn infinite_limit_holds_forever() {
        let (cmds, sub, mut hb) = setup(None);
        let cmd = ActionCommand::new(0.2, 0.3);
        cmds.publish("cmd", StampedCommand { command: cmd, timestamp_ns: 0 });
        hb.run_until(3_600_000_000_000);
        let last = sub.drain().pop().unwrap();
        assert!(!last.frame.stale);
        assert_eq!(last.frame.twist.to_command(), cmd);
    }

    #[test]
    fn fail_safe_after_limit() {
        let (cmds, sub, mut hb) = setup(Some(Duration::from_millis(301)));
        let cmd = ActionCommand::new(0.2, 0.3);
        cmds.publish("cmd", StampedCommand { command: cmd, timestamp_ns: 0 });
        hb.run_until(400_000_000);
        for f in sub.drain() {
            let stale = f.frame.timestamp_ns > 301_000_000;
            assert_eq!(f.frame.stale, stale, "t={}", f.frame.timestamp_ns);
            if stale {
                assert_eq!(f.frame.twist, TwistMessage::ZERO);
            } else {
                assert_eq!(f.frame.twist.to_command(), cmd);
            }
        }
    }
}
