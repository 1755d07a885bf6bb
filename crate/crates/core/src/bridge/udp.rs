//! Fire-and-forget UDP transport, one frame per datagram.

use std::collections::BTreeMap;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::Serialize;

use super::bus::{Bus, Subscription};
use super::clock::{Clock, WallClock};
use super::heartbeat::{HeartbeatFrame, StampedCommand};
use super::wire::{decode_twist, FRAME_LEN};
use super::BridgeError;

pub const DEFAULT_BRIDGE_PORT: u16 = 47474;
pub const BRIDGE_PORT_ENV: &str = "LITEVLA_BRIDGE_PORT";

const POLL: Duration = Duration::from_millis(20);

/// Port from `LITEVLA_BRIDGE_PORT`, else the default.
pub fn bridge_port() -> Result<u16, BridgeError> {
    match std::env::var(BRIDGE_PORT_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| BridgeError::Config(format!("{BRIDGE_PORT_ENV}={s:?} is not a port number"))),
        Err(_) => Ok(DEFAULT_BRIDGE_PORT),
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ReceiveStats {
    pub accepted: u64,
    /// Rejected datagrams keyed by error class.
    pub rejected: BTreeMap<&'static str, u64>,
}

/// Sends every frame published on `frames` to `target` until `stop` is set.
/// Returns the number of datagrams sent.
pub fn forward_to_udp(
    frames: Subscription<HeartbeatFrame>,
    socket: UdpSocket,
    target: SocketAddr,
    stop: Arc<AtomicBool>,
) -> JoinHandle<u64> {
    thread::spawn(move || {
        let mut sent = 0;
        while !stop.load(Ordering::Relaxed) {
            if let Some(f) = frames.recv_timeout(POLL) {
                if socket.send_to(&f.frame.encode(), target).is_ok() {
                    sent += 1;
                }
            }
        }
        sent
    })
}

/// Publishes valid incoming frames as commands stamped with local receive
/// time; corrupted frames are counted and dropped.
pub fn receive_from_udp(
    socket: UdpSocket,
    commands: Bus<StampedCommand>,
    topic: String,
    clock: WallClock,
    stop: Arc<AtomicBool>,
) -> Result<JoinHandle<ReceiveStats>, BridgeError> {
    socket.set_read_timeout(Some(POLL))?;
    Ok(thread::spawn(move || {
        let mut stats = ReceiveStats::default();
        // one spare byte so oversized datagrams are seen as the wrong length
        let mut buf = [0u8; FRAME_LEN + 1];
        while !stop.load(Ordering::Relaxed) {
            let Ok((n, _)) = socket.recv_from(&mut buf) else {
                continue;
            };
            match decode_twist(&buf[..n]) {
                Ok(frame) => {
                    stats.accepted += 1;
                    commands.publish(
                        &topic,
                        StampedCommand {
                            command: frame.twist.to_command(),
                            timestamp_ns: clock.now_ns(),
                        },
                    );
                }
                Err(e) => *stats.rejected.entry(e.class()).or_default() += 1,
            }
        }
        stats
    }))
}
