//! Reasoning-to-actuation bridge: bus, Twist wire codec, heartbeat, UDP.

mod bus;
mod clock;
mod heartbeat;
mod udp;
mod wire;

use thiserror::Error;

pub use bus::{Bus, Subscription};
pub use clock::{Clock, SimClock, WallClock};
pub use heartbeat::{
    Heartbeat, HeartbeatConfig, HeartbeatFrame, HeartbeatHandle, StampedCommand, DEFAULT_RATE_HZ,
    DEFAULT_STALENESS_LIMIT,
};
pub use udp::{
    bridge_port, forward_to_udp, receive_from_udp, ReceiveStats, BRIDGE_PORT_ENV,
    DEFAULT_BRIDGE_PORT,
};
pub use wire::{
    decode_twist, encode_twist, TwistMessage, WireError, WireFrame, FLAG_STALE, FRAME_LEN,
    FRAME_MAGIC, FRAME_VERSION,
};

pub const COMMAND_TOPIC: &str = "cmd_vel_raw";
pub const OUTPUT_TOPIC: &str = "cmd_vel";

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid bridge configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
