//! Twist message and its 68-byte wire frame.
//!
//! ```text
//! 0..2   magic 0x4C56, little-endian (bytes 56 4C)
//! 2      version = 1
//! 3      flags, bit 0 = stale, other bits must be zero
//! 4..8   seq u32
//! 8..16  timestamp_ns u64
//! 16..64 linear x y z, angular x y z (f64)
//! 64..68 CRC-32 (IEEE) of bytes 0..64
//! ```

use serde::Serialize;
use thiserror::Error;

use crate::action_space::ActionCommand;

pub const FRAME_LEN: usize = 68;
pub const FRAME_MAGIC: u16 = 0x4C56;
pub const FRAME_VERSION: u8 = 1;
pub const FLAG_STALE: u8 = 0x01;

/// Velocity in the layout of `geometry_msgs/Twist`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TwistMessage {
    pub linear: [f64; 3],
    pub angular: [f64; 3],
}

impl TwistMessage {
    pub const ZERO: TwistMessage = TwistMessage {
        linear: [0.0; 3],
        angular: [0.0; 3],
    };

    /// `linear.x = v`, `angular.z = ω`, everything else zero.
    pub fn from_command(cmd: ActionCommand) -> Self {
        Self {
            linear: [cmd.linear_velocity, 0.0, 0.0],
            angular: [0.0, 0.0, cmd.angular_velocity],
        }
    }

    pub fn to_command(&self) -> ActionCommand {
        ActionCommand::new(self.linear[0], self.angular[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireFrame {
    pub twist: TwistMessage,
    pub seq: u32,
    pub timestamp_ns: u64,
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame is {got} bytes, expected {FRAME_LEN}")]
    Length { got: usize },
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("bad magic {found:04x}")]
    Magic { found: u16 },
    #[error("unsupported version {found}")]
    Version { found: u8 },
    #[error("unknown flag bits {found:02x}")]
    Flags { found: u8 },
}

impl WireError {
    pub fn class(&self) -> &'static str {
        match self {
            Self::Length { .. } => "length",
            Self::Crc { .. } => "crc",
            Self::Magic { .. } => "magic",
            Self::Version { .. } => "version",
            Self::Flags { .. } => "flags",
        }
    }
}

pub fn encode_twist(twist: &TwistMessage, seq: u32, timestamp_ns: u64, stale: bool) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&FRAME_MAGIC.to_le_bytes());
    out[2] = FRAME_VERSION;
    out[3] = if stale { FLAG_STALE } else { 0 };
    out[4..8].copy_from_slice(&seq.to_le_bytes());
    out[8..16].copy_from_slice(&timestamp_ns.to_le_bytes());
    for (i, v) in twist.linear.iter().chain(&twist.angular).enumerate() {
        out[16 + 8 * i..24 + 8 * i].copy_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[..64]);
    out[64..].copy_from_slice(&crc.to_le_bytes());
    out
}

impl WireFrame {
    pub fn encode(&self) -> [u8; FRAME_LEN] {
        encode_twist(&self.twist, self.seq, self.timestamp_ns, self.stale)
    }
}

/// Checks length, then CRC, then header fields.
pub fn decode_twist(bytes: &[u8]) -> Result<WireFrame, WireError> {
    if bytes.len() != FRAME_LEN {
        return Err(WireError::Length { got: bytes.len() });
    }
    let stored = u32::from_le_bytes(bytes[64..68].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..64]);
    if stored != computed {
        return Err(WireError::Crc { stored, computed });
    }
    let magic = u16::from_le_bytes([bytes[0], bytes[1]]);
    if magic != FRAME_MAGIC {
        return Err(WireError::Magic { found: magic });
    }
    if bytes[2] != FRAME_VERSION {
        return Err(WireError::Version { found: bytes[2] });
    }
    if bytes[3] & !FLAG_STALE != 0 {
        return Err(WireError::Flags { found: bytes[3] });
    }
    let f = |i: usize| f64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap());
    Ok(WireFrame {
        twist: TwistMessage {
            linear: [f(0), f(1), f(2)],
            angular: [f(3), f(4), f(5)],
        },
        seq: u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        timestamp_ns: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        stale: bytes[3] & FLAG_STALE != 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_mapping() {
        let t = TwistMessage::from_command(ActionCommand::new(0.25, -1.0));
        assert_eq!(t.linear, [0.25, 0.0, 0.0]);
        assert_eq!(t.angular, [0.0, 0.0, -1.0]);
        assert_eq!(t.to_command(), ActionCommand::new(0.25, -1.0));
    }

    #[test]
    fn errors_are_distinct() {
        let good = encode_twist(&TwistMessage::ZERO, 1, 2, false);
        assert_eq!(decode_twist(&good[..67]).unwrap_err().class(), "length");
        let reseal = |mut b: [u8; FRAME_LEN]| {
            let crc = crc32fast::hash(&b[..64]);
            b[64..].copy_from_slice(&crc.to_le_bytes());
            b
        };
        let mut b = good;
        b[0] = 0;
        assert_eq!(decode_twist(&reseal(b)).unwrap_err().class(), "magic");
        let mut b = good;
        b[2] = 2;
        assert_eq!(decode_twist(&reseal(b)).unwrap_err().class(), "version");
        let mut b = good;
        b[3] = 0x02;
        assert_eq!(decode_twist(&reseal(b)).unwrap_err().class(), "flags");
        let mut b = good;
        b[20] ^= 1;
        assert_eq!(decode_twist(&b).unwrap_err().class(), "crc");
    }
}
