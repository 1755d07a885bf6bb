//! Discrete action vocabulary and the token <-> velocity mapping.
//!
//! A command is exactly two tokens: a linear-velocity bin followed by an
//! angular-velocity bin. Inside an [`ActionTokenSeq`] each entry is the bin
//! index *local to its slot* (`0..v_bins` for slot 0, `0..w_bins` for slot 1).
//! The policy's output vocabulary is the concatenation of both slots, so the
//! model-level id of a slot-1 bin is `v_bins + bin` (see
//! [`ActionVocabulary::global_id`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tokens that make up one command.
pub const TOKENS_PER_COMMAND: usize = 2;

/// Default output budget per decision.
pub const DEFAULT_MAX_TOKENS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("expected {expected} tokens, got {got} (first bad position {position})")]
    WrongLength {
        expected: usize,
        got: usize,
        position: usize,
    },
    #[error("token {token} at position {position} is outside its range 0..{limit}")]
    TokenOutOfRange {
        position: usize,
        token: u32,
        limit: u32,
    },
    #[error("non-finite command component: {0}")]
    NonFinite(&'static str),
    #[error("token sequence exceeds max_len {max_len}")]
    TooLong { max_len: usize },
}

/// Continuous velocity command (`v`, `ω`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    /// Meters per second.
    pub linear_velocity: f64,
    /// Radians per second.
    pub angular_velocity: f64,
}

impl ActionCommand {
    pub const ZERO: ActionCommand = ActionCommand {
        linear_velocity: 0.0,
        angular_velocity: 0.0,
    };

    pub fn new(linear_velocity: f64, angular_velocity: f64) -> Self {
        Self {
            linear_velocity,
            angular_velocity,
        }
    }
}

/// Uniform binning of a closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRange {
    pub min: f64,
    pub max: f64,
}

impl BinRange {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn width(&self, bins: u32) -> f64 {
        (self.max - self.min) / bins as f64
    }

    fn midpoint(&self, bins: u32, index: u32) -> f64 {
        self.min + (index as f64 + 0.5) * (self.max - self.min) / bins as f64
    }

    fn bin_of(&self, bins: u32, value: f64) -> u32 {
        let clamped = value.clamp(self.min, self.max);
        let idx = ((clamped - self.min) / self.width(bins)).floor();
        // the top edge belongs to the last bin
        (idx as i64).clamp(0, bins as i64 - 1) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionVocabulary {
    pub v_bins: u32,
    pub w_bins: u32,
    pub v_range: BinRange,
    pub w_range: BinRange,
}

impl Default for ActionVocabulary {
    fn default() -> Self {
        Self {
            v_bins: 32,
            w_bins: 32,
            v_range: BinRange::new(-0.5, 0.5),
            w_range: BinRange::new(-1.5, 1.5),
        }
    }
}

impl ActionVocabulary {
    pub fn new(
        v_bins: u32,
        w_bins: u32,
        v_range: BinRange,
        w_range: BinRange,
    ) -> Result<Self, ActionError> {
        let vocab = Self {
            v_bins,
            w_bins,
            v_range,
            w_range,
        };
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        if self.v_bins < 2 || self.w_bins < 2 {
            return Err(ActionError::InvalidVocabulary(format!(
                "bin counts must be >= 2 (got {}, {})",
                self.v_bins, self.w_bins
            )));
        }
        for (name, r) in [("v", self.v_range), ("w", self.w_range)] {
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                return Err(ActionError::InvalidVocabulary(format!(
                    "{name} range [{}, {}] must be finite with min < max",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }

    /// Size of the model-level token id space.
    pub fn size(&self) -> usize {
        (self.v_bins + self.w_bins) as usize
    }

    /// Number of bins available at a command slot (0 = v, 1 = ω).
    pub fn slot_bins(&self, slot: usize) -> u32 {
        if slot % TOKENS_PER_COMMAND == 0 {
            self.v_bins
        } else {
            self.w_bins
        }
    }

    /// Model-level id of `bin` at `slot`.
    pub fn global_id(&self, slot: usize, bin: u32) -> usize {
        if slot % TOKENS_PER_COMMAND == 0 {
            bin as usize
        } else {
            (self.v_bins + bin) as usize
        }
    }

    /// Half-open range of model-level ids valid at `slot`.
    pub fn slot_ids(&self, slot: usize) -> std::ops::Range<usize> {
        if slot % TOKENS_PER_COMMAND == 0 {
            0..self.v_bins as usize
        } else {
            self.v_bins as usize..self.size()
        }
    }

    pub fn v_bin_width(&self) -> f64 {
        self.v_range.width(self.v_bins)
    }

    pub fn w_bin_width(&self) -> f64 {
        self.w_range.width(self.w_bins)
    }

    pub fn v_midpoint(&self, bin: u32) -> f64 {
        self.v_range.midpoint(self.v_bins, bin)
    }

    pub fn w_midpoint(&self, bin: u32) -> f64 {
        self.w_range.midpoint(self.w_bins, bin)
    }

    /// Clamp a command into the vocabulary's envelope.
    pub fn clamp(&self, cmd: ActionCommand) -> ActionCommand {
        ActionCommand::new(
            cmd.linear_velocity.clamp(self.v_range.min, self.v_range.max),
            cmd.angular_velocity.clamp(self.w_range.min, self.w_range.max),
        )
    }
}

/// Ordered action tokens with a length budget.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTokenSeq {
    tokens: Vec<u32>,
    max_len: usize,
}

impl ActionTokenSeq {
    pub fn new(tokens: Vec<u32>, max_len: usize) -> Result<Self, ActionError> {
        if tokens.len() > max_len {
            return Err(ActionError::TooLong { max_len });
        }
        Ok(Self { tokens, max_len })
    }

    /// A two-token command sequence with the deployment budget.
    pub fn pair(v_bin: u32, w_bin: u32) -> Self {
        Self {
            tokens: vec![v_bin, w_bin],
            max_len: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn empty(max_len: usize) -> Self {
        Self {
            tokens: Vec::new(),
            max_len,
        }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn push(&mut self, token: u32) -> Result<(), ActionError> {
        if self.tokens.len() >= self.max_len {
            return Err(ActionError::TooLong {
                max_len: self.max_len,
            });
        }
        self.tokens.push(token);
        Ok(())
    }

    /// Checks every entry against the bin count of its slot.
    pub fn validate(&self, vocab: &ActionVocabulary) -> Result<(), ActionError> {
        for (position, &token) in self.tokens.iter().enumerate() {
            let limit = vocab.slot_bins(position);
            if token >= limit {
                return Err(ActionError::TokenOutOfRange {
                    position,
                    token,
                    limit,
                });
            }
        }
        Ok(())
    }
}

/// Maps a `[v_bin, w_bin]` sequence to the bin midpoints.
pub fn decode_tokens(
    tokens: &ActionTokenSeq,
    vocab: &ActionVocabulary,
) -> Result<ActionCommand, ActionError> {
    let t = tokens.tokens();
    if t.len() != TOKENS_PER_COMMAND {
        return Err(ActionError::WrongLength {
            expected: TOKENS_PER_COMMAND,
            got: t.len(),
            position: t.len().min(TOKENS_PER_COMMAND),
        });
    }
    tokens.validate(vocab)?;
    Ok(ActionCommand::new(
        vocab.v_midpoint(t[0]),
        vocab.w_midpoint(t[1]),
    ))
}

/// Clamps and bins a continuous command.
pub fn encode_command(
    cmd: ActionCommand,
    vocab: &ActionVocabulary,
) -> Result<ActionTokenSeq, ActionError> {
    if !cmd.linear_velocity.is_finite() {
        return Err(ActionError::NonFinite("linear_velocity"));
    }
    if !cmd.angular_velocity.is_finite() {
        return Err(ActionError::NonFinite("angular_velocity"));
    }
    Ok(ActionTokenSeq::pair(
        vocab.v_range.bin_of(vocab.v_bins, cmd.linear_velocity),
        vocab.w_range.bin_of(vocab.w_bins, cmd.angular_velocity),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bin edges by repeated addition, independent of the midpoint formula.
    fn brute_force_midpoints(min: f64, max: f64, bins: u32) -> Vec<f64> {
        let width = (max - min) / bins as f64;
        let mut edges = vec![min];
        for _ in 0..bins {
            let last = *edges.last().unwrap();
            edges.push(last + width);
        }
        edges.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
    }

    #[test]
    fn first_v_bin_of_default_vocab() {
        let vocab = ActionVocabulary::default();
        let cmd = decode_tokens(&ActionTokenSeq::pair(0, 0), &vocab).unwrap();
        assert_eq!(cmd.linear_velocity, -0.484375);
        let oracle = brute_force_midpoints(-0.5, 0.5, 32);
        for (bin, expected) in oracle.iter().enumerate() {
            assert!((vocab.v_midpoint(bin as u32) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn two_bin_symmetric_case() {
        let vocab = ActionVocabulary::new(
            2,
            2,
            BinRange::new(-1.0, 1.0),
            BinRange::new(-1.0, 1.0),
        )
        .unwrap();
        let lo = decode_tokens(&ActionTokenSeq::pair(0, 1), &vocab).unwrap();
        let hi = decode_tokens(&ActionTokenSeq::pair(1, 0), &vocab).unwrap();
        assert_eq!(lo.linear_velocity, -0.5);
        assert_eq!(hi.linear_velocity, 0.5);
    }

    #[test]
    fn wrong_length_reports_position() {
        let vocab = ActionVocabulary::default();
        let seq = ActionTokenSeq::new(vec![1, 2, 3], 12).unwrap();
        match decode_tokens(&seq, &vocab) {
            Err(ActionError::WrongLength { position, .. }) => assert_eq!(position, 2),
            other => panic!("unexpected {other:?}"),
        }
        let short = ActionTokenSeq::new(vec![1], 12).unwrap();
        assert!(matches!(
            decode_tokens(&short, &vocab),
            Err(ActionError::WrongLength { position: 1, .. })
        ));
    }

    #[test]
    fn out_of_range_token_identifies_slot() {
        let vocab = ActionVocabulary::default();
        let err = decode_tokens(&ActionTokenSeq::pair(3, 32), &vocab).unwrap_err();
        assert_eq!(
            err,
            ActionError::TokenOutOfRange {
                position: 1,
                token: 32,
                limit: 32
            }
        );
    }

    #[test]
    fn range_max_goes_to_last_bin() {
        let vocab = ActionVocabulary::default();
        let seq = encode_command(ActionCommand::new(0.5, 1.5), &vocab).unwrap();
        assert_eq!(seq.tokens(), &[31, 31]);
        let seq = encode_command(ActionCommand::new(9.0, -9.0), &vocab).unwrap();
        assert_eq!(seq.tokens(), &[31, 0]);
    }

    #[test]
    fn non_finite_rejected() {
        let vocab = ActionVocabulary::default();
        assert!(encode_command(ActionCommand::new(f64::NAN, 0.0), &vocab).is_err());
        assert!(encode_command(ActionCommand::new(0.0, f64::INFINITY), &vocab).is_err());
    }

    #[test]
    fn exhaustive_round_trip_default_vocab() {
        let vocab = ActionVocabulary::default();
        for v in 0..vocab.v_bins {
            for w in 0..vocab.w_bins {
                let seq = ActionTokenSeq::pair(v, w);
                let cmd = decode_tokens(&seq, &vocab).unwrap();
                assert_eq!(encode_command(cmd, &vocab).unwrap(), seq);
                // midpoints are fixed points of the codec
                assert_eq!(decode_tokens(&encode_command(cmd, &vocab).unwrap(), &vocab).unwrap(), cmd);
            }
        }
    }

    #[test]
    fn invalid_vocabularies() {
        let r = BinRange::new(-1.0, 1.0);
        assert!(ActionVocabulary::new(1, 4, r, r).is_err());
        assert!(ActionVocabulary::new(4, 4, BinRange::new(1.0, 1.0), r).is_err());
    }

    #[test]
    fn global_ids_are_contiguous() {
        let vocab = ActionVocabulary::default();
        assert_eq!(vocab.size(), 64);
        assert_eq!(vocab.global_id(0, 5), 5);
        assert_eq!(vocab.global_id(1, 5), 37);
        assert_eq!(vocab.slot_ids(1), 32..64);
    }

    proptest! {
        #[test]
        fn round_trip_small_vocabularies(v_bins in 2u32..=64, w_bins in 2u32..=64,
                                          lo in -3.0f64..0.0, span in 0.1f64..5.0) {
            let vocab = ActionVocabulary::new(v_bins, w_bins,
                BinRange::new(lo, lo + span), BinRange::new(lo, lo + span)).unwrap();
            for v in 0..v_bins {
                for w in 0..w_bins {
                    let seq = ActionTokenSeq::pair(v, w);
                    let cmd = decode_tokens(&seq, &vocab).unwrap();
                    prop_assert_eq!(encode_command(cmd, &vocab).unwrap(), seq);
                }
            }
        }

        #[test]
        fn reconstruction_error_bounded(v in -2.0f64..2.0, w in -4.0f64..4.0) {
            let vocab = ActionVocabulary::default();
            let cmd = ActionCommand::new(v, w);
            let back = decode_tokens(&encode_command(cmd, &vocab).unwrap(), &vocab).unwrap();
            let clamped = vocab.clamp(cmd);
            prop_assert!((back.linear_velocity - clamped.linear_velocity).abs()
                <= vocab.v_bin_width() / 2.0 + 1e-12);
            prop_assert!((back.angular_velocity - clamped.angular_velocity).abs()
                <= vocab.w_bin_width() / 2.0 + 1e-12);
            prop_assert!(back.linear_velocity > vocab.v_range.min && back.linear_velocity < vocab.v_range.max);
            prop_assert!(back.angular_velocity > vocab.w_range.min && back.angular_velocity < vocab.w_range.max);
        }
    }
}
