//! The `ACTION <v> <w>` line grammar between reasoning and actuation.
//!
//! ```text
//! line  := "ACTION" SP int SP int [LF]
//! int   := "0" | [1-9][0-9]*
//! ```
//!
//! The keyword is case-sensitive, separators are exactly one space, and a
//! line (trailing newline included) may not exceed [`MAX_LINE_BYTES`]. The
//! grammar is this crate's own convention; the upstream model's raw action
//! text is not documented anywhere.
//!
//! Parsing is fail-stop: a rejected line never yields a command.

use serde::Serialize;
use thiserror::Error;

use crate::action_space::{decode_tokens, ActionCommand, ActionError, ActionTokenSeq, ActionVocabulary};

pub const KEYWORD: &[u8] = b"ACTION";
pub const MAX_LINE_BYTES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorClass {
    Syntax,
    Range,
    Length,
}

impl std::fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Syntax => "syntax",
            Self::Range => "range",
            Self::Length => "length",
        })
    }
}

/// A rejected line.
///
/// `field` is 0 for the keyword, 1 for the v token and 2 for the ω token.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{class} error at offset {offset} (field {field}): {message}")]
pub struct ParseError {
    pub class: ErrorClass,
    pub offset: usize,
    pub field: usize,
    pub message: String,
}

impl ParseError {
    fn syntax(offset: usize, field: usize, message: impl Into<String>) -> Self {
        Self {
            class: ErrorClass::Syntax,
            offset,
            field,
            message: message.into(),
        }
    }
}

struct Token {
    start: usize,
    value: Option<u32>,
}

fn describe(b: Option<&u8>) -> String {
    match b {
        None => "end of line".into(),
        Some(b) if b.is_ascii_graphic() => format!("'{}'", *b as char),
        Some(b) => format!("byte 0x{b:02x}"),
    }
}

fn integer(line: &[u8], pos: &mut usize, field: usize) -> Result<Token, ParseError> {
    let start = *pos;
    let digits = line[start..].iter().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 {
        return Err(ParseError::syntax(
            start,
            field,
            format!("expected a decimal integer, found {}", describe(line.get(start))),
        ));
    }
    if digits > 1 && line[start] == b'0' {
        return Err(ParseError::syntax(start, field, "leading zero"));
    }
    *pos = start + digits;
    // digits are ASCII; overflow leaves `None` and becomes a range error
    let value = std::str::from_utf8(&line[start..start + digits])
        .ok()
        .and_then(|s| s.parse::<u32>().ok());
    Ok(Token { start, value })
}

fn expect_space(line: &[u8], pos: &mut usize, field: usize) -> Result<(), ParseError> {
    if line.get(*pos) != Some(&b' ') {
        return Err(ParseError::syntax(
            *pos,
            field,
            format!("expected a single space, found {}", describe(line.get(*pos))),
        ));
    }
    *pos += 1;
    Ok(())
}

/// Parses a line into its `[v_bin, w_bin]` token pair.
pub fn parse_action_tokens(
    line: impl AsRef<[u8]>,
    vocab: &ActionVocabulary,
) -> Result<ActionTokenSeq, ParseError> {
    let line = line.as_ref();
    if line.len() > MAX_LINE_BYTES {
        return Err(ParseError {
            class: ErrorClass::Length,
            offset: MAX_LINE_BYTES,
            field: 0,
            message: format!("line is {} bytes, limit is {MAX_LINE_BYTES}", line.len()),
        });
    }
    if let Some(i) = (0..KEYWORD.len()).find(|&i| line.get(i) != Some(&KEYWORD[i])) {
        return Err(ParseError::syntax(i, 0, "expected keyword ACTION"));
    }
    let mut pos = KEYWORD.len();
    expect_space(line, &mut pos, 0)?;
    let v = integer(line, &mut pos, 1)?;
    expect_space(line, &mut pos, 1)?;
    let w = integer(line, &mut pos, 2)?;
    if line.get(pos) == Some(&b'\n') {
        pos += 1;
    }
    if pos != line.len() {
        return Err(ParseError::syntax(
            pos,
            2,
            format!("unexpected {} after the last token", describe(line.get(pos))),
        ));
    }

    let mut tokens = [0u32; 2];
    for (i, (tok, bins)) in [(v, vocab.v_bins), (w, vocab.w_bins)].into_iter().enumerate() {
        match tok.value {
            Some(t) if t < bins => tokens[i] = t,
            _ => {
                return Err(ParseError {
                    class: ErrorClass::Range,
                    offset: tok.start,
                    field: i + 1,
                    message: format!("token must be below {bins}"),
                })
            }
        }
    }
    Ok(ActionTokenSeq::pair(tokens[0], tokens[1]))
}

/// Parses and decodes a line into a velocity command.
pub fn parse_action_line(
    line: impl AsRef<[u8]>,
    vocab: &ActionVocabulary,
) -> Result<ActionCommand, ParseError> {
    let tokens = parse_action_tokens(line, vocab)?;
    Ok(decode_tokens(&tokens, vocab).expect("tokens were range-checked"))
}

/// Canonical `ACTION <v> <w>\n` form of a two-token sequence.
pub fn format_action(tokens: &ActionTokenSeq) -> Result<String, ActionError> {
    match tokens.tokens() {
        [v, w] => Ok(format!("ACTION {v} {w}\n")),
        t => Err(ActionError::WrongLength {
            expected: 2,
            got: t.len(),
            position: t.len().min(2),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> ActionVocabulary {
        ActionVocabulary::default()
    }

    fn err(line: &str) -> ParseError {
        parse_action_tokens(line, &vocab()).unwrap_err()
    }

    #[test]
    fn midpoint_example() {
        let cmd = parse_action_line("ACTION 16 15\n", &vocab()).unwrap();
        assert_eq!(cmd.linear_velocity, 0.015625);
        assert_eq!(cmd.angular_velocity, -0.046875);
    }

    #[test]
    fn rejections_carry_class_offset_and_field() {
        let e = err("ACTION 99 0");
        assert_eq!((e.class, e.offset, e.field), (ErrorClass::Range, 7, 1));
        let e = err("ACTION 0 32");
        assert_eq!((e.class, e.offset, e.field), (ErrorClass::Range, 9, 2));
        let e = err("action 1 2");
        assert_eq!((e.class, e.offset, e.field), (ErrorClass::Syntax, 0, 0));
        let e = err("ACTION 01 2");
        assert_eq!((e.class, e.offset, e.field), (ErrorClass::Syntax, 7, 1));
        let e = err("ACTION 1  2");
        assert_eq!((e.class, e.offset, e.field), (ErrorClass::Syntax, 9, 2));
        let e = err("ACTION 1 2 ");
        assert_eq!((e.class, e.offset), (ErrorClass::Syntax, 10));
        let e = err("ACTION 1 2\n\n");
        assert_eq!((e.class, e.offset), (ErrorClass::Syntax, 11));
        let e = err("ACTION 1\t2");
        assert_eq!((e.class, e.offset), (ErrorClass::Syntax, 8));
        let e = err("ACTION 99999999999 0");
        assert_eq!(e.class, ErrorClass::Range);
        let e = err(&format!("ACTION 1 {}", "0".repeat(60)));
        assert_eq!((e.class, e.offset), (ErrorClass::Length, 64));
        assert_eq!(err("").offset, 0);
        assert_eq!(err("ACT").offset, 3);
    }

    #[test]
    fn sixty_four_bytes_is_accepted_by_the_length_rule() {
        let line = format!("ACTION 1 {}", "1".repeat(55));
        assert_eq!(line.len(), 64);
        assert_eq!(err(&line).class, ErrorClass::Range);
    }

    #[test]
    fn format_round_trip_all_pairs() {
        let v = vocab();
        assert_eq!(format_action(&ActionTokenSeq::pair(0, 0)).unwrap(), "ACTION 0 0\n");
        for a in 0..32 {
            for b in 0..32 {
                let t = ActionTokenSeq::pair(a, b);
                let line = format_action(&t).unwrap();
                assert_eq!(parse_action_tokens(&line, &v).unwrap(), t);
                let trimmed = line.trim_end();
                let again = parse_action_tokens(trimmed, &v).unwrap();
                assert_eq!(format_action(&again).unwrap(), line);
            }
        }
    }

    #[test]
    fn format_rejects_wrong_lengths() {
        assert!(format_action(&ActionTokenSeq::empty(12)).is_err());
        let three = ActionTokenSeq::new(vec![1, 2, 3], 12).unwrap();
        assert!(format_action(&three).is_err());
    }
}
