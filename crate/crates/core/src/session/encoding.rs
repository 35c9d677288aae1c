//! Serialization of a slice-pair history plus the current input slice into
//! the single string a backend consumes.
//!
//! Grammar (one frame per recorded pair, then one open frame):
//!
//! ```text
//! <user>IN<assistant>OUT[<eos>]\n  ...  <user>IN<assistant>
//! ```
//!
//! `IN` and `OUT` are either the literal `<idle>` or escaped text, where `\`,
//! `<` and newline are written as `\\`, `\<` and `\n`. Tick indices are
//! consecutive, so only the first one is kept, outside the prompt text.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slicer::{Role, Slice, Tokenizer, EOS_MARKER, IDLE_MARKER};

use super::SlicePair;

pub const USER_MARKER: &str = "<user>";
pub const ASSISTANT_MARKER: &str = "<assistant>";
const FRAME_END: char = '\n';

/// Units charged per pair for the role markers.
pub const FRAME_UNITS: usize = 2;
/// Worst-case extra units per pair for idle and end-of-response markers.
pub const MARKER_UNITS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEncoding {
    /// Tick index of the first encoded pair.
    pub first_tick: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedContext {
    pub history: Vec<SlicePair>,
    pub new_input: Slice,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("context decode failed at byte {offset}: {reason}")]
pub struct DecodeError {
    pub offset: usize,
    pub reason: String,
}

impl fmt::Display for ContextEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Context units a pair occupies: its slices plus framing markers.
pub fn pair_units(pair: &SlicePair) -> usize {
    slice_units(&pair.input)
        + slice_units(&pair.output)
        + FRAME_UNITS
        + usize::from(pair.output_terminal)
}

pub(crate) fn slice_units(s: &Slice) -> usize {
    if s.is_idle() {
        1
    } else {
        s.unit_count()
    }
}

fn push_payload(out: &mut String, s: &Slice) {
    if s.is_idle() {
        out.push_str(IDLE_MARKER);
        return;
    }
    for c in s.as_text().chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '<' => out.push_str("\\<"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
}

impl ContextEncoding {
    /// Encodes `history` (consecutive tick indices) followed by `new_input`.
    pub fn encode<'a, I>(history: I, new_input: &Slice) -> Self
    where
        I: IntoIterator<Item = &'a SlicePair>,
    {
        let mut text = String::new();
        let mut first_tick = None;
        let mut prev: Option<u64> = None;
        for pair in history {
            first_tick.get_or_insert(pair.tick_index);
            debug_assert!(
                prev.is_none_or(|p| p + 1 == pair.tick_index),
                "tick indices must be consecutive"
            );
            prev = Some(pair.tick_index);
            text.push_str(USER_MARKER);
            push_payload(&mut text, &pair.input);
            text.push_str(ASSISTANT_MARKER);
            push_payload(&mut text, &pair.output);
            if pair.output_terminal {
                text.push_str(EOS_MARKER);
            }
            text.push(FRAME_END);
        }
        text.push_str(USER_MARKER);
        push_payload(&mut text, new_input);
        text.push_str(ASSISTANT_MARKER);
        Self {
            first_tick: first_tick.unwrap_or(0),
            text,
        }
    }

    /// Inverse of [`ContextEncoding::encode`]. Unit counts are recomputed:
    /// words for user slices, `tok` tokens for assistant slices.
    pub fn decode(&self, tok: &dyn Tokenizer) -> Result<DecodedContext, DecodeError> {
        let mut p = Parser {
            src: &self.text,
            pos: 0,
        };
        let mut history = Vec::new();
        loop {
            p.expect(USER_MARKER)?;
            let input = p.payload(Role::User, tok)?;
            p.expect(ASSISTANT_MARKER)?;
            if p.at_end() {
                return Ok(DecodedContext {
                    history,
                    new_input: input,
                });
            }
            let output = p.payload(Role::Assistant, tok)?;
            let terminal = p.eat(EOS_MARKER);
            if terminal && output.is_idle() {
                return Err(p.error("end-of-response marker after idle output"));
            }
            p.expect_char(FRAME_END)?;
            let tick_index = self.first_tick + history.len() as u64;
            history.push(SlicePair {
                tick_index,
                input,
                output,
                output_terminal: terminal,
            });
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn at_end(&self) -> bool {
        self.pos == self.src.len()
    }

    fn error(&self, reason: impl Into<String>) -> DecodeError {
        DecodeError {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), DecodeError> {
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.error(format!("expected {lit:?}")))
        }
    }

    fn expect_char(&mut self, c: char) -> Result<(), DecodeError> {
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.error(format!("expected {c:?}")))
        }
    }

    fn payload(&mut self, role: Role, tok: &dyn Tokenizer) -> Result<Slice, DecodeError> {
        if self.eat(IDLE_MARKER) {
            return Ok(Slice::idle(role));
        }
        let start = self.pos;
        let mut text = String::new();
        let mut chars = self.rest().char_indices();
        let mut consumed = self.rest().len();
        while let Some((i, c)) = chars.next() {
            match c {
                '<' | FRAME_END => {
                    consumed = i;
                    break;
                }
                '\\' => match chars.next() {
                    Some((_, '\\')) => text.push('\\'),
                    Some((_, '<')) => text.push('<'),
                    Some((_, 'n')) => text.push('\n'),
                    _ => {
                        return Err(DecodeError {
                            offset: start + i,
                            reason: "invalid escape".into(),
                        })
                    }
                },
                c => text.push(c),
            }
        }
        self.pos = start + consumed;
        Slice::from_payload(role, Some(&text), tok).map_err(|e| DecodeError {
            offset: start,
            reason: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicer::WhitespaceTokenizer;

    fn user(t: &str) -> Slice {
        Slice::user_words(t).unwrap()
    }

    fn asst(t: &str) -> Slice {
        Slice::assistant_tokens(t, &WhitespaceTokenizer).unwrap()
    }

    #[test]
    fn empty_history_idle_input() {
        let enc = ContextEncoding::encode(&[], &Slice::idle(Role::User));
        assert_eq!(enc.text, "<user><idle><assistant>");
        let d = enc.decode(&WhitespaceTokenizer).unwrap();
        assert!(d.history.is_empty());
        assert!(d.new_input.is_idle());
    }

    #[test]
    fn golden_one_pair_then_text() {
        let h =
            vec![SlicePair::new(0, user("hi there"), Slice::idle(Role::Assistant), false).unwrap()];
        let enc = ContextEncoding::encode(&h, &user("how are you"));
        assert_eq!(
            enc.text,
            "<user>hi there<assistant><idle>\n<user>how are you<assistant>"
        );
        let d = enc.decode(&WhitespaceTokenizer).unwrap();
        assert_eq!(d.history, h);
        assert_eq!(d.new_input, user("how are you"));
    }

    #[test]
    fn markers_inside_text_are_escaped() {
        let h = vec![
            SlicePair::new(
                7,
                user("say <idle> \\ please"),
                asst("ok <eos> <user>"),
                true,
            )
            .unwrap(),
            SlicePair::new(8, Slice::idle(Role::User), asst("line\nbreak"), false).unwrap(),
        ];
        let enc = ContextEncoding::encode(&h, &user("<assistant>"));
        assert_eq!(
            enc.text,
            "<user>say \\<idle> \\\\ please<assistant>ok \\<eos> \\<user><eos>\n\
             <user><idle><assistant>line\\nbreak\n<user>\\<assistant><assistant>"
        );
        let d = enc.decode(&WhitespaceTokenizer).unwrap();
        assert_eq!(d.history, h);
        assert_eq!(d.new_input.as_text(), "<assistant>");
    }

    #[test]
    fn rejects_garbage() {
        let tok = WhitespaceTokenizer;
        let bad = |s: &str| {
            ContextEncoding {
                first_tick: 0,
                text: s.into(),
            }
            .decode(&tok)
            .unwrap_err()
        };
        bad("");
        bad("<user>x");
        bad("<user>x<assistant><idle><eos>\n<user><idle><assistant>");
        bad("<user>bad \\q<assistant>");
        bad("<user>x<assistant>y<user>z<assistant>");
        bad("<user><assistant>");
    }

    #[test]
    fn pair_units_count_markers() {
        let p = SlicePair::new(0, user("a b c"), asst("x y"), true).unwrap();
        assert_eq!(pair_units(&p), 3 + 2 + FRAME_UNITS + 1);
        let q = SlicePair::new(0, Slice::idle(Role::User), asst("x"), false).unwrap();
        assert_eq!(pair_units(&q), 1 + 1 + FRAME_UNITS);
    }
}
