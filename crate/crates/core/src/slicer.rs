//! Segmentation of messages into time slices and reassembly of slices back
//! into messages.
//!
//! User messages are cut into runs of words whose widths are drawn uniformly
//! from `[user_width_min, user_width_max]`; assistant messages are cut into
//! fixed-size token chunks. Idle slices carry no text and contribute nothing
//! on reassembly.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Literal marker rendered for an idle slice.
pub const IDLE_MARKER: &str = "<idle>";
/// Literal marker appended after an output chunk that ends a response.
pub const EOS_MARKER: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::User => f.write_str("user"),
            Role::Assistant => f.write_str("assistant"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    Text,
    Idle,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("text slice must contain at least one non-whitespace character")]
    EmptyText,
    #[error("text slice unit count must be at least 1")]
    ZeroUnits,
}

/// One time slice of a conversation stream.
///
/// `unit_count` is a word count for user slices and a token count for
/// assistant slices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slice {
    role: Role,
    text: String,
    unit_count: usize,
}

impl Slice {
    pub fn idle(role: Role) -> Self {
        Self {
            role,
            text: String::new(),
            unit_count: 0,
        }
    }

    pub fn text(
        role: Role,
        text: impl Into<String>,
        unit_count: usize,
    ) -> Result<Self, SliceError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(SliceError::EmptyText);
        }
        if unit_count == 0 {
            return Err(SliceError::ZeroUnits);
        }
        Ok(Self {
            role,
            text,
            unit_count,
        })
    }

    /// A user text slice whose unit count is its word count.
    pub fn user_words(text: impl Into<String>) -> Result<Self, SliceError> {
        let text = text.into();
        let n = word_count(&text);
        Self::text(Role::User, text, n)
    }

    /// An assistant text slice counted with `tok`.
    pub fn assistant_tokens(
        text: impl Into<String>,
        tok: &dyn Tokenizer,
    ) -> Result<Self, SliceError> {
        let text = text.into();
        let n = tok.count(&text);
        Self::text(Role::Assistant, text, n)
    }

    /// Builds a slice from an optional payload; `None` is idle.
    pub fn from_payload(
        role: Role,
        payload: Option<&str>,
        tok: &dyn Tokenizer,
    ) -> Result<Self, SliceError> {
        match (payload, role) {
            (None, _) => Ok(Self::idle(role)),
            (Some(t), Role::User) => Self::user_words(t),
            (Some(t), Role::Assistant) => Self::assistant_tokens(t, tok),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn kind(&self) -> SliceKind {
        if self.text.is_empty() {
            SliceKind::Idle
        } else {
            SliceKind::Text
        }
    }

    pub fn is_idle(&self) -> bool {
        self.text.is_empty()
    }

    pub fn as_text(&self) -> &str {
        &self.text
    }

    /// Text payload, or `None` for idle.
    pub fn payload(&self) -> Option<&str> {
        if self.is_idle() {
            None
        } else {
            Some(&self.text)
        }
    }

    pub fn unit_count(&self) -> usize {
        self.unit_count
    }
}

/// Text to ordered tokens and back.
///
/// `detokenize(tokenize(t))` must equal `t` up to whitespace normalization and
/// the token count of a fixed text must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn detokenize(&self, tokens: &[String]) -> String;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Token = maximal run of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_owned).collect()
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.join(" ")
    }

    fn count(&self, text: &str) -> usize {
        word_count(text)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SlicerConfigError {
    #[error("user_width_min must be at least 1")]
    ZeroMinWidth,
    #[error("user_width_min ({min}) exceeds user_width_max ({max})")]
    InvertedWidths { min: usize, max: usize },
    #[error("assistant_chunk_tokens must be at least 1")]
    ZeroChunk,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicerConfig {
    pub user_width_min: usize,
    pub user_width_max: usize,
    pub assistant_chunk_tokens: usize,
    pub rng_seed: u64,
}

impl Default for SlicerConfig {
    fn default() -> Self {
        Self {
            user_width_min: 4,
            user_width_max: 6,
            assistant_chunk_tokens: 10,
            rng_seed: 0,
        }
    }
}

impl SlicerConfig {
    pub fn validate(&self) -> Result<(), SlicerConfigError> {
        if self.user_width_min == 0 {
            return Err(SlicerConfigError::ZeroMinWidth);
        }
        if self.user_width_min > self.user_width_max {
            return Err(SlicerConfigError::InvertedWidths {
                min: self.user_width_min,
                max: self.user_width_max,
            });
        }
        if self.assistant_chunk_tokens == 0 {
            return Err(SlicerConfigError::ZeroChunk);
        }
        Ok(())
    }

    /// Draws one user slice width.
    pub fn draw_width<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(self.user_width_min..=self.user_width_max)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapses whitespace runs to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits a user message with an RNG seeded from `cfg.rng_seed`.
pub fn split_user_message(text: &str, cfg: &SlicerConfig) -> Vec<Slice> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    split_user_message_with(text, cfg, &mut rng)
}

/// Splits a user message drawing widths from `rng`, left to right. The
/// remainder becomes a short final slice.
pub fn split_user_message_with<R: Rng + ?Sized>(
    text: &str,
    cfg: &SlicerConfig,
    rng: &mut R,
) -> Vec<Slice> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut slices = Vec::with_capacity(words.len() / cfg.user_width_min.max(1) + 1);
    let mut rest = &words[..];
    while !rest.is_empty() {
        let width = cfg.draw_width(rng).min(rest.len());
        let (head, tail) = rest.split_at(width);
        slices.push(Slice {
            role: Role::User,
            text: head.join(" "),
            unit_count: width,
        });
        rest = tail;
    }
    slices
}

/// Splits an assistant message into chunks of `cfg.assistant_chunk_tokens`
/// tokens; only the last chunk may be shorter.
pub fn split_assistant_message(text: &str, tok: &dyn Tokenizer, cfg: &SlicerConfig) -> Vec<Slice> {
    let tokens = tok.tokenize(text);
    tokens
        .chunks(cfg.assistant_chunk_tokens.max(1))
        .map(|chunk| Slice {
            role: Role::Assistant,
            text: tok.detokenize(chunk),
            unit_count: chunk.len(),
        })
        .filter(|s| !s.text.trim().is_empty())
        .collect()
}

/// Joins the text of non-idle slices and normalizes whitespace.
pub fn reassemble<'a, I>(slices: I) -> String
where
    I: IntoIterator<Item = &'a Slice>,
{
    let joined = slices
        .into_iter()
        .filter(|s| !s.is_idle())
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    normalize_whitespace(&joined)
}
