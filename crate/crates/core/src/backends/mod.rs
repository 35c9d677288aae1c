//! Text generators behind a single interface.
//!
//! A backend receives the serialized context for one tick and returns at most
//! `max_tokens_per_chunk` units, or the idle chunk. Implementations must
//! tolerate concurrent calls from distinct sessions.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::session::{ContextEncoding, GenConfig};
use crate::slicer::Tokenizer;

pub mod remote;
pub mod scripted;

pub use remote::{RemoteBackend, RemoteBackendConfig};
pub use scripted::{
    CompletionRule, InterruptionBehavior, ResponseTemplate, ScriptedBackend, ScriptedRule,
};

/// One tick's worth of generated output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chunk {
    Idle,
    Text { text: String, terminal: bool },
}

impl Chunk {
    pub fn text(text: impl Into<String>, terminal: bool) -> Self {
        Chunk::Text {
            text: text.into(),
            terminal,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, Chunk::Idle)
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Chunk::Text { terminal: true, .. })
    }

    /// Clamps the chunk to `max_units` tokens. A clamped chunk loses its
    /// terminal flag; a chunk with no tokens becomes idle.
    pub fn clamp(self, max_units: usize, tok: &dyn Tokenizer) -> Self {
        match self {
            Chunk::Idle => Chunk::Idle,
            Chunk::Text { text, terminal } => {
                let tokens = tok.tokenize(&text);
                if tokens.is_empty() {
                    Chunk::Idle
                } else if tokens.len() > max_units {
                    Chunk::Text {
                        text: tok.detokenize(&tokens[..max_units]),
                        terminal: false,
                    }
                } else {
                    Chunk::Text { text, terminal }
                }
            }
        }
    }
}

/// Cooperative cancellation flag shared between a session and the backend
/// call it started.
#[derive(Debug, Clone, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend timed out or was unreachable: {0}")]
    Timeout(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("generation cancelled")]
    Cancelled,
}

/// Everything a backend sees for one call.
pub struct GenerationRequest<'a> {
    pub context: &'a ContextEncoding,
    pub config: &'a GenConfig,
    pub tokenizer: &'a dyn Tokenizer,
    pub cancel: &'a CancelToken,
}

pub trait GeneratorBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Chunk, BackendError>;
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for Arc<T> {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Chunk, BackendError> {
        (**self).generate(req)
    }
}

impl<T: GeneratorBackend + ?Sized> GeneratorBackend for Box<T> {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Chunk, BackendError> {
        (**self).generate(req)
    }
}

/// Wraps a backend and spends `per_unit` of wall time on every emitted unit,
/// checking for cancellation between units. Stands in for a real decoder in
/// demos and concurrency tests.
pub struct PacedBackend<B> {
    inner: B,
    per_unit: Duration,
}

impl<B> PacedBackend<B> {
    pub fn new(inner: B, per_unit: Duration) -> Self {
        Self { inner, per_unit }
    }
}

impl<B: GeneratorBackend> GeneratorBackend for PacedBackend<B> {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Chunk, BackendError> {
        let chunk = self.inner.generate(req)?;
        let units = match &chunk {
            Chunk::Idle => 1,
            Chunk::Text { text, .. } => req.tokenizer.count(text).max(1),
        };
        for _ in 0..units {
            if req.cancel.is_cancelled() {
                return Err(BackendError::Cancelled);
            }
            std::thread::sleep(self.per_unit);
        }
        if req.cancel.is_cancelled() {
            return Err(BackendError::Cancelled);
        }
        Ok(chunk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slicer::WhitespaceTokenizer;

    #[test]
    fn clamp_truncates_and_drops_terminal() {
        let tok = WhitespaceTokenizer;
        let long = (0..25).map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        let c = Chunk::text(long, true).clamp(10, &tok);
        assert_eq!(c, Chunk::text("0 1 2 3 4 5 6 7 8 9", false));
        assert_eq!(
            Chunk::text("a b", true).clamp(10, &tok),
            Chunk::text("a b", true)
        );
        assert_eq!(Chunk::text("   ", true).clamp(10, &tok), Chunk::Idle);
    }

    #[test]
    fn cancel_token_is_shared() {
        let t = CancelToken::new();
        let u = t.clone();
        assert!(!u.is_cancelled());
        t.cancel();
        assert!(u.is_cancelled());
    }
}
