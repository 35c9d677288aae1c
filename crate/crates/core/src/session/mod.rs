//! The time-division-multiplexing session state machine.
//!
//! Every tick consumes at most one user slice from the pending buffer, encodes
//! the history plus that slice, asks a backend for at most one output chunk
//! and records the resulting pair. New input arriving while a call is in
//! flight cancels that call; its output is never recorded.
//!
//! A tick is split into [`SessionState::begin_tick`] and
//! [`SessionState::commit_tick`] so the backend call can run without holding
//! the session lock. [`Session`] packages that split for multi-threaded use.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, CancelToken, Chunk, GenerationRequest, GeneratorBackend};
use crate::slicer::{Role, Slice, SliceError, Tokenizer, WhitespaceTokenizer};

mod config;
pub mod encoding;

pub use config::{ConfigError, GenConfig};
pub use encoding::{pair_units, ContextEncoding, DecodeError, DecodedContext};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(String);

impl SessionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PairError {
    #[error("input slice must have the user role")]
    InputRole,
    #[error("output slice must have the assistant role")]
    OutputRole,
    #[error("an idle output cannot be terminal")]
    TerminalIdle,
}

/// One tick's input and output.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SlicePair {
    pub(crate) tick_index: u64,
    pub(crate) input: Slice,
    pub(crate) output: Slice,
    pub(crate) output_terminal: bool,
}

impl SlicePair {
    pub fn new(
        tick_index: u64,
        input: Slice,
        output: Slice,
        output_terminal: bool,
    ) -> Result<Self, PairError> {
        if input.role() != Role::User {
            return Err(PairError::InputRole);
        }
        if output.role() != Role::Assistant {
            return Err(PairError::OutputRole);
        }
        if output_terminal && output.is_idle() {
            return Err(PairError::TerminalIdle);
        }
        Ok(Self {
            tick_index,
            input,
            output,
            output_terminal,
        })
    }

    pub fn tick_index(&self) -> u64 {
        self.tick_index
    }

    pub fn input(&self) -> &Slice {
        &self.input
    }

    pub fn output(&self) -> &Slice {
        &self.output
    }

    pub fn output_terminal(&self) -> bool {
        self.output_terminal
    }

    pub fn is_silent(&self) -> bool {
        self.input.is_idle() && self.output.is_idle()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenStatus {
    Idle,
    Generating,
    Cancelled,
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("input text must not be empty")]
    EmptyInput,
    #[error("a tick is already in progress")]
    TickInProgress,
    #[error("tick request does not belong to the tick in progress")]
    StaleRequest,
    #[error("replayed pair has tick index {got}, expected {expected}")]
    NonConsecutive { expected: u64, got: u64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Slice(#[from] SliceError),
}

/// Ticks between a query's completion and the first non-idle output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    Ticks(u64),
    NoResponse,
}

/// Work item for one backend call, produced by `begin_tick`.
#[derive(Debug, Clone)]
pub struct TickRequest {
    pub clock_tick: u64,
    pub input: Slice,
    pub context: ContextEncoding,
    pub cancel: CancelToken,
    epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub clock_tick: u64,
    pub input: Slice,
    pub output: Slice,
    pub terminal: bool,
    /// Tick index of the recorded pair; `None` for silent or discarded ticks.
    pub recorded: Option<u64>,
    pub cancelled: bool,
    pub error: Option<BackendError>,
}

/// A live duplex session.
#[derive(Clone)]
pub struct SessionState {
    id: SessionId,
    config: GenConfig,
    tokenizer: Arc<dyn Tokenizer>,
    history: VecDeque<SlicePair>,
    /// Clock tick at which each history pair was produced.
    pair_ticks: VecDeque<u64>,
    gen_status: GenStatus,
    pending_input: String,
    total_units: usize,
    clock: u64,
    next_index: u64,
    input_epoch: u64,
    in_flight: Option<(u64, CancelToken)>,
    width_rng: ChaCha8Rng,
}

impl fmt::Debug for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SessionState")
            .field("id", &self.id)
            .field("history_len", &self.history.len())
            .field("gen_status", &self.gen_status)
            .field("pending_input", &self.pending_input)
            .field("total_units", &self.total_units)
            .field("clock", &self.clock)
            .finish()
    }
}

impl SessionState {
    pub fn new(id: SessionId, config: GenConfig) -> Result<Self, SessionError> {
        Self::with_tokenizer(id, config, Arc::new(WhitespaceTokenizer))
    }

    pub fn with_tokenizer(
        id: SessionId,
        config: GenConfig,
        tokenizer: Arc<dyn Tokenizer>,
    ) -> Result<Self, SessionError> {
        config.validate()?;
        let width_rng = ChaCha8Rng::seed_from_u64(config.slicer.rng_seed);
        Ok(Self {
            id,
            config,
            tokenizer,
            history: VecDeque::new(),
            pair_ticks: VecDeque::new(),
            gen_status: GenStatus::Idle,
            pending_input: String::new(),
            total_units: 0,
            clock: 0,
            next_index: 0,
            input_epoch: 0,
            in_flight: None,
            width_rng,
        })
    }

    /// Rebuilds a session from recorded pairs and the clock ticks they were
    /// produced at, applying the same eviction as live ticks.
    pub fn replay<I>(
        id: SessionId,
        config: GenConfig,
        tokenizer: Arc<dyn Tokenizer>,
        pairs: I,
    ) -> Result<Self, SessionError>
    where
        I: IntoIterator<Item = (SlicePair, u64)>,
    {
        let mut s = Self::with_tokenizer(id, config, tokenizer)?;
        for (pair, clock_tick) in pairs {
            if pair.tick_index != s.next_index {
                return Err(SessionError::NonConsecutive {
                    expected: s.next_index,
                    got: pair.tick_index,
                });
            }
            s.gen_status = if !pair.output.is_idle() && !pair.output_terminal {
                GenStatus::Generating
            } else {
                GenStatus::Idle
            };
            s.clock = clock_tick + 1;
            s.record(pair, clock_tick);
        }
        Ok(s)
    }

    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn config(&self) -> &GenConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Arc<dyn Tokenizer> {
        &self.tokenizer
    }

    pub fn history(&self) -> &VecDeque<SlicePair> {
        &self.history
    }

    /// History pairs with the clock tick each was produced at.
    pub fn timed_history(&self) -> impl Iterator<Item = (&SlicePair, u64)> {
        self.history.iter().zip(self.pair_ticks.iter().copied())
    }

    pub fn gen_status(&self) -> GenStatus {
        self.gen_status
    }

    pub fn pending_input(&self) -> &str {
        &self.pending_input
    }

    pub fn total_units(&self) -> usize {
        self.total_units
    }

    /// Number of ticks driven so far (also the next clock tick).
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn tick_in_progress(&self) -> bool {
        self.in_flight.is_some()
    }

    /// Buffers user text. Input during a response cancels it, and any backend
    /// call in flight is cancelled and its result discarded.
    pub fn submit_input(&mut self, text: &str) -> Result<(), SessionError> {
        if text.trim().is_empty() {
            return Err(SessionError::EmptyInput);
        }
        if !self.pending_input.is_empty() {
            self.pending_input.push(' ');
        }
        self.pending_input.push_str(text);
        self.input_epoch += 1;
        if self.gen_status == GenStatus::Generating {
            self.gen_status = GenStatus::Cancelled;
        }
        if let Some((_, cancel)) = &self.in_flight {
            cancel.cancel();
        }
        Ok(())
    }

    fn take_input_slice(&mut self) -> Slice {
        let words: Vec<&str> = self.pending_input.split_whitespace().collect();
        if words.is_empty() {
            self.pending_input.clear();
            return Slice::idle(Role::User);
        }
        let width = self
            .config
            .slicer
            .draw_width(&mut self.width_rng)
            .min(words.len());
        let text = words[..width].join(" ");
        let rest = words[width..].join(" ");
        self.pending_input = rest;
        Slice::text(Role::User, text, width).expect("non-empty words")
    }

    /// Most recent history pairs that fit the context budget together with
    /// one more worst-case pair.
    fn context_window(&self) -> impl Iterator<Item = &SlicePair> {
        let budget = self
            .config
            .max_context
            .saturating_sub(self.config.max_pair_units());
        let mut used = 0;
        let mut keep = 0;
        for pair in self.history.iter().rev() {
            let u = pair_units(pair);
            if used + u > budget {
                break;
            }
            used += u;
            keep += 1;
        }
        self.history.iter().skip(self.history.len() - keep)
    }

    /// Consumes this tick's input and builds the backend request.
    pub fn begin_tick(&mut self) -> Result<TickRequest, SessionError> {
        if self.in_flight.is_some() {
            return Err(SessionError::TickInProgress);
        }
        let input = self.take_input_slice();
        let context = ContextEncoding::encode(self.context_window(), &input);
        let cancel = CancelToken::new();
        let clock_tick = self.clock;
        self.clock += 1;
        self.in_flight = Some((clock_tick, cancel.clone()));
        Ok(TickRequest {
            clock_tick,
            input,
            context,
            cancel,
            epoch: self.input_epoch,
        })
    }

    /// Applies a backend result. A result whose call was overtaken by new
    /// input is discarded and the tick's output is idle.
    pub fn commit_tick(
        &mut self,
        req: TickRequest,
        result: Result<Chunk, BackendError>,
    ) -> Result<TickOutcome, SessionError> {
        match &self.in_flight {
            Some((t, _)) if *t == req.clock_tick => {}
            _ => return Err(SessionError::StaleRequest),
        }
        self.in_flight = None;
        let cancelled =
            req.epoch != self.input_epoch || matches!(result, Err(BackendError::Cancelled));
        let (chunk, error) = if cancelled {
            (Chunk::Idle, None)
        } else {
            match result {
                Ok(c) => (
                    c.clamp(self.config.max_tokens_per_chunk, self.tokenizer.as_ref()),
                    None,
                ),
                Err(e) => (Chunk::Idle, Some(e)),
            }
        };
        let (output, terminal) = match chunk {
            Chunk::Idle => (Slice::idle(Role::Assistant), false),
            Chunk::Text { text, terminal } => (
                Slice::assistant_tokens(text, self.tokenizer.as_ref())?,
                terminal,
            ),
        };
        if !cancelled {
            self.gen_status = if !output.is_idle() && !terminal {
                GenStatus::Generating
            } else {
                GenStatus::Idle
            };
        }
        let pair = SlicePair {
            tick_index: self.next_index,
            input: req.input.clone(),
            output: output.clone(),
            output_terminal: terminal,
        };
        let recorded = if pair.is_silent() {
            None
        } else {
            let idx = pair.tick_index;
            self.record(pair, req.clock_tick);
            Some(idx)
        };
        Ok(TickOutcome {
            clock_tick: req.clock_tick,
            input: req.input,
            output,
            terminal,
            recorded,
            cancelled,
            error,
        })
    }

    fn record(&mut self, pair: SlicePair, clock_tick: u64) {
        self.total_units += pair_units(&pair);
        self.next_index = pair.tick_index + 1;
        self.history.push_back(pair);
        self.pair_ticks.push_back(clock_tick);
        while self.total_units > self.config.max_context {
            let Some(old) = self.history.pop_front() else {
                break;
            };
            self.pair_ticks.pop_front();
            self.total_units -= pair_units(&old);
        }
    }

    /// Runs one full tick on the calling thread.
    pub fn tick(&mut self, backend: &dyn GeneratorBackend) -> Result<TickOutcome, SessionError> {
        let req = self.begin_tick()?;
        let result = backend.generate(&GenerationRequest {
            context: &req.context,
            config: &self.config,
            tokenizer: self.tokenizer.as_ref(),
            cancel: &req.cancel,
        });
        self.commit_tick(req, result)
    }

    /// Clock ticks from `query_end_tick` to the first recorded non-idle
    /// output at or after it.
    pub fn perceived_latency(&self, query_end_tick: u64) -> Latency {
        self.timed_history()
            .find(|(p, t)| *t >= query_end_tick && !p.output.is_idle())
            .map_or(Latency::NoResponse, |(_, t)| {
                Latency::Ticks(t - query_end_tick)
            })
    }
}

/// Thread-safe handle around a [`SessionState`].
///
/// Ticks are serialized; the state lock is released during the backend call
/// so `submit_input` never waits on generation.
pub struct Session {
    state: Mutex<SessionState>,
    tick_lock: Mutex<()>,
}

impl Session {
    pub fn new(state: SessionState) -> Self {
        Self {
            state: Mutex::new(state),
            tick_lock: Mutex::new(()),
        }
    }

    fn lock(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn submit_input(&self, text: &str) -> Result<(), SessionError> {
        self.lock().submit_input(text)
    }

    pub fn tick(&self, backend: &dyn GeneratorBackend) -> Result<TickOutcome, SessionError> {
        let _serial = self.tick_lock.lock().unwrap_or_else(|e| e.into_inner());
        let (req, config, tokenizer) = {
            let mut s = self.lock();
            let req = s.begin_tick()?;
            (req, s.config.clone(), s.tokenizer.clone())
        };
        let result = backend.generate(&GenerationRequest {
            context: &req.context,
            config: &config,
            tokenizer: tokenizer.as_ref(),
            cancel: &req.cancel,
        });
        self.lock().commit_tick(req, result)
    }

    pub fn with_state<R>(&self, f: impl FnOnce(&SessionState) -> R) -> R {
        f(&self.lock())
    }

    pub fn snapshot(&self) -> SessionState {
        self.lock().clone()
    }
}
