//! Live duplex sessions over a websocket.
//!
//! Clients connect to `/duplex`, send an `open` frame and then stream
//! `input_chunk` frames whenever they like. Each session runs its own tick
//! driver and sends exactly one frame per tick. Transcripts are written as the
//! session runs and can be replayed into an identical session history.

pub mod clock;
pub mod config;
pub mod server;
pub mod transcript;
pub mod wire;

pub use clock::{TickSource, Ticker, VirtualClock};
pub use config::{BackendSpec, ConfigError, ServiceConfig, SessionOverrides};
pub use server::{Service, ServiceError, SessionHandle};
pub use transcript::{Outcome, TimedPair, Transcript, TranscriptError, TranscriptStore};
pub use wire::{Direction, MessageType, MonotoneCheck, WireError, WireMessage};
