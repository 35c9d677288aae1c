//! JSON frames exchanged over `/duplex`.
//!
//! Every frame carries all fields; absent values are `null`. Server tick
//! frames (`output_chunk`, `idle_notice`, and `error` raised by a tick) carry
//! the session's clock tick. Client `input_chunk` frames may carry a client
//! sequence number in `tick_index`, which must increase strictly.

use std::collections::HashMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Open,
    InputChunk,
    OutputChunk,
    IdleNotice,
    SessionClosed,
    Error,
}

impl MessageType {
    pub fn allowed(self, direction: Direction) -> bool {
        match self {
            MessageType::InputChunk => direction == Direction::ClientToServer,
            MessageType::OutputChunk | MessageType::IdleNotice => {
                direction == Direction::ServerToClient
            }
            MessageType::Open | MessageType::SessionClosed | MessageType::Error => true,
        }
    }

    /// Frames that stand for one server tick.
    pub fn is_tick_frame(self) -> bool {
        matches!(
            self,
            MessageType::OutputChunk | MessageType::IdleNotice | MessageType::Error
        )
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    Json(String),
    #[error("{kind:?} frames cannot travel {direction:?}")]
    Direction {
        kind: MessageType,
        direction: Direction,
    },
    #[error("{0:?} frame needs a non-empty payload")]
    MissingPayload(MessageType),
    #[error("only output_chunk frames can be terminal")]
    StrayTerminal,
    #[error("tick_index {got} does not follow {last}")]
    NotMonotone { last: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub direction: Direction,
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub tick_index: Option<u64>,
    #[serde(default)]
    pub payload: Option<String>,
    #[serde(default)]
    pub terminal: bool,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub timestamp: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl WireMessage {
    fn new(direction: Direction, kind: MessageType) -> Self {
        Self {
            direction,
            kind,
            session_id: None,
            tick_index: None,
            payload: None,
            terminal: false,
            timestamp: now_ms(),
        }
    }

    fn server(kind: MessageType, session_id: &str) -> Self {
        Self {
            session_id: Some(session_id.to_owned()),
            ..Self::new(Direction::ServerToClient, kind)
        }
    }

    /// Session accepted; the payload is the effective configuration as JSON.
    pub fn opened(session_id: &str, config_json: String) -> Self {
        Self {
            payload: Some(config_json),
            ..Self::server(MessageType::Open, session_id)
        }
    }

    pub fn output(session_id: &str, tick: u64, text: &str, terminal: bool) -> Self {
        Self {
            tick_index: Some(tick),
            payload: Some(text.to_owned()),
            terminal,
            ..Self::server(MessageType::OutputChunk, session_id)
        }
    }

    pub fn idle(session_id: &str, tick: u64) -> Self {
        Self {
            tick_index: Some(tick),
            ..Self::server(MessageType::IdleNotice, session_id)
        }
    }

    pub fn error(session_id: Option<&str>, tick: Option<u64>, reason: impl Into<String>) -> Self {
        Self {
            session_id: session_id.map(str::to_owned),
            tick_index: tick,
            payload: Some(reason.into()),
            ..Self::new(Direction::ServerToClient, MessageType::Error)
        }
    }

    pub fn closed(session_id: &str, reason: &str) -> Self {
        Self {
            payload: Some(reason.to_owned()),
            ..Self::server(MessageType::SessionClosed, session_id)
        }
    }

    /// Client request for a session; `overrides` is a JSON object of
    /// configuration fields.
    pub fn client_open(overrides: Option<String>) -> Self {
        Self {
            payload: overrides,
            ..Self::new(Direction::ClientToServer, MessageType::Open)
        }
    }

    pub fn client_input(seq: Option<u64>, text: &str) -> Self {
        Self {
            tick_index: seq,
            payload: Some(text.to_owned()),
            ..Self::new(Direction::ClientToServer, MessageType::InputChunk)
        }
    }

    pub fn client_close() -> Self {
        Self::new(Direction::ClientToServer, MessageType::SessionClosed)
    }

    /// Checks the per-frame invariants.
    pub fn validate(&self) -> Result<(), WireError> {
        if !self.kind.allowed(self.direction) {
            return Err(WireError::Direction {
                kind: self.kind,
                direction: self.direction,
            });
        }
        let blank = self.payload.as_deref().is_none_or(|p| p.trim().is_empty());
        if matches!(
            self.kind,
            MessageType::InputChunk | MessageType::OutputChunk
        ) && blank
        {
            return Err(WireError::MissingPayload(self.kind));
        }
        if self.terminal && self.kind != MessageType::OutputChunk {
            return Err(WireError::StrayTerminal);
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, WireError> {
        let msg: Self = serde_json::from_str(text).map_err(|e| WireError::Json(e.to_string()))?;
        msg.validate()?;
        Ok(msg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("frames always serialize")
    }
}

/// Tracks the last `tick_index` per session and direction.
#[derive(Debug, Default)]
pub struct MonotoneCheck {
    last: HashMap<(Option<String>, Direction), u64>,
}

impl MonotoneCheck {
    pub fn check(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        let Some(got) = msg.tick_index else {
            return Ok(());
        };
        let key = (msg.session_id.clone(), msg.direction);
        if let Some(&last) = self.last.get(&key) {
            if got <= last {
                return Err(WireError::NotMonotone { last, got });
            }
        }
        self.last.insert(key, got);
        Ok(())
    }
}
