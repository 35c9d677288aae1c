//! Session transcripts: one JSONL file per session plus `index.json`.
//!
//! A file starts with a header line, holds one line per recorded pair and
//! ends with an outcome line once the session closes. Transcripts keep every
//! recorded pair; replay applies the same eviction as the live session.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use duplex_core::session::{GenConfig, SessionError, SessionId, SessionState, SlicePair};
use duplex_core::slicer::{Role, Slice, WhitespaceTokenizer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::now_ms;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unknown session {0}")]
    UnknownSession(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Closed,
    Errored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedPair {
    pub pair: SlicePair,
    pub clock_tick: u64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub session_id: SessionId,
    pub config: GenConfig,
    pub opened_at: u64,
    pub pairs: Vec<TimedPair>,
    /// `None` while the session is still open or if it never closed cleanly.
    pub outcome: Option<Outcome>,
}

impl Transcript {
    /// Rebuilds the session history the transcript was recorded from.
    pub fn replay(&self) -> Result<SessionState, SessionError> {
        SessionState::replay(
            self.session_id.clone(),
            self.config.clone(),
            Arc::new(WhitespaceTokenizer),
            self.pairs.iter().map(|p| (p.pair.clone(), p.clock_tick)),
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header {
        session_id: SessionId,
        config: GenConfig,
        opened_at: u64,
    },
    Pair {
        i: u64,
        #[serde(rename = "in")]
        input: Option<String>,
        out: Option<String>,
        terminal: bool,
        tick: u64,
        ts: u64,
    },
    Outcome {
        outcome: Outcome,
        closed_at: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub opened_at: u64,
    pub closed_at: Option<u64>,
    pub pairs: u64,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub sessions: BTreeMap<String, IndexEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TranscriptError + '_ {
    move |source| TranscriptError::Io {
        path: path.to_owned(),
        source,
    }
}

fn corrupt(path: &Path, line: usize, reason: impl std::fmt::Display) -> TranscriptError {
    TranscriptError::Io {
        path: path.to_owned(),
        source: io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {reason}")),
    }
}

#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
    index_lock: Arc<Mutex<()>>,
}

impl TranscriptStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, TranscriptError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            dir,
            index_lock: Arc::new(Mutex::new(())),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_name(id: &SessionId) -> String {
        format!("{id}.jsonl")
    }

    pub fn path_for(&self, id: &SessionId) -> PathBuf {
        self.dir.join(Self::file_name(id))
    }

    pub fn index(&self) -> Result<Index, TranscriptError> {
        let path = self.dir.join(INDEX_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| corrupt(&path, 1, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Index::default()),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    fn update_index(
        &self,
        id: &SessionId,
        f: impl FnOnce(&mut IndexEntry),
    ) -> Result<(), TranscriptError> {
        let _guard = self.index_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut index = self.index()?;
        let entry = index
            .sessions
            .entry(id.to_string())
            .or_insert_with(|| IndexEntry {
                file: Self::file_name(id),
                opened_at: 0,
                closed_at: None,
                pairs: 0,
                outcome: None,
            });
        f(entry);
        let path = self.dir.join(INDEX_FILE);
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Starts the transcript for a new session.
    pub fn create(
        &self,
        id: &SessionId,
        config: &GenConfig,
    ) -> Result<TranscriptWriter, TranscriptError> {
        let path = self.path_for(id);
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let opened_at = now_ms();
        let mut w = TranscriptWriter {
            store: self.clone(),
            id: id.clone(),
            out: BufWriter::new(file),
            path,
            pairs: 0,
        };
        w.write(&Line::Header {
            session_id: id.clone(),
            config: config.clone(),
            opened_at,
        })?;
        self.update_index(id, |e| e.opened_at = opened_at)?;
        Ok(w)
    }

    pub fn load(&self, id: &SessionId) -> Result<Transcript, TranscriptError> {
        let path = self.path_for(id);
        if !path.exists() {
            return Err(TranscriptError::UnknownSession(id.to_string()));
        }
        load_file(&path)
    }
}

/// Reads a transcript file. Malformed content is an I/O error of kind
/// `InvalidData`.
pub fn load_file(path: &Path) -> Result<Transcript, TranscriptError> {
    let file = File::open(path).map_err(io_err(path))?;
    let tok = WhitespaceTokenizer;
    let mut header = None;
    let mut pairs = Vec::new();
    let mut outcome = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let n = n + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| corrupt(path, n, e))?;
        match (parsed, header.is_some(), outcome.is_some()) {
            (
                Line::Header {
                    session_id,
                    config,
                    opened_at,
                },
                false,
                _,
            ) => {
                header = Some((session_id, config, opened_at));
            }
            (
                Line::Pair {
                    i,
                    input,
                    out,
                    terminal,
                    tick,
                    ts,
                },
                true,
                false,
            ) => {
                let input = Slice::from_payload(Role::User, input.as_deref(), &tok)
                    .map_err(|e| corrupt(path, n, e))?;
                let output = Slice::from_payload(Role::Assistant, out.as_deref(), &tok)
                    .map_err(|e| corrupt(path, n, e))?;
                let pair =
                    SlicePair::new(i, input, output, terminal).map_err(|e| corrupt(path, n, e))?;
                pairs.push(TimedPair {
                    pair,
                    clock_tick: tick,
                    timestamp_ms: ts,
                });
            }
            (Line::Outcome { outcome: o, .. }, true, false) => outcome = Some(o),
            _ => return Err(corrupt(path, n, "line out of order")),
        }
    }
    let (session_id, config, opened_at) =
        header.ok_or_else(|| corrupt(path, 1, "missing header"))?;
    Ok(Transcript {
        session_id,
        config,
        opened_at,
        pairs,
        outcome,
    })
}

pub struct TranscriptWriter {
    store: TranscriptStore,
    id: SessionId,
    out: BufWriter<File>,
    path: PathBuf,
    pairs: u64,
}

impl TranscriptWriter {
    fn write(&mut self, line: &Line) -> Result<(), TranscriptError> {
        let text = serde_json::to_string(line).expect("lines serialize");
        writeln!(self.out, "{text}").map_err(io_err(&self.path))?;
        self.out.flush().map_err(io_err(&self.path))
    }

    pub fn append(&mut self, pair: &SlicePair, clock_tick: u64) -> Result<(), TranscriptError> {
        self.pairs += 1;
        self.write(&Line::Pair {
            i: pair.tick_index(),
            input: pair.input().payload().map(str::to_owned),
            out: pair.output().payload().map(str::to_owned),
            terminal: pair.output_terminal(),
            tick: clock_tick,
            ts: now_ms(),
        })
    }

    pub fn finish(mut self, outcome: Outcome) -> Result<(), TranscriptError> {
        let closed_at = now_ms();
        self.write(&Line::Outcome { outcome, closed_at })?;
        let pairs = self.pairs;
        self.store.update_index(&self.id, |e| {
            e.closed_at = Some(closed_at);
            e.pairs = pairs;
            e.outcome = Some(outcome);
        })
    }
}
