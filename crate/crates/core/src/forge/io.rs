//! JSON Lines encoding of duplex examples and the source dialogue reader.
//!
//! One example per line:
//! `{"id", "category", "pairs": [{"i", "in", "out", "terminal"}], "injection_meta"}`
//! with `null` standing for an idle slice.

use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

use super::{Category, DuplexDialogue, InjectionMeta, Message, SourceDialogue};
use crate::session::SlicePair;
use crate::slicer::{Role, Slice, Tokenizer};

#[derive(Debug, Error)]
pub enum ForgeIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    i: u64,
    #[serde(rename = "in")]
    input: Option<String>,
    out: Option<String>,
    terminal: bool,
}

#[derive(Serialize, Deserialize)]
struct DialogueRecord {
    id: String,
    category: Category,
    pairs: Vec<PairRecord>,
    injection_meta: InjectionMeta,
}

impl DuplexDialogue {
    pub fn to_json_line(&self) -> String {
        let rec = DialogueRecord {
            id: self.id.clone(),
            category: self.category,
            pairs: self
                .pairs
                .iter()
                .map(|p| PairRecord {
                    i: p.tick_index(),
                    input: p.input().payload().map(str::to_owned),
                    out: p.output().payload().map(str::to_owned),
                    terminal: p.output_terminal(),
                })
                .collect(),
            injection_meta: self.injection_meta.clone(),
        };
        serde_json::to_string(&rec).expect("records always serialize")
    }

    pub fn from_json_line(line: &str, tok: &dyn Tokenizer) -> Result<Self, String> {
        let rec: DialogueRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let mut pairs = Vec::with_capacity(rec.pairs.len());
        for p in rec.pairs {
            let input = Slice::from_payload(Role::User, p.input.as_deref(), tok)
                .map_err(|e| format!("pair {}: {e}", p.i))?;
            let output = Slice::from_payload(Role::Assistant, p.out.as_deref(), tok)
                .map_err(|e| format!("pair {}: {e}", p.i))?;
            pairs.push(
                SlicePair::new(p.i, input, output, p.terminal)
                    .map_err(|e| format!("pair {}: {e}", p.i))?,
            );
        }
        Ok(Self {
            id: rec.id,
            category: rec.category,
            pairs,
            injection_meta: rec.injection_meta,
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ForgeIoError + '_ {
    move |source| ForgeIoError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn write_jsonl<'a>(
    path: &Path,
    dialogues: impl IntoIterator<Item = &'a DuplexDialogue>,
) -> Result<(), ForgeIoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for d in dialogues {
        writeln!(w, "{}", d.to_json_line()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path, tok: &dyn Tokenizer) -> Result<Vec<DuplexDialogue>, ForgeIoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            DuplexDialogue::from_json_line(&line, tok).map_err(|reason| ForgeIoError::Parse {
                path: path.to_owned(),
                line: n + 1,
                reason,
            })?,
        );
    }
    Ok(out)
}

/// Parses one UltraChat-style object: `{"id", "data": [texts...]}` with
/// alternating turns, or `{"id", "messages": [{"role", "content"}]}`.
/// A trailing unanswered user message is dropped.
fn source_from_value(v: &Value, fallback_id: String) -> Result<SourceDialogue, String> {
    let id = match v.get("id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => fallback_id,
    };
    let mut messages: Vec<Message> = if let Some(data) = v.get("data").and_then(Value::as_array) {
        data.iter()
            .enumerate()
            .map(|(i, t)| {
                let text = t
                    .as_str()
                    .ok_or_else(|| format!("data[{i}] is not a string"))?;
                Ok(Message {
                    role: if i % 2 == 0 {
                        Role::User
                    } else {
                        Role::Assistant
                    },
                    text: text.to_owned(),
                })
            })
            .collect::<Result<_, String>>()?
    } else if let Some(msgs) = v.get("messages").and_then(Value::as_array) {
        msgs.iter()
            .enumerate()
            .map(|(i, m)| {
                let role = match m.get("role").and_then(Value::as_str) {
                    Some("user") | Some("human") => Role::User,
                    Some("assistant") | Some("gpt") => Role::Assistant,
                    other => return Err(format!("messages[{i}] has role {other:?}")),
                };
                let text = m
                    .get("content")
                    .or_else(|| m.get("text"))
                    .and_then(Value::as_str)
                    .ok_or_else(|| format!("messages[{i}] has no text"))?;
                Ok(Message {
                    role,
                    text: text.to_owned(),
                })
            })
            .collect::<Result<_, String>>()?
    } else {
        return Err("object has neither \"data\" nor \"messages\"".into());
    };
    if messages.len() % 2 == 1 {
        messages.pop();
    }
    SourceDialogue::new(id, messages).map_err(|e| e.to_string())
}

fn sources_in_file(path: &Path, out: &mut Vec<SourceDialogue>) -> Result<(), ForgeIoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("src")
        .to_owned();
    let parse_err = |line: usize, reason: String| ForgeIoError::Parse {
        path: path.to_owned(),
        line,
        reason,
    };
    let mut push =
        |v: &Value, n: usize, line: usize| match source_from_value(v, format!("{stem}-{n}")) {
            Ok(d) => out.push(d),
            Err(reason) => warn!(path = %path.display(), line, %reason, "source dialogue skipped"),
        };
    if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
        for (n, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let v: Value =
                serde_json::from_str(line).map_err(|e| parse_err(n + 1, e.to_string()))?;
            push(&v, n, n + 1);
        }
    } else {
        let v: Value =
            serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.to_string()))?;
        match &v {
            Value::Array(items) => items
                .iter()
                .enumerate()
                .for_each(|(n, item)| push(item, n, 0)),
            single => push(single, 0, 0),
        }
    }
    Ok(())
}

/// Reads source dialogues from a `.json`/`.jsonl` file or from every such
/// file in a directory, in file-name order. Invalid dialogues are skipped
/// with a warning.
pub fn read_sources(path: &Path) -> Result<Vec<SourceDialogue>, ForgeIoError> {
    let mut files = Vec::new();
    if path.is_dir() {
        for entry in fs::read_dir(path).map_err(io_err(path))? {
            let p = entry.map_err(io_err(path))?.path();
            if matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("json" | "jsonl")
            ) {
                files.push(p);
            }
        }
        files.sort();
    } else {
        files.push(path.to_owned());
    }
    let mut out = Vec::new();
    for f in files {
        sources_in_file(&f, &mut out)?;
    }
    Ok(out)
}
