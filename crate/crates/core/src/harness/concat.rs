//! Chunked-concatenation evaluation: each instruction is fed one user slice
//! per tick and the response slices are joined back into one answer.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::HarnessError;
use crate::backends::GeneratorBackend;
use crate::session::{GenConfig, SessionId, SessionState};
use crate::slicer::reassemble;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatRecord {
    pub id: String,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcatOutput {
    pub id: String,
    pub instruction: String,
    pub output: String,
    /// Clock ticks from the first input slice to the terminal chunk.
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConcatSummary {
    pub total: usize,
    pub written: usize,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

fn run_one(
    rec: &ConcatRecord,
    backend: &dyn GeneratorBackend,
    cfg: &GenConfig,
    max_ticks: u64,
) -> Result<ConcatOutput, String> {
    let mut s = SessionState::new(SessionId::new(rec.id.clone()), cfg.clone())
        .map_err(|e| e.to_string())?;
    s.submit_input(&rec.instruction)
        .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for t in 0..max_ticks {
        let o = s.tick(backend).map_err(|e| e.to_string())?;
        if let Some(err) = o.error {
            return Err(format!("tick {t}: {err}"));
        }
        let done = o.terminal;
        outputs.push(o.output);
        if done {
            return Ok(ConcatOutput {
                id: rec.id.clone(),
                instruction: rec.instruction.clone(),
                output: reassemble(&outputs),
                ticks: t + 1,
            });
        }
    }
    Err(format!("no terminal output within {max_ticks} ticks"))
}

/// Runs every record on a fresh session. Blank instructions are skipped and
/// failures are left out of the outputs; both are listed in the summary.
pub fn concat_eval(
    records: &[ConcatRecord],
    backend: &dyn GeneratorBackend,
    cfg: &GenConfig,
    max_ticks: u64,
) -> (Vec<ConcatOutput>, ConcatSummary) {
    let mut summary = ConcatSummary {
        total: records.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for rec in records {
        if rec.instruction.trim().is_empty() {
            warn!(id = %rec.id, "empty instruction skipped");
            summary.skipped.push(rec.id.clone());
            continue;
        }
        match run_one(rec, backend, cfg, max_ticks) {
            Ok(o) => out.push(o),
            Err(reason) => {
                warn!(id = %rec.id, %reason, "instruction failed");
                summary.failed.push((rec.id.clone(), reason));
            }
        }
    }
    summary.written = out.len();
    (out, summary)
}

/// File form of [`concat_eval`]: JSONL `{id, instruction}` in, JSONL
/// [`ConcatOutput`] out.
pub fn concat_eval_file(
    input: &Path,
    output: &Path,
    backend: &dyn GeneratorBackend,
    cfg: &GenConfig,
    max_ticks: u64,
) -> Result<ConcatSummary, HarnessError> {
    let io = |path: &Path| {
        let path = path.to_owned();
        move |source| HarnessError::Io { path, source }
    };
    let reader = BufReader::new(fs::File::open(input).map_err(io(input))?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io(input))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConcatRecord = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: input.to_owned(),
            reason: format!("line {}: {e}", n + 1),
        })?;
        records.push(rec);
    }
    let (outs, summary) = concat_eval(&records, backend, cfg, max_ticks);
    let mut w = BufWriter::new(fs::File::create(output).map_err(io(output))?);
    for o in &outs {
        writeln!(
            w,
            "{}",
            serde_json::to_string(o).expect("outputs serialize")
        )
        .map_err(io(output))?;
    }
    w.flush().map_err(io(output))?;
    Ok(summary)
}
