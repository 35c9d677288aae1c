//! Scripted-user evaluation.
//!
//! A [`Scenario`] is a timeline of user actions and expectations keyed by
//! tick. Scenarios run against an in-process session on a virtual clock, so
//! a scripted backend gives bit-identical reports. [`concat_eval`] feeds
//! whole instructions slice by slice and collects the reassembled answers.

mod concat;
mod run;
mod suites;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::ScriptedRule;
use crate::session::GenConfig;

pub use concat::{concat_eval, concat_eval_file, ConcatOutput, ConcatRecord, ConcatSummary};
pub use run::{run_scenario, run_scenarios, LatencySummary, MetricsReport, Ratio, ScenarioResult};
pub use suites::{idle_suite, latency_suite, termination_suite};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("scenario {name}: {reason}")]
    InvalidScenario { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Submit user text before the tick runs, or during its backend call when
    /// `mid_call` is set.
    Send {
        text: String,
        /// Sent while the assistant is speaking; scored for termination.
        #[serde(default)]
        interrupt: bool,
        #[serde(default)]
        mid_call: bool,
        /// The accumulated query is complete once this text is consumed;
        /// scored for latency.
        #[serde(default)]
        completes_query: bool,
    },
    Silent,
    /// Every output from `tick` through `through` (default `tick`) is idle.
    ExpectIdle {
        #[serde(default)]
        through: Option<u64>,
    },
    /// Some output from `tick` through `through` is text; the reassembled
    /// text of that window contains `contains` when given.
    ExpectText {
        #[serde(default)]
        through: Option<u64>,
        #[serde(default)]
        contains: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Rule for the scripted backend; ignored by other backends.
    #[serde(default)]
    pub rule: ScriptedRule,
    #[serde(default)]
    pub config: GenConfig,
    pub max_ticks: u64,
    pub events: Vec<Event>,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |reason: String| HarnessError::InvalidScenario {
            name: self.name.clone(),
            reason,
        };
        self.config.validate().map_err(|e| bad(e.to_string()))?;
        if self.max_ticks == 0 {
            return Err(bad("max_ticks must be positive".into()));
        }
        let mut last = 0;
        for e in &self.events {
            if e.tick < last {
                return Err(bad(format!("tick {} follows tick {last}", e.tick)));
            }
            last = e.tick;
            match &e.action {
                Action::Send { text, .. } if text.trim().is_empty() => {
                    return Err(bad(format!("empty send at tick {}", e.tick)))
                }
                Action::ExpectIdle { through: Some(t) }
                | Action::ExpectText {
                    through: Some(t), ..
                } if *t < e.tick => {
                    return Err(bad(format!(
                        "window ends at {t} before it starts at {}",
                        e.tick
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Loads every `.json` file in `dir` (file-name order). A file holds one
/// scenario or an array of them.
pub fn load_suite(dir: &Path) -> Result<Vec<Scenario>, HarnessError> {
    let io = |source| HarnessError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f).map_err(|source| HarnessError::Io {
            path: f.clone(),
            source,
        })?;
        let parse = |reason: String| HarnessError::Parse {
            path: f.clone(),
            reason,
        };
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
        let batch: Vec<Scenario> = if v.is_array() {
            serde_json::from_value(v).map_err(|e| parse(e.to_string()))?
        } else {
            vec![serde_json::from_value(v).map_err(|e| parse(e.to_string()))?]
        };
        for s in &batch {
            s.validate()?;
        }
        out.extend(batch);
    }
    Ok(out)
}

/// Writes `scenarios` as one JSON array to `path`.
pub fn save_suite(path: &Path, scenarios: &[Scenario]) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(scenarios).expect("scenarios serialize");
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_owned(),
        source,
    })
}
