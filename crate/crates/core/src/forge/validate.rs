//! Structural checks on emitted examples.
//!
//! An example is read as alternating runs: a user run (text input, idle
//! output) carries one user message and an assistant run (idle input, text
//! output) one response or response fragment. Category checks compare those
//! runs against the injection metadata.

use std::io::BufRead;

use serde::Serialize;

use super::bank::{REGENERATION, RESET, TERMINATION};
use super::generate::realize;
use super::{DuplexDialogue, Injection, SourceDialogue};
use crate::session::SlicePair;
use crate::slicer::{normalize_whitespace, reassemble, SlicerConfig, Tokenizer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationFailure {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Default)]
pub struct ValidationReport {
    pub total: usize,
    pub passed: usize,
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Run<'a> {
    user: bool,
    pairs: &'a [SlicePair],
}

impl Run<'_> {
    fn text(&self) -> String {
        reassemble(
            self.pairs
                .iter()
                .map(|p| if self.user { p.input() } else { p.output() }),
        )
    }

    fn terminal(&self) -> bool {
        self.pairs.last().is_some_and(SlicePair::output_terminal)
    }
}

fn runs(pairs: &[SlicePair]) -> Result<Vec<Run<'_>>, String> {
    let mut out: Vec<Run<'_>> = Vec::new();
    let mut start = 0;
    for (i, p) in pairs.iter().enumerate() {
        let user = match (p.input().is_idle(), p.output().is_idle()) {
            (false, true) => true,
            (true, false) => false,
            (true, true) => return Err(format!("pair {i} is idle on both sides")),
            (false, false) => return Err(format!("pair {i} has text on both sides")),
        };
        let next_same = pairs
            .get(i + 1)
            .is_some_and(|q| q.input().is_idle() != user);
        if !next_same {
            out.push(Run {
                user,
                pairs: &pairs[start..=i],
            });
            start = i + 1;
        }
    }
    Ok(out)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn check_slices(
    d: &DuplexDialogue,
    runs: &[Run<'_>],
    cfg: &SlicerConfig,
    tok: &dyn Tokenizer,
) -> Result<(), String> {
    for (i, p) in d.pairs.iter().enumerate() {
        ensure(p.tick_index() == i as u64, || {
            format!("pair {i} has index {}", p.tick_index())
        })?;
    }
    for r in runs {
        let n = r.pairs.len();
        for (k, p) in r.pairs.iter().enumerate() {
            let i = p.tick_index();
            if r.user {
                let w = p.input().unit_count();
                ensure(w <= cfg.user_width_max, || {
                    format!("pair {i}: user slice of {w} words")
                })?;
                ensure(k + 1 == n || w >= cfg.user_width_min, || {
                    format!("pair {i}: short user slice inside a message")
                })?;
            } else {
                let units = tok.count(p.output().as_text());
                ensure(units <= cfg.assistant_chunk_tokens, || {
                    format!("pair {i}: assistant slice of {units} tokens")
                })?;
                ensure(k + 1 == n || !p.output_terminal(), || {
                    format!("pair {i}: terminal slice inside a response")
                })?;
            }
        }
    }
    Ok(())
}

/// Checks slicing, run structure and the category invariant of one example.
pub fn validate_dialogue(
    d: &DuplexDialogue,
    cfg: &SlicerConfig,
    tok: &dyn Tokenizer,
) -> Result<(), String> {
    ensure(!d.pairs.is_empty(), || "no pairs".into())?;
    ensure(d.category == d.injection_meta.injection.category(), || {
        format!(
            "category {} but metadata of kind {}",
            d.category,
            d.injection_meta.injection.category()
        )
    })?;
    let runs = runs(&d.pairs)?;
    check_slices(d, &runs, cfg, tok)?;
    ensure(runs.first().is_some_and(|r| r.user), || {
        "does not open with user input".into()
    })?;
    ensure(runs.len() % 2 == 0, || {
        "does not end with a response".into()
    })?;
    let users: Vec<&Run<'_>> = runs.iter().step_by(2).collect();
    let replies: Vec<&Run<'_>> = runs.iter().skip(1).step_by(2).collect();
    ensure(
        replies.iter().all(|r| !r.user) && users.iter().all(|r| r.user),
        || "runs do not alternate".into(),
    )?;
    ensure(replies.last().is_some_and(|r| r.terminal()), || {
        "final response is not terminal".into()
    })?;
    let open: Vec<usize> = replies
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.terminal())
        .map(|(i, _)| i)
        .collect();
    let turns = replies.len();
    let meta = &d.injection_meta;
    let user_text = |t: usize| users.get(t).map(|r| r.text()).unwrap_or_default();

    match &meta.injection {
        Injection::Basic => {
            ensure(meta.source_ids.len() == 1, || {
                "basic needs one source".into()
            })?;
            ensure(open.is_empty(), || format!("responses {open:?} are cut"))?;
        }
        Injection::TopicInterweaving { turn_order } => {
            let n = meta.source_ids.len();
            ensure((3..=5).contains(&n), || format!("{n} interleaved sources"))?;
            ensure(open.is_empty(), || format!("responses {open:?} are cut"))?;
            ensure(turn_order.len() == turns, || {
                format!("{} turns recorded, {turns} present", turn_order.len())
            })?;
            ensure(turn_order.iter().all(|&s| s < n), || {
                "turn order names a missing source".into()
            })?;
            ensure((0..n).all(|s| turn_order.contains(&s)), || {
                "a source contributes no turn".into()
            })?;
        }
        Injection::GenerationTermination {
            turn,
            keep,
            transition,
            inserted,
        } => {
            ensure(*transition < TERMINATION.len(), || {
                format!("transition {transition} out of range")
            })?;
            ensure(open == [*turn], || {
                format!("cut responses {open:?}, expected [{turn}]")
            })?;
            ensure(replies[*turn].pairs.len() == *keep, || {
                format!(
                    "cut response keeps {} slices, recorded {keep}",
                    replies[*turn].pairs.len()
                )
            })?;
            ensure(
                user_text(turn + 1) == normalize_whitespace(inserted),
                || "inserted input differs from metadata".into(),
            )?;
        }
        Injection::Regeneration {
            turn,
            keep,
            transition,
            inserted,
            response,
        } => {
            ensure(*transition < REGENERATION.len(), || {
                format!("transition {transition} out of range")
            })?;
            ensure(turns == turn + 2, || {
                format!("{turns} turns, expected {}", turn + 2)
            })?;
            ensure(open.iter().all(|&i| i == *turn), || {
                format!("cut responses {open:?}")
            })?;
            ensure(replies[*turn].pairs.len() == *keep, || {
                "cut length differs from metadata".into()
            })?;
            ensure(
                user_text(turn + 1) == normalize_whitespace(inserted),
                || "inserted input differs from metadata".into(),
            )?;
            ensure(
                replies[turn + 1].text() == normalize_whitespace(response),
                || "regenerated response differs from metadata".into(),
            )?;
        }
        Injection::DialogueReset {
            cuts,
            transitions,
            inserted,
        } => {
            ensure(
                meta.source_ids.len() == 5
                    && cuts.len() == 4
                    && transitions.len() == 4
                    && inserted.len() == 4,
                || "reset metadata needs five sources and four cuts".into(),
            )?;
            ensure(transitions.iter().all(|&t| t < RESET.len()), || {
                "transition out of range".into()
            })?;
            ensure(open.len() == 4, || {
                format!("{} cut responses, expected 4", open.len())
            })?;
            for (j, &at) in open.iter().enumerate() {
                ensure(replies[at].pairs.len() == cuts[j].keep, || {
                    format!("cut {j} length differs from metadata")
                })?;
                ensure(
                    user_text(at + 1) == normalize_whitespace(&inserted[j]),
                    || format!("reset input {j} differs from metadata"),
                )?;
            }
        }
        Injection::BackOnTopic {
            turn,
            keep,
            question,
            answer,
            remainder,
        } => {
            ensure(open == [*turn], || {
                format!("cut responses {open:?}, expected [{turn}]")
            })?;
            ensure(turn + 1 < turns, || "no response after the question".into())?;
            ensure(replies[*turn].pairs.len() == *keep, || {
                "cut length differs from metadata".into()
            })?;
            ensure(
                user_text(turn + 1) == normalize_whitespace(question),
                || "question differs from metadata".into(),
            )?;
            let resumed = replies[turn + 1].text();
            let remainder = normalize_whitespace(remainder);
            ensure(
                !remainder.is_empty() && resumed.ends_with(&remainder),
                || "response does not resume the interrupted remainder".into(),
            )?;
            ensure(
                resumed == normalize_whitespace(&format!("{answer} {remainder}")),
                || "answer differs from metadata".into(),
            )?;
        }
    }
    Ok(())
}

/// Validates every line of a JSONL corpus; unparseable lines count as
/// failures.
pub fn validate_jsonl<R: BufRead>(
    reader: R,
    cfg: &SlicerConfig,
    tok: &dyn Tokenizer,
) -> std::io::Result<ValidationReport> {
    let mut report = ValidationReport::default();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        report.total += 1;
        let failure = match DuplexDialogue::from_json_line(&line, tok) {
            Err(reason) => Some((None, reason)),
            Ok(d) => validate_dialogue(&d, cfg, tok)
                .err()
                .map(|reason| (Some(d.id), reason)),
        };
        match failure {
            None => report.passed += 1,
            Some((id, reason)) => report.failures.push(ValidationFailure {
                line: n + 1,
                id,
                reason,
            }),
        }
    }
    Ok(report)
}

/// Rebuilds `d` from its metadata and `sources` and compares.
pub fn check_replay(
    d: &DuplexDialogue,
    sources: &[&SourceDialogue],
    cfg: &SlicerConfig,
    tok: &dyn Tokenizer,
) -> Result<(), String> {
    let again = realize(d.id.clone(), d.injection_meta.clone(), sources, cfg, tok)
        .map_err(|e| e.to_string())?;
    ensure(&again == d, || {
        "replay differs from the emitted example".into()
    })
}
