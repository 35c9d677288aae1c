//! Scenario execution and metric aggregation.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{Action, Scenario};
use crate::backends::{GenerationRequest, GeneratorBackend};
use crate::session::{SessionId, SessionState, TickOutcome};
use crate::slicer::{reassemble, word_count};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Ratio {
    pub ok: u64,
    pub total: u64,
}

impl Ratio {
    /// `None` when nothing was checked.
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.ok as f64 / self.total as f64)
    }

    fn add(&mut self, o: Ratio) {
        self.ok += o.ok;
        self.total += o.total;
    }

    fn check(&mut self, ok: bool) {
        self.total += 1;
        self.ok += u64::from(ok);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub passed: bool,
    pub failures: Vec<String>,
    /// Perceived latency per completed query; `None` is no response.
    pub latencies: Vec<Option<u64>>,
    /// Expected-idle ticks that were idle.
    pub idle: Ratio,
    /// Interruptions followed by idle output until the next query completes.
    pub termination: Ratio,
    /// Ticks from each interruption to the first idle output.
    pub interruption_effect: Vec<Option<u64>>,
    pub ticks: u64,
}

/// Distribution of tick counts; `missing` counts samples that never
/// happened.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct LatencySummary {
    pub samples: u64,
    pub missing: u64,
    pub histogram: BTreeMap<u64, u64>,
    pub mean: Option<f64>,
    pub p50: Option<u64>,
    pub p90: Option<u64>,
    pub max: Option<u64>,
}

impl LatencySummary {
    pub fn from_samples(xs: impl IntoIterator<Item = Option<u64>>) -> Self {
        let mut s = Self::default();
        let mut vals = Vec::new();
        for x in xs {
            match x {
                Some(v) => {
                    vals.push(v);
                    *s.histogram.entry(v).or_default() += 1;
                }
                None => s.missing += 1,
            }
        }
        vals.sort_unstable();
        s.samples = vals.len() as u64;
        if !vals.is_empty() {
            s.mean = Some(vals.iter().sum::<u64>() as f64 / vals.len() as f64);
            let rank =
                |q: f64| vals[((q * vals.len() as f64).ceil() as usize).clamp(1, vals.len()) - 1];
            s.p50 = Some(rank(0.5));
            s.p90 = Some(rank(0.9));
            s.max = vals.last().copied();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scenarios: usize,
    pub passed: usize,
    pub failed: usize,
    pub latency: LatencySummary,
    pub idle_compliance: Option<f64>,
    pub idle_checks: Ratio,
    pub termination_compliance: Option<f64>,
    pub termination_checks: Ratio,
    pub interruption_effect: LatencySummary,
    pub results: Vec<ScenarioResult>,
}

impl MetricsReport {
    pub fn from_results(results: Vec<ScenarioResult>) -> Self {
        let mut idle = Ratio::default();
        let mut term = Ratio::default();
        for r in &results {
            idle.add(r.idle);
            term.add(r.termination);
        }
        let passed = results.iter().filter(|r| r.passed).count();
        Self {
            scenarios: results.len(),
            passed,
            failed: results.len() - passed,
            latency: LatencySummary::from_samples(
                results.iter().flat_map(|r| r.latencies.iter().copied()),
            ),
            idle_compliance: idle.rate(),
            idle_checks: idle,
            termination_compliance: term.rate(),
            termination_checks: term,
            interruption_effect: LatencySummary::from_samples(
                results
                    .iter()
                    .flat_map(|r| r.interruption_effect.iter().copied()),
            ),
            results,
        }
    }
}

struct Sent {
    tick: u64,
    interrupt: bool,
    completes_query: bool,
    /// Cumulative words submitted up to and including this send.
    words_through: usize,
    /// Tick on which the last of those words was consumed.
    query_end: Option<u64>,
}

/// Runs one scenario on a fresh session. Never panics on scenario content:
/// problems become failures in the result.
pub fn run_scenario(sc: &Scenario, backend: &dyn GeneratorBackend) -> ScenarioResult {
    let mut failures = Vec::new();
    let mut state = match SessionState::new(SessionId::new(sc.name.clone()), sc.config.clone()) {
        Ok(s) => s,
        Err(e) => {
            return ScenarioResult {
                name: sc.name.clone(),
                passed: false,
                failures: vec![format!("session: {e}")],
                latencies: vec![],
                idle: Ratio::default(),
                termination: Ratio::default(),
                interruption_effect: vec![],
                ticks: 0,
            }
        }
    };
    let mut outcomes: Vec<TickOutcome> = Vec::with_capacity(sc.max_ticks as usize);
    let mut sent: Vec<Sent> = Vec::new();
    let mut submitted = 0usize;
    let mut consumed = 0usize;
    let mut events = sc.events.iter().peekable();

    for t in 0..sc.max_ticks {
        let mut mid_call = Vec::new();
        while let Some(e) = events.next_if(|e| e.tick == t) {
            if let Action::Send {
                text,
                interrupt,
                mid_call: during,
                completes_query,
            } = &e.action
            {
                submitted += word_count(text);
                sent.push(Sent {
                    tick: t,
                    interrupt: *interrupt,
                    completes_query: *completes_query,
                    words_through: submitted,
                    query_end: None,
                });
                if *during {
                    mid_call.push(text.as_str());
                } else if let Err(e) = state.submit_input(text) {
                    failures.push(format!("tick {t}: submit failed: {e}"));
                }
            }
        }
        let outcome = if mid_call.is_empty() {
            state.tick(backend)
        } else {
            state.begin_tick().and_then(|req| {
                for text in mid_call {
                    if let Err(e) = state.submit_input(text) {
                        failures.push(format!("tick {t}: submit failed: {e}"));
                    }
                }
                let config = state.config().clone();
                let tok = state.tokenizer().clone();
                let result = backend.generate(&GenerationRequest {
                    context: &req.context,
                    config: &config,
                    tokenizer: tok.as_ref(),
                    cancel: &req.cancel,
                });
                state.commit_tick(req, result)
            })
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                failures.push(format!("tick {t}: {e}"));
                break;
            }
        };
        if let Some(err) = &outcome.error {
            failures.push(format!("tick {t}: backend error: {err}"));
        }
        if !outcome.input.is_idle() {
            consumed += outcome.input.unit_count();
        }
        for s in sent.iter_mut().filter(|s| s.query_end.is_none()) {
            if consumed >= s.words_through {
                s.query_end = Some(t);
            }
        }
        outcomes.push(outcome);
    }
    let ran = outcomes.len() as u64;
    let idle_at = |t: u64| outcomes.get(t as usize).map(|o| o.output.is_idle());

    let mut idle = Ratio::default();
    for e in &sc.events {
        match &e.action {
            Action::ExpectIdle { through } => {
                let end = through.unwrap_or(e.tick);
                for t in e.tick..=end {
                    match idle_at(t) {
                        Some(ok) => {
                            idle.check(ok);
                            if !ok {
                                failures.push(format!("tick {t}: expected idle, got text"));
                            }
                        }
                        None => {
                            idle.check(false);
                            failures.push(format!(
                                "tick {t}: expectation beyond the last tick run ({ran})"
                            ));
                        }
                    }
                }
            }
            Action::ExpectText { through, contains } => {
                let end = through.unwrap_or(e.tick);
                if end >= ran {
                    failures.push(format!(
                        "ticks {}..={end}: expectation beyond the last tick run ({ran})",
                        e.tick
                    ));
                    continue;
                }
                let window = &outcomes[e.tick as usize..=end as usize];
                let text = reassemble(window.iter().map(|o| &o.output));
                if text.is_empty() {
                    failures.push(format!("ticks {}..={end}: expected text, all idle", e.tick));
                } else if let Some(needle) = contains {
                    if !text.contains(needle.as_str()) {
                        failures.push(format!(
                            "ticks {}..={end}: {needle:?} not in {text:?}",
                            e.tick
                        ));
                    }
                }
            }
            Action::Send { .. } | Action::Silent => {}
        }
    }

    let first_text_from = |t: u64| (t..ran).find(|&k| idle_at(k) == Some(false));
    let latencies: Vec<Option<u64>> = sent
        .iter()
        .filter(|s| s.completes_query)
        .map(|s| {
            s.query_end
                .and_then(|end| first_text_from(end).map(|k| k - end))
        })
        .collect();

    let mut termination = Ratio::default();
    let mut interruption_effect = Vec::new();
    for (i, s) in sent.iter().enumerate().filter(|(_, s)| s.interrupt) {
        let end = sent[i..]
            .iter()
            .find(|n| n.completes_query)
            .and_then(|n| n.query_end)
            .unwrap_or(ran.saturating_sub(1));
        let ok = (s.tick..=end).all(|t| idle_at(t) != Some(false));
        termination.check(ok);
        if !ok {
            failures.push(format!(
                "interruption at tick {}: text output before tick {end} completed the next query",
                s.tick
            ));
        }
        interruption_effect.push(
            (s.tick..ran)
                .find(|&k| idle_at(k) == Some(true))
                .map(|k| k - s.tick),
        );
    }

    ScenarioResult {
        name: sc.name.clone(),
        passed: failures.is_empty(),
        failures,
        latencies,
        idle,
        termination,
        interruption_effect,
        ticks: ran,
    }
}

/// Runs every scenario on its own session; `backend_for` supplies the
/// backend. With `parallel` the scenarios are spread over the rayon pool;
/// results keep suite order either way.
pub fn run_scenarios<F>(scenarios: &[Scenario], backend_for: F, parallel: bool) -> MetricsReport
where
    F: Fn(&Scenario) -> Arc<dyn GeneratorBackend> + Sync,
{
    let one = |sc: &Scenario| run_scenario(sc, backend_for(sc).as_ref());
    let results = if parallel {
        scenarios.par_iter().map(one).collect()
    } else {
        scenarios.iter().map(one).collect()
    };
    MetricsReport::from_results(results)
}
