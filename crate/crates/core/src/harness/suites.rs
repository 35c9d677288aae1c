//! Seeded generators for the standard scenario suites.
//!
//! All suites use a scripted rule that treats a query as complete once it
//! ends with `?`, so expectation windows can be bounded from word counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Action, Event, Scenario};
use crate::backends::{CompletionRule, InterruptionBehavior, ResponseTemplate, ScriptedRule};
use crate::forge::{IdentityRewriter, Rewriter, TERMINATION};
use crate::session::GenConfig;
use crate::slicer::word_count;

const VOCAB: [&str; 32] = [
    "river", "bridge", "window", "garden", "music", "travel", "coffee", "planet", "market",
    "winter", "engine", "story", "forest", "city", "ocean", "mountain", "language", "history",
    "recipe", "budget", "camera", "bridge", "island", "library", "science", "holiday", "painting",
    "kitchen", "morning", "theory", "village", "signal",
];

fn rng_for(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

fn words<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n)
        .map(|_| VOCAB[rng.random_range(0..VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn question_rule(response: ResponseTemplate) -> ScriptedRule {
    ScriptedRule {
        completion: CompletionRule::Terminators {
            suffixes: vec!["?".into()],
        },
        response,
        interruption: InterruptionBehavior::Terminate,
    }
}

fn config<R: Rng>(rng: &mut R) -> GenConfig {
    let mut c = GenConfig::default();
    c.slicer.rng_seed = rng.random();
    c
}

fn ev(tick: u64, action: Action) -> Event {
    Event { tick, action }
}

fn send(tick: u64, text: String, interrupt: bool, mid_call: bool, completes_query: bool) -> Event {
    ev(
        tick,
        Action::Send {
            text,
            interrupt,
            mid_call,
            completes_query,
        },
    )
}

/// Ticks needed to consume `w` words at the narrowest slice width.
fn consume_ticks(w: usize) -> u64 {
    w.div_ceil(4) as u64
}

/// An incomplete query stays unanswered for a random number of ticks, then a
/// closing question completes it.
pub fn idle_suite(n: usize, seed: u64) -> Vec<Scenario> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let opening = {
                let k = rng.random_range(1..=40);
                words(&mut rng, k)
            };
            let quiet = rng.random_range(1..=30u64);
            let closing = format!("{} ?", {
                let k = rng.random_range(1..=5);
                words(&mut rng, k)
            });
            let pending = word_count(&opening) + word_count(&closing);
            let through = quiet + consume_ticks(pending) + 1;
            Scenario {
                name: format!("idle-{i:04}"),
                rule: question_rule(ResponseTemplate::Template {
                    template: "You asked about {query} and here is my answer.".into(),
                }),
                config: config(&mut rng),
                max_ticks: through + 2,
                events: vec![
                    send(0, opening, false, false, false),
                    ev(
                        0,
                        Action::ExpectIdle {
                            through: Some(quiet - 1),
                        },
                    ),
                    send(quiet, closing, false, false, true),
                    ev(
                        quiet,
                        Action::ExpectText {
                            through: Some(through),
                            contains: Some("You asked about".into()),
                        },
                    ),
                ],
            }
        })
        .collect()
}

/// A question gets a long answer; the user cuts in mid-answer with a
/// termination transition, optionally fused with a follow-up question.
pub fn termination_suite(n: usize, seed: u64) -> Vec<Scenario> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let w = rng.random_range(4..=12);
            let query = format!("{} ?", words(&mut rng, w - 1));
            let answer = words(&mut rng, 60);
            // The answer runs from at most ceil(w/4) to at least ceil(w/6)+5.
            let lo = consume_ticks(w) + 1;
            let hi = w.div_ceil(6) as u64 + 4;
            let g = rng.random_range(lo..=hi);
            let mut transition = TERMINATION[rng.random_range(0..TERMINATION.len())];
            let follow_up = rng.random_bool(0.7);
            if !follow_up && transition.is_empty() {
                transition = TERMINATION[1];
            }
            let text = if follow_up {
                let next = format!("{} ?", {
                    let k = rng.random_range(2..=8);
                    words(&mut rng, k)
                });
                IdentityRewriter
                    .fuse(transition, &next)
                    .expect("non-empty text")
            } else {
                transition.to_owned()
            };
            let completes = text.trim_end().ends_with('?');
            let mid_call = rng.random_bool(0.3);
            let through = g + consume_ticks(word_count(&text)) + 1;
            let mut events = vec![
                send(0, query, false, false, true),
                ev(0, Action::ExpectIdle { through: None }),
                ev(
                    1,
                    Action::ExpectText {
                        through: Some(g - 1),
                        contains: None,
                    },
                ),
                send(g, text, true, mid_call, completes),
            ];
            if completes {
                events.push(ev(
                    g,
                    Action::ExpectText {
                        through: Some(through),
                        contains: Some(answer.split(' ').next().unwrap().to_owned()),
                    },
                ));
            } else {
                events.push(ev(
                    g,
                    Action::ExpectIdle {
                        through: Some(through),
                    },
                ));
            }
            Scenario {
                name: format!("termination-{i:04}"),
                rule: question_rule(ResponseTemplate::Fixed { text: answer }),
                config: config(&mut rng),
                max_ticks: through + 1,
                events,
            }
        })
        .collect()
}

/// Queries of random length, sometimes in two parts, each answered right
/// after the final slice.
pub fn latency_suite(n: usize, seed: u64) -> Vec<Scenario> {
    (0..n)
        .map(|i| {
            let mut rng = rng_for(seed, i);
            let t0 = rng.random_range(0..3u64);
            let mut events = Vec::new();
            let mut t = t0;
            let mut total = 0;
            if rng.random_bool(0.4) {
                let part = {
                    let k = rng.random_range(1..=10);
                    words(&mut rng, k)
                };
                total += word_count(&part);
                events.push(send(t, part, false, false, false));
                t += rng.random_range(1..=3);
            }
            let last = format!("{} ?", {
                let k = rng.random_range(0..=25);
                words(&mut rng, k)
            });
            total += word_count(&last);
            events.push(send(t, last, false, false, true));
            let through = t + consume_ticks(total) + 1;
            events.push(ev(
                t,
                Action::ExpectText {
                    through: Some(through),
                    contains: None,
                },
            ));
            Scenario {
                name: format!("latency-{i:04}"),
                rule: question_rule(ResponseTemplate::Echo),
                config: config(&mut rng),
                max_ticks: through + 1,
                events,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_are_seed_deterministic_and_valid() {
        for f in [idle_suite, termination_suite, latency_suite] {
            let a = f(30, 7);
            assert_eq!(a, f(30, 7));
            assert_ne!(a, f(30, 8));
            for s in &a {
                s.validate().unwrap();
            }
        }
    }

    #[test]
    fn termination_suite_uses_bank_entries() {
        let suite = termination_suite(200, 1);
        let interrupts: Vec<&str> = suite
            .iter()
            .flat_map(|s| s.events.iter())
            .filter_map(|e| match &e.action {
                Action::Send {
                    text,
                    interrupt: true,
                    ..
                } => Some(text.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(interrupts.len(), 200);
        for t in TERMINATION.iter().filter(|t| !t.is_empty()) {
            assert!(interrupts.iter().any(|i| i.starts_with(t)), "{t} unused");
        }
    }
}
