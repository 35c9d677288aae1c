//! Seeded synthetic source dialogues in the `{id, data}` JSONL layout.

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 40] = [
    "the",
    "a",
    "river",
    "system",
    "people",
    "often",
    "build",
    "small",
    "models",
    "to",
    "explain",
    "why",
    "weather",
    "changes",
    "over",
    "time",
    "and",
    "how",
    "cities",
    "grow",
    "near",
    "water",
    "because",
    "trade",
    "routes",
    "were",
    "easier",
    "there",
    "in",
    "history",
    "many",
    "scientists",
    "study",
    "light",
    "energy",
    "from",
    "stars",
    "with",
    "simple",
    "tools",
];

fn sentence<R: Rng>(rng: &mut R, n: usize, end: &str) -> String {
    let mut s: Vec<&str> = (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect();
    if s.is_empty() {
        s.push("hello");
    }
    format!("{}{end}", s.join(" "))
}

/// `n` dialogues of 2 to 5 turns; assistant messages span several chunks.
pub fn source_lines(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let turns = rng.random_range(2..=5);
            let mut data = Vec::new();
            for _ in 0..turns {
                let u = rng.random_range(3..=28);
                data.push(sentence(&mut rng, u, "?"));
                let a = rng.random_range(25..=110);
                data.push(sentence(&mut rng, a, "."));
            }
            serde_json::json!({"id": format!("src-{i:04}"), "data": data}).to_string()
        })
        .collect()
}

pub fn write_sources(path: &Path, n: usize, seed: u64) {
    std::fs::write(path, source_lines(n, seed).join("\n") + "\n").unwrap();
}

pub fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .output()
        .unwrap()
}

pub fn harness(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harness"))
        .args(args)
        .output()
        .unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Instructions ending in `?` or `.`, with irregular whitespace.
pub fn instruction_lines(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=60);
            let end = if rng.random_bool(0.5) { "?" } else { "." };
            let text = sentence(&mut rng, len, end).replace(" the ", "  the\t");
            (format!("q{i}"), text)
        })
        .collect()
}
