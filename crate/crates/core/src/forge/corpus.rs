//! Corpus assembly and the per-category statistics table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use super::generate::Forge;
use super::{Category, DuplexDialogue, ForgeError, SourceDialogue};
use crate::slicer::{Slice, Tokenizer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixError {
    #[error("malformed mix entry {0:?}, expected name=weight")]
    Entry(String),
    #[error(transparent)]
    Category(#[from] super::UnknownCategory),
    #[error("weight for {0} must be finite and non-negative")]
    Weight(Category),
    #[error("weights sum to zero")]
    ZeroSum,
}

/// Relative sampling weight per category.
#[derive(Debug, Clone, PartialEq)]
pub struct Mix {
    weights: [f64; 6],
}

impl Default for Mix {
    fn default() -> Self {
        Self::reference()
    }
}

impl Mix {
    /// Proportions of the reference release.
    pub fn reference() -> Self {
        let mut weights = [0.0; 6];
        for c in Category::ALL {
            weights[c.index()] = c.reference_count() as f64;
        }
        Self { weights }
    }

    pub fn uniform() -> Self {
        Self { weights: [1.0; 6] }
    }

    pub fn from_weights(
        pairs: impl IntoIterator<Item = (Category, f64)>,
    ) -> Result<Self, MixError> {
        let mut weights = [0.0; 6];
        for (c, w) in pairs {
            if !w.is_finite() || w < 0.0 {
                return Err(MixError::Weight(c));
            }
            weights[c.index()] = w;
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(MixError::ZeroSum);
        }
        Ok(Self { weights })
    }

    pub fn weight(&self, c: Category) -> f64 {
        self.weights[c.index()]
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(self.weights).expect("weights validated on construction")
    }
}

impl FromStr for Mix {
    type Err = MixError;

    /// `basic=0.3,term=0.3,...`; unnamed categories get weight zero.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut pairs = Vec::new();
        for entry in s.split(',').map(str::trim).filter(|e| !e.is_empty()) {
            let (name, w) = entry
                .split_once('=')
                .ok_or_else(|| MixError::Entry(entry.to_owned()))?;
            let c: Category = name.parse()?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| MixError::Entry(entry.to_owned()))?;
            pairs.push((c, w));
        }
        Self::from_weights(pairs)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub seed: u64,
    pub count: usize,
    pub mix: Mix,
    /// Generate on the rayon pool; output order is the same either way.
    pub parallel: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 0,
            mix: Mix::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dialogues: Vec<DuplexDialogue>,
    pub stats: CorpusStats,
}

/// Generates `cfg.count` examples. Example `i` draws from its own ChaCha
/// stream of `cfg.seed`, so the corpus does not depend on scheduling.
/// Generator failures are skipped and counted per attempted category.
pub fn build_corpus(
    forge: &Forge<'_>,
    sources: &[SourceDialogue],
    cfg: &CorpusConfig,
) -> Result<Corpus, ForgeError> {
    if sources.is_empty() {
        return Err(ForgeError::NoSources);
    }
    let sampler = cfg.mix.sampler();
    let one = |i: usize| -> (Category, Result<DuplexDialogue, ForgeError>) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let category = Category::ALL[sampler.sample(&mut rng)];
        let needed = match category {
            Category::TopicInterweaving => rng.random_range(3..=5),
            Category::DialogueReset => 5,
            _ => 1,
        };
        if needed > sources.len() {
            let err = ForgeError::CountOutOfRange {
                category,
                min: needed,
                max: needed,
                got: sources.len(),
            };
            return (category, Err(err));
        }
        let picked: Vec<&SourceDialogue> =
            rand::seq::index::sample(&mut rng, sources.len(), needed)
                .into_iter()
                .map(|k| &sources[k])
                .collect();
        (
            category,
            forge.generate(format!("dx-{i:06}"), category, &picked, &mut rng),
        )
    };
    let results: Vec<_> = if cfg.parallel {
        (0..cfg.count).into_par_iter().map(one).collect()
    } else {
        (0..cfg.count).map(one).collect()
    };
    let mut stats = CorpusStats::default();
    let mut dialogues = Vec::with_capacity(results.len());
    for (category, r) in results {
        match r {
            Ok(d) => {
                stats.add(&d, forge.tokenizer);
                dialogues.push(d);
            }
            Err(e) => {
                tracing::debug!(%category, error = %e, "example skipped");
                *stats.skipped.entry(category).or_default() += 1;
            }
        }
    }
    Ok(Corpus { dialogues, stats })
}

fn slice_tokens(s: &Slice, tok: &dyn Tokenizer) -> u64 {
    match s.payload() {
        None => 1,
        Some(t) => tok.count(t) as u64,
    }
}

/// Tokens of a dialogue: slice tokens under `tok`, plus one per idle slice and
/// one per end-of-response marker.
pub fn dialogue_tokens(d: &DuplexDialogue, tok: &dyn Tokenizer) -> u64 {
    d.pairs
        .iter()
        .map(|p| {
            slice_tokens(p.input(), tok)
                + slice_tokens(p.output(), tok)
                + u64::from(p.output_terminal())
        })
        .sum()
}

/// A mean rounded half-up to one decimal, stored in tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Tenths(pub u64);

impl Tenths {
    pub fn mean(sum: u64, count: u64) -> Self {
        if count == 0 {
            return Self(0);
        }
        let (sum, count) = (sum as u128, count as u128);
        Self(((20 * sum + count) / (2 * count)) as u64)
    }
}

impl fmt::Display for Tenths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl Serialize for Tenths {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0 as f64 / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub dialogues: u64,
    pub slice_pairs: u64,
    pub tokens: u64,
}

impl Tally {
    pub fn avg_slice_pairs(&self) -> Tenths {
        Tenths::mean(self.slice_pairs, self.dialogues)
    }

    pub fn avg_tokens(&self) -> Tenths {
        Tenths::mean(self.tokens, self.dialogues)
    }

    fn merge(&mut self, o: &Tally) {
        self.dialogues += o.dialogues;
        self.slice_pairs += o.slice_pairs;
        self.tokens += o.tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusStats {
    pub per_category: BTreeMap<Category, Tally>,
    pub skipped: BTreeMap<Category, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsRow {
    pub category: String,
    pub dialogues: u64,
    pub avg_slice_pairs: Tenths,
    pub avg_tokens: Tenths,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StatsReport {
    /// One row per category in fixed order, then `Total`.
    pub rows: Vec<StatsRow>,
    pub skipped: BTreeMap<Category, u64>,
}

impl CorpusStats {
    pub fn add(&mut self, d: &DuplexDialogue, tok: &dyn Tokenizer) {
        let t = self.per_category.entry(d.category).or_default();
        t.dialogues += 1;
        t.slice_pairs += d.pairs.len() as u64;
        t.tokens += dialogue_tokens(d, tok);
    }

    pub fn from_dialogues<'a>(
        ds: impl IntoIterator<Item = &'a DuplexDialogue>,
        tok: &dyn Tokenizer,
    ) -> Self {
        let mut s = Self::default();
        for d in ds {
            s.add(d, tok);
        }
        s
    }

    pub fn get(&self, c: Category) -> Tally {
        self.per_category.get(&c).copied().unwrap_or_default()
    }

    pub fn total(&self) -> Tally {
        let mut t = Tally::default();
        for v in self.per_category.values() {
            t.merge(v);
        }
        t
    }

    pub fn report(&self) -> StatsReport {
        let row = |name: &str, t: Tally| StatsRow {
            category: name.to_owned(),
            dialogues: t.dialogues,
            avg_slice_pairs: t.avg_slice_pairs(),
            avg_tokens: t.avg_tokens(),
        };
        let mut rows: Vec<StatsRow> = Category::ALL
            .iter()
            .map(|&c| row(c.title(), self.get(c)))
            .collect();
        rows.push(row("Total", self.total()));
        StatsReport {
            rows,
            skipped: self.skipped.clone(),
        }
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>12} {:>20} {:>14}",
            "Category", "# Dialogues", "Avg. # Slice Pairs", "Avg. # Tokens"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<24} {:>12} {:>20} {:>14}",
                r.category, r.dialogues, r.avg_slice_pairs, r.avg_tokens
            )?;
        }
        Ok(())
    }
}
