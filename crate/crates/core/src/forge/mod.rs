//! Dataset construction: turn-based dialogues in, duplex slice-pair examples
//! out.
//!
//! Every generator first draws a plan (cut points, transition indices,
//! rewritten texts) into an [`InjectionMeta`] and then realizes the pairs from
//! that plan alone, so any example can be rebuilt from its metadata and the
//! source dialogues it names.

mod bank;
mod corpus;
mod generate;
mod io;
mod rewrite;
mod validate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::SlicePair;
use crate::slicer::Role;

pub use bank::{BankError, TransitionBank, REGENERATION, RESET, TERMINATION, TOPIC_SLOT};
pub use corpus::{
    build_corpus, dialogue_tokens, Corpus, CorpusConfig, CorpusStats, Mix, MixError, StatsReport,
    StatsRow, Tally, Tenths,
};
pub use generate::{realize, Forge};
pub use io::{read_jsonl, read_sources, write_jsonl, ForgeIoError};
pub use rewrite::{
    fuse_prompt, topic_phrase, Annotator, IdentityRewriter, Interjection, RemoteAnnotator,
    RemoteRewriter, RewriteError, Rewriter, TemplateAnnotator, FUSE_PROMPT,
};
pub use validate::{
    check_replay, validate_dialogue, validate_jsonl, ValidationFailure, ValidationReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Basic,
    TopicInterweaving,
    GenerationTermination,
    Regeneration,
    DialogueReset,
    BackOnTopic,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Basic,
        Category::TopicInterweaving,
        Category::GenerationTermination,
        Category::Regeneration,
        Category::DialogueReset,
        Category::BackOnTopic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Basic => "basic",
            Category::TopicInterweaving => "topic_interweaving",
            Category::GenerationTermination => "generation_termination",
            Category::Regeneration => "regeneration",
            Category::DialogueReset => "dialogue_reset",
            Category::BackOnTopic => "back_on_topic",
        }
    }

    /// Row label in the statistics table.
    pub fn title(self) -> &'static str {
        match self {
            Category::Basic => "Basic",
            Category::TopicInterweaving => "Topic Interweaving",
            Category::GenerationTermination => "Generation Termination",
            Category::Regeneration => "Regeneration",
            Category::DialogueReset => "Dialogue Reset",
            Category::BackOnTopic => "Back on Topic",
        }
    }

    /// Dialogue count of this category in the reference Duplex-UltraChat
    /// release; used as the default mix.
    pub fn reference_count(self) -> u64 {
        match self {
            Category::Basic => 1_458_353,
            Category::TopicInterweaving => 489_065,
            Category::GenerationTermination => 1_468_141,
            Category::Regeneration => 806_687,
            Category::DialogueReset => 300_318,
            Category::BackOnTopic => 327_286,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown category {0:?}")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    /// Accepts full names and the short forms used on the command line.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "basic" => Category::Basic,
            "topic_interweaving" | "topic" | "interweave" | "interweaving" => {
                Category::TopicInterweaving
            }
            "generation_termination" | "termination" | "term" => Category::GenerationTermination,
            "regeneration" | "regen" => Category::Regeneration,
            "dialogue_reset" | "reset" => Category::DialogueReset,
            "back_on_topic" | "back" | "bot" => Category::BackOnTopic,
            other => return Err(UnknownCategory(other.to_owned())),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SourceError {
    #[error("dialogue has no complete turn")]
    Empty,
    #[error("message {index} has the wrong role")]
    RoleOrder { index: usize },
    #[error("message {index} is blank")]
    BlankText { index: usize },
    #[error("dialogue ends with an unanswered user message")]
    Unanswered,
}

/// A turn-based dialogue: user and assistant messages strictly alternating,
/// starting with the user and ending with the assistant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDialogue {
    id: String,
    messages: Vec<Message>,
}

impl SourceDialogue {
    pub fn new(id: impl Into<String>, messages: Vec<Message>) -> Result<Self, SourceError> {
        if messages.is_empty() {
            return Err(SourceError::Empty);
        }
        for (index, m) in messages.iter().enumerate() {
            let expected = if index % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            if m.role != expected {
                return Err(SourceError::RoleOrder { index });
            }
            if m.text.trim().is_empty() {
                return Err(SourceError::BlankText { index });
            }
        }
        if messages.len() % 2 == 1 {
            return Err(SourceError::Unanswered);
        }
        Ok(Self {
            id: id.into(),
            messages,
        })
    }

    /// Builds from alternating texts, user first.
    pub fn from_texts<S: Into<String>>(
        id: impl Into<String>,
        texts: impl IntoIterator<Item = S>,
    ) -> Result<Self, SourceError> {
        let messages = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Message {
                role: if i % 2 == 0 {
                    Role::User
                } else {
                    Role::Assistant
                },
                text: t.into(),
            })
            .collect();
        Self::new(id, messages)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    /// `(user, assistant)` text pairs.
    pub fn turns(&self) -> impl ExactSizeIterator<Item = (&str, &str)> + '_ {
        self.messages
            .chunks_exact(2)
            .map(|t| (t[0].text.as_str(), t[1].text.as_str()))
    }

    pub fn turn(&self, i: usize) -> Option<(&str, &str)> {
        let u = self.messages.get(2 * i)?;
        let a = self.messages.get(2 * i + 1)?;
        Some((&u.text, &a.text))
    }

    pub fn turn_count(&self) -> usize {
        self.messages.len() / 2
    }
}

/// Assistant response cut after `keep` slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cut {
    pub turn: usize,
    pub keep: usize,
}

/// Category-specific construction record. Rewritten and annotated texts are
/// stored so realization needs no rewriter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Injection {
    Basic,
    /// Source index of each emitted turn, in emission order.
    TopicInterweaving {
        turn_order: Vec<usize>,
    },
    /// Response of `turn` cut after `keep` slices; the next user message is
    /// replaced by `inserted`.
    GenerationTermination {
        turn: usize,
        keep: usize,
        transition: usize,
        inserted: String,
    },
    /// Response of `turn` cut after `keep` slices (possibly all of them), then
    /// the re-asked query and a fresh response; the dialogue ends there.
    Regeneration {
        turn: usize,
        keep: usize,
        transition: usize,
        inserted: String,
        response: String,
    },
    /// One cut per truncated dialogue; `inserted[j]` replaces the first user
    /// message of dialogue `j + 1`.
    DialogueReset {
        cuts: Vec<Cut>,
        transitions: Vec<usize>,
        inserted: Vec<String>,
    },
    /// Response of `turn` interrupted after `keep` slices by `question`; the
    /// assistant answers and then finishes with `remainder`.
    BackOnTopic {
        turn: usize,
        keep: usize,
        question: String,
        answer: String,
        remainder: String,
    },
}

impl Injection {
    pub fn category(&self) -> Category {
        match self {
            Injection::Basic => Category::Basic,
            Injection::TopicInterweaving { .. } => Category::TopicInterweaving,
            Injection::GenerationTermination { .. } => Category::GenerationTermination,
            Injection::Regeneration { .. } => Category::Regeneration,
            Injection::DialogueReset { .. } => Category::DialogueReset,
            Injection::BackOnTopic { .. } => Category::BackOnTopic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionMeta {
    pub source_ids: Vec<String>,
    /// Seed of the RNG drawing user slice widths during realization.
    pub slice_seed: u64,
    pub injection: Injection,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DuplexDialogue {
    pub id: String,
    pub category: Category,
    pub pairs: Vec<SlicePair>,
    pub injection_meta: InjectionMeta,
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("dialogue {id} is too short: {reason}")]
    TooShort { id: String, reason: &'static str },
    #[error("{category} needs {min}..={max} dialogues, got {got}")]
    CountOutOfRange {
        category: Category,
        min: usize,
        max: usize,
        got: usize,
    },
    #[error("rewrite failed: {0}")]
    Rewrite(#[from] RewriteError),
    #[error("metadata names sources {expected:?} but {got:?} were supplied")]
    SourceMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("metadata inconsistent with sources: {0}")]
    BadMeta(String),
    #[error("invalid mix: {0}")]
    Mix(#[from] MixError),
    #[error("no source dialogues")]
    NoSources,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.as_str().parse::<Category>().unwrap(), c);
            assert_eq!(
                serde_json::to_string(&c).unwrap(),
                format!("\"{}\"", c.as_str())
            );
        }
        assert_eq!(
            "term".parse::<Category>().unwrap(),
            Category::GenerationTermination
        );
        assert!("chitchat".parse::<Category>().is_err());
    }

    #[test]
    fn reference_counts_sum_to_total() {
        assert_eq!(
            Category::ALL
                .iter()
                .map(|c| c.reference_count())
                .sum::<u64>(),
            4_849_850
        );
    }

    #[test]
    fn source_validation() {
        assert!(SourceDialogue::from_texts("a", ["hi", "hello"]).is_ok());
        assert_eq!(
            SourceDialogue::from_texts("a", Vec::<String>::new()),
            Err(SourceError::Empty)
        );
        assert_eq!(
            SourceDialogue::from_texts("a", ["hi"]),
            Err(SourceError::Unanswered)
        );
        assert_eq!(
            SourceDialogue::from_texts("a", ["hi", " "]),
            Err(SourceError::BlankText { index: 1 })
        );
        let bad = vec![
            Message {
                role: Role::Assistant,
                text: "x".into(),
            },
            Message {
                role: Role::User,
                text: "y".into(),
            },
        ];
        assert_eq!(
            SourceDialogue::new("b", bad),
            Err(SourceError::RoleOrder { index: 0 })
        );
    }

    #[test]
    fn meta_json_shape() {
        let m = InjectionMeta {
            source_ids: vec!["s1".into()],
            slice_seed: 7,
            injection: Injection::GenerationTermination {
                turn: 0,
                keep: 2,
                transition: 3,
                inserted: "x".into(),
            },
        };
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["injection"]["kind"], "generation_termination");
        assert_eq!(serde_json::from_value::<InjectionMeta>(v).unwrap(), m);
    }
}
