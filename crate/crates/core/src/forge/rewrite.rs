//! Rewriters fuse a transition sentence with a user message; annotators write
//! the assistant-side text that injected inputs call for.
//!
//! The identity and template variants are deterministic and need no network.
//! The remote variants call a chat-completions endpoint.

use serde::Deserialize;
use thiserror::Error;

use super::bank::TOPIC_SLOT;
use super::Message;
use crate::backends::remote::RemoteBackend;
use crate::backends::BackendError;
use crate::session::GenConfig;
use crate::slicer::{normalize_whitespace, Role};

pub const FUSE_PROMPT: &str = "Fuse the two sentences smoothly and replace [topic] with the topic of sentence two.\n\nSentence one: \"{sentence_a}\"\n\nSentence two: \"{sentence_b}\"\n\nGive me your answer only, no other words. Give me your answer only, no other words.";

/// Words of the second sentence used as its topic by the identity rewriter.
const TOPIC_WORDS: usize = 6;

pub fn fuse_prompt(sentence_a: &str, sentence_b: &str) -> String {
    FUSE_PROMPT
        .replace("{sentence_a}", sentence_a)
        .replace("{sentence_b}", sentence_b)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewriteError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("rewriter returned empty text")]
    Empty,
    #[error("annotation not understood: {0}")]
    Malformed(String),
}

pub trait Rewriter: Send + Sync {
    /// Fuses `transition` with `sentence`. An empty transition returns the
    /// sentence unchanged.
    fn fuse(&self, transition: &str, sentence: &str) -> Result<String, RewriteError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interjection {
    pub question: String,
    pub answer: String,
}

pub trait Annotator: Send + Sync {
    /// Fresh assistant response to `request`, given the dialogue so far.
    fn regenerate(&self, history: &[Message], request: &str) -> Result<String, RewriteError>;

    /// A listener question about `spoken` and its answer. The caller appends
    /// the unspoken remainder after the answer.
    fn interject(&self, spoken: &str, remainder: &str) -> Result<Interjection, RewriteError>;
}

/// Leading words of `sentence`, trailing punctuation removed.
pub fn topic_phrase(sentence: &str) -> String {
    let head: Vec<&str> = sentence.split_whitespace().take(TOPIC_WORDS).collect();
    head.join(" ")
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_owned()
}

fn trailing_phrase(text: &str, words: usize) -> String {
    let all: Vec<&str> = text.split_whitespace().collect();
    all[all.len().saturating_sub(words)..]
        .join(" ")
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_owned()
}

fn non_empty(text: String) -> Result<String, RewriteError> {
    let t = normalize_whitespace(&text);
    if t.is_empty() {
        Err(RewriteError::Empty)
    } else {
        Ok(t)
    }
}

/// `"<transition with [topic] filled> <sentence>"`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn fuse(&self, transition: &str, sentence: &str) -> Result<String, RewriteError> {
        if transition.trim().is_empty() {
            return non_empty(sentence.to_owned());
        }
        let filled = transition.replace(TOPIC_SLOT, &topic_phrase(sentence));
        non_empty(format!("{filled} {sentence}"))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateAnnotator;

impl Annotator for TemplateAnnotator {
    fn regenerate(&self, _history: &[Message], request: &str) -> Result<String, RewriteError> {
        non_empty(format!(
            "Sorry for the confusion. Let me try again on {} with a clearer and more careful answer this time.",
            topic_phrase(request)
        ))
    }

    fn interject(&self, spoken: &str, _remainder: &str) -> Result<Interjection, RewriteError> {
        let phrase = trailing_phrase(spoken, 4);
        Ok(Interjection {
            question: non_empty(format!("Sorry, what do you mean by \"{phrase}\"?"))?,
            answer: non_empty(format!(
                "By \"{phrase}\" I mean exactly what I said. Now, back to where I was."
            ))?,
        })
    }
}

pub struct RemoteRewriter {
    backend: RemoteBackend,
    gen: GenConfig,
}

impl RemoteRewriter {
    pub fn new(backend: RemoteBackend, gen: GenConfig) -> Self {
        Self { backend, gen }
    }
}

impl Rewriter for RemoteRewriter {
    fn fuse(&self, transition: &str, sentence: &str) -> Result<String, RewriteError> {
        if transition.trim().is_empty() {
            return non_empty(sentence.to_owned());
        }
        let out = self
            .backend
            .complete(&fuse_prompt(transition, sentence), &self.gen)?;
        non_empty(out.trim().trim_matches('"').to_owned())
    }
}

pub struct RemoteAnnotator {
    backend: RemoteBackend,
    gen: GenConfig,
}

impl RemoteAnnotator {
    pub fn new(backend: RemoteBackend, gen: GenConfig) -> Self {
        Self { backend, gen }
    }
}

#[derive(Deserialize)]
struct RawInterjection {
    question: String,
    answer: String,
}

impl Annotator for RemoteAnnotator {
    fn regenerate(&self, history: &[Message], request: &str) -> Result<String, RewriteError> {
        let mut prompt = String::from(
            "Continue this conversation. Reply with the assistant's next message only.\n\n",
        );
        for m in history {
            let who = match m.role {
                Role::User => "User",
                Role::Assistant => "Assistant",
            };
            prompt.push_str(&format!("{who}: {}\n", m.text));
        }
        prompt.push_str(&format!("User: {request}\nAssistant:"));
        non_empty(self.backend.complete(&prompt, &self.gen)?)
    }

    fn interject(&self, spoken: &str, remainder: &str) -> Result<Interjection, RewriteError> {
        let prompt = format!(
            "An assistant was saying \"{spoken}\" and had yet to say \"{remainder}\". \
             Write a short question a listener could ask about what was said so far, and a brief answer. \
             Reply with a JSON object {{\"question\": ..., \"answer\": ...}} and nothing else."
        );
        let out = self.backend.complete(&prompt, &self.gen)?;
        let start = out
            .find('{')
            .ok_or_else(|| RewriteError::Malformed(out.clone()))?;
        let end = out
            .rfind('}')
            .ok_or_else(|| RewriteError::Malformed(out.clone()))?;
        let raw: RawInterjection = serde_json::from_str(&out[start..=end])
            .map_err(|e| RewriteError::Malformed(e.to_string()))?;
        Ok(Interjection {
            question: non_empty(raw.question)?,
            answer: non_empty(raw.answer)?,
        })
    }
}
