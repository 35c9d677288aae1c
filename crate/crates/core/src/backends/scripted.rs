//! Deterministic rule-driven backend used as a stand-in for a trained duplex
//! model.
//!
//! The backend re-derives the conversation state from the decoded context on
//! every call, so identical contexts always yield identical chunks. It stays
//! idle while the user is speaking or while the accumulated query is
//! incomplete, starts answering on the first silent tick after a complete
//! query, and reacts to user input arriving mid-response according to its
//! [`InterruptionBehavior`].

use serde::{Deserialize, Serialize};

use super::{BackendError, Chunk, GenerationRequest, GeneratorBackend};
use crate::session::SlicePair;
use crate::slicer::Slice;

/// When the accumulated user text counts as a finished query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompletionRule {
    /// Any non-empty query is complete.
    Always,
    /// The query ends with one of the suffixes.
    Terminators {
        suffixes: Vec<String>,
    },
    MinWords {
        words: usize,
    },
}

impl CompletionRule {
    pub fn is_complete(&self, query: &str) -> bool {
        let q = query.trim_end();
        if q.is_empty() {
            return false;
        }
        match self {
            CompletionRule::Always => true,
            CompletionRule::Terminators { suffixes } => {
                suffixes.iter().any(|s| q.ends_with(s.as_str()))
            }
            CompletionRule::MinWords { words } => q.split_whitespace().count() >= *words,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseTemplate {
    Echo,
    Fixed {
        text: String,
    },
    /// `{query}` is replaced by the accumulated query.
    Template {
        template: String,
    },
}

impl ResponseTemplate {
    pub fn render(&self, query: &str) -> String {
        match self {
            ResponseTemplate::Echo => query.to_owned(),
            ResponseTemplate::Fixed { text } => text.clone(),
            ResponseTemplate::Template { template } => template.replace("{query}", query),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterruptionBehavior {
    /// Abandon the response and wait for the next complete query.
    Terminate,
    /// Answer the interrupting query, then finish the abandoned response.
    AnswerThenResume,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedRule {
    pub completion: CompletionRule,
    pub response: ResponseTemplate,
    pub interruption: InterruptionBehavior,
}

impl Default for ScriptedRule {
    fn default() -> Self {
        Self {
            completion: CompletionRule::Terminators {
                suffixes: vec!["?".into(), ".".into(), "!".into()],
            },
            response: ResponseTemplate::Template {
                template: "You said: {query} That is all I have to say about it.".into(),
            },
            interruption: InterruptionBehavior::Terminate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Replay {
    query: Vec<String>,
    /// Tokens of the response being emitted and how many went out already.
    active: Option<(Vec<String>, usize)>,
    /// Unsent tail of a response interrupted under `AnswerThenResume`.
    suspended: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rule: ScriptedRule,
}

impl ScriptedBackend {
    pub fn new(rule: ScriptedRule) -> Self {
        Self { rule }
    }

    pub fn rule(&self) -> &ScriptedRule {
        &self.rule
    }

    fn respond_tokens(&self, st: &mut Replay, tok: &dyn crate::slicer::Tokenizer) -> Vec<String> {
        let query = st.query.join(" ");
        let mut tokens = tok.tokenize(&self.rule.response.render(&query));
        tokens.append(&mut st.suspended);
        st.query.clear();
        tokens
    }

    fn on_input(&self, st: &mut Replay, input: &Slice) {
        if input.is_idle() {
            return;
        }
        if let Some((tokens, emitted)) = st.active.take() {
            if self.rule.interruption == InterruptionBehavior::AnswerThenResume {
                st.suspended = tokens[emitted..].to_vec();
            } else {
                st.suspended.clear();
            }
            st.query.clear();
        }
        st.query
            .extend(input.as_text().split_whitespace().map(str::to_owned));
    }

    fn on_output(&self, st: &mut Replay, pair: &SlicePair, tok: &dyn crate::slicer::Tokenizer) {
        let out = pair.output();
        if out.is_idle() {
            return;
        }
        let (tokens, emitted) = match st.active.take() {
            Some(a) => a,
            None => (self.respond_tokens(st, tok), 0),
        };
        let emitted = (emitted + out.unit_count()).min(tokens.len());
        if !pair.output_terminal() && emitted < tokens.len() {
            st.active = Some((tokens, emitted));
        }
    }
}

impl GeneratorBackend for ScriptedBackend {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Chunk, BackendError> {
        let tok = req.tokenizer;
        let ctx = req
            .context
            .decode(tok)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let mut st = Replay::default();
        for pair in &ctx.history {
            self.on_input(&mut st, pair.input());
            self.on_output(&mut st, pair, tok);
        }
        self.on_input(&mut st, &ctx.new_input);
        if !ctx.new_input.is_idle() {
            return Ok(Chunk::Idle);
        }
        let (tokens, emitted) = match st.active.take() {
            Some(a) => a,
            None if self.rule.completion.is_complete(&st.query.join(" ")) => {
                (self.respond_tokens(&mut st, tok), 0)
            }
            None => return Ok(Chunk::Idle),
        };
        let end = (emitted + req.config.max_tokens_per_chunk).min(tokens.len());
        if end == emitted {
            return Ok(Chunk::Idle);
        }
        Ok(Chunk::text(
            tok.detokenize(&tokens[emitted..end]),
            end == tokens.len(),
        ))
    }
}
