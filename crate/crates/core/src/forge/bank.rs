//! Fixed transition sentences prefixed to injected user inputs.
//!
//! `[topic]` marks the spot a rewriter fills with the topic of the sentence
//! being fused.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder substituted by rewriters.
pub const TOPIC_SLOT: &str = "[topic]";

pub const TERMINATION: [&str; 11] = [
    "",
    "I need to cut you off right now; this is urgent.",
    "Excuse me, I need to interject for a moment.",
    "Sorry to interrupt, but I have something important to add.",
    "Excuse me, may I interrupt for a moment?",
    "I'm sorry to break in, but there's something important I need to address.",
    "I apologize for interrupting, but I'd like to interject for a moment.",
    "I'm sorry to interrupt, but I have a quick point to make.",
    "I appreciate your input, but I need a moment of silence now.",
    "I'm sorry to interrupt, but I really need some quiet time to focus.",
    "Enough talking! I need you to be quiet now.",
];

pub const REGENERATION: [&str; 15] = [
    "I may not have expressed myself clearly. What I meant was [topic]",
    "I think there might be a bit of confusion. Let me clarify [topic]",
    "I appreciate your input, but I was hoping for more details on [topic]",
    "I think there might be a misunderstanding. What I'm really looking for is [topic]",
    "I may not have explained myself clearly. Let me rephrase the question. What are your thoughts on [topic]?",
    "Actually, the correct information is [topic]. Could you share your perspective on that?",
    "I'm a bit confused because what you mentioned contradicts the information I have. Can we go over this again?",
    "I'm sorry, but that information seems to be incorrect. Let me clarify the question, and please provide the accurate details regarding [topic].",
    "I'm sorry, but that's not accurate. The correct information is [topic]. It's essential to have the correct details for our discussion.",
    "I appreciate your effort in responding, but I think there might be a misunderstanding. What I intended to convey was [topic]. Let's revisit the topic to ensure we're on the same page.",
    "I see there might be some confusion. Let me clarify my point further to ensure we're on the same page. What I meant was [topic]. Can we discuss this to make sure we have a mutual understanding?",
    "There seems to be a misunderstanding. I meant [topic]. Let's align our understanding.",
    "No.",
    "Oh, No.",
    "No, you are wrong.",
];

pub const RESET: [&str; 18] = [
    "",
    "That's interesting, and speaking of [topic], have you ever...?",
    "I was just thinking about [topic], what are your thoughts on that?",
    "That's fascinating! On a different note, have you ever thought about [topic]?",
    "I was just reading about [topic]. What are your thoughts on that?",
    "By the way, speaking of something else.",
    "That reminds me, have you heard about [topic]?",
    "Can we shift gears for a moment and talk about [topic]?",
    "I've been curious about [topic]. Have you ever considered it?",
    "I was thinking about [topic]. What are your thoughts on that?",
    "Now, shifting gears to a different subject, have you ever explored [topic]",
    "Moving on to a different topic, have you ever considered [topic]",
    "Changing the subject, have you ever thought about [topic]",
    "Switching gears, let's talk about [topic]",
    "On a different note, have you ever thought about [topic]",
    "Speaking of which, have you ever considered exploring [topic]",
    "Changing the subject, let's now delve into [topic]",
    "Shifting gears a bit, let's talk about [topic]",
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BankError {
    #[error("{list} bank has {got} entries, expected {expected}")]
    Length {
        list: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("reset bank lacks the empty transition")]
    NoEmptyReset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionBank {
    pub termination: Vec<String>,
    pub regeneration: Vec<String>,
    pub reset: Vec<String>,
}

impl Default for TransitionBank {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            termination: own(&TERMINATION),
            regeneration: own(&REGENERATION),
            reset: own(&RESET),
        }
    }
}

impl TransitionBank {
    pub fn validate(&self) -> Result<(), BankError> {
        for (list, xs, expected) in [
            ("termination", &self.termination, TERMINATION.len()),
            ("regeneration", &self.regeneration, REGENERATION.len()),
            ("reset", &self.reset, RESET.len()),
        ] {
            if xs.len() != expected {
                return Err(BankError::Length {
                    list,
                    got: xs.len(),
                    expected,
                });
            }
        }
        if !self.reset.iter().any(|s| s.is_empty()) {
            return Err(BankError::NoEmptyReset);
        }
        Ok(())
    }
}
