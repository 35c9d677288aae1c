//! The six example generators.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bank::TransitionBank;
use super::rewrite::{Annotator, Rewriter};
use super::{
    Category, Cut, DuplexDialogue, ForgeError, Injection, InjectionMeta, Message, SourceDialogue,
};
use crate::session::SlicePair;
use crate::slicer::{
    reassemble, split_assistant_message, split_user_message_with, Role, Slice, SlicerConfig,
    Tokenizer,
};

/// Dialogues interleaved by topic interweaving.
const INTERWEAVE_MIN: usize = 3;
const INTERWEAVE_MAX: usize = 5;
/// Dialogues concatenated by a reset; all but the last are truncated.
const RESET_DIALOGUES: usize = 5;

/// Generator context shared by all categories.
#[derive(Clone, Copy)]
pub struct Forge<'a> {
    pub slicer: &'a SlicerConfig,
    pub tokenizer: &'a dyn Tokenizer,
    pub bank: &'a TransitionBank,
    pub rewriter: &'a dyn Rewriter,
    pub annotator: &'a dyn Annotator,
}

impl Forge<'_> {
    fn assistant_slices(&self, text: &str) -> Vec<Slice> {
        split_assistant_message(text, self.tokenizer, self.slicer)
    }

    fn finish(
        &self,
        id: String,
        sources: &[&SourceDialogue],
        slice_seed: u64,
        injection: Injection,
    ) -> Result<DuplexDialogue, ForgeError> {
        let meta = InjectionMeta {
            source_ids: sources.iter().map(|d| d.id().to_owned()).collect(),
            slice_seed,
            injection,
        };
        realize(id, meta, sources, self.slicer, self.tokenizer)
    }

    /// Turns whose response has at least `min_slices` slices.
    fn cuttable(&self, d: &SourceDialogue, min_slices: usize) -> Vec<(usize, usize)> {
        d.turns()
            .enumerate()
            .map(|(t, (_, a))| (t, self.assistant_slices(a).len()))
            .filter(|&(_, m)| m >= min_slices)
            .collect()
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        id: String,
        category: Category,
        sources: &[&SourceDialogue],
        rng: &mut R,
    ) -> Result<DuplexDialogue, ForgeError> {
        let single = || match sources {
            [d] => Ok(*d),
            _ => Err(ForgeError::CountOutOfRange {
                category,
                min: 1,
                max: 1,
                got: sources.len(),
            }),
        };
        match category {
            Category::Basic => self.basic(id, single()?, rng),
            Category::TopicInterweaving => self.topic_interweaving(id, sources, rng),
            Category::GenerationTermination => self.termination(id, single()?, rng),
            Category::Regeneration => self.regeneration(id, single()?, rng),
            Category::DialogueReset => self.dialogue_reset(id, sources, rng),
            Category::BackOnTopic => self.back_on_topic(id, single()?, rng),
        }
    }

    pub fn basic<R: Rng + ?Sized>(
        &self,
        id: String,
        d: &SourceDialogue,
        rng: &mut R,
    ) -> Result<DuplexDialogue, ForgeError> {
        self.finish(id, &[d], rng.random(), Injection::Basic)
    }

    pub fn topic_interweaving<R: Rng + ?Sized>(
        &self,
        id: String,
        ds: &[&SourceDialogue],
        rng: &mut R,
    ) -> Result<DuplexDialogue, ForgeError> {
        if !(INTERWEAVE_MIN..=INTERWEAVE_MAX).contains(&ds.len()) {
            return Err(ForgeError::CountOutOfRange {
                category: Category::TopicInterweaving,
                min: INTERWEAVE_MIN,
                max: INTERWEAVE_MAX,
                got: ds.len(),
            });
        }
        // A shuffled multiset of source indices is a uniform interleaving.
        let mut turn_order: Vec<usize> = ds
            .iter()
            .enumerate()
            .flat_map(|(i, d)| std::iter::repeat_n(i, d.turn_count()))
            .collect();
        turn_order.shuffle(rng);
        self.finish(
            id,
            ds,
            rng.random(),
            Injection::TopicInterweaving { turn_order },
        )
    }

    pub fn termination<R: Rng + ?Sized>(
        &self,
        id: String,
        d: &SourceDialogue,
        rng: &mut R,
    ) -> Result<DuplexDialogue, ForgeError> {
        let candidates: Vec<_> = self
            .cuttable(d, 2)
            .into_iter()
            .filter(|&(t, _)| t + 1 < d.turn_count())
            .collect();
        let &(turn, m) = candidates.choose(rng).ok_or_else(|| ForgeError::TooShort {
            id: d.id().to_owned(),
            reason: "no multi-slice response followed by another user message",
        })?;
        let keep = rng.random_range(1..m);
        let transition = rng.random_range(0..self.bank.termination.len());
        let next_user = d.turn(turn + 1).expect("candidate has a next turn").0;
        let inserted = self
            .rewriter
            .fuse(&self.bank.termination[transition], next_user)?;
        self.finish(
            id,
            &[d],
            rng.random(),
            Injection::GenerationTermination {
                turn,
                keep,
                transition,
                inserted,
            },
        )
    }

    pub fn regeneration<R: Rng + ?Sized>(
        &self,
        id: String,
        d: &SourceDialogue,
        rng: &mut R,
    ) -> Result<DuplexDialogue, ForgeError> {
        let turn = rng.random_range(0..d.turn_count());
        let (user, assistant) = d.turn(turn).expect("turn in range");
        let slices = self.assistant_slices(assistant);
        let keep = rng.random_range(1..=slices.len());
        let transition = rng.random_range(0..self.bank.regeneration.len());
        let inserted = self
            .rewriter
            .fuse(&self.bank.regeneration[transition], user)?;
        let mut history: Vec<Message> = d.messages()[..2 * turn + 1].to_vec();
        history.push(Message {
            role: Role::Assistant,
            text: reassemble(&slices[..keep]),
        });
        let response = self.annotator.regenerate(&history, &inserted)?;
        self.finish(
            id,
            &[d],
            rng.random(),
            Injection::Regeneration {
                turn,
                keep,
                transition,
                inserted,
                response,
            },
        )
    }

    pub fn dialogue_reset<R: Rng + ?Sized>(
        &self,
        id: String,
        ds: &[&SourceDialogue],
        rng: &mut R,
    ) -> Result<DuplexDialogue, ForgeError> {
        if ds.len() != RESET_DIALOGUES {
            return Err(ForgeError::CountOutOfRange {
                category: Category::DialogueReset,
                min: RESET_DIALOGUES,
                max: RESET_DIALOGUES,
                got: ds.len(),
            });
        }
        let mut cuts = Vec::with_capacity(RESET_DIALOGUES - 1);
        for d in &ds[..RESET_DIALOGUES - 1] {
            let &(turn, m) =
                self.cuttable(d, 2)
                    .choose(rng)
                    .ok_or_else(|| ForgeError::TooShort {
                        id: d.id().to_owned(),
                        reason: "no multi-slice response to truncate",
                    })?;
            cuts.push(Cut {
                turn,
                keep: rng.random_range(1..m),
            });
        }
        let mut transitions = Vec::with_capacity(RESET_DIALOGUES - 1);
        let mut inserted = Vec::with_capacity(RESET_DIALOGUES - 1);
        for d in &ds[1..] {
            let tr = rng.random_range(0..self.bank.reset.len());
            let first = d.turn(0).expect("source has a turn").0;
            let text = &self.bank.reset[tr];
            // The empty transition skips the rewriter entirely.
            inserted.push(if text.is_empty() {
                first.to_owned()
            } else {
                self.rewriter.fuse(text, first)?
            });
            transitions.push(tr);
        }
        self.finish(
            id,
            ds,
            rng.random(),
            Injection::DialogueReset {
                cuts,
                transitions,
                inserted,
            },
        )
    }

    pub fn back_on_topic<R: Rng + ?Sized>(
        &self,
        id: String,
        d: &SourceDialogue,
        rng: &mut R,
    ) -> Result<DuplexDialogue, ForgeError> {
        let &(turn, m) = self
            .cuttable(d, 3)
            .choose(rng)
            .ok_or_else(|| ForgeError::TooShort {
                id: d.id().to_owned(),
                reason: "no response of three or more slices",
            })?;
        let keep = rng.random_range(1..m);
        let slices = self.assistant_slices(d.turn(turn).expect("turn in range").1);
        let spoken = reassemble(&slices[..keep]);
        let remainder = reassemble(&slices[keep..]);
        let ij = self.annotator.interject(&spoken, &remainder)?;
        self.finish(
            id,
            &[d],
            rng.random(),
            Injection::BackOnTopic {
                turn,
                keep,
                question: ij.question,
                answer: ij.answer,
                remainder,
            },
        )
    }
}

struct Builder<'a> {
    pairs: Vec<SlicePair>,
    rng: ChaCha8Rng,
    slicer: &'a SlicerConfig,
    tok: &'a dyn Tokenizer,
}

impl Builder<'_> {
    fn push(&mut self, input: Slice, output: Slice, terminal: bool) {
        let i = self.pairs.len() as u64;
        self.pairs.push(
            SlicePair::new(i, input, output, terminal)
                .expect("roles and terminal flag are consistent"),
        );
    }

    fn user(&mut self, text: &str) {
        for s in split_user_message_with(text, self.slicer, &mut self.rng) {
            self.push(s, Slice::idle(Role::Assistant), false);
        }
    }

    fn assistant(&mut self, slices: &[Slice], terminal: bool) {
        let n = slices.len();
        for (i, s) in slices.iter().enumerate() {
            self.push(Slice::idle(Role::User), s.clone(), terminal && i + 1 == n);
        }
    }

    fn split(&self, text: &str) -> Vec<Slice> {
        split_assistant_message(text, self.tok, self.slicer)
    }

    fn turn(&mut self, user: &str, assistant: &str) {
        self.user(user);
        let s = self.split(assistant);
        self.assistant(&s, true);
    }

    /// User message then the first `keep` response slices; terminal only if
    /// nothing was cut.
    fn cut_turn(
        &mut self,
        user: &str,
        assistant: &str,
        keep: usize,
    ) -> Result<Vec<Slice>, ForgeError> {
        let s = self.split(assistant);
        if keep == 0 || keep > s.len() {
            return Err(ForgeError::BadMeta(format!(
                "keep {keep} outside 1..={}",
                s.len()
            )));
        }
        self.user(user);
        self.assistant(&s[..keep], keep == s.len());
        Ok(s)
    }
}

fn turn_of(d: &SourceDialogue, t: usize) -> Result<(&str, &str), ForgeError> {
    d.turn(t)
        .ok_or_else(|| ForgeError::BadMeta(format!("dialogue {} has no turn {t}", d.id())))
}

/// Builds the pairs described by `meta` from `sources`, which must be the
/// dialogues `meta.source_ids` names, in order.
pub fn realize(
    id: String,
    meta: InjectionMeta,
    sources: &[&SourceDialogue],
    slicer: &SlicerConfig,
    tok: &dyn Tokenizer,
) -> Result<DuplexDialogue, ForgeError> {
    let got: Vec<String> = sources.iter().map(|d| d.id().to_owned()).collect();
    if got != meta.source_ids {
        return Err(ForgeError::SourceMismatch {
            expected: meta.source_ids.clone(),
            got,
        });
    }
    let mut b = Builder {
        pairs: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(meta.slice_seed),
        slicer,
        tok,
    };
    let one = || match sources {
        [d] => Ok(*d),
        _ => Err(ForgeError::BadMeta(format!(
            "expected one source, got {}",
            sources.len()
        ))),
    };
    match &meta.injection {
        Injection::Basic => {
            for (u, a) in one()?.turns() {
                b.turn(u, a);
            }
        }
        Injection::TopicInterweaving { turn_order } => {
            let mut next = vec![0usize; sources.len()];
            for &src in turn_order {
                let d = sources
                    .get(src)
                    .ok_or_else(|| ForgeError::BadMeta(format!("source index {src}")))?;
                let (u, a) = turn_of(d, next[src])?;
                next[src] += 1;
                b.turn(u, a);
            }
            if next.iter().zip(sources).any(|(&n, d)| n != d.turn_count()) {
                return Err(ForgeError::BadMeta(
                    "turn order does not cover every turn once".into(),
                ));
            }
        }
        Injection::GenerationTermination {
            turn,
            keep,
            inserted,
            ..
        } => {
            let d = one()?;
            for t in 0..*turn {
                let (u, a) = turn_of(d, t)?;
                b.turn(u, a);
            }
            let (u, a) = turn_of(d, *turn)?;
            if b.cut_turn(u, a, *keep)?.len() == *keep {
                return Err(ForgeError::BadMeta(
                    "termination must cut mid-response".into(),
                ));
            }
            let (_, next_a) = turn_of(d, turn + 1)?;
            b.turn(inserted, next_a);
            for t in turn + 2..d.turn_count() {
                let (u, a) = turn_of(d, t)?;
                b.turn(u, a);
            }
        }
        Injection::Regeneration {
            turn,
            keep,
            inserted,
            response,
            ..
        } => {
            let d = one()?;
            for t in 0..*turn {
                let (u, a) = turn_of(d, t)?;
                b.turn(u, a);
            }
            let (u, a) = turn_of(d, *turn)?;
            b.cut_turn(u, a, *keep)?;
            b.turn(inserted, response);
        }
        Injection::DialogueReset {
            cuts,
            inserted,
            transitions,
        } => {
            let n = sources.len();
            if n != RESET_DIALOGUES
                || cuts.len() != n - 1
                || inserted.len() != n - 1
                || transitions.len() != n - 1
            {
                return Err(ForgeError::BadMeta(
                    "reset needs five sources and four cuts".into(),
                ));
            }
            for (j, d) in sources.iter().enumerate() {
                let end = cuts.get(j).map_or(d.turn_count(), |c| c.turn);
                for t in 0..end {
                    let (u, a) = turn_of(d, t)?;
                    let u = if j > 0 && t == 0 {
                        inserted[j - 1].as_str()
                    } else {
                        u
                    };
                    b.turn(u, a);
                }
                if let Some(c) = cuts.get(j) {
                    let (u, a) = turn_of(d, c.turn)?;
                    let u = if j > 0 && c.turn == 0 {
                        inserted[j - 1].as_str()
                    } else {
                        u
                    };
                    if b.cut_turn(u, a, c.keep)?.len() == c.keep {
                        return Err(ForgeError::BadMeta("reset must cut mid-response".into()));
                    }
                }
            }
        }
        Injection::BackOnTopic {
            turn,
            keep,
            question,
            answer,
            remainder,
        } => {
            let d = one()?;
            for t in 0..*turn {
                let (u, a) = turn_of(d, t)?;
                b.turn(u, a);
            }
            let (u, a) = turn_of(d, *turn)?;
            let full = b.cut_turn(u, a, *keep)?;
            if full.len() == *keep {
                return Err(ForgeError::BadMeta(
                    "interruption must fall mid-response".into(),
                ));
            }
            if reassemble(&full[*keep..]) != *remainder {
                return Err(ForgeError::BadMeta(
                    "recorded remainder differs from source".into(),
                ));
            }
            b.user(question);
            let mut tail = b.split(answer);
            tail.extend_from_slice(&full[*keep..]);
            b.assistant(&tail, true);
            for t in turn + 1..d.turn_count() {
                let (u, a) = turn_of(d, t)?;
                b.turn(u, a);
            }
        }
    }
    Ok(DuplexDialogue {
        id,
        category: meta.injection.category(),
        pairs: b.pairs,
        injection_meta: meta,
    })
}
