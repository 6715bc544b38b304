//! Corpus ingestion, vocabulary, pretrained vectors and batching.

mod batch;
mod corpus;
mod glove;
mod vocab;

use std::fmt;
use std::str::FromStr;

pub use batch::{make_batches, truncate_example, Batch, BatchSet};
pub use corpus::{class_counts, parse_corpus, parse_corpus_str, tokenize, ClassCounts};
pub use glove::{load_glove, load_glove_from, GloveEmbedding, OOV_RANGE};
pub use vocab::{build_vocab, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use crate::error::{AenError, Result};

/// Sentiment class. The integer order is part of the checkpoint format.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Negative, Polarity::Neutral, Polarity::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Polarity {
    type Err = String;

    /// Parses the corpus encoding `-1`, `0`, `1`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "-1" => Ok(Polarity::Negative),
            "0" => Ok(Polarity::Neutral),
            "1" => Ok(Polarity::Positive),
            other => Err(format!("polarity must be -1, 0 or 1, got {other:?}")),
        }
    }
}

/// A sentence, the target phrase inside it, and the sentiment towards the target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub context_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    /// Half-open token range of the target inside the context.
    pub target_span: (usize, usize),
    pub label: Polarity,
}

impl Example {
    /// Builds an example, checking that the target occupies `target_span` of the context.
    pub fn new(
        context_tokens: Vec<String>,
        target_tokens: Vec<String>,
        target_span: (usize, usize),
        label: Polarity,
    ) -> Result<Self> {
        let (start, end) = target_span;
        if context_tokens.is_empty() || target_tokens.is_empty() {
            return Err(AenError::contract("context and target must be nonempty"));
        }
        if start > end || end > context_tokens.len() || context_tokens[start..end] != target_tokens[..] {
            return Err(AenError::contract(format!(
                "target {target_tokens:?} is not the context span {start}..{end}"
            )));
        }
        Ok(Example {
            context_tokens,
            target_tokens,
            target_span,
            label,
        })
    }

    /// Builds an example from raw text, locating the target's first occurrence.
    pub fn from_text(context: &str, target: &str, label: Polarity) -> Result<Self> {
        let context_tokens = tokenize(context);
        let target_tokens = tokenize(target);
        if target_tokens.is_empty() {
            return Err(AenError::contract("empty target"));
        }
        let start = context_tokens
            .windows(target_tokens.len())
            .position(|w| w == &target_tokens[..])
            .ok_or_else(|| AenError::contract(format!("target {target:?} does not occur in the context")))?;
        let end = start + target_tokens.len();
        Example::new(context_tokens, target_tokens, (start, end), label)
    }
}
