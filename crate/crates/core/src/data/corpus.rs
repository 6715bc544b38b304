use std::fs;
use std::path::Path;

use super::{Example, Polarity};
use crate::error::{AenError, Result};

const PLACEHOLDER: &str = "$T$";

/// Lowercases, splits on whitespace and separates ASCII punctuation into its own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars().flat_map(char::to_lowercase) {
            if c.is_ascii_punctuation() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_corpus_str(&text, &path.display().to_string())
}

/// Parses three-line records: sentence with `$T$` in place of the target,
/// target phrase, polarity in `{-1, 0, 1}`.
///
/// `source` only labels error messages.
pub fn parse_corpus_str(text: &str, source: &str) -> Result<Vec<Example>> {
    let err = |line: usize, msg: String| AenError::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if !lines.len().is_multiple_of(3) {
        return Err(err(
            lines.len(),
            format!("truncated record: {} lines is not a multiple of 3", lines.len()),
        ));
    }

    let mut examples = Vec::with_capacity(lines.len() / 3);
    for (r, record) in lines.chunks(3).enumerate() {
        let first = 3 * r + 1;
        let (sentence, target, polarity) = (record[0], record[1], record[2]);
        let label: Polarity = polarity.parse().map_err(|m| err(first + 2, m))?;
        let Some((left, right)) = sentence.split_once(PLACEHOLDER) else {
            return Err(err(first, format!("missing {PLACEHOLDER} placeholder")));
        };
        let target_tokens = tokenize(target);
        if target_tokens.is_empty() {
            return Err(err(first + 1, "empty target".into()));
        }
        let mut context_tokens = tokenize(left);
        let start = context_tokens.len();
        context_tokens.extend(target_tokens.iter().cloned());
        let end = context_tokens.len();
        // only the first placeholder stands for the target; later ones are literal text
        context_tokens.extend(tokenize(right));
        let example = Example::new(context_tokens, target_tokens, (start, end), label)
            .map_err(|e| err(first, e.to_string()))?;
        examples.push(example);
    }
    Ok(examples)
}

/// Per-class example counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub negative: usize,
    pub neutral: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.negative + self.neutral + self.positive
    }

    pub fn get(&self, p: Polarity) -> usize {
        match p {
            Polarity::Negative => self.negative,
            Polarity::Neutral => self.neutral,
            Polarity::Positive => self.positive,
        }
    }
}

pub fn class_counts(examples: &[Example]) -> ClassCounts {
    let mut c = ClassCounts::default();
    for e in examples {
        match e.label {
            Polarity::Negative => c.negative += 1,
            Polarity::Neutral => c.neutral += 1,
            Polarity::Positive => c.positive += 1,
        }
    }
    c
}
