use std::collections::HashMap;

use super::Example;
use crate::error::{AenError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token to index map with PAD at 0 and UNK at 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Rebuilds a vocabulary from its token list (index order), e.g. from a checkpoint.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(AenError::Format("vocabulary must start with the PAD and UNK tokens".into()));
        }
        let mut v = Vocab {
            tokens: Vec::with_capacity(tokens.len()),
            index: HashMap::with_capacity(tokens.len()),
        };
        for t in tokens {
            if v.index.contains_key(&t) {
                return Err(AenError::Format(format!("duplicate vocabulary token {t:?}")));
            }
            v.insert(&t);
        }
        Ok(v)
    }

    /// Adds `token` if unseen and returns its index.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to UNK.
    pub fn encode(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Vocabulary over the context tokens of `examples`, in first-occurrence order.
pub fn build_vocab(examples: &[Example]) -> Vocab {
    let mut vocab = Vocab::new();
    for e in examples {
        for t in e.context_tokens.iter().chain(&e.target_tokens) {
            vocab.insert(t);
        }
    }
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_corpus_str, Polarity};

    #[test]
    fn reserved_indices_and_first_occurrence_order() {
        let e = Example::new(
            vec!["a".into(), "b".into(), "a".into()],
            vec!["b".into()],
            (1, 2),
            Polarity::Positive,
        )
        .unwrap();
        let v = build_vocab(&[e]);
        assert_eq!(v.tokens(), &[PAD_TOKEN, UNK_TOKEN, "a", "b"]);
        assert_eq!(v.encode("a"), 2);
        assert_eq!(v.encode("b"), 3);
        assert_eq!(v.encode("zzz"), UNK);
    }

    #[test]
    fn construction_is_deterministic() {
        let text = "the $T$ is great\nfood\n1\nbut the $T$ was rude\nwaiter\n-1\n";
        let ex = parse_corpus_str(text, "mem").unwrap();
        assert_eq!(build_vocab(&ex), build_vocab(&ex));
        let v = build_vocab(&ex);
        assert_eq!(Vocab::from_tokens(v.tokens().iter().cloned()).unwrap(), v);
        // contiguous indices
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.get(t), Some(i));
        }
    }

    #[test]
    fn from_tokens_checks_reserved_and_duplicates() {
        assert!(Vocab::from_tokens(["a", "b"]).is_err());
        assert!(Vocab::from_tokens([PAD_TOKEN, UNK_TOKEN, "x", "x"]).is_err());
    }
}
