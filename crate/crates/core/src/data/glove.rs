use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::{Vocab, PAD};
use crate::error::{AenError, Result};
use crate::tensor::{Scalar, Tensor};

/// Half-width of the uniform range used for tokens without a pretrained vector.
pub const OOV_RANGE: f64 = 0.25;

#[derive(Clone, Debug)]
pub struct GloveEmbedding<T> {
    /// `[|V|, d_emb]`, frozen.
    pub matrix: Tensor<T>,
    /// Vocabulary rows filled from the file (PAD and UNK never are).
    pub found: usize,
}

impl<T> GloveEmbedding<T> {
    /// Fraction of non-reserved vocabulary entries found in the file.
    pub fn coverage(&self, vocab: &Vocab) -> f64 {
        let eligible = vocab.len().saturating_sub(2);
        if eligible == 0 {
            0.0
        } else {
            self.found as f64 / eligible as f64
        }
    }
}

pub fn load_glove<T: Scalar, R: Rng + ?Sized>(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    d_emb: usize,
    rng: &mut R,
) -> Result<GloveEmbedding<T>> {
    let file = File::open(path.as_ref())?;
    load_glove_from(BufReader::new(file), vocab, d_emb, rng)
}

/// Reads `token v1 ... vd` lines.
///
/// Rows for vocabulary tokens are copied from the file. PAD stays zero;
/// every other row without a vector (UNK included) is drawn uniformly from
/// `±OOV_RANGE`. A line with more than `d_emb + 1` fields is taken to carry a
/// token with embedded spaces, which can never match a vocabulary entry.
pub fn load_glove_from<T: Scalar, B: BufRead, R: Rng + ?Sized>(
    reader: B,
    vocab: &Vocab,
    d_emb: usize,
    rng: &mut R,
) -> Result<GloveEmbedding<T>> {
    let mut rows: Vec<Option<Vec<T>>> = vec![None; vocab.len()];
    let mut found = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() < d_emb + 1 {
            return Err(AenError::Format(format!(
                "line {}: vector for {:?} has {} values, expected {d_emb}",
                n + 1,
                fields[0],
                fields.len() - 1
            )));
        }
        let split = fields.len() - d_emb;
        let token = fields[..split].join(" ");
        let Some(idx) = vocab.get(&token) else { continue };
        if idx == PAD || rows[idx].is_some() {
            continue;
        }
        let values = fields[split..]
            .iter()
            .map(|v| {
                v.parse::<f64>().map(T::of).map_err(|_| {
                    AenError::Format(format!("line {}: bad value {v:?} in vector for {token:?}", n + 1))
                })
            })
            .collect::<Result<Vec<T>>>()?;
        rows[idx] = Some(values);
        found += 1;
    }

    let mut data = Vec::with_capacity(vocab.len() * d_emb);
    for (i, row) in rows.into_iter().enumerate() {
        match row {
            Some(values) => data.extend(values),
            None if i == PAD => data.extend(std::iter::repeat_n(T::zero(), d_emb)),
            None => data.extend((0..d_emb).map(|_| T::of(rng.gen_range(-OOV_RANGE..=OOV_RANGE)))),
        }
    }
    Ok(GloveEmbedding {
        matrix: Tensor::new(vec![vocab.len(), d_emb], data)?,
        found,
    })
}
