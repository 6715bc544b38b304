use rand::seq::SliceRandom;
use rand::Rng;

use super::{Example, Vocab, PAD};
use crate::error::{AenError, Result};
use crate::model::{AenConfig, ExampleInputs};

/// Index-encoded, right-padded examples. Row widths are the longest real
/// lengths in the batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub context_ids: Vec<Vec<usize>>,
    pub target_ids: Vec<Vec<usize>>,
    pub context_mask: Vec<Vec<bool>>,
    pub target_mask: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self, i: usize) -> ExampleInputs<'_> {
        ExampleInputs {
            context_ids: &self.context_ids[i],
            target_ids: &self.target_ids[i],
            context_mask: &self.context_mask[i],
            target_mask: &self.target_mask[i],
        }
    }

    /// Builds a batch from already-truncated examples.
    pub fn encode(examples: &[&Example], vocab: &Vocab) -> Result<Batch> {
        if examples.is_empty() {
            return Err(AenError::contract("empty batch"));
        }
        let n_max = examples.iter().map(|e| e.context_tokens.len()).max().unwrap_or(0);
        let m_max = examples.iter().map(|e| e.target_tokens.len()).max().unwrap_or(0);
        let pad_row = |tokens: &[String], width: usize| {
            let mut ids: Vec<usize> = tokens.iter().map(|t| vocab.encode(t)).collect();
            ids.resize(width, PAD);
            let mask = ids.iter().map(|&i| i != PAD).collect::<Vec<_>>();
            (ids, mask)
        };
        let mut batch = Batch {
            context_ids: Vec::with_capacity(examples.len()),
            target_ids: Vec::with_capacity(examples.len()),
            context_mask: Vec::with_capacity(examples.len()),
            target_mask: Vec::with_capacity(examples.len()),
            labels: Vec::with_capacity(examples.len()),
        };
        for e in examples {
            let (c, cm) = pad_row(&e.context_tokens, n_max);
            let (t, tm) = pad_row(&e.target_tokens, m_max);
            if !cm.iter().any(|&m| m) || !tm.iter().any(|&m| m) {
                return Err(AenError::Degenerate("batch row"));
            }
            batch.context_ids.push(c);
            batch.context_mask.push(cm);
            batch.target_ids.push(t);
            batch.target_mask.push(tm);
            batch.labels.push(e.label.index());
        }
        Ok(batch)
    }
}

/// Clips an example to the configured lengths.
///
/// The target keeps its leftmost `max_target` tokens; the context keeps a
/// `max_context` window centred on the (clipped) target. Returns `None` when
/// nothing of the target survives.
pub fn truncate_example(e: &Example, max_context: usize, max_target: usize) -> Option<Example> {
    let (start, end) = e.target_span;
    let end = end.min(start + max_target);
    let len = e.context_tokens.len();
    let (lo, hi) = if len <= max_context {
        (0, len)
    } else {
        let span = end - start;
        let slack = max_context.saturating_sub(span);
        let lo = start.saturating_sub(slack / 2).min(len - max_context);
        (lo, lo + max_context)
    };
    let (new_start, new_end) = (start.max(lo), end.min(hi));
    if new_start >= new_end {
        return None;
    }
    Some(Example {
        context_tokens: e.context_tokens[lo..hi].to_vec(),
        target_tokens: e.context_tokens[new_start..new_end].to_vec(),
        target_span: (new_start - lo, new_end - lo),
        label: e.label,
    })
}

#[derive(Clone, Debug, Default)]
pub struct BatchSet {
    pub batches: Vec<Batch>,
    /// Examples dropped because truncation removed their target.
    pub skipped: usize,
}

/// Truncates, optionally shuffles, and groups examples into padded batches.
pub fn make_batches<R: Rng + ?Sized>(
    examples: &[Example],
    vocab: &Vocab,
    config: &AenConfig,
    batch_size: usize,
    shuffle: Option<&mut R>,
) -> Result<BatchSet> {
    if batch_size == 0 {
        return Err(AenError::Config("batch_size must be at least 1".into()));
    }
    let mut kept = Vec::with_capacity(examples.len());
    let mut skipped = 0;
    for e in examples {
        match truncate_example(e, config.max_context_len, config.max_target_len) {
            Some(t) => kept.push(t),
            None => {
                skipped += 1;
                log::warn!("skipping example whose target was truncated away: {:?}", e.target_tokens);
            }
        }
    }
    let mut order: Vec<usize> = (0..kept.len()).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    let batches = order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&Example> = chunk.iter().map(|&i| &kept[i]).collect();
            Batch::encode(&refs, vocab)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BatchSet { batches, skipped })
}
