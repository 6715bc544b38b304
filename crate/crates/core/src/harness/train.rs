//! Training and evaluation loops.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::data::{make_batches, Batch, Example, Vocab};
use crate::error::{AenError, Result};
use crate::loss::argmax;
use crate::metrics::{accuracy, macro_f1};
use crate::model::{batch_loss_on, example_loss_on, forward_on, init_params, AenConfig, AenParams};
use crate::optim::Adam;
use crate::tensor::{Tape, Tensor};

/// Batch size used when evaluating.
pub const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    /// Everything except wall-clock time, which is never reproducible.
    pub fn same_trace(&self, other: &EpochMetrics) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.accuracy.to_bits() == other.accuracy.to_bits()
            && self.macro_f1.to_bits() == other.macro_f1.to_bits()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub predictions: Vec<usize>,
    pub gold: Vec<usize>,
}

/// Eval-mode predictions (argmax, lowest index on ties) and metrics over `examples`.
pub fn evaluate(params: &AenParams<f32>, config: &AenConfig, vocab: &Vocab, examples: &[Example]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(AenError::contract("evaluation over zero examples"));
    }
    let set = make_batches::<ChaCha8Rng>(examples, vocab, config, EVAL_BATCH, None)?;
    let mut predictions = Vec::with_capacity(examples.len());
    let mut gold = Vec::with_capacity(examples.len());
    // eval mode never draws from the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for batch in &set.batches {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        for i in 0..batch.len() {
            let trace = forward_on(&mut tape, &bound, &params.embedding, config, batch.inputs(i), false, &mut rng)?;
            predictions.push(argmax(tape.value(trace.probs).data()));
        }
        gold.extend_from_slice(&batch.labels);
    }
    if predictions.is_empty() {
        return Err(AenError::contract("every evaluation example was skipped"));
    }
    Ok(Evaluation {
        accuracy: accuracy(&predictions, &gold)?,
        macro_f1: macro_f1(&predictions, &gold, config.num_classes)?,
        predictions,
        gold,
    })
}

/// Owns the parameters, optimizer and random stream of one training run.
pub struct Trainer<'a> {
    config: TrainConfig,
    vocab: &'a Vocab,
    train: &'a [Example],
    params: AenParams<f32>,
    adam: Adam<f32>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    /// Initializes parameters from `config.seed` and installs the frozen embedding.
    pub fn new(config: TrainConfig, vocab: &'a Vocab, embedding: Tensor<f32>, train: &'a [Example]) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(AenError::contract("training split is empty"));
        }
        if embedding.shape() != [vocab.len(), config.model.d_emb] {
            return Err(AenError::shape("embedding", embedding.shape(), &[vocab.len(), config.model.d_emb]));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = init_params(&config.model, vocab.len(), &mut rng)?;
        let mut embedding = embedding;
        embedding.set_requires_grad(false);
        params.embedding = embedding;
        Ok(Trainer {
            adam: Adam::new(config.adam),
            config,
            vocab,
            train,
            params,
            rng,
            epoch: 0,
        })
    }

    pub fn params(&self) -> &AenParams<f32> {
        &self.params
    }

    pub fn into_params(self) -> AenParams<f32> {
        self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One shuffled pass over the training split; returns the mean example loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let model = &self.config.model;
        let set = make_batches(self.train, self.vocab, model, self.config.batch_size, Some(&mut self.rng))?;
        let mut weighted = 0.0;
        let mut seen = 0;
        for (b, batch) in set.batches.iter().enumerate() {
            let loss = self.step(batch).map_err(|e| match e {
                AenError::NonFiniteLoss { value, .. } => AenError::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: b,
                    value,
                },
                other => other,
            })?;
            weighted += loss * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            return Err(AenError::contract("every training example was skipped"));
        }
        Ok(weighted / seen as f64)
    }

    /// Forward, backward and one Adam update on a single batch.
    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        let model = &self.config.model;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let trace = forward_on(&mut tape, &bound, &self.params.embedding, model, batch.inputs(i), true, &mut self.rng)?;
            losses.push(example_loss_on(&mut tape, trace.probs, batch.labels[i], model)?);
        }
        let loss = batch_loss_on(&mut tape, &bound, &losses, model)?;
        let value = f64::from(tape.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(AenError::NonFiniteLoss { epoch: self.epoch, batch: 0, value });
        }
        let grads = tape.backward(loss)?;
        self.params.zero_grads();
        let vars = bound.vars();
        let mut tensors: Vec<&mut Tensor<f32>> = self.params.trainable_mut().into_iter().map(|(_, t)| t).collect();
        for (v, t) in vars.iter().zip(tensors.iter_mut()) {
            grads.accumulate_into(*v, t)?;
        }
        self.adam.step(&mut tensors)?;
        Ok(value)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best eval accuracy (earliest on ties).
    pub best: AenParams<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn best_metrics(&self) -> &EpochMetrics {
        &self.history[self.best_epoch - 1]
    }
}

/// Trains until `max_epochs` or until `patience` epochs pass without a new best eval accuracy.
pub fn train(
    config: &TrainConfig,
    vocab: &Vocab,
    embedding: Tensor<f32>,
    train_examples: &[Example],
    eval_examples: &[Example],
) -> Result<TrainOutcome> {
    if eval_examples.is_empty() {
        return Err(AenError::contract("evaluation split is empty"));
    }
    let mut trainer = Trainer::new(config.clone(), vocab, embedding, train_examples)?;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, AenParams<f32>)> = None;
    let mut stale = 0;
    for _ in 0..config.max_epochs {
        let started = Instant::now();
        let train_loss = trainer.run_epoch()?;
        let eval = evaluate(trainer.params(), &config.model, vocab, eval_examples)?;
        let metrics = EpochMetrics {
            epoch: trainer.epoch(),
            train_loss,
            accuracy: eval.accuracy,
            macro_f1: eval.macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} loss {:.4} acc {:.4} f1 {:.4} ({:.1}s)",
            metrics.epoch,
            metrics.train_loss,
            metrics.accuracy,
            metrics.macro_f1,
            metrics.seconds
        );
        history.push(metrics);

        if best.as_ref().is_none_or(|(acc, _, _)| eval.accuracy > *acc) {
            let mut snapshot = trainer.params().clone();
            snapshot.zero_grads();
            best = Some((eval.accuracy, trainer.epoch(), snapshot));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { best, best_epoch, history })
}
