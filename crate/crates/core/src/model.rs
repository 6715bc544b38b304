//! The full attentional encoder network: embedding, intra- and inter-attention,
//! point-wise transforms, target-specific attention, pooled output head.

use rand::Rng;

use crate::error::{AenError, Result};
use crate::loss;
use crate::nn::{self, BoundMha, BoundPct, MhaParams, PctParams};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AenConfig {
    pub d_emb: usize,
    pub d_hid: usize,
    pub n_head: usize,
    pub num_classes: usize,
    pub max_context_len: usize,
    pub max_target_len: usize,
    pub dropout_rate: f64,
    /// Label smoothing strength.
    pub epsilon: f64,
    /// L2 coefficient.
    pub lambda: f64,
    /// Use one alignment vector for all heads instead of one per head.
    pub shared_att_weights: bool,
}

impl Default for AenConfig {
    fn default() -> Self {
        AenConfig {
            d_emb: 300,
            d_hid: 300,
            n_head: 6,
            num_classes: 3,
            max_context_len: 80,
            max_target_len: 20,
            dropout_rate: 0.1,
            epsilon: 0.2,
            lambda: 1e-5,
            shared_att_weights: false,
        }
    }
}

impl AenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(AenError::Config(msg));
        if self.d_emb == 0 || self.d_hid == 0 || self.n_head == 0 {
            return fail("d_emb, d_hid and n_head must be positive".into());
        }
        if !self.d_hid.is_multiple_of(self.n_head) {
            return fail(format!("d_hid {} is not divisible by n_head {}", self.d_hid, self.n_head));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.max_context_len == 0 || self.max_target_len == 0 {
            return fail("maximum lengths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return fail(format!("epsilon {} outside [0, 1)", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be a nonnegative number", self.lambda));
        }
        Ok(())
    }
}

/// Trainable weights plus the frozen embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct AenParams<T> {
    pub intra: MhaParams<T>,
    pub inter: MhaParams<T>,
    pub tsc: MhaParams<T>,
    pub pct_c: PctParams<T>,
    pub pct_t: PctParams<T>,
    /// `[3 * d_hid, C]`.
    pub w_o: Tensor<T>,
    /// `[C]`.
    pub b_o: Tensor<T>,
    /// `[|V|, d_emb]`, never trained.
    pub embedding: Tensor<T>,
}

/// Glorot-initialized parameters. The embedding table starts at zero and is
/// filled by the caller (see [`crate::data::load_glove`]).
pub fn init_params<T: Scalar, R: Rng + ?Sized>(config: &AenConfig, vocab_size: usize, rng: &mut R) -> Result<AenParams<T>> {
    config.validate()?;
    if vocab_size < 2 {
        return Err(AenError::Config(format!(
            "vocabulary needs at least PAD and UNK, got {vocab_size} entries"
        )));
    }
    let (d_emb, d_hid, heads, shared) = (config.d_emb, config.d_hid, config.n_head, config.shared_att_weights);
    let intra = MhaParams::glorot(d_emb, d_emb, d_hid, heads, shared, rng)?;
    let inter = MhaParams::glorot(d_emb, d_emb, d_hid, heads, shared, rng)?;
    let pct_c = PctParams::glorot(d_hid, rng);
    let pct_t = PctParams::glorot(d_hid, rng);
    let tsc = MhaParams::glorot(d_hid, d_hid, d_hid, heads, shared, rng)?;
    let w_o = nn::glorot(&[3 * d_hid, config.num_classes], 3 * d_hid, config.num_classes, rng);
    let b_o = Tensor::zeros(&[config.num_classes]).with_grad();
    Ok(AenParams {
        intra,
        inter,
        tsc,
        pct_c,
        pct_t,
        w_o,
        b_o,
        embedding: Tensor::zeros(&[vocab_size, d_emb]),
    })
}

impl<T: Scalar> AenParams<T> {
    /// Trainable tensors in a fixed order; the embedding is excluded.
    pub fn trainable(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.intra.named("intra");
        out.extend(self.inter.named("inter"));
        out.extend(self.tsc.named("tsc"));
        out.extend(self.pct_c.named("pct_c"));
        out.extend(self.pct_t.named("pct_t"));
        out.push(("w_o".into(), &self.w_o));
        out.push(("b_o".into(), &self.b_o));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = self.intra.named_mut("intra");
        out.extend(self.inter.named_mut("inter"));
        out.extend(self.tsc.named_mut("tsc"));
        out.extend(self.pct_c.named_mut("pct_c"));
        out.extend(self.pct_t.named_mut("pct_t"));
        out.push(("w_o".into(), &mut self.w_o));
        out.push(("b_o".into(), &mut self.b_o));
        out
    }

    /// Every stored tensor, trainable ones first, then `embedding`.
    pub fn all_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.trainable();
        out.push(("embedding".into(), &self.embedding));
        out
    }

    /// Number of trainable elements.
    pub fn param_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Per-block element counts, in the same order as [`Self::trainable`].
    pub fn block_counts(&self) -> Vec<(&'static str, usize)> {
        let mha = |p: &MhaParams<T>| p.named("").iter().map(|(_, t)| t.len()).sum();
        let pct = |p: &PctParams<T>| p.named("").iter().map(|(_, t)| t.len()).sum();
        vec![
            ("intra_mha", mha(&self.intra)),
            ("inter_mha", mha(&self.inter)),
            ("target_specific_mha", mha(&self.tsc)),
            ("pct_context", pct(&self.pct_c)),
            ("pct_target", pct(&self.pct_t)),
            ("output", self.w_o.len() + self.b_o.len()),
        ]
    }

    /// `Σ θ²` over the trainable set.
    pub fn l2(&self) -> f64 {
        self.trainable()
            .iter()
            .map(|(_, t)| t.sum_squares().to_f64_lossy())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.trainable_mut() {
            t.zero_grad();
        }
    }

    pub fn cast<U: Scalar>(&self) -> AenParams<U> {
        let mha = |p: &MhaParams<T>| MhaParams {
            w_k: p.w_k.cast(),
            w_q: p.w_q.cast(),
            w_att: p.w_att.iter().map(Tensor::cast).collect(),
            w_mh: p.w_mh.cast(),
            n_head: p.n_head,
        };
        let pct = |p: &PctParams<T>| PctParams {
            w1: p.w1.cast(),
            b1: p.b1.cast(),
            w2: p.w2.cast(),
            b2: p.b2.cast(),
        };
        AenParams {
            intra: mha(&self.intra),
            inter: mha(&self.inter),
            tsc: mha(&self.tsc),
            pct_c: pct(&self.pct_c),
            pct_t: pct(&self.pct_t),
            w_o: self.w_o.cast(),
            b_o: self.b_o.cast(),
            embedding: self.embedding.cast(),
        }
    }

    /// Checks every shape against `config`.
    pub fn validate(&self, config: &AenConfig) -> Result<()> {
        let blocks = [
            (&self.intra, config.d_emb, config.d_emb),
            (&self.inter, config.d_emb, config.d_emb),
            (&self.tsc, config.d_hid, config.d_hid),
        ];
        for (p, dk, dq) in blocks {
            p.validate()?;
            let att_count = if config.shared_att_weights { 1 } else { config.n_head };
            if p.n_head != config.n_head
                || p.w_k.shape() != [dk, config.d_hid]
                || p.w_q.shape() != [dq, config.d_hid]
                || p.w_att.len() != att_count
            {
                return Err(AenError::Integrity(format!(
                    "attention block {:?}/{:?} with {} heads does not match config",
                    p.w_k.shape(),
                    p.w_q.shape(),
                    p.n_head
                )));
            }
        }
        for p in [&self.pct_c, &self.pct_t] {
            p.validate()?;
            if p.w1.shape() != [config.d_hid, config.d_hid] {
                return Err(AenError::Integrity(format!("point-wise block {:?} does not match config", p.w1.shape())));
            }
        }
        if self.w_o.shape() != [3 * config.d_hid, config.num_classes] || self.b_o.shape() != [config.num_classes] {
            return Err(AenError::Integrity(format!(
                "output head {:?} + {:?} does not match config",
                self.w_o.shape(),
                self.b_o.shape()
            )));
        }
        if self.embedding.rank() != 2 || self.embedding.shape()[1] != config.d_emb {
            return Err(AenError::Integrity(format!(
                "embedding {:?} does not match d_emb {}",
                self.embedding.shape(),
                config.d_emb
            )));
        }
        Ok(())
    }

    /// Records every trainable tensor on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundAen {
        BoundAen {
            intra: self.intra.bind(tape),
            inter: self.inter.bind(tape),
            tsc: self.tsc.bind(tape),
            pct_c: self.pct_c.bind(tape),
            pct_t: self.pct_t.bind(tape),
            w_o: tape.param(&self.w_o),
            b_o: tape.param(&self.b_o),
        }
    }
}

/// Tape handles for the trainable set, in [`AenParams::trainable`] order.
#[derive(Clone, Debug)]
pub struct BoundAen {
    pub intra: BoundMha,
    pub inter: BoundMha,
    pub tsc: BoundMha,
    pub pct_c: BoundPct,
    pub pct_t: BoundPct,
    pub w_o: Var,
    pub b_o: Var,
}

impl BoundAen {
    pub fn vars(&self) -> Vec<Var> {
        let mha = |b: &BoundMha| {
            let mut v = vec![b.w_k, b.w_q];
            v.extend(&b.w_att);
            v.push(b.w_mh);
            v
        };
        let pct = |b: &BoundPct| vec![b.w1, b.b1, b.w2, b.b2];
        let mut out = mha(&self.intra);
        out.extend(mha(&self.inter));
        out.extend(mha(&self.tsc));
        out.extend(pct(&self.pct_c));
        out.extend(pct(&self.pct_t));
        out.push(self.w_o);
        out.push(self.b_o);
        out
    }

    /// `Σ θ²` over the bound trainable set.
    pub fn l2_on<T: Scalar>(&self, tape: &mut Tape<T>) -> Result<Var> {
        let terms: Vec<Var> = self.vars().into_iter().map(|v| tape.sum_squares(v)).collect();
        tape.add_all(&terms)
    }
}

/// Index-encoded inputs for one example. Masks mark real (non-PAD) tokens.
#[derive(Clone, Copy, Debug)]
pub struct ExampleInputs<'a> {
    pub context_ids: &'a [usize],
    pub target_ids: &'a [usize],
    pub context_mask: &'a [bool],
    pub target_mask: &'a [bool],
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    pub c_intra: Tensor<T>,
    pub t_inter: Tensor<T>,
    pub h_c: Tensor<T>,
    pub h_t: Tensor<T>,
    pub h_tsc: Tensor<T>,
    pub o_tilde: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

/// Tape handles for the values in a [`ForwardTrace`].
#[derive(Clone, Copy, Debug)]
pub struct TapeTrace {
    pub c_intra: Var,
    pub t_inter: Var,
    pub h_c: Var,
    pub h_t: Var,
    pub h_tsc: Var,
    pub o_tilde: Var,
    pub logits: Var,
    pub probs: Var,
}

impl TapeTrace {
    pub fn materialize<T: Scalar>(&self, tape: &Tape<T>) -> ForwardTrace<T> {
        let v = |x: Var| tape.value(x).clone();
        ForwardTrace {
            c_intra: v(self.c_intra),
            t_inter: v(self.t_inter),
            h_c: v(self.h_c),
            h_t: v(self.h_t),
            h_tsc: v(self.h_tsc),
            o_tilde: v(self.o_tilde),
            logits: v(self.logits),
            probs: v(self.probs),
        }
    }
}

/// Records one example's forward pass on `tape`.
pub fn forward_on<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    params: &BoundAen,
    embedding: &Tensor<T>,
    config: &AenConfig,
    inputs: ExampleInputs<'_>,
    training: bool,
    rng: &mut R,
) -> Result<TapeTrace> {
    if inputs.context_ids.len() != inputs.context_mask.len() || inputs.target_ids.len() != inputs.target_mask.len() {
        return Err(AenError::shape("forward", &[inputs.context_ids.len(), inputs.target_ids.len()], &[
            inputs.context_mask.len(),
            inputs.target_mask.len(),
        ]));
    }
    if !inputs.context_mask.iter().any(|&m| m) || !inputs.target_mask.iter().any(|&m| m) {
        return Err(AenError::Degenerate("forward"));
    }
    let e_c = tape.constant(nn::embed(inputs.context_ids, embedding)?);
    let e_t = tape.constant(nn::embed(inputs.target_ids, embedding)?);
    let e_c = nn::dropout_on(tape, e_c, config.dropout_rate, training, rng)?;
    let e_t = nn::dropout_on(tape, e_t, config.dropout_rate, training, rng)?;

    let c_intra = nn::mha_on(tape, &params.intra, e_c, e_c, inputs.context_mask)?;
    let t_inter = nn::mha_on(tape, &params.inter, e_c, e_t, inputs.context_mask)?;
    let h_c = nn::pct_on(tape, &params.pct_c, c_intra)?;
    let h_t = nn::pct_on(tape, &params.pct_t, t_inter)?;
    let h_tsc = nn::mha_on(tape, &params.tsc, h_c, h_t, inputs.context_mask)?;

    let avg_c = tape.masked_mean(h_c, inputs.context_mask)?;
    let avg_t = tape.masked_mean(h_t, inputs.target_mask)?;
    let avg_tsc = tape.masked_mean(h_tsc, inputs.target_mask)?;
    let o_tilde = tape.concat(&[avg_c, avg_t, avg_tsc], 0)?;

    let dropped = nn::dropout_on(tape, o_tilde, config.dropout_rate, training, rng)?;
    let width = tape.value(dropped).len();
    let row = tape.reshape(dropped, vec![1, width])?;
    let logits = tape.matmul(row, params.w_o)?;
    let logits = tape.add_row(logits, params.b_o)?;
    let logits = tape.reshape(logits, vec![config.num_classes])?;
    let probs = tape.softmax(logits, None)?;
    Ok(TapeTrace {
        c_intra,
        t_inter,
        h_c,
        h_t,
        h_tsc,
        o_tilde,
        logits,
        probs,
    })
}

/// Forward pass on a private tape; parameters are not modified.
pub fn forward<T: Scalar, R: Rng + ?Sized>(
    params: &AenParams<T>,
    config: &AenConfig,
    inputs: ExampleInputs<'_>,
    training: bool,
    rng: &mut R,
) -> Result<ForwardTrace<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let trace = forward_on(&mut tape, &bound, &params.embedding, config, inputs, training, rng)?;
    Ok(trace.materialize(&tape))
}

/// Smoothed cross-entropy of one example's predicted distribution, on the tape.
pub fn example_loss_on<T: Scalar>(tape: &mut Tape<T>, probs: Var, label: usize, config: &AenConfig) -> Result<Var> {
    let target = loss::LabelDistribution::one_hot(label, config.num_classes)?;
    let smoothed = loss::smooth_labels(&target, config.epsilon, config.num_classes)?;
    let log_probs = tape.ln(probs);
    tape.dot_const(log_probs, smoothed.probs().iter().map(|&q| T::of(-q)).collect())
}

/// Mean smoothed cross-entropy over examples plus one `λ Σ θ²` term.
pub fn batch_loss_on<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundAen,
    example_losses: &[Var],
    config: &AenConfig,
) -> Result<Var> {
    let total = tape.add_all(example_losses)?;
    let mean = tape.scale(total, T::of(1.0 / example_losses.len() as f64));
    if config.lambda == 0.0 {
        return Ok(mean);
    }
    let l2 = params.l2_on(tape)?;
    let l2 = tape.scale(l2, T::of(config.lambda));
    tape.add(mean, l2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> AenConfig {
        AenConfig {
            d_emb: 4,
            d_hid: 4,
            n_head: 2,
            max_context_len: 5,
            max_target_len: 2,
            ..AenConfig::default()
        }
    }

    #[test]
    fn default_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: AenParams<f32> = init_params(&AenConfig::default(), 2, &mut rng).unwrap();
        let mha = 90_000 + 90_000 + 600 + 90_000;
        let pct = 2 * (90_000 + 300);
        assert_eq!(p.param_count(), 3 * mha + 2 * pct + 900 * 3 + 3);
        assert_eq!(p.param_count(), 1_175_703);
        let reported = 1.16e6;
        assert!((p.param_count() as f64 - reported).abs() / reported < 0.014);
    }

    #[test]
    fn tiny_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p: AenParams<f64> = init_params(&tiny_config(), 5, &mut rng).unwrap();
        // three blocks of 16 + 16 + 2*4 + 16, two of 16 + 4 + 16 + 4, head 12*3 + 3
        assert_eq!(p.param_count(), 3 * 56 + 2 * 40 + 39);
        assert_eq!(p.param_count(), 287);
        let blocks: usize = p.block_counts().iter().map(|(_, n)| n).sum();
        assert_eq!(blocks, 287);
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p: AenParams<f64> = init_params(&AenConfig::default(), 2, &mut rng).unwrap();
        let bound = (6.0f64 / 600.0).sqrt();
        assert!(p.pct_c.w1.data().iter().all(|v| v.abs() <= bound));
        for b in [&p.pct_c.b1, &p.pct_c.b2, &p.pct_t.b1, &p.pct_t.b2, &p.b_o] {
            assert!(b.data().iter().all(|&v| v == 0.0));
        }
        // mean of 90000 uniform(-a, a) draws has std a / sqrt(3 * 90000)
        let w = &p.intra.w_mh;
        let mean = w.sum() / w.len() as f64;
        let sigma = bound / (3.0 * w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, sigma {sigma}");
        assert!(!p.embedding.requires_grad());
        assert!(p.trainable().iter().all(|(_, t)| t.requires_grad()));
    }

    #[test]
    fn init_rejects_tiny_vocab_and_bad_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(init_params::<f32, _>(&AenConfig::default(), 1, &mut rng).is_err());
        let cfg = AenConfig { n_head: 7, ..AenConfig::default() };
        assert!(matches!(init_params::<f32, _>(&cfg, 10, &mut rng), Err(AenError::Config(_))));
    }

    #[test]
    fn degenerate_masks_are_rejected() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: AenParams<f64> = init_params(&cfg, 6, &mut rng).unwrap();
        let inputs = ExampleInputs {
            context_ids: &[2, 3],
            target_ids: &[0],
            context_mask: &[true, true],
            target_mask: &[false],
        };
        assert!(matches!(forward(&p, &cfg, inputs, false, &mut rng), Err(AenError::Degenerate(_))));
    }
}
