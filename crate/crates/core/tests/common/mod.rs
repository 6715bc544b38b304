#![allow(dead_code)]

use std::path::PathBuf;

use aen::data::{build_vocab, load_glove_from, parse_corpus, Example, Vocab};
use aen::harness::TrainConfig;
use aen::model::{batch_loss_on, example_loss_on, forward_on, init_params, AenConfig, AenParams, ExampleInputs};
use aen::nn::MhaParams;
use aen::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sanity_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/sanity.txt")
}

pub fn sanity_examples() -> Vec<Example> {
    parse_corpus(sanity_path()).expect("fixture parses")
}

/// Vocabulary plus an embedding with every non-PAD row drawn at random.
pub fn sanity_setup(d_emb: usize, seed: u64) -> (Vec<Example>, Vocab, Tensor<f32>) {
    let examples = sanity_examples();
    let vocab = build_vocab(&examples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = load_glove_from(std::io::empty(), &vocab, d_emb, &mut rng).unwrap().matrix;
    (examples, vocab, emb)
}

pub fn sanity_train_config() -> TrainConfig {
    TrainConfig { seed: 7, ..TrainConfig::default() }
}

pub fn tiny_config() -> AenConfig {
    AenConfig { d_emb: 4, d_hid: 4, n_head: 2, ..AenConfig::default() }
}

/// One padded token-id example: `(context_ids, target_ids, context_mask, target_mask, label)`.
pub type Owned = (Vec<usize>, Vec<usize>, Vec<bool>, Vec<bool>, usize);

pub fn inputs(e: &Owned) -> ExampleInputs<'_> {
    ExampleInputs { context_ids: &e.0, target_ids: &e.1, context_mask: &e.2, target_mask: &e.3 }
}

/// Three examples with n = 5 context and m = 2 target slots; the last two are padded.
pub fn tiny_problem(seed: u64) -> (AenParams<f64>, AenConfig, Vec<Owned>) {
    let config = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab_size = 8;
    let mut params: AenParams<f64> = init_params(&config, vocab_size, &mut rng).unwrap();
    params.embedding = Tensor::from_fn(&[vocab_size, config.d_emb], |i| {
        if i < config.d_emb {
            0.0
        } else {
            rng.gen_range(-1.0..1.0)
        }
    });
    // biases start at zero; move them off zero so their paths are exercised
    for (name, t) in params.trainable_mut() {
        if name.contains(".b") || name == "b_o" {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    let batch = vec![
        (vec![2, 3, 4, 5, 6], vec![4, 5], vec![true; 5], vec![true; 2], 2),
        (vec![7, 3, 1, 0, 0], vec![3, 0], vec![true, true, true, false, false], vec![true, false], 0),
        (vec![6, 2, 5, 4, 0], vec![2, 5], vec![true, true, true, true, false], vec![true, true], 1),
    ];
    (params, config, batch)
}

/// Batch loss with dropout masks drawn from `dropout_seed` (or eval mode if `None`).
/// Returns the loss and the gradient of every trainable tensor, in `trainable()` order.
pub fn loss_and_grads(
    params: &AenParams<f64>,
    config: &AenConfig,
    batch: &[Owned],
    dropout_seed: Option<u64>,
) -> (f64, Vec<Option<Vec<f64>>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed.unwrap_or(0));
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut losses = Vec::new();
    for e in batch {
        let trace =
            forward_on(&mut tape, &bound, &params.embedding, config, inputs(e), dropout_seed.is_some(), &mut rng).unwrap();
        losses.push(example_loss_on(&mut tape, trace.probs, e.4, config).unwrap());
    }
    let loss = batch_loss_on(&mut tape, &bound, &losses, config).unwrap();
    let grads = tape.backward(loss).unwrap();
    let value = tape.value(loss).data()[0];
    (value, bound.vars().iter().map(|&v| grads.get(v).map(<[f64]>::to_vec)).collect())
}

pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    pub worst_name: String,
    pub missing: Vec<String>,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences with step `h` on every element of every trainable tensor.
pub fn grad_check(params: &AenParams<f64>, config: &AenConfig, batch: &[Owned], dropout_seed: Option<u64>, h: f64) -> GradReport {
    let (_, grads) = loss_and_grads(params, config, batch, dropout_seed);
    let names: Vec<String> = params.trainable().into_iter().map(|(n, _)| n).collect();
    let mut report = GradReport { checked: 0, worst: 0.0, worst_name: String::new(), missing: Vec::new() };
    let mut probe = params.clone();
    for (slot, name) in names.iter().enumerate() {
        let Some(g) = &grads[slot] else {
            report.missing.push(name.clone());
            continue;
        };
        let len = probe.trainable()[slot].1.len();
        for i in 0..len {
            let orig = probe.trainable()[slot].1.data()[i];
            probe.trainable_mut()[slot].1.data_mut()[i] = orig + h;
            let up = loss_and_grads(&probe, config, batch, dropout_seed).0;
            probe.trainable_mut()[slot].1.data_mut()[i] = orig - h;
            let down = loss_and_grads(&probe, config, batch, dropout_seed).0;
            probe.trainable_mut()[slot].1.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(g[i], numeric);
            report.checked += 1;
            if e > report.worst {
                report.worst = e;
                report.worst_name = format!("{name}[{i}]");
            }
        }
    }
    report
}

// Plain nested-loop evaluation of the model, sharing nothing with the library
// beyond the parameter values.

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor<f64>) -> Mat {
    let cols = t.shape()[1];
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|row| (0..b[0].len()).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

fn oracle_mha(p: &MhaParams<f64>, k: &Mat, q: &Mat, mask: &[bool]) -> Mat {
    let kp = mat_mul(k, &to_mat(&p.w_k));
    let qp = mat_mul(q, &to_mat(&p.w_q));
    let d_hid = p.w_mh.shape()[0];
    let dh = d_hid / p.n_head;
    let mut joined = vec![vec![0.0; d_hid]; q.len()];
    for h in 0..p.n_head {
        let w = p.w_att[if p.w_att.len() == 1 { 0 } else { h }].data();
        for (j, out) in joined.iter_mut().enumerate() {
            let mut scores = vec![f64::NEG_INFINITY; k.len()];
            for i in 0..k.len() {
                if mask[i] {
                    let mut s = 0.0;
                    for a in 0..dh {
                        s += kp[i][h * dh + a] * w[a] + qp[j][h * dh + a] * w[dh + a];
                    }
                    scores[i] = s.tanh();
                }
            }
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|&s| if s.is_finite() { (s - top).exp() } else { 0.0 }).collect();
            let z: f64 = ex.iter().sum();
            for a in 0..dh {
                out[h * dh + a] = (0..k.len()).map(|i| ex[i] / z * kp[i][h * dh + a]).sum();
            }
        }
    }
    mat_mul(&joined, &to_mat(&p.w_mh))
}

fn oracle_pct(p: &aen::nn::PctParams<f64>, x: &Mat) -> Mat {
    let mut inner = mat_mul(x, &to_mat(&p.w1));
    for row in &mut inner {
        for (v, b) in row.iter_mut().zip(p.b1.data()) {
            let z = *v + b;
            *v = if z >= 0.0 { z } else { z.exp() - 1.0 };
        }
    }
    let mut outer = mat_mul(&inner, &to_mat(&p.w2));
    for row in &mut outer {
        for (v, b) in row.iter_mut().zip(p.b2.data()) {
            *v += b;
        }
    }
    outer
}

fn oracle_mean(x: &Mat, mask: &[bool]) -> Vec<f64> {
    let n = mask.iter().filter(|&&m| m).count() as f64;
    (0..x[0].len())
        .map(|c| x.iter().zip(mask).filter(|(_, &m)| m).map(|(r, _)| r[c]).sum::<f64>() / n)
        .collect()
}

/// Eval-mode class probabilities.
pub fn oracle_probs(params: &AenParams<f64>, e: &Owned) -> Vec<f64> {
    let table = to_mat(&params.embedding);
    let e_c: Mat = e.0.iter().map(|&i| table[i].clone()).collect();
    let e_t: Mat = e.1.iter().map(|&i| table[i].clone()).collect();
    let h_c = oracle_pct(&params.pct_c, &oracle_mha(&params.intra, &e_c, &e_c, &e.2));
    let h_t = oracle_pct(&params.pct_t, &oracle_mha(&params.inter, &e_c, &e_t, &e.2));
    let h_tsc = oracle_mha(&params.tsc, &h_c, &h_t, &e.2);
    let mut o = oracle_mean(&h_c, &e.2);
    o.extend(oracle_mean(&h_t, &e.3));
    o.extend(oracle_mean(&h_tsc, &e.3));
    let logits: Vec<f64> = mat_mul(&vec![o], &to_mat(&params.w_o))[0]
        .iter()
        .zip(params.b_o.data())
        .map(|(x, b)| x + b)
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.iter().map(|x| x / z).collect()
}
