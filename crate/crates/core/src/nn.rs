//! Network building blocks: MLP-scored attention, the multi-head wrapper,
//! the point-wise (kernel size 1) feed-forward transform, embedding lookup
//! and inverted dropout.
//!
//! Each block has a tape form (`*_on`) used for training and a plain form
//! that evaluates on a throwaway tape.

use rand::Rng;

use crate::error::{AenError, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Uniform Glorot sample for a `[fan_in, fan_out]` weight, stored with `shape`.
pub fn glorot<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound))).with_grad()
}

fn matrix<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    glorot(&[rows, cols], rows, cols, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MhaParams<T> {
    /// Key projection, `[d_k_in, d_hid]`.
    pub w_k: Tensor<T>,
    /// Query projection, `[d_q_in, d_hid]`.
    pub w_q: Tensor<T>,
    /// Alignment weights of length `2 * d_head`: one per head, or a single
    /// vector shared by all heads.
    pub w_att: Vec<Tensor<T>>,
    /// Output projection, `[d_hid, d_hid]`.
    pub w_mh: Tensor<T>,
    pub n_head: usize,
}

impl<T: Scalar> MhaParams<T> {
    pub fn glorot<R: Rng + ?Sized>(
        d_k_in: usize,
        d_q_in: usize,
        d_hid: usize,
        n_head: usize,
        shared_att: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if n_head == 0 || !d_hid.is_multiple_of(n_head) {
            return Err(AenError::Config(format!(
                "d_hid {d_hid} is not divisible by n_head {n_head}"
            )));
        }
        let d_head = d_hid / n_head;
        let w_k = matrix(d_k_in, d_hid, rng);
        let w_q = matrix(d_q_in, d_hid, rng);
        let n_att = if shared_att { 1 } else { n_head };
        let w_att = (0..n_att).map(|_| glorot(&[2 * d_head], 2 * d_head, 1, rng)).collect();
        let w_mh = matrix(d_hid, d_hid, rng);
        Ok(MhaParams { w_k, w_q, w_att, w_mh, n_head })
    }

    pub fn d_hid(&self) -> usize {
        self.w_mh.shape()[0]
    }

    pub fn d_head(&self) -> usize {
        self.d_hid() / self.n_head
    }

    pub fn validate(&self) -> Result<()> {
        let d_hid = self.w_k.last_extent();
        let ok = self.n_head > 0
            && d_hid.is_multiple_of(self.n_head)
            && self.w_k.rank() == 2
            && self.w_q.rank() == 2
            && self.w_q.last_extent() == d_hid
            && self.w_mh.shape() == [d_hid, d_hid]
            && (self.w_att.len() == 1 || self.w_att.len() == self.n_head)
            && self.w_att.iter().all(|w| w.shape() == [2 * d_hid / self.n_head]);
        if ok {
            Ok(())
        } else {
            Err(AenError::Integrity(format!(
                "inconsistent attention block: w_k {:?}, w_q {:?}, w_mh {:?}, {} alignment vectors, {} heads",
                self.w_k.shape(),
                self.w_q.shape(),
                self.w_mh.shape(),
                self.w_att.len(),
                self.n_head
            )))
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            (format!("{prefix}.w_k"), &self.w_k),
            (format!("{prefix}.w_q"), &self.w_q),
        ];
        out.extend(self.w_att.iter().enumerate().map(|(h, w)| (format!("{prefix}.w_att.{h}"), w)));
        out.push((format!("{prefix}.w_mh"), &self.w_mh));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            (format!("{prefix}.w_k"), &mut self.w_k),
            (format!("{prefix}.w_q"), &mut self.w_q),
        ];
        out.extend(
            self.w_att
                .iter_mut()
                .enumerate()
                .map(|(h, w)| (format!("{prefix}.w_att.{h}"), w)),
        );
        out.push((format!("{prefix}.w_mh"), &mut self.w_mh));
        out
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundMha {
        BoundMha {
            w_k: tape.param(&self.w_k),
            w_q: tape.param(&self.w_q),
            w_att: self.w_att.iter().map(|w| tape.param(w)).collect(),
            w_mh: tape.param(&self.w_mh),
            n_head: self.n_head,
            d_head: self.d_head(),
        }
    }
}

/// Tape handles for one attention block.
#[derive(Clone, Debug)]
pub struct BoundMha {
    pub w_k: Var,
    pub w_q: Var,
    pub w_att: Vec<Var>,
    pub w_mh: Var,
    pub n_head: usize,
    pub d_head: usize,
}

impl BoundMha {
    fn w_att_for(&self, head: usize) -> Var {
        if self.w_att.len() == 1 {
            self.w_att[0]
        } else {
            self.w_att[head]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PctParams<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Scalar> PctParams<T> {
    pub fn glorot<R: Rng + ?Sized>(d_hid: usize, rng: &mut R) -> Self {
        PctParams {
            w1: matrix(d_hid, d_hid, rng),
            b1: Tensor::zeros(&[d_hid]).with_grad(),
            w2: matrix(d_hid, d_hid, rng),
            b2: Tensor::zeros(&[d_hid]).with_grad(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w1.shape()[0];
        let ok = self.w1.shape() == [d, d]
            && self.w2.shape() == [d, d]
            && self.b1.shape() == [d]
            && self.b2.shape() == [d];
        if ok {
            Ok(())
        } else {
            Err(AenError::Integrity(format!(
                "inconsistent point-wise block: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape()
            )))
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{prefix}.w1"), &self.w1),
            (format!("{prefix}.b1"), &self.b1),
            (format!("{prefix}.w2"), &self.w2),
            (format!("{prefix}.b2"), &self.b2),
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (format!("{prefix}.w1"), &mut self.w1),
            (format!("{prefix}.b1"), &mut self.b1),
            (format!("{prefix}.w2"), &mut self.w2),
            (format!("{prefix}.b2"), &mut self.b2),
        ]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> BoundPct {
        BoundPct {
            w1: tape.param(&self.w1),
            b1: tape.param(&self.b1),
            w2: tape.param(&self.w2),
            b2: tape.param(&self.b2),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundPct {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// One attention head: `softmax(tanh([k_i; q_j] · w_att)) · k` with masked keys.
///
/// `k: [n, d_head]`, `q: [m, d_head]`, `w_att: [2 * d_head]`, output `[m, d_head]`.
pub fn attention_head_on<T: Scalar>(
    tape: &mut Tape<T>,
    k: Var,
    q: Var,
    w_att: Var,
    key_mask: &[bool],
) -> Result<Var> {
    let (n, d_head) = (tape.value(k).shape()[0], tape.value(k).last_extent());
    if key_mask.len() != n {
        return Err(AenError::shape("attention_head", tape.value(k).shape(), &[key_mask.len()]));
    }
    if tape.value(q).last_extent() != d_head || tape.value(w_att).shape() != [2 * d_head] {
        return Err(AenError::shape(
            "attention_head",
            tape.value(q).shape(),
            tape.value(w_att).shape(),
        ));
    }
    if !key_mask.iter().any(|&m| m) {
        return Err(AenError::Degenerate("attention_head"));
    }
    // [k_i; q_j] · w = k_i · w[..d] + q_j · w[d..]
    let w_key = tape.narrow(w_att, 0, 0, d_head)?;
    let w_key = tape.reshape(w_key, vec![d_head, 1])?;
    let w_query = tape.narrow(w_att, 0, d_head, d_head)?;
    let w_query = tape.reshape(w_query, vec![d_head, 1])?;
    let key_scores = tape.matmul(k, w_key)?;
    let query_scores = tape.matmul(q, w_query)?;
    let scores = tape.outer_add(query_scores, key_scores);
    let scores = tape.tanh(scores);
    let weights = tape.softmax(scores, Some(key_mask))?;
    tape.matmul(weights, k)
}

pub fn attention_head<T: Scalar>(
    k_proj: &Tensor<T>,
    q_proj: &Tensor<T>,
    w_att: &Tensor<T>,
    key_mask: &[bool],
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let k = tape.constant(k_proj.clone());
    let q = tape.constant(q_proj.clone());
    let w = tape.constant(w_att.clone());
    let out = attention_head_on(&mut tape, k, q, w, key_mask)?;
    Ok(tape.value(out).clone())
}

/// Multi-head attention of queries `q: [m, d_q_in]` over keys `k: [n, d_k_in]`.
pub fn mha_on<T: Scalar>(
    tape: &mut Tape<T>,
    params: &BoundMha,
    k: Var,
    q: Var,
    key_mask: &[bool],
) -> Result<Var> {
    let k_proj = tape.matmul(k, params.w_k)?;
    let q_proj = tape.matmul(q, params.w_q)?;
    let mut heads = Vec::with_capacity(params.n_head);
    for h in 0..params.n_head {
        let k_h = tape.narrow(k_proj, 1, h * params.d_head, params.d_head)?;
        let q_h = tape.narrow(q_proj, 1, h * params.d_head, params.d_head)?;
        heads.push(attention_head_on(tape, k_h, q_h, params.w_att_for(h), key_mask)?);
    }
    let joined = tape.concat(&heads, 1)?;
    tape.matmul(joined, params.w_mh)
}

pub fn mha<T: Scalar>(params: &MhaParams<T>, k: &Tensor<T>, q: &Tensor<T>, key_mask: &[bool]) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let k = tape.constant(k.clone());
    let q = tape.constant(q.clone());
    let out = mha_on(&mut tape, &bound, k, q, key_mask)?;
    Ok(tape.value(out).clone())
}

/// `elu(h · w1 + b1) · w2 + b2`, applied to every row independently.
pub fn pct_on<T: Scalar>(tape: &mut Tape<T>, params: &BoundPct, h: Var) -> Result<Var> {
    let inner = tape.matmul(h, params.w1)?;
    let inner = tape.add_row(inner, params.b1)?;
    let inner = tape.elu(inner);
    let outer = tape.matmul(inner, params.w2)?;
    tape.add_row(outer, params.b2)
}

pub fn pct<T: Scalar>(params: &PctParams<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = tape.constant(h.clone());
    let out = pct_on(&mut tape, &bound, h)?;
    Ok(tape.value(out).clone())
}

/// Gathers rows of a frozen `[|V|, d_emb]` table.
pub fn embed<T: Scalar>(indices: &[usize], table: &Tensor<T>) -> Result<Tensor<T>> {
    if table.rank() != 2 {
        return Err(AenError::contract(format!("embedding table must be rank 2, got {:?}", table.shape())));
    }
    if indices.is_empty() {
        return Err(AenError::Degenerate("embed"));
    }
    let (vocab, d) = (table.shape()[0], table.shape()[1]);
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        if i >= vocab {
            return Err(AenError::Lookup { index: i, size: vocab });
        }
        data.extend_from_slice(table.row(i));
    }
    Tensor::new(vec![indices.len(), d], data)
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(AenError::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

fn dropout_factors<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

/// Inverted dropout; identity in eval mode or at rate 0.
pub fn dropout_on<T: Scalar, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let factors = dropout_factors(tape.value(x).len(), rate, rng);
    tape.mul_const(x, factors)
}

pub fn dropout<T: Scalar, R: Rng + ?Sized>(x: &Tensor<T>, rate: f64, training: bool, rng: &mut R) -> Result<Tensor<T>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let factors: Vec<T> = dropout_factors(x.len(), rate, rng);
    let data = x.data().iter().zip(&factors).map(|(&v, &f)| v * f).collect();
    Tensor::new(x.shape().to_vec(), data)
}
