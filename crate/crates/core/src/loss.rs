//! Label smoothing and the training objective.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{AenError, Result};
use crate::model::AenParams;
use crate::tensor::Scalar;

/// Probability floor used inside `ln`.
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMP_EVENTS: AtomicUsize = AtomicUsize::new(0);

/// Times [`cross_entropy`] had to clamp a zero probability carrying target mass.
pub fn clamp_events() -> usize {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

/// A probability vector over the polarity classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(AenError::contract(format!("not a distribution: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AenError::contract(format!("distribution sums to {total}")));
        }
        Ok(LabelDistribution(probs))
    }

    pub fn one_hot(label: usize, classes: usize) -> Result<Self> {
        if label >= classes {
            return Err(AenError::contract(format!("label {label} outside {classes} classes")));
        }
        let mut probs = vec![0.0; classes];
        probs[label] = 1.0;
        Ok(LabelDistribution(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        LabelDistribution(vec![1.0 / classes as f64; classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    /// Lowest index among the most probable classes.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `(1 - ε) q + ε / C`.
pub fn smooth_labels(target: &LabelDistribution, epsilon: f64, classes: usize) -> Result<LabelDistribution> {
    if target.classes() != classes {
        return Err(AenError::contract(format!(
            "distribution over {} classes, expected {classes}",
            target.classes()
        )));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(AenError::contract(format!("smoothing {epsilon} outside [0, 1]")));
    }
    let prior = epsilon / classes as f64;
    Ok(LabelDistribution(
        target.0.iter().map(|&q| (1.0 - epsilon) * q + prior).collect(),
    ))
}

/// `-Σ target(k) ln pred(k)`.
pub fn cross_entropy(pred: &LabelDistribution, target: &LabelDistribution) -> Result<f64> {
    if pred.classes() != target.classes() {
        return Err(AenError::contract(format!(
            "cross entropy over {} vs {} classes",
            pred.classes(),
            target.classes()
        )));
    }
    let mut total = 0.0;
    for (&p, &q) in pred.0.iter().zip(&target.0) {
        if q == 0.0 {
            continue;
        }
        let p = if p < PROB_FLOOR {
            CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
            log::warn!("clamping predicted probability {p} to {PROB_FLOOR}");
            PROB_FLOOR
        } else {
            p
        };
        total -= q * p.ln();
    }
    Ok(total)
}

/// Smoothed cross-entropy plus `λ Σ θ²` over the trainable set.
pub fn total_loss<T: Scalar>(
    pred: &LabelDistribution,
    gold: &LabelDistribution,
    epsilon: f64,
    lambda: f64,
    params: &AenParams<T>,
) -> Result<f64> {
    let smoothed = smooth_labels(gold, epsilon, gold.classes())?;
    let ce = cross_entropy(pred, &smoothed)?;
    let l2 = if lambda == 0.0 { 0.0 } else { lambda * params.l2() };
    Ok(ce + l2)
}
