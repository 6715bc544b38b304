//! Accuracy and macro-averaged F1.

use crate::error::{AenError, Result};

fn check(pred: &[usize], gold: &[usize]) -> Result<()> {
    if pred.is_empty() {
        return Err(AenError::contract("metrics over zero examples"));
    }
    if pred.len() != gold.len() {
        return Err(AenError::contract(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    check(pred, gold)?;
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `counts[gold][pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], gold: &[usize], classes: usize) -> Result<Self> {
        check(pred, gold)?;
        let mut counts = vec![vec![0; classes]; classes];
        for (&p, &g) in pred.iter().zip(gold) {
            if p >= classes || g >= classes {
                return Err(AenError::contract(format!("label pair ({p}, {g}) outside {classes} classes")));
            }
            counts[g][p] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn get(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold][pred]
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    /// F1 of class `c`; zero when precision + recall is zero.
    pub fn f1(&self, c: usize) -> f64 {
        let tp = self.counts[c][c] as f64;
        let predicted: usize = self.counts.iter().map(|row| row[c]).sum();
        let actual: usize = self.counts[c].iter().sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }
}

/// Unweighted mean of per-class F1. A class absent from both lists scores 0.
pub fn macro_f1(pred: &[usize], gold: &[usize], classes: usize) -> Result<f64> {
    let cm = ConfusionMatrix::new(pred, gold, classes)?;
    Ok((0..classes).map(|c| cm.f1(c)).sum::<f64>() / classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 2]).unwrap(), 0.0);
        // pos, neg, neu, pos vs pos, pos, neu, neg
        assert_eq!(accuracy(&[2, 0, 1, 2], &[2, 2, 1, 0]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap(), 0.5);
        // class 2 never appears: contributes zero
        assert!((macro_f1(&[0, 1], &[0, 1], 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&[], &[], 3).is_err());
        assert!(macro_f1(&[3], &[0], 3).is_err());
    }

    proptest! {
        #[test]
        fn metrics_are_order_invariant(pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..40), rot in 0usize..40) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let k = rot % pairs.len();
            let mut rp = p.clone();
            let mut rg = g.clone();
            rp.rotate_left(k);
            rg.rotate_left(k);
            prop_assert_eq!(accuracy(&p, &g).unwrap(), accuracy(&rp, &rg).unwrap());
            prop_assert_eq!(macro_f1(&p, &g, 3).unwrap(), macro_f1(&rp, &rg, 3).unwrap());
            let f = macro_f1(&p, &g, 3).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
