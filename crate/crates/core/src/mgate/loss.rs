use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor2, Var};

/// In-batch positive/negative relations for one channel, row-major `b x b`.
/// The diagonal is never set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMasks {
    pub size: usize,
    pub positive: Vec<bool>,
    pub negative: Vec<bool>,
}

impl ChannelMasks {
    pub fn empty(size: usize) -> ChannelMasks {
        ChannelMasks {
            size,
            positive: vec![false; size * size],
            negative: vec![false; size * size],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, positive: bool) {
        let k = i * self.size + j;
        if positive {
            self.positive[k] = true;
        } else {
            self.negative[k] = true;
        }
    }

    /// Anchors with at least one positive and one negative.
    pub fn contributing(&self) -> Vec<usize> {
        (0..self.size)
            .filter(|&i| {
                let row = i * self.size..(i + 1) * self.size;
                self.positive[row.clone()].iter().any(|&b| b)
                    && self.negative[row].iter().any(|&b| b)
            })
            .collect()
    }
}

/// Mean over contributing anchors of
/// `logsumexp_{neg}(Γ/τ) - logsumexp_{pos}(Γ/τ)`, i.e.
/// `-log(Σ_pos exp(Γ/τ) / Σ_neg exp(Γ/τ))`. `None` when no anchor contributes.
pub(crate) fn contrastive_on_tape(
    tape: &mut Tape,
    scores: Var,
    masks: &ChannelMasks,
    tau: f64,
) -> Result<Option<Var>> {
    let shape = tape.value(scores).shape();
    if shape != (masks.size, masks.size) {
        return Err(Error::shape(
            "contrastive_loss",
            format!("scores {shape:?} for batch of {}", masks.size),
        ));
    }
    let anchors = masks.contributing();
    if anchors.is_empty() {
        return Ok(None);
    }
    let scaled = tape.scale(scores, 1.0 / tau);
    let pos: Rc<[bool]> = masks.positive.clone().into();
    let neg: Rc<[bool]> = masks.negative.clone().into();
    let lse_pos = tape.masked_logsumexp_rows(scaled, pos)?;
    let lse_neg = tape.masked_logsumexp_rows(scaled, neg)?;
    let lse_pos = tape.gather_rows(lse_pos, &anchors)?;
    let lse_neg = tape.gather_rows(lse_neg, &anchors)?;
    let terms = tape.sub(lse_neg, lse_pos)?;
    Ok(Some(tape.mean_all(terms)?))
}

/// Contrastive loss for a matrix of critic scores `Γ(E_i, E_j)`.
pub fn contrastive_loss(scores: &Tensor2, masks: &ChannelMasks, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let loss = contrastive_on_tape(&mut tape, s, masks, tau)?.ok_or(Error::DegenerateBatch)?;
    Ok(tape.value(loss).item())
}

/// `β1·lig + β2·dom + β3·sen + avg`.
pub fn total_loss(lig: f64, dom: f64, sen: f64, avg: f64, betas: [f64; 3]) -> f64 {
    betas[0] * lig + betas[1] * dom + betas[2] * sen + avg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masks_for_anchor0(pos: &[usize], neg: &[usize], n: usize) -> ChannelMasks {
        let mut m = ChannelMasks::empty(n);
        for &j in pos {
            m.set(0, j, true);
        }
        for &j in neg {
            m.set(0, j, false);
        }
        m
    }

    #[test]
    fn equal_scores_give_zero() {
        let s = Tensor2::from_fn(3, 3, |_, _| 0.4);
        let m = masks_for_anchor0(&[1], &[2], 3);
        assert!(contrastive_loss(&s, &m, 0.1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn closed_form_single_pair() {
        let mut s = Tensor2::zeros(3, 3);
        s.set(0, 1, 0.9);
        s.set(0, 2, 0.1);
        let m = masks_for_anchor0(&[1], &[2], 3);
        let l = contrastive_loss(&s, &m, 0.1).unwrap();
        assert!((l - (-8.0)).abs() < 1e-12, "{l}");
    }

    #[test]
    fn degenerate_batch_is_an_error() {
        let s = Tensor2::zeros(2, 2);
        let m = masks_for_anchor0(&[1], &[], 2);
        assert!(matches!(
            contrastive_loss(&s, &m, 0.1),
            Err(Error::DegenerateBatch)
        ));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, [1.0; 3]), 10.0);
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, [0.0; 3]), 4.0);
        assert_eq!(total_loss(1.0, 1.0, 1.0, 1.0, [2.0, 1.0, 0.5]), 4.5);
    }

    #[test]
    fn monotone_in_positive_and_negative_scores() {
        let base = Tensor2::from_fn(3, 3, |i, j| 0.1 * (i + 2 * j) as f64 - 0.2);
        let m = masks_for_anchor0(&[1], &[2], 3);
        let l0 = contrastive_loss(&base, &m, 0.1).unwrap();
        let mut up_pos = base.clone();
        up_pos.set(0, 1, up_pos.get(0, 1) + 0.05);
        assert!(contrastive_loss(&up_pos, &m, 0.1).unwrap() < l0);
        let mut up_neg = base.clone();
        up_neg.set(0, 2, up_neg.get(0, 2) + 0.05);
        assert!(contrastive_loss(&up_neg, &m, 0.1).unwrap() > l0);
    }
}
