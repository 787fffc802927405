//! Segmentation losses: soft multi-class dice plus the two graph
//! regularizers, summed unweighted into the total.

use crate::error::{Error, Result};
use crate::tensor::{IntTensor, Tensor};

/// Smoothing constant of the soft dice coefficient.
pub const DICE_SMOOTH: f64 = 1.0;

/// Named scalar losses of one forward pass and their sum.
#[derive(Debug)]
pub struct LossBundle {
    pub dice: Tensor,
    pub kl: Tensor,
    pub dl: Tensor,
    pub total: Tensor,
}

/// Plain-number snapshot of a [`LossBundle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValues {
    pub dice: f64,
    pub kl: f64,
    pub dl: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn values(&self) -> LossValues {
        LossValues {
            dice: self.dice.item(),
            kl: self.kl.item(),
            dl: self.dl.item(),
            total: self.total.item(),
        }
    }
}

/// Numerically stable softmax over the class axis of `[b, c, h, w]` logits.
/// The per-pixel max is subtracted as a constant, which leaves both the
/// value and the gradient unchanged.
pub fn softmax_classes(logits: &Tensor) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch { op: "softmax", lhs: s.to_vec(), rhs: vec![] });
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let plane = h * w;
    let mut maxes = vec![f64::NEG_INFINITY; b * plane];
    for bi in 0..b {
        for ch in 0..c {
            let base = (bi * c + ch) * plane;
            for p in 0..plane {
                let v = logits.data()[base + p];
                let m = &mut maxes[bi * plane + p];
                if v > *m {
                    *m = v;
                }
            }
        }
    }
    let max_t = Tensor::from_vec(maxes, &[b, 1, h, w])?;
    let shifted = logits.sub(&max_t)?;
    let exp = shifted.exp()?;
    let denom = exp.sum_axes(&[1])?.reshape(&[b, 1, h, w])?;
    exp.div(&denom)
}

/// One-hot expansion of integer labels into `[b, c, h, w]`.
fn one_hot(labels: &IntTensor, classes: usize) -> Result<Tensor> {
    let s = &labels.shape;
    let (b, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let mut data = vec![0.0; b * classes * plane];
    for bi in 0..b {
        for p in 0..plane {
            let label = labels.data[bi * plane + p] as usize;
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            data[(bi * classes + label) * plane + p] = 1.0;
        }
    }
    Tensor::from_vec(data, &[b, classes, h, w])
}

/// Soft multi-class dice loss:
/// `1 - (1/c) * sum_k (2*sum(p_k*y_k) + s) / (sum p_k + sum y_k + s)`
/// with `p = softmax(logits)`, one-hot `y` and smoothing `s = 1`.
/// Always in `[0, 1)`.
pub fn dice_loss(logits: &Tensor, labels: &IntTensor) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 4 || labels.shape.len() != 3 || s[0] != labels.shape[0]
        || s[2] != labels.shape[1] || s[3] != labels.shape[2]
    {
        return Err(Error::ShapeMismatch {
            op: "dice_loss",
            lhs: s.to_vec(),
            rhs: labels.shape.clone(),
        });
    }
    let classes = s[1];
    let probs = softmax_classes(logits)?;
    let targets = one_hot(labels, classes)?;
    // per-class sums over batch and pixels
    let inter = probs.mul(&targets)?.sum_axes(&[0, 2, 3])?;
    let p_sum = probs.sum_axes(&[0, 2, 3])?;
    let y_sum = targets.sum_axes(&[0, 2, 3])?;
    let num = inter.scale(2.0)?.add_scalar(DICE_SMOOTH)?;
    let den = p_sum.add(&y_sum)?.add_scalar(DICE_SMOOTH)?;
    let dice = num.div(&den)?.mean_all()?;
    Tensor::scalar(1.0).sub(&dice)
}

/// Unweighted total `dice + kl + dl`. Components must come from the same
/// forward pass; a non-finite component aborts with its name.
pub fn total_loss(dice: Tensor, kl: Tensor, dl: Tensor) -> Result<LossBundle> {
    for (name, t) in [("dice", &dice), ("kl", &kl), ("dl", &dl)] {
        let v = t.item();
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { component: name, value: v });
        }
    }
    let total = dice.add(&kl)?.add(&dl)?;
    let tv = total.item();
    if !tv.is_finite() {
        return Err(Error::NonFiniteLoss { component: "total", value: tv });
    }
    Ok(LossBundle { dice, kl, dl, total })
}
