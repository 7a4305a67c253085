//! Entropy, the entropy-guided forgetting loss, the retain cross-entropy and
//! the combined objective.
//!
//! Natural logarithms throughout, `0 * log 0 = 0`, and batch reduction by
//! arithmetic mean.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Model, ProbDist};

/// Which quantity a [`LossValue`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTag {
    Entropy,
    Forget,
    Retain,
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub kind: LossTag,
}

/// Per-batch objectives the gradient engine can differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean `-log p(y|x)`; requires labels.
    CrossEntropy,
    /// Mean `log p(y|x)`. Descending it is gradient ascent on cross-entropy.
    NegatedCrossEntropy,
    /// Mean `sum_k p_k log p_k`, i.e. the negative prediction entropy.
    NegativeEntropy,
}

impl LossKind {
    pub fn needs_labels(self) -> bool {
        !matches!(self, LossKind::NegativeEntropy)
    }
}

/// `-sum p log p`.
pub fn entropy(p: &ProbDist) -> f64 {
    // `0.0 - x` rather than `-x` so a one-hot distribution gives +0.
    0.0 - p
        .as_slice()
        .iter()
        .filter(|&&pk| pk > 0.0)
        .map(|&pk| pk * pk.ln())
        .sum::<f64>()
}

/// `KL(p || uniform) = sum p log(p K)`.
pub fn kl_to_uniform(p: &ProbDist) -> f64 {
    let log_k = (p.len() as f64).ln();
    p.as_slice()
        .iter()
        .filter(|&&pk| pk > 0.0)
        .map(|&pk| pk * (pk.ln() + log_k))
        .sum()
}

/// `forget + beta * retain`.
pub fn total_loss(forget: f64, retain: f64, beta: f64) -> Result<f64> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
    }
    Ok(forget + beta * retain)
}

/// Entropy-guided forgetting loss over a forget batch: mean negative entropy.
pub fn forget_loss(model: &Model, features: ArrayView2<f64>) -> Result<LossValue> {
    if features.nrows() == 0 {
        return Err(Error::Empty("forget batch"));
    }
    let logits = model.forward(features)?;
    let (value, _) = logits_loss(LossKind::NegativeEntropy, logits.view(), None)?;
    Ok(LossValue {
        value,
        kind: LossTag::Forget,
    })
}

/// Cross-entropy over a labeled retain batch.
pub fn retain_loss(
    model: &Model,
    features: ArrayView2<f64>,
    labels: &[usize],
) -> Result<LossValue> {
    if features.nrows() == 0 {
        return Err(Error::Empty("retain batch"));
    }
    let logits = model.forward(features)?;
    let (value, _) = logits_loss(LossKind::CrossEntropy, logits.view(), Some(labels))?;
    Ok(LossValue {
        value,
        kind: LossTag::Retain,
    })
}

/// Mean prediction entropy of the model over `features`.
pub fn mean_entropy(model: &Model, features: ArrayView2<f64>) -> Result<LossValue> {
    let forget = forget_loss(model, features)?;
    Ok(LossValue {
        value: -forget.value,
        kind: LossTag::Entropy,
    })
}

/// Stable `log softmax` of one row.
pub(crate) fn log_softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

/// Batch-mean loss and its gradient with respect to the logits.
pub(crate) fn logits_loss(
    kind: LossKind,
    logits: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if batch == 0 {
        return Err(Error::Empty("loss batch"));
    }
    let labels = match (kind.needs_labels(), labels) {
        (true, None) => {
            return Err(Error::Config(format!("{kind:?} needs labels")));
        }
        (true, Some(l)) => {
            if l.len() != batch {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for a batch of {batch}",
                    l.len()
                )));
            }
            if let Some(&label) = l.iter().find(|&&y| y >= classes) {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            Some(l)
        }
        (false, _) => None,
    };

    let inv_batch = 1.0 / batch as f64;
    let mut grad = Array2::<f64>::zeros((batch, classes));
    let mut logp = vec![0.0; classes];
    let mut total = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        let z = row.to_vec();
        log_softmax_into(&z, &mut logp);
        let mut g = grad.row_mut(i);
        match kind {
            LossKind::CrossEntropy | LossKind::NegatedCrossEntropy => {
                let y = labels.expect("checked above")[i];
                let sign = if kind == LossKind::CrossEntropy {
                    1.0
                } else {
                    -1.0
                };
                total += -sign * logp[y];
                for k in 0..classes {
                    let target = if k == y { 1.0 } else { 0.0 };
                    g[k] = sign * (logp[k].exp() - target) * inv_batch;
                }
            }
            LossKind::NegativeEntropy => {
                // d/dz_j sum_k p_k log p_k = p_j (log p_j + H)
                let mut neg_h = 0.0;
                for &lp in &logp {
                    let p = lp.exp();
                    if p > 0.0 {
                        neg_h += p * lp;
                    }
                }
                total += neg_h;
                for k in 0..classes {
                    let p = logp[k].exp();
                    g[k] = if p > 0.0 {
                        p * (logp[k] - neg_h) * inv_batch
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    Ok((total * inv_batch, grad))
}
