//! Batch-hard triplet loss and softmax cross-entropy, each returning the
//! loss value with its gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MARGIN: f64 = 0.3;

/// Loss value and gradient with respect to the loss input.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Tensor,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Identity labels of a `P×K` training batch: `P ≥ 2` identities, each
/// appearing exactly `K ≥ 2` times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchLabels {
    labels: Vec<usize>,
    p: usize,
    k: usize,
}

impl BatchLabels {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        let mut counts = std::collections::BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0usize) += 1;
        }
        if let Some((id, _)) = counts.iter().find(|(_, &n)| n < 2) {
            return Err(Error::invalid(format!(
                "identity {id} has a single sample, so it has no positive"
            )));
        }
        if counts.len() < 2 {
            return Err(Error::invalid(
                "triplet batch needs at least two identities",
            ));
        }
        let k = *counts.values().next().expect("non-empty");
        if counts.values().any(|&n| n != k) {
            return Err(Error::invalid(format!(
                "identities appear {:?} times; a P x K batch needs equal counts",
                counts.values().collect::<Vec<_>>()
            )));
        }
        Ok(Self {
            p: counts.len(),
            k,
            labels,
        })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn identities(&self) -> usize {
        self.p
    }

    pub fn per_identity(&self) -> usize {
        self.k
    }
}

/// Batch-hard triplet loss over `[B, C]` features: for each anchor, the
/// farthest same-label sample against the closest other-label sample, with
/// a hinge at `margin`, averaged over anchors.
///
/// A zero distance contributes a zero subgradient.
pub fn batch_hard_triplet(
    features: &Tensor,
    labels: &BatchLabels,
    margin: f64,
) -> Result<LossOutput> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::invalid(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    let labels = labels.as_slice();
    let [b, c] = *features.shape() else {
        return Err(Error::shape(
            "batch_hard_triplet",
            features.shape(),
            &[labels.len(), 0],
        ));
    };
    if b != labels.len() {
        return Err(Error::shape(
            "batch_hard_triplet",
            features.shape(),
            &[labels.len(), c],
        ));
    }
    let f = features.data();
    let row = |i: usize| &f[i * c..(i + 1) * c];
    let mut dist = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let d = distance(row(i), row(j));
            dist[i * b + j] = d;
            dist[j * b + i] = d;
        }
    }

    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    let scale = 1.0 / b as f64;
    for a in 0..b {
        let mut pos = None::<(usize, f64)>;
        let mut neg = None::<(usize, f64)>;
        for j in 0..b {
            if j == a {
                continue;
            }
            let d = dist[a * b + j];
            if labels[j] == labels[a] {
                if pos.map_or(true, |(_, best)| d > best) {
                    pos = Some((j, d));
                }
            } else if neg.map_or(true, |(_, best)| d < best) {
                neg = Some((j, d));
            }
        }
        let ((p, dp), (n, dn)) = (pos.expect("validated"), neg.expect("validated"));
        let h = margin + dp - dn;
        if h <= 0.0 {
            continue;
        }
        loss += h;
        for (other, d, sign) in [(p, dp, 1.0), (n, dn, -1.0)] {
            if d == 0.0 {
                continue;
            }
            let k = sign * scale / d;
            for ch in 0..c {
                let diff = f[a * c + ch] - f[other * c + ch];
                grad[a * c + ch] += k * diff;
                grad[other * c + ch] -= k * diff;
            }
        }
    }
    Ok(LossOutput {
        loss: loss * scale,
        grad: Tensor::from_parts(vec![b, c], grad),
    })
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)` for
/// `[B, K]` logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    let [b, k] = *logits.shape() else {
        return Err(Error::shape(
            "cross_entropy",
            logits.shape(),
            &[labels.len(), 0],
        ));
    };
    if b != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            logits.shape(),
            &[labels.len(), k],
        ));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "label {l} out of range for {k} classes"
        )));
    }
    let mut probs = logits.softmax(1)?;
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[l];
        probs.data_mut()[i * k + l] -= 1.0;
    }
    let inv = 1.0 / b as f64;
    Ok(LossOutput {
        loss: loss * inv,
        grad: probs.scale(inv),
    })
}
