//! Top-K multiple-instance aggregation, Z-score deviation and the losses
//! trained on it.
//!
//! The bag score is the largest mean over all size-K subsets of instance
//! scores, which is the mean of the K largest scores. Gradients reach only
//! the selected instances.

use serde::{Deserialize, Serialize};

use crate::autodiff::{focal_value_and_slope, NodeId, Tape};
use crate::bag::Bag;
use crate::error::{Error, Result};
use crate::network::{score_bag_instances, NetworkParams};
use crate::prior::ReferenceStats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilConfig {
    pub k_fraction: f64,
    /// Deviation margin `a` anomalies must exceed.
    pub margin: f64,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self {
            k_fraction: 0.10,
            margin: 5.0,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_fraction > 0.0 && self.k_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "k_fraction must lie in (0, 1], got {}",
                self.k_fraction
            )));
        }
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        Ok(())
    }

    pub fn k_for(&self, n: usize) -> usize {
        k_for(n, self.k_fraction)
    }
}

/// `max(1, ceil(k_fraction * n))`, capped at `n`. The product is nudged
/// down by 1e-9 so that e.g. `0.1 * 30` rounds to 3, not 4.
pub fn k_for(n: usize, k_fraction: f64) -> usize {
    ((k_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Which objective trains the scoring head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Deviation,
    Focal { gamma: f64, alpha: f64 },
}

impl LossKind {
    pub fn focal_default() -> Self {
        LossKind::Focal {
            gamma: 2.0,
            alpha: 0.5,
        }
    }
}

/// Indices of the `k` largest values, ties to the lowest index, returned in
/// ascending index order.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let k = k.min(scores.len());
    let by_rank = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k, by_rank);
    }
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    picked
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    pub value: f64,
    /// Selected instance indices, ascending.
    pub indices: Vec<usize>,
}

pub fn topk_score(scores: &[f64], k_fraction: f64) -> Result<TopK> {
    if scores.is_empty() {
        return Err(Error::Contract("top-K aggregation of an empty score list".into()));
    }
    if !(k_fraction > 0.0 && k_fraction <= 1.0) {
        return Err(Error::Config(format!("k_fraction must lie in (0, 1], got {k_fraction}")));
    }
    let k = k_for(scores.len(), k_fraction);
    let indices = top_k_indices(scores, k);
    let value = indices.iter().map(|&i| scores[i]).sum::<f64>() / k as f64;
    Ok(TopK { value, indices })
}

/// Instance scores of `bag` aggregated by top-K.
pub fn score_bag(bag: &Bag, params: &NetworkParams, k_fraction: f64) -> Result<TopK> {
    topk_score(&score_bag_instances(bag, params)?, k_fraction)
}

/// Top-K bag scores for a list of bags.
pub fn score_bags(bags: &[Bag], params: &NetworkParams, k_fraction: f64) -> Result<Vec<f64>> {
    bags.iter()
        .map(|b| score_bag(b, params, k_fraction).map(|t| t.value))
        .collect()
}

/// Z-score of a bag score against the reference statistics.
pub fn deviation(phi_k: f64, reference: &ReferenceStats) -> f64 {
    (phi_k - reference.mu_r) / reference.sigma_r
}

/// `|dev|` for normal samples, `max(0, a - dev)` for anomalies.
pub fn deviation_loss(dev: f64, y: u8, margin: f64) -> f64 {
    if y == 1 {
        (margin - dev).max(0.0)
    } else {
        dev.abs()
    }
}

/// Focal loss on `sigmoid(score)`.
pub fn focal_loss(score: f64, y: u8, gamma: f64, alpha: f64) -> f64 {
    focal_value_and_slope(score, y, gamma, alpha).0
}

/// Mean loss over a batch plus the per-sample deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub deviations: Vec<f64>,
}

/// Tape-free batch loss over already-aggregated bag scores.
pub fn batch_loss(
    phi_k: &[f64],
    labels: &[u8],
    reference: &ReferenceStats,
    cfg: &MilConfig,
    kind: LossKind,
) -> Result<LossValue> {
    if phi_k.len() != labels.len() || phi_k.is_empty() {
        return Err(Error::dim("batch labels", phi_k.len(), labels.len()));
    }
    let deviations: Vec<f64> = phi_k.iter().map(|&p| deviation(p, reference)).collect();
    let total: f64 = match kind {
        LossKind::Deviation => deviations
            .iter()
            .zip(labels)
            .map(|(&d, &y)| deviation_loss(d, y, cfg.margin))
            .sum(),
        LossKind::Focal { gamma, alpha } => phi_k
            .iter()
            .zip(labels)
            .map(|(&s, &y)| focal_loss(s, y, gamma, alpha))
            .sum(),
    };
    Ok(LossValue {
        value: total / phi_k.len() as f64,
        deviations,
    })
}

/// Nodes produced by [`record_batch_loss`].
#[derive(Debug)]
pub struct BatchLossNodes {
    pub loss: NodeId,
    pub phi_k: NodeId,
    /// Selected instance indices per bag, absolute into the stacked scores.
    pub selected: Vec<Vec<usize>>,
}

/// Records the mean batch loss over stacked instance scores.
///
/// `scores` holds every instance score of the batch, bag after bag;
/// `bag_sizes[i]` is the instance count of bag `i`.
pub fn record_batch_loss(
    tape: &mut Tape,
    scores: NodeId,
    bag_sizes: &[usize],
    labels: &[u8],
    reference: &ReferenceStats,
    cfg: &MilConfig,
    kind: LossKind,
) -> Result<BatchLossNodes> {
    if bag_sizes.len() != labels.len() {
        return Err(Error::dim("batch labels", bag_sizes.len(), labels.len()));
    }
    let segments: Vec<(usize, usize)> = bag_sizes.iter().map(|&n| (n, cfg.k_for(n))).collect();
    let (phi_k, selected) = tape.segment_top_k_mean(scores, &segments)?;
    let per_bag = match kind {
        LossKind::Deviation => {
            let centered = tape.affine(phi_k, 1.0, -reference.mu_r);
            let dev = tape.affine(centered, 1.0 / reference.sigma_r, 0.0);
            let normal_w: Vec<f64> = labels.iter().map(|&y| f64::from(1 - y.min(1))).collect();
            let anomaly_w: Vec<f64> = labels.iter().map(|&y| f64::from(y.min(1))).collect();
            let abs = tape.abs(dev);
            let normal_part = tape.mul_const(abs, normal_w)?;
            let hinge = tape.hinge(dev, cfg.margin);
            let anomaly_part = tape.mul_const(hinge, anomaly_w)?;
            tape.add(normal_part, anomaly_part)?
        }
        LossKind::Focal { gamma, alpha } => tape.focal(phi_k, labels.to_vec(), gamma, alpha)?,
    };
    let loss = tape.mean(per_bag);
    Ok(BatchLossNodes {
        loss,
        phi_k,
        selected,
    })
}
