//! Detection metrics, tail probabilities of scores under the prior, and a
//! Monte-Carlo estimate of open-space risk.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::PriorConfig;

/// Two-sided 95% normal quantile; scores above it are flagged anomalous.
pub const Z_95: f64 = 1.96;

/// Number of cut-offs in the default F1 sweep.
pub const F1_THRESHOLDS: usize = 201;

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::dim("labels", scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract(format!(
            "metric undefined with a single class ({n_pos} positive, {n_neg} negative)"
        )));
    }
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic with midranks:
/// `P(s_pos > s_neg) + P(s_pos = s_neg) / 2`.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_run = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        pos_rank_sum += mid * pos_in_run as f64;
        i = j;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Point {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 at `n_thresholds` cut-offs spread uniformly over
/// `[min score, max score]`. A sample is predicted positive when its score is
/// at or above the cut-off.
pub fn f1_sweep(scores: &[f64], labels: &[u8], n_thresholds: usize) -> Result<Vec<F1Point>> {
    let (n_pos, _) = class_counts(scores, labels)?;
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = if hi > lo { n_thresholds.max(2) } else { 1 };
    let mut curve = Vec::with_capacity(n);
    for i in 0..n {
        let threshold = if i + 1 == n && n > 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64
        };
        let (mut tp, mut fp) = (0usize, 0usize);
        for (&s, &y) in scores.iter().zip(labels) {
            if s >= threshold {
                if y == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let recall = tp as f64 / n_pos as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        curve.push(F1Point {
            threshold,
            precision,
            recall,
            f1,
        });
    }
    Ok(curve)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that a prior score lies at least as far from `mu` as `score`:
/// `2 (1 - Phi(|score - mu| / sigma))`.
pub fn score_to_probability(score: f64, prior: &PriorConfig) -> f64 {
    let z = (score - prior.mu).abs() / prior.sigma;
    libm::erfc(z / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_roc: f64,
    pub f1_curve: Vec<F1Point>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub pixel_auc: Option<f64>,
    pub open_space_risk: Option<f64>,
}

impl EvalReport {
    pub fn from_scores(scores: &[f64], labels: &[u8]) -> Result<Self> {
        let (n_pos, n_neg) = class_counts(scores, labels)?;
        Ok(Self {
            auc_roc: auc_roc(scores, labels)?,
            f1_curve: f1_sweep(scores, labels, F1_THRESHOLDS)?,
            n_pos,
            n_neg,
            pixel_auc: None,
            open_space_risk: None,
        })
    }

    pub fn best_f1(&self) -> Option<F1Point> {
        self.f1_curve
            .iter()
            .copied()
            .max_by(|a, b| a.f1.total_cmp(&b.f1))
    }

    /// `threshold,precision,recall,f1` rows.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f1\n");
        for p in &self.f1_curve {
            let _ = writeln!(out, "{},{},{},{}", p.threshold, p.precision, p.recall, p.f1);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "auc_roc: {:.6}", self.auc_roc);
        let _ = writeln!(out, "n_pos: {}", self.n_pos);
        let _ = writeln!(out, "n_neg: {}", self.n_neg);
        if let Some(best) = self.best_f1() {
            let _ = writeln!(
                out,
                "best_f1: {:.6} (threshold {:.6}, precision {:.6}, recall {:.6})",
                best.f1, best.threshold, best.precision, best.recall
            );
        }
        if let Some(p) = self.pixel_auc {
            let _ = writeln!(out, "pixel_auc: {p:.6}");
        }
        if let Some(r) = self.open_space_risk {
            let _ = writeln!(out, "open_space_risk: {r:.6}");
        }
        out
    }
}

/// Axis-aligned box in input space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    /// Bounding box of `points`, widened by `pad` times its extent on each side.
    pub fn around(points: &[Vec<f64>], pad: f64) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Contract("cannot bound an empty point set".into()))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for p in points {
            for (d, &v) in p.iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        for d in 0..lo.len() {
            let extra = pad * (hi[d] - lo[d]).max(1e-9);
            lo[d] -= extra;
            hi[d] += extra;
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.lo.len()
            && p.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub region: Region,
    pub n_samples: usize,
    pub threshold: f64,
    /// Distance beyond which a point counts as open space.
    pub radius: f64,
    pub classified_normal: usize,
    pub open_and_normal: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// 95th percentile (nearest rank) of nearest-neighbour distances within
/// `normals`.
pub fn open_space_radius(normals: &[Vec<f64>]) -> Result<f64> {
    if normals.len() < 2 {
        return Err(Error::Contract("open-space radius needs at least 2 normals".into()));
    }
    let mut nn: Vec<f64> = normals
        .iter()
        .enumerate()
        .map(|(i, a)| {
            normals
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| dist2(a, b))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let rank = ((0.95 * nn.len() as f64).ceil() as usize).clamp(1, nn.len());
    Ok(nn[rank - 1])
}

/// Monte-Carlo estimate of the fraction of normal-classified space that lies
/// in open space.
///
/// `deviation_of` maps an input point to its deviation; a point is classified
/// normal when its deviation is below `threshold`. Open space is every point
/// of `region` farther than `radius` (default [`open_space_radius`]) from all
/// training normals. The risk is 0 when nothing is classified normal.
pub fn estimate_open_space_risk<F, R>(
    deviation_of: F,
    normals: &[Vec<f64>],
    region: &Region,
    threshold: f64,
    n_samples: usize,
    radius: Option<f64>,
    rng: &mut R,
) -> Result<RiskEstimate>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if n_samples < 1000 {
        return Err(Error::Contract(format!("need at least 1000 samples, got {n_samples}")));
    }
    if region.lo.len() != region.hi.len() || region.lo.iter().zip(&region.hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::Contract("region bounds are malformed".into()));
    }
    if let Some(p) = normals.iter().find(|p| !region.contains(p)) {
        return Err(Error::Contract(format!(
            "region does not contain the training normal {p:?}"
        )));
    }
    let radius = match radius {
        Some(r) => r,
        None => open_space_radius(normals)?,
    };
    let r2 = radius * radius;
    let mut point = vec![0.0; region.lo.len()];
    let (mut normal_count, mut open_count) = (0usize, 0usize);
    for _ in 0..n_samples {
        for (d, v) in point.iter_mut().enumerate() {
            *v = region.lo[d] + (region.hi[d] - region.lo[d]) * rng.random::<f64>();
        }
        if deviation_of(&point) < threshold {
            normal_count += 1;
            if normals.iter().all(|n| dist2(n, &point) > r2) {
                open_count += 1;
            }
        }
    }
    let risk = if normal_count == 0 {
        0.0
    } else {
        open_count as f64 / normal_count as f64
    };
    Ok(RiskEstimate {
        risk,
        region: region.clone(),
        n_samples,
        threshold,
        radius,
        classified_normal: normal_count,
        open_and_normal: open_count,
    })
}
