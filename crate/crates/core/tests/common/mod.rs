//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numeric code; only plain parameter data is read.

#![allow(dead_code)]

use devscore::autodiff::{Activation, DenseLayer, Tensor};
use devscore::network::NetworkParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line evaluation of the network on one instance. Returns the
/// score and every pre-activation of every layer.
pub fn oracle_forward(params: &NetworkParams, x: &[f64]) -> (f64, Vec<Vec<f64>>) {
    let mut h = x.to_vec();
    let mut pre = Vec::new();
    for layer in params.layers() {
        let (rows, cols) = (layer.weight.shape()[0], layer.weight.shape()[1]);
        let w = layer.weight.data();
        let b = layer.bias.data();
        let mut z = vec![0.0; cols];
        for j in 0..cols {
            let mut acc = b[j];
            for i in 0..rows {
                acc += h[i] * w[i * cols + j];
            }
            z[j] = acc;
        }
        pre.push(z.clone());
        h = match layer.activation {
            Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Activation::Identity => z,
        };
    }
    (h[0], pre)
}

/// Largest mean over all size-`k` subsets, by enumeration.
pub fn subset_topk(scores: &[f64], k: usize) -> f64 {
    let n = scores.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| scores[i]).sum();
        best = best.max(s / k as f64);
    }
    best
}

/// Mann-Whitney statistic over every positive/negative pair, ties 1/2.
pub fn all_pairs_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn flatten(params: &NetworkParams) -> Vec<f64> {
    params
        .layers()
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
        .collect()
}

pub fn unflatten(template: &NetworkParams, flat: &[f64]) -> NetworkParams {
    let mut at = 0;
    let layers = template
        .layers()
        .iter()
        .map(|l| {
            let nw = l.weight.len();
            let nb = l.bias.len();
            let w = Tensor::new(l.weight.shape().to_vec(), flat[at..at + nw].to_vec()).unwrap();
            let b = Tensor::new(l.bias.shape().to_vec(), flat[at + nw..at + nw + nb].to_vec()).unwrap();
            at += nw + nb;
            DenseLayer::new(w, b, l.activation).unwrap()
        })
        .collect();
    NetworkParams::from_layers(layers).unwrap()
}

/// Random network with uniform weights and biases in `[-1, 1)`.
pub fn random_params(arch: &[usize], rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut widths = arch.to_vec();
    widths.push(1);
    let n = widths.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let w = (0..widths[i] * widths[i + 1]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = (0..widths[i + 1]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let act = if i + 2 < n { Activation::Relu } else { Activation::Identity };
            DenseLayer::new(
                Tensor::new(vec![widths[i], widths[i + 1]], w).unwrap(),
                Tensor::new(vec![widths[i + 1]], b).unwrap(),
                act,
            )
            .unwrap()
        })
        .collect();
    NetworkParams::from_layers(layers).unwrap()
}

/// A random batch problem for the end-to-end loss gradient.
pub struct LossProblem {
    pub params: NetworkParams,
    pub bags: Vec<devscore::Bag>,
    pub reference: devscore::ReferenceStats,
    pub mil: devscore::MilConfig,
}

/// Distance under which a kink (ReLU at 0, top-K boundary, |dev| at 0, the
/// hinge at the margin) makes finite differences unreliable.
pub const KINK_GAP: f64 = 1e-3;

impl LossProblem {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..=6);
        let arch = vec![d, rng.random_range(2..=6), rng.random_range(2..=5)];
        let params = random_params(&arch, &mut rng);
        let n_bags = 2 * rng.random_range(1..=4);
        let bags = (0..n_bags)
            .map(|i| {
                let n = rng.random_range(1..=8);
                let inst = (0..n)
                    .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .collect();
                devscore::Bag::new(i as u64, u8::from(i < n_bags / 2), None, inst).unwrap()
            })
            .collect();
        let reference = devscore::ReferenceStats {
            mu_r: rng.random_range(-0.2..0.2),
            sigma_r: rng.random_range(0.8..1.2),
            l: 5000,
        };
        let mil = devscore::MilConfig {
            k_fraction: [0.1, 0.25, 0.5, 1.0][rng.random_range(0..4)],
            margin: rng.random_range(0.5..5.0),
        };
        Self { params, bags, reference, mil }
    }

    fn k(&self, n: usize) -> usize {
        ((self.mil.k_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
    }

    /// Oracle loss at flattened parameters `flat`.
    pub fn loss_at(&self, flat: &[f64]) -> f64 {
        let p = unflatten(&self.params, flat);
        let mut total = 0.0;
        for bag in &self.bags {
            let mut s: Vec<f64> = bag.instances.iter().map(|x| oracle_forward(&p, x).0).collect();
            s.sort_by(|a, b| b.total_cmp(a));
            let k = self.k(s.len());
            let phi = s[..k].iter().sum::<f64>() / k as f64;
            let dev = (phi - self.reference.mu_r) / self.reference.sigma_r;
            total += if bag.label == 0 { dev.abs() } else { (self.mil.margin - dev).max(0.0) };
        }
        total / self.bags.len() as f64
    }

    /// True when every kink is at least [`KINK_GAP`] away.
    pub fn smooth(&self) -> bool {
        for bag in &self.bags {
            let mut s = Vec::new();
            for x in &bag.instances {
                let (score, pre) = oracle_forward(&self.params, x);
                let n = pre.len();
                for (i, z) in pre.iter().enumerate() {
                    let relu = i + 2 < n;
                    if relu && z.iter().any(|v| v.abs() < KINK_GAP) {
                        return false;
                    }
                }
                s.push(score);
            }
            s.sort_by(|a, b| b.total_cmp(a));
            let k = self.k(s.len());
            if k < s.len() && s[k - 1] - s[k] < KINK_GAP {
                return false;
            }
            let phi = s[..k].iter().sum::<f64>() / k as f64;
            let dev = (phi - self.reference.mu_r) / self.reference.sigma_r;
            let kink = if bag.label == 0 { dev } else { self.mil.margin - dev };
            if kink.abs() < KINK_GAP {
                return false;
            }
        }
        true
    }

    /// Max relative error between the library gradient and central
    /// differences of the oracle loss. Denominators are floored at 1e-6.
    pub fn gradient_error(&self, step: f64) -> f64 {
        let refs: Vec<&devscore::Bag> = self.bags.iter().collect();
        let (value, grads) = devscore::trainer::batch_gradients(
            &self.params,
            &refs,
            &self.reference,
            &self.mil,
            devscore::LossKind::Deviation,
        )
        .unwrap();
        let analytic: Vec<f64> = grads
            .iter()
            .flat_map(|(w, b)| w.data().iter().chain(b.data()).copied())
            .collect();
        let mut flat = flatten(&self.params);
        assert!((value - self.loss_at(&flat)).abs() < 1e-12, "loss values disagree");
        let mut worst: f64 = 0.0;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + step;
            let plus = self.loss_at(&flat);
            flat[i] = orig - step;
            let minus = self.loss_at(&flat);
            flat[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        worst
    }
}

/// The first `count` smooth problems at or after `start_seed`.
pub fn smooth_problems(start_seed: u64, count: usize) -> Vec<LossProblem> {
    (start_seed..)
        .map(LossProblem::random)
        .filter(LossProblem::smooth)
        .take(count)
        .collect()
}
