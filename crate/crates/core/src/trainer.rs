//! Mini-batch training of the scoring network.
//!
//! Every iteration draws a stratified batch (half labeled anomalies, half
//! normal pool, both with replacement), draws fresh reference statistics
//! from the prior, averages the per-bag loss over the batch and takes one
//! Adam step with decoupled weight decay.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{layer_gradients, record_layers, Tape, Tensor};
use crate::bag::Bag;
use crate::error::{Error, Result};
use crate::eval::auc_roc;
use crate::mil::{record_batch_loss, score_bags, LossKind, MilConfig};
use crate::network::{init_params, NetworkParams, DEFAULT_HIDDEN};
use crate::prior::{draw_reference, PriorConfig, ReferenceStats};

const BATCH_STREAM: u64 = 1;
const PRIOR_STREAM: u64 = 2;
const HOLDOUT_STREAM: u64 = 3;
const INFERENCE_STREAM: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub mil: MilConfig,
    pub prior: PriorConfig,
    pub loss: LossKind,
    /// Feature-layer widths after the input dimension; the last is `L`.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            iters_per_epoch: 20,
            batch_size: 48,
            optimizer: AdamConfig::default(),
            mil: MilConfig::default(),
            prior: PriorConfig::default(),
            loss: LossKind::Deviation,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "batch size must be even and >= 2, got {}",
                self.batch_size
            )));
        }
        if self.hidden.is_empty() {
            return Err(Error::Config("at least one feature layer width is required".into()));
        }
        self.optimizer.validate()?;
        self.mil.validate()?;
        self.prior.validate()
    }

    pub fn arch(&self, input_dim: usize) -> Vec<usize> {
        let mut arch = vec![input_dim];
        arch.extend(&self.hidden);
        arch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean batch loss, one entry per iteration.
    pub losses: Vec<f64>,
    /// Held-out AUC after each epoch, when a validation slice exists.
    pub epoch_auc: Vec<Option<f64>>,
    pub iters_per_epoch: usize,
}

impl TrainHistory {
    /// Mean of the per-iteration losses of `epoch`.
    pub fn epoch_mean_loss(&self, epoch: usize) -> Option<f64> {
        let n = self.iters_per_epoch;
        let chunk = self.losses.get(epoch * n..(epoch + 1) * n)?;
        (!chunk.is_empty()).then(|| chunk.iter().sum::<f64>() / chunk.len() as f64)
    }
}

/// Draws `b/2` labeled anomalies and `b/2` normal-pool bags, both uniformly
/// with replacement. Anomalies come first.
pub fn stratified_batch<'a, R: Rng + ?Sized>(
    normals: &'a [Bag],
    anomalies: &'a [Bag],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'a Bag>> {
    if anomalies.is_empty() {
        return Err(Error::Config(
            "no labeled anomalies: supply at least one labeled anomaly for training".into(),
        ));
    }
    if normals.is_empty() {
        return Err(Error::Config("the normal training pool is empty".into()));
    }
    if batch_size < 2 || !batch_size.is_multiple_of(2) {
        return Err(Error::Config(format!("batch size must be even and >= 2, got {batch_size}")));
    }
    let half = batch_size / 2;
    let mut batch = Vec::with_capacity(batch_size);
    batch.extend((0..half).map(|_| &anomalies[rng.random_range(0..anomalies.len())]));
    batch.extend((0..half).map(|_| &normals[rng.random_range(0..normals.len())]));
    Ok(batch)
}

/// First and second moment estimates, one buffer per parameter block
/// (weight then bias of each layer).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let sizes: Vec<usize> = params
            .layers()
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update with decoupled weight decay: parameters are first scaled
/// by `1 - lr * wd`, then moved by the bias-corrected adaptive step.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &[(Tensor, Tensor)],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.layers().len() || state.m.len() != 2 * grads.len() {
        return Err(Error::dim("optimizer gradient blocks", params.layers().len(), grads.len()));
    }
    for (i, (layer, (gw, gb))) in params.layers().iter().zip(grads).enumerate() {
        if !layer.weight.same_shape(gw) || !layer.bias.same_shape(gb) {
            return Err(Error::dim(
                format!("layer {i} gradient"),
                format!("{:?}", layer.weight.shape()),
                format!("{:?}", gw.shape()),
            ));
        }
        for (name, g) in [("weight", gw), ("bias", gb)] {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in layer {i} {name}")));
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
    for (i, (layer, (gw, gb))) in params.layers_mut().iter_mut().zip(grads).enumerate() {
        for (slot, (values, g)) in [(2 * i, (&mut layer.weight, gw)), (2 * i + 1, (&mut layer.bias, gb))] {
            let m = &mut state.m[slot];
            let v = &mut state.v[slot];
            for (((p, &g), m), v) in values.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
    Ok(())
}

fn check_dims(bags: &[Bag], dim: usize, what: &str) -> Result<()> {
    for b in bags {
        b.validate()?;
        if b.dim() != dim {
            return Err(Error::dim(format!("{what} bag {}", b.id), dim, b.dim()));
        }
    }
    Ok(())
}

/// Mean batch loss and parameter gradients at `params`.
pub fn batch_gradients(
    params: &NetworkParams,
    batch: &[&Bag],
    reference: &crate::prior::ReferenceStats,
    mil: &MilConfig,
    loss: LossKind,
) -> Result<(f64, Vec<(Tensor, Tensor)>)> {
    let dim = params.input_dim();
    let total: usize = batch.iter().map(|b| b.len()).sum();
    let mut flat = Vec::with_capacity(total * dim);
    for bag in batch {
        for inst in &bag.instances {
            if inst.len() != dim {
                return Err(Error::dim(format!("bag {} instance", bag.id), dim, inst.len()));
            }
            flat.extend_from_slice(inst);
        }
    }
    let sizes: Vec<usize> = batch.iter().map(|b| b.len()).collect();
    let labels: Vec<u8> = batch.iter().map(|b| b.label).collect();

    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(vec![total, dim], flat)?);
    let (scores, nodes) = record_layers(&mut tape, params.layers(), x)?;
    let out = record_batch_loss(&mut tape, scores, &sizes, &labels, reference, mil, loss)?;
    let value = tape.value(out.loss).item().expect("loss is scalar");
    let mut grads = tape.backward(out.loss)?;
    Ok((value, layer_gradients(&mut grads, &nodes)))
}

/// Trains on the normal pool and labeled anomalies without validation.
pub fn train(normals: &[Bag], anomalies: &[Bag], cfg: &TrainConfig) -> Result<(NetworkParams, TrainHistory)> {
    train_with_validation(normals, anomalies, None, cfg)
}

/// Like [`train`]. When `validation_anomalies` is given, 10% of the normal
/// pool is held out and the AUC of held-out normals against those anomalies
/// is recorded after every epoch.
pub fn train_with_validation(
    normals: &[Bag],
    anomalies: &[Bag],
    validation_anomalies: Option<&[Bag]>,
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainHistory)> {
    cfg.validate()?;
    if anomalies.is_empty() {
        return Err(Error::Config(
            "no labeled anomalies: supply at least one labeled anomaly for training".into(),
        ));
    }
    let dim = normals
        .first()
        .ok_or_else(|| Error::Config("the normal training pool is empty".into()))?
        .dim();
    check_dims(normals, dim, "normal")?;
    check_dims(anomalies, dim, "anomaly")?;

    let (pool, holdout): (Vec<Bag>, Vec<Bag>) = match validation_anomalies {
        Some(val) if !val.is_empty() => {
            check_dims(val, dim, "validation")?;
            let mut idx: Vec<usize> = (0..normals.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(HOLDOUT_STREAM);
            idx.shuffle(&mut rng);
            let n_hold = (normals.len() / 10).min(normals.len() - 1);
            let mut hold: Vec<usize> = idx[..n_hold].to_vec();
            hold.sort_unstable();
            let mut held = Vec::with_capacity(n_hold + val.len());
            let mut keep = Vec::with_capacity(normals.len() - n_hold);
            for (i, b) in normals.iter().enumerate() {
                if hold.binary_search(&i).is_ok() {
                    held.push(b.clone());
                } else {
                    keep.push(b.clone());
                }
            }
            held.extend(val.iter().cloned());
            (keep, held)
        }
        _ => (normals.to_vec(), Vec::new()),
    };

    let mut params = init_params(&cfg.arch(dim), cfg.seed)?;
    let mut state = AdamState::new(&params);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(BATCH_STREAM);
    let mut prior_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    prior_rng.set_stream(PRIOR_STREAM);

    let mut history = TrainHistory {
        losses: Vec::with_capacity(cfg.epochs * cfg.iters_per_epoch),
        epoch_auc: Vec::with_capacity(cfg.epochs),
        iters_per_epoch: cfg.iters_per_epoch,
    };
    let holdout_labels: Vec<u8> = holdout.iter().map(|b| b.label).collect();

    for _epoch in 0..cfg.epochs {
        for _ in 0..cfg.iters_per_epoch {
            let iteration = history.losses.len();
            let batch = stratified_batch(&pool, anomalies, cfg.batch_size, &mut batch_rng)?;
            let reference = draw_reference(&cfg.prior, &mut prior_rng)?;
            let (loss, grads) = batch_gradients(&params, &batch, &reference, &cfg.mil, cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    reason: format!("batch loss is {loss}"),
                    last_good: Box::new(params),
                });
            }
            let before = params.clone();
            if let Err(e) = adam_step(&mut params, &grads, &mut state, &cfg.optimizer) {
                return Err(match e {
                    Error::Numeric(reason) => Error::Diverged {
                        iteration,
                        reason,
                        last_good: Box::new(before),
                    },
                    other => other,
                });
            }
            if !params.is_finite() {
                return Err(Error::Diverged {
                    iteration,
                    reason: "parameters became non-finite".into(),
                    last_good: Box::new(before),
                });
            }
            history.losses.push(loss);
        }
        let auc = if holdout.is_empty() {
            None
        } else {
            let scores = score_bags(&holdout, &params, cfg.mil.k_fraction)?;
            auc_roc(&scores, &holdout_labels).ok()
        };
        history.epoch_auc.push(auc);
    }
    Ok((params, history))
}

/// Reference statistics used to compute deviations after training. Drawn
/// once from the prior on a stream of its own, so they depend only on the
/// seed and the prior config.
pub fn inference_reference(cfg: &TrainConfig) -> Result<ReferenceStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(INFERENCE_STREAM);
    draw_reference(&cfg.prior, &mut rng)
}
