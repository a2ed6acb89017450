//! The anomaly scoring network: a feature learner mapping each instance to
//! a representation `q`, followed by one linear unit turning `q` into a
//! scalar score.
//!
//! Hidden feature layers use ReLU. The last feature layer is linear so the
//! representation, and therefore the score, can go negative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate, Activation, DenseLayer, Tensor};
use crate::bag::Bag;
use crate::error::{Error, Result};

/// Default hidden widths after the input dimension.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

/// Feature-learner layers plus the linear scoring unit (always last).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    arch: Vec<usize>,
    layers: Vec<DenseLayer>,
}

impl NetworkParams {
    /// Assembles parameters from explicit layers; the last layer must be the
    /// `L -> 1` scorer.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Config(
                "need at least one feature layer and the scoring unit".into(),
            ));
        }
        let mut arch = vec![layers[0].fan_in()];
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in() != *arch.last().unwrap() {
                return Err(Error::dim(format!("layer {i} fan-in"), arch.last().unwrap(), l.fan_in()));
            }
            arch.push(l.fan_out());
        }
        if arch.pop() != Some(1) {
            return Err(Error::Config("scoring unit must have a single output".into()));
        }
        let params = Self { arch, layers };
        if !params.is_finite() {
            return Err(Error::Numeric("parameters contain non-finite values".into()));
        }
        Ok(params)
    }

    /// `[D, h1, ..., L]`: input width followed by feature-layer widths.
    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn representation_dim(&self) -> usize {
        *self.arch.last().unwrap()
    }

    /// All layers, scorer last.
    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn feature_layers(&self) -> &[DenseLayer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn scorer(&self) -> &DenseLayer {
        self.layers.last().unwrap()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

/// Random initialization: weights uniform in `±sqrt(6 / fan_in)`, biases 0.
pub fn init_params(arch: &[usize], seed: u64) -> Result<NetworkParams> {
    if arch.len() < 2 {
        return Err(Error::Config(format!(
            "architecture needs an input width and at least one feature layer, got {arch:?}"
        )));
    }
    if let Some(i) = arch.iter().position(|&w| w == 0) {
        return Err(Error::Config(format!("layer width {i} is zero in {arch:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut widths = arch.to_vec();
    widths.push(1);
    let n_layers = widths.len() - 1;
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let (fan_in, fan_out) = (widths[i], widths[i + 1]);
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        // hidden feature layers only; the representation and scorer are linear
        let activation = if i + 2 < n_layers {
            Activation::Relu
        } else {
            Activation::Identity
        };
        layers.push(DenseLayer::new(
            Tensor::new(vec![fan_in, fan_out], weights)?,
            Tensor::zeros(vec![fan_out]),
            activation,
        )?);
    }
    NetworkParams::from_layers(layers)
}

/// Representation `q` of one instance.
pub fn embed(instance: &[f64], params: &NetworkParams) -> Result<Vec<f64>> {
    if instance.len() != params.input_dim() {
        return Err(Error::dim("instance", format!("D = {}", params.input_dim()), instance.len()));
    }
    let x = Tensor::new(vec![1, instance.len()], instance.to_vec())?;
    Ok(evaluate(params.feature_layers(), &x)?.into_data())
}

/// The linear scoring unit `sum_k w_k q_k + bias`.
pub fn score_instance(q: &[f64], params: &NetworkParams) -> Result<f64> {
    let scorer = params.scorer();
    if q.len() != scorer.fan_in() {
        return Err(Error::dim("representation", scorer.fan_in(), q.len()));
    }
    let x = Tensor::new(vec![1, q.len()], q.to_vec())?;
    Ok(scorer.apply(&x)?.data()[0])
}

/// Scores of every instance in a bag, in instance order.
pub fn score_bag_instances(bag: &Bag, params: &NetworkParams) -> Result<Vec<f64>> {
    if bag.instances.is_empty() {
        return Err(Error::Contract(format!("bag {} has no instances", bag.id)));
    }
    score_rows(&bag.instances, params)
}

/// Scores a list of instance vectors in one batched pass.
pub fn score_rows(rows: &[Vec<f64>], params: &NetworkParams) -> Result<Vec<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != params.input_dim()) {
        return Err(Error::dim("instance", format!("D = {}", params.input_dim()), bad.len()));
    }
    let x = Tensor::from_rows(rows)?;
    Ok(evaluate(params.layers(), &x)?.into_data())
}
