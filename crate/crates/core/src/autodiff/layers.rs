use serde::{Deserialize, Serialize};

use crate::autodiff::tape::{Gradients, NodeId, Tape};
use crate::autodiff::tensor::{matmul_kernel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

/// Fully connected layer `y = act(x · W + b)` with `W` of shape
/// `[fan_in, fan_out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "layer weight must be rank 2, got {:?}",
                weight.shape()
            )));
        }
        if bias.len() != weight.shape()[1] {
            return Err(Error::dim("layer bias", weight.shape()[1], bias.len()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Tape-free evaluation of one layer on an `[n, fan_in]` batch.
    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        let (n, k, m) = (input.rows(), self.fan_in(), self.fan_out());
        if input.cols() != k {
            return Err(Error::dim("dense layer input", k, input.cols()));
        }
        let mut out = vec![0.0; n * m];
        matmul_kernel(input.data(), self.weight.data(), n, k, m, &mut out);
        for row in out.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
                if self.activation == Activation::Relu && *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        Tensor::new(vec![n, m], out)
    }
}

/// Node ids of one layer's parameters on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
}

/// A forward pass recorded on a tape.
#[derive(Debug)]
pub struct Recorded {
    pub tape: Tape,
    pub input: NodeId,
    pub output: NodeId,
    pub params: Vec<LayerNodes>,
}

impl Recorded {
    pub fn output_value(&self) -> &Tensor {
        self.tape.value(self.output)
    }
}

fn check_input(layers: &[DenseLayer], input: &Tensor) -> Result<()> {
    let first = layers
        .first()
        .ok_or_else(|| Error::Contract("network has no layers".into()))?;
    if input.shape().len() != 2 || input.cols() != first.fan_in() {
        return Err(Error::dim(
            "layer 0 input",
            format!("[n, {}]", first.fan_in()),
            format!("{:?}", input.shape()),
        ));
    }
    Ok(())
}

/// Records `layers` applied to an existing tape node, registering every
/// weight and bias as a tracked variable.
pub fn record_layers(
    tape: &mut Tape,
    layers: &[DenseLayer],
    input: NodeId,
) -> Result<(NodeId, Vec<LayerNodes>)> {
    let mut h = input;
    let mut params = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let width = tape.value(h).cols();
        if width != layer.fan_in() {
            return Err(Error::dim(format!("layer {i} input"), layer.fan_in(), width));
        }
        let w = tape.variable(layer.weight.clone());
        let b = tape.variable(layer.bias.clone());
        let z = tape.matmul(h, w)?;
        let z = tape.add_bias(z, b)?;
        h = match layer.activation {
            Activation::Relu => tape.relu(z),
            Activation::Identity => z,
        };
        params.push(LayerNodes { weight: w, bias: b });
    }
    Ok((h, params))
}

/// Runs `layers` over an `[n, fan_in]` input, recording every op.
/// `track_input` decides whether input gradients are produced.
pub fn forward(layers: &[DenseLayer], input: &Tensor, track_input: bool) -> Result<Recorded> {
    check_input(layers, input)?;
    let mut tape = Tape::new();
    let x = if track_input {
        tape.variable(input.clone())
    } else {
        tape.constant(input.clone())
    };
    let (output, params) = record_layers(&mut tape, layers, x)?;
    Ok(Recorded {
        tape,
        input: x,
        output,
        params,
    })
}

/// Tape-free composition of `layers`.
pub fn evaluate(layers: &[DenseLayer], input: &Tensor) -> Result<Tensor> {
    check_input(layers, input)?;
    let mut h = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        h = layer.apply(&h).map_err(|e| match e {
            Error::Dimension { expected, got, .. } => Error::Dimension {
                context: format!("layer {i} input"),
                expected,
                got,
            },
            other => other,
        })?;
    }
    Ok(h)
}

/// Pulls `(dW, db)` per layer out of a gradient set.
pub fn layer_gradients(grads: &mut Gradients, nodes: &[LayerNodes]) -> Vec<(Tensor, Tensor)> {
    nodes
        .iter()
        .map(|n| {
            (
                grads.take(n.weight).expect("weights are tracked"),
                grads.take(n.bias).expect("biases are tracked"),
            )
        })
        .collect()
}
