//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations are recorded in execution order, so every node's parents
//! precede it and a single reverse sweep accumulates all adjoints. The op
//! set is deliberately small: matrix products, bias broadcast, ReLU,
//! absolute value, elementwise affine maps, constant masks, sums, means,
//! a segmented top-K mean and a fused focal loss.
//!
//! ReLU and `abs` use 0 as their subgradient at exactly 0.

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::mil::top_k_indices;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Affine { x: NodeId, scale: f64 },
    MulConst { x: NodeId, factors: Vec<f64> },
    Add(NodeId, NodeId),
    Mean(NodeId),
    SegmentTopKMean {
        x: NodeId,
        // absolute indices into `x`, per segment
        selected: Vec<Vec<usize>>,
    },
    Focal {
        x: NodeId,
        labels: Vec<u8>,
        gamma: f64,
        alpha: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`NodeId`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to `id`. `None` for constants.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant during backward.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn tracks(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.tracks(a) || self.tracks(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`m` bias to every row of an `[n, m]` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if xv.shape().len() != 2 || bv.len() != xv.cols() {
            return Err(Error::dim(
                "bias add",
                format!("bias of length {}", xv.cols()),
                format!("{:?}", bv.shape()),
            ));
        }
        let m = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.tracks(x) || self.tracks(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, |v| if v > 0.0 { v } else { 0.0 });
        let rg = self.tracks(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let value = self.map(x, f64::abs);
        let rg = self.tracks(x);
        self.push(value, Op::Abs(x), rg)
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let value = self.map(x, |v| scale * v + shift);
        let rg = self.tracks(x);
        self.push(value, Op::Affine { x, scale }, rg)
    }

    /// Elementwise `max(0, margin - x)`.
    pub fn hinge(&mut self, x: NodeId, margin: f64) -> NodeId {
        let shifted = self.affine(x, -1.0, margin);
        self.relu(shifted)
    }

    /// Elementwise product with a constant tensor of the same length.
    pub fn mul_const(&mut self, x: NodeId, factors: Vec<f64>) -> Result<NodeId> {
        let xv = self.value(x);
        if factors.len() != xv.len() {
            return Err(Error::dim("constant factors", xv.len(), factors.len()));
        }
        let data = xv.data().iter().zip(&factors).map(|(a, b)| a * b).collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.tracks(x);
        Ok(self.push(value, Op::MulConst { x, factors }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(Error::dim(
                "elementwise add",
                format!("{:?}", av.shape()),
                format!("{:?}", bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.tracks(a) || self.tracks(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Mean over all entries, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.len() as f64);
        let rg = self.tracks(x);
        self.push(value, Op::Mean(x), rg)
    }

    /// For each contiguous segment of the flattened `x`, the mean of its `k`
    /// largest entries (ties go to the lowest index). `segments` holds
    /// `(len, k)` pairs covering `x` in order. The selected absolute indices
    /// are returned for reuse by explanation code.
    pub fn segment_top_k_mean(
        &mut self,
        x: NodeId,
        segments: &[(usize, usize)],
    ) -> Result<(NodeId, Vec<Vec<usize>>)> {
        let xv = self.value(x);
        let total: usize = segments.iter().map(|s| s.0).sum();
        if total != xv.len() || segments.is_empty() {
            return Err(Error::dim("segmented top-K input", total, xv.len()));
        }
        let mut out = Vec::with_capacity(segments.len());
        let mut selected = Vec::with_capacity(segments.len());
        let mut start = 0;
        for &(len, k) in segments {
            if len == 0 || k == 0 || k > len {
                return Err(Error::Contract(format!(
                    "top-K segment needs 1 <= k <= len, got k={k}, len={len}"
                )));
            }
            let seg = &xv.data()[start..start + len];
            let picked: Vec<usize> = top_k_indices(seg, k).into_iter().map(|j| start + j).collect();
            let sum: f64 = picked.iter().map(|&j| xv.data()[j]).sum();
            out.push(sum / k as f64);
            selected.push(picked);
            start += len;
        }
        let value = Tensor::vector(out)?;
        let rg = self.tracks(x);
        let id = self.push(
            value,
            Op::SegmentTopKMean {
                x,
                selected: selected.clone(),
            },
            rg,
        );
        Ok((id, selected))
    }

    /// Elementwise focal loss `-alpha_t (1 - p_t)^gamma ln p_t` with
    /// `p = sigmoid(x)`; `ln` is clamped at `p_t >= 1e-12`.
    pub fn focal(&mut self, x: NodeId, labels: Vec<u8>, gamma: f64, alpha: f64) -> Result<NodeId> {
        let xv = self.value(x);
        if labels.len() != xv.len() {
            return Err(Error::dim("focal labels", xv.len(), labels.len()));
        }
        let data = xv
            .data()
            .iter()
            .zip(&labels)
            .map(|(&s, &y)| focal_value_and_slope(s, y, gamma, alpha).0)
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), data)?;
        let rg = self.tracks(x);
        Ok(self.push(
            value,
            Op::Focal {
                x,
                labels,
                gamma,
                alpha,
            },
            rg,
        ))
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        Tensor::new(xv.shape().to_vec(), data).expect("shape preserved")
    }

    /// Reverse sweep from the scalar `output`. Consumes the tape.
    pub fn backward(self, output: NodeId) -> Result<Gradients> {
        let out_len = self.nodes[output.0].value.len();
        if out_len != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, node {} has {} entries",
                output.0, out_len
            )));
        }
        let mut grads: Vec<Option<Tensor>> = self
            .nodes
            .iter()
            .map(|n| n.requires_grad.then(|| Tensor::zeros(n.value.shape().to_vec())))
            .collect();
        let Some(seed) = grads[output.0].as_mut() else {
            return Ok(Gradients { grads });
        };
        seed.data_mut()[0] = 1.0;

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let upstream = grads[id].take().expect("tracked node has a gradient slot");
            self.propagate(node, &upstream, &mut grads);
            grads[id] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = grads[a.0].as_mut() {
                    // dA = dC · Bᵀ
                    let ga = ga.data_mut();
                    for i in 0..n {
                        let g_row = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let b_row = &bv.data()[kk * m..(kk + 1) * m];
                            let s: f64 = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
                            ga[i * k + kk] += s;
                        }
                    }
                }
                if let Some(gb) = grads[b.0].as_mut() {
                    // dB = Aᵀ · dC
                    let gb = gb.data_mut();
                    for i in 0..n {
                        let g_row = &g[i * m..(i + 1) * m];
                        for kk in 0..k {
                            let a_ik = av.data()[i * k + kk];
                            if a_ik == 0.0 {
                                continue;
                            }
                            for (dst, &gv) in gb[kk * m..(kk + 1) * m].iter_mut().zip(g_row) {
                                *dst += a_ik * gv;
                            }
                        }
                    }
                }
            }
            Op::AddBias(x, bias) => {
                accumulate(grads, *x, g.iter().copied());
                if let Some(gb) = grads[bias.0].as_mut() {
                    let m = gb.len();
                    let gb = gb.data_mut();
                    for row in g.chunks(m) {
                        for (dst, v) in gb.iter_mut().zip(row) {
                            *dst += v;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                accumulate(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 }),
                );
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                accumulate(
                    grads,
                    *x,
                    g.iter().zip(xv).map(|(&gv, &v)| {
                        if v > 0.0 {
                            gv
                        } else if v < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, g.iter().map(|gv| gv * scale));
            }
            Op::MulConst { x, factors } => {
                accumulate(grads, *x, g.iter().zip(factors).map(|(gv, f)| gv * f));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.iter().copied());
                accumulate(grads, *b, g.iter().copied());
            }
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                let share = g[0] / n;
                accumulate(grads, *x, std::iter::repeat_n(share, self.value(*x).len()));
            }
            Op::SegmentTopKMean { x, selected } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    let gx = gx.data_mut();
                    for (seg, picked) in selected.iter().enumerate() {
                        let share = g[seg] / picked.len() as f64;
                        for &j in picked {
                            gx[j] += share;
                        }
                    }
                }
            }
            Op::Focal {
                x,
                labels,
                gamma,
                alpha,
            } => {
                let xv = self.value(*x).data();
                accumulate(
                    grads,
                    *x,
                    g.iter().zip(xv).zip(labels).map(|((gv, &s), &y)| {
                        gv * focal_value_and_slope(s, y, *gamma, *alpha).1
                    }),
                );
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, values: impl Iterator<Item = f64>) {
    if let Some(gx) = grads[id.0].as_mut() {
        for (dst, v) in gx.data_mut().iter_mut().zip(values) {
            *dst += v;
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Focal loss value and its derivative with respect to the logit.
pub(crate) fn focal_value_and_slope(score: f64, y: u8, gamma: f64, alpha: f64) -> (f64, f64) {
    let (sign, alpha_t) = if y == 1 { (1.0, alpha) } else { (-1.0, 1.0 - alpha) };
    let p_t = sigmoid(sign * score);
    let q_t = sigmoid(-sign * score); // 1 - p_t without cancellation
    let (log_p, dlog_p) = if p_t >= 1e-12 {
        (p_t.ln(), 1.0 / p_t)
    } else {
        (1e-12f64.ln(), 0.0)
    };
    let weight = q_t.powf(gamma);
    let value = -alpha_t * weight * log_p;
    let dweight = if gamma == 0.0 || q_t == 0.0 {
        0.0
    } else {
        -gamma * q_t.powf(gamma - 1.0)
    };
    let dloss_dpt = -alpha_t * (dweight * log_p + weight * dlog_p);
    let dpt_ds = sign * p_t * q_t;
    (value, dloss_dpt * dpt_ds)
}
