//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node to a [`Graph`]; node indices are therefore a
//! topological order and [`Graph::backward`] is a single reverse sweep. A node
//! only carries a gradient when one of its inputs does, so freezing a network
//! amounts to inserting its parameters with `requires_grad = false`.

mod conv;
pub mod gradcheck;

use crate::error::{PanError, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    /// Negative-side slope in `[0, 1)`.
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(alpha) => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Logistic function, clamped to the open interval (0, 1) so that saturated
/// logits still produce a finite `log` and `log(1 - y)`.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: conv::ConvGeom,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    SpatialSoftmax {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Mul {
        a: Var,
        b: Var,
        broadcast: bool,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Sum {
        input: Var,
    },
    WeightedBce {
        pred: Var,
        target: Var,
        w_pos: f64,
        eps: f64,
    },
    ProjectAxial {
        input: Var,
    },
    GlobalAvgPool {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    SelectLeading {
        input: Var,
        indices: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample { .. } => "upsample_nearest",
            Op::Activation { .. } => "activation",
            Op::SpatialSoftmax { .. } => "spatial_softmax",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::WeightedBce { .. } => "weighted_bce",
            Op::ProjectAxial { .. } => "project_axial",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Reshape { .. } => "reshape",
            Op::SelectLeading { .. } => "select_leading",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, kernel, bias, .. } => vec![input, kernel, bias],
            Op::Add { a, b, .. } | Op::Mul { a, b, .. } | Op::ConcatChannels { a, b } => vec![a, b],
            Op::WeightedBce { pred, target, .. } => vec![pred, target],
            Op::Upsample { input, .. }
            | Op::Activation { input, .. }
            | Op::SpatialSoftmax { input }
            | Op::Scale { input, .. }
            | Op::Sum { input }
            | Op::ProjectAxial { input }
            | Op::GlobalAvgPool { input }
            | Op::Reshape { input }
            | Op::SelectLeading { input, .. } => vec![input],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// A recorded computation. Values are computed eagerly as nodes are added.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Hash of the sign pattern of every ReLU-family input. Two evaluations
    /// with equal signatures lie on the same linear piece of those kinks.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Activation {
                input,
                kind: Activation::Relu | Activation::LeakyRelu(_),
            } = node.op
            {
                for v in self.value(input).data() {
                    (*v >= 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        let geom = conv::ConvGeom::new(x, k, b, stride, padding)?;
        let out = conv::forward(x, k, b, &geom);
        Ok(self.push(Op::Conv2d { input, kernel, bias, geom }, out))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(PanError::Parameter {
                op: "upsample_nearest",
                detail: format!("factor must be >= 1, got {factor}"),
            });
        }
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("upsample_nearest")?;
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![0.0; n * c * ho * wo];
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * ho * wo..(plane + 1) * ho * wo];
            for i in 0..ho {
                for j in 0..wo {
                    dst[i * wo + j] = src[(i / factor) * w + j / factor];
                }
            }
        }
        let out = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(Op::Upsample { input, factor }, out))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        if let Activation::LeakyRelu(alpha) = kind {
            if !(0.0..1.0).contains(&alpha) {
                return Err(PanError::Parameter {
                    op: "activation",
                    detail: format!("leaky_relu alpha must lie in [0, 1), got {alpha}"),
                });
            }
        }
        let out = self.value(input).map(|v| kind.apply(v));
        Ok(self.push(Op::Activation { input, kind }, out))
    }

    /// Softmax over the flattened spatial positions of each sample of a
    /// single-channel `[N, 1, h, w]` map.
    pub fn spatial_softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("spatial_softmax")?;
        if c != 1 {
            return Err(PanError::dim("spatial_softmax", format!("expected 1 channel, got {c}")));
        }
        let per = h * w;
        let mut out = x.data().to_vec();
        for s in out.chunks_mut(per).take(n) {
            let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in s.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in s.iter_mut() {
                *v /= z;
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        Ok(self.push(Op::SpatialSoftmax { input }, out))
    }

    /// `b` must match `a` exactly, or be `[N,1,h,w]` against `a: [N,c,h,w]`.
    fn broadcast_mode(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            return Ok(false);
        }
        if sa.len() == 4 && sb.len() == 4 && sb[1] == 1 && sa[0] == sb[0] && sa[2..] == sb[2..] {
            return Ok(true);
        }
        Err(PanError::dim(op, format!("cannot combine {sa:?} with {sb:?}")))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let broadcast = self.broadcast_mode(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out: Vec<f64> = if broadcast {
            let [n, c, h, w] = ta.dims4(op)?;
            let per = h * w;
            let mut out = Vec::with_capacity(ta.numel());
            for s in 0..n {
                let wb = &tb.data()[s * per..(s + 1) * per];
                for ch in 0..c {
                    let base = (s * c + ch) * per;
                    out.extend(ta.data()[base..base + per].iter().zip(wb).map(|(&x, &y)| f(x, y)));
                }
            }
            out
        } else {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        Ok((Tensor::new(ta.shape(), out)?, broadcast))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, broadcast) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b, broadcast }, out))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, broadcast) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b, broadcast }, out))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = ta.dims4("concat_channels")?;
        let [nb, cb, hb, wb] = tb.dims4("concat_channels")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(PanError::dim(
                "concat_channels",
                format!("non-channel dims differ: {:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let per = h * w;
        let mut out = Vec::with_capacity(ta.numel() + tb.numel());
        for s in 0..n {
            out.extend_from_slice(&ta.data()[s * ca * per..(s + 1) * ca * per]);
            out.extend_from_slice(&tb.data()[s * cb * per..(s + 1) * cb * per]);
        }
        let out = Tensor::new(&[n, ca + cb, h, w], out)?;
        Ok(self.push(Op::ConcatChannels { a, b }, out))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(Op::Scale { input, factor }, out)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(Op::Sum { input }, out)
    }

    /// Positively weighted binary cross-entropy: summed over all elements of
    /// each sample, averaged over the leading (batch) axis. Predictions are
    /// clamped to `[eps, 1 - eps]` before taking logs.
    pub fn weighted_bce(&mut self, pred: Var, target: Var, w_pos: f64, eps: f64) -> Result<Var> {
        let (p, y) = (self.value(pred), self.value(target));
        if p.shape() != y.shape() {
            return Err(PanError::dim(
                "weighted_bce",
                format!("prediction {:?} vs target {:?}", p.shape(), y.shape()),
            ));
        }
        if let Some(bad) = y.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PanError::Domain {
                op: "weighted_bce",
                detail: format!("target value {bad} outside [0, 1]"),
            });
        }
        if !(w_pos.is_finite() && w_pos > 0.0) || !(eps > 0.0 && eps < 0.5) {
            return Err(PanError::Parameter {
                op: "weighted_bce",
                detail: format!("w_pos {w_pos} / eps {eps} out of range"),
            });
        }
        let batch = p.shape()[0] as f64;
        let total: f64 = p
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &y)| {
                let q = p.clamp(eps, 1.0 - eps);
                -(w_pos * y * q.ln() + (1.0 - y) * (1.0 - q).ln())
            })
            .sum();
        Ok(self.push(Op::WeightedBce { pred, target, w_pos, eps }, Tensor::scalar(total / batch)))
    }

    /// Axial occupancy projection `1 - exp(-sum_k x[k, ..])` over the leading
    /// axis. `[D, rest..]` maps to `[1, rest..]`. Inputs must be non-negative.
    pub fn project_axial(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        if let Some(bad) = x.data().iter().find(|v| !(**v >= 0.0)) {
            return Err(PanError::Domain {
                op: "project_axial",
                detail: format!("negative or NaN voxel {bad}"),
            });
        }
        let depth = x.shape()[0];
        let per = x.numel() / depth;
        let mut sums = vec![0.0; per];
        for slab in x.data().chunks(per) {
            for (s, v) in sums.iter_mut().zip(slab) {
                *s += v;
            }
        }
        let mut shape = x.shape().to_vec();
        shape[0] = 1;
        let out = Tensor::new(&shape, sums.into_iter().map(|s| 1.0 - (-s).exp()).collect())?;
        Ok(self.push(Op::ProjectAxial { input }, out))
    }

    /// `[N, C, H, W]` to `[N, C, 1, 1]` by spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("global_avg_pool")?;
        let per = h * w;
        let out: Vec<f64> = x.data().chunks(per).map(|p| p.iter().sum::<f64>() / per as f64).collect();
        let out = Tensor::new(&[n, c, 1, 1], out)?;
        Ok(self.push(Op::GlobalAvgPool { input }, out))
    }

    /// Rows `indices` of the leading axis, in that order.
    pub fn select_leading(&mut self, input: Var, indices: &[usize]) -> Result<Var> {
        let x = self.value(input);
        let lead = x.shape()[0];
        if indices.is_empty() {
            return Err(PanError::dim("select_leading", "no rows selected"));
        }
        if let Some(&bad) = indices.iter().find(|&&k| k >= lead) {
            return Err(PanError::dim("select_leading", format!("row {bad} out of {lead}")));
        }
        let out = Tensor::stack_leading(&indices.iter().map(|&k| x.sample(k)).collect::<Vec<_>>())?;
        Ok(self.push(
            Op::SelectLeading {
                input,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    /// A gradient-free copy of `v`'s current value.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshape(shape)?;
        Ok(self.push(Op::Reshape { input }, out))
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every node that depends
    /// on a `requires_grad` leaf holds d`loss`/d`node` (see [`grad`](Self::grad)).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(PanError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));
        }
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads)?;
            grads[i] = Some(gy);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                ref geom,
            } => {
                let g = conv::backward(
                    self.value(input),
                    self.value(kernel),
                    geom,
                    gy,
                    [needs(input), needs(kernel), needs(bias)],
                );
                for (v, t) in [(input, g.input), (kernel, g.kernel), (bias, g.bias)] {
                    if let Some(t) = t {
                        accumulate(grads, v, t);
                    }
                }
            }
            Op::Upsample { input, factor } => {
                let x = self.value(input);
                let [n, c, h, w] = x.dims4("upsample_nearest")?;
                let (ho, wo) = (h * factor, w * factor);
                let mut dx = vec![0.0; x.numel()];
                for plane in 0..n * c {
                    let src = &gy.data()[plane * ho * wo..(plane + 1) * ho * wo];
                    let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
                    for i in 0..ho {
                        for j in 0..wo {
                            dst[(i / factor) * w + j / factor] += src[i * wo + j];
                        }
                    }
                }
                accumulate(grads, input, Tensor::new(x.shape(), dx)?);
            }
            Op::Activation { input, kind } => {
                let x = self.value(input);
                let y = &node.value;
                let dx: Vec<f64> = match kind {
                    Activation::Relu => x.data().iter().zip(gy.data()).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect(),
                    Activation::LeakyRelu(alpha) => x
                        .data()
                        .iter()
                        .zip(gy.data())
                        .map(|(&x, &g)| if x >= 0.0 { g } else { alpha * g })
                        .collect(),
                    Activation::Sigmoid => y.data().iter().zip(gy.data()).map(|(&y, &g)| g * y * (1.0 - y)).collect(),
                };
                accumulate(grads, input, Tensor::new(x.shape(), dx)?);
            }
            Op::SpatialSoftmax { input } => {
                let y = &node.value;
                let [_, _, h, w] = y.dims4("spatial_softmax")?;
                let per = h * w;
                let mut dx = Vec::with_capacity(y.numel());
                for (ys, gs) in y.data().chunks(per).zip(gy.data().chunks(per)) {
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    dx.extend(ys.iter().zip(gs).map(|(&y, &g)| y * (g - dot)));
                }
                accumulate(grads, input, Tensor::new(y.shape(), dx)?);
            }
            Op::Add { a, b, broadcast } => {
                if needs(a) {
                    accumulate(grads, a, gy.clone());
                }
                if needs(b) {
                    let db = if broadcast { reduce_channels(gy, None)? } else { gy.clone() };
                    accumulate(grads, b, db);
                }
            }
            Op::Mul { a, b, broadcast } => {
                let (ta, tb) = (self.value(a), self.value(b));
                if needs(a) {
                    let da = if broadcast {
                        let [n, c, h, w] = ta.dims4("mul")?;
                        let per = h * w;
                        let mut da = Vec::with_capacity(ta.numel());
                        for s in 0..n {
                            let wb = &tb.data()[s * per..(s + 1) * per];
                            for ch in 0..c {
                                let base = (s * c + ch) * per;
                                da.extend(gy.data()[base..base + per].iter().zip(wb).map(|(g, y)| g * y));
                            }
                        }
                        Tensor::new(ta.shape(), da)?
                    } else {
                        Tensor::new(ta.shape(), gy.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect())?
                    };
                    accumulate(grads, a, da);
                }
                if needs(b) {
                    let db = if broadcast {
                        reduce_channels(gy, Some(ta))?
                    } else {
                        Tensor::new(tb.shape(), gy.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect())?
                    };
                    accumulate(grads, b, db);
                }
            }
            Op::ConcatChannels { a, b } => {
                let (ta, tb) = (self.value(a), self.value(b));
                let [n, ca, h, w] = ta.dims4("concat_channels")?;
                let cb = tb.shape()[1];
                let per = h * w;
                let (mut da, mut db) = (Vec::with_capacity(ta.numel()), Vec::with_capacity(tb.numel()));
                for s in 0..n {
                    let base = s * (ca + cb) * per;
                    da.extend_from_slice(&gy.data()[base..base + ca * per]);
                    db.extend_from_slice(&gy.data()[base + ca * per..base + (ca + cb) * per]);
                }
                if needs(a) {
                    accumulate(grads, a, Tensor::new(ta.shape(), da)?);
                }
                if needs(b) {
                    accumulate(grads, b, Tensor::new(tb.shape(), db)?);
                }
            }
            Op::Scale { input, factor } => accumulate(grads, input, gy.map(|g| g * factor)),
            Op::Sum { input } => {
                let g = gy.item();
                accumulate(grads, input, Tensor::full(self.value(input).shape(), g));
            }
            Op::WeightedBce { pred, target, w_pos, eps } => {
                let (p, y) = (self.value(pred), self.value(target));
                let scale = gy.item() / p.shape()[0] as f64;
                if needs(pred) {
                    let dp = p
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&p, &y)| {
                            if p < eps || p > 1.0 - eps {
                                0.0
                            } else {
                                scale * (-w_pos * y / p + (1.0 - y) / (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(grads, pred, Tensor::new(p.shape(), dp)?);
                }
                if needs(target) {
                    let dy = p
                        .data()
                        .iter()
                        .map(|&p| {
                            let q = p.clamp(eps, 1.0 - eps);
                            -scale * (w_pos * q.ln() - (1.0 - q).ln())
                        })
                        .collect();
                    accumulate(grads, target, Tensor::new(y.shape(), dy)?);
                }
            }
            Op::ProjectAxial { input } => {
                let x = self.value(input);
                // d/dx[k,p] (1 - exp(-sum_k x)) = exp(-sum_k x) = 1 - out[p]
                let local: Vec<f64> = node.value.data().iter().zip(gy.data()).map(|(&o, &g)| g * (1.0 - o)).collect();
                let per = local.len();
                let dx: Vec<f64> = (0..x.numel()).map(|idx| local[idx % per]).collect();
                accumulate(grads, input, Tensor::new(x.shape(), dx)?);
            }
            Op::GlobalAvgPool { input } => {
                let x = self.value(input);
                let [_, _, h, w] = x.dims4("global_avg_pool")?;
                let per = h * w;
                let dx: Vec<f64> = (0..x.numel()).map(|idx| gy.data()[idx / per] / per as f64).collect();
                accumulate(grads, input, Tensor::new(x.shape(), dx)?);
            }
            Op::Reshape { input } => {
                accumulate(grads, input, gy.reshape(self.value(input).shape())?);
            }
            Op::SelectLeading { input, ref indices } => {
                let x = self.value(input);
                let per = x.numel() / x.shape()[0];
                let mut dx = vec![0.0; x.numel()];
                for (src, &k) in gy.data().chunks(per).zip(indices) {
                    for (d, g) in dx[k * per..(k + 1) * per].iter_mut().zip(src) {
                        *d += g;
                    }
                }
                accumulate(grads, input, Tensor::new(x.shape(), dx)?);
            }
        }
        Ok(())
    }
}

/// Sum `gy * a` (or `gy` alone) over channels, giving `[N,1,h,w]`.
fn reduce_channels(gy: &Tensor, a: Option<&Tensor>) -> Result<Tensor> {
    let [n, c, h, w] = gy.dims4("broadcast")?;
    let per = h * w;
    let mut out = vec![0.0; n * per];
    for s in 0..n {
        let dst = &mut out[s * per..(s + 1) * per];
        for ch in 0..c {
            let base = (s * c + ch) * per;
            let g = &gy.data()[base..base + per];
            match a {
                Some(a) => {
                    for ((d, g), x) in dst.iter_mut().zip(g).zip(&a.data()[base..base + per]) {
                        *d += g * x;
                    }
                }
                None => {
                    for (d, g) in dst.iter_mut().zip(g) {
                        *d += g;
                    }
                }
            }
        }
    }
    Tensor::new(&[n, 1, h, w], out)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}
