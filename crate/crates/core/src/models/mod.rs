//! The segmentor and its two adversaries.
//!
//! Networks own their parameters in a [`ParamSet`]. A forward pass first binds
//! the set into a [`Graph`] (trainable or frozen) and then records its layers
//! against the bound handles, so the same network can be differentiated,
//! frozen, or finite-difference checked without changing its code.

mod attention;
mod discriminators;
mod segmentor;

pub use attention::{AttentionModule, AttentionOutput};
pub use discriminators::{DpInput, DsInput, ProjectiveDiscriminator, SpatialDiscriminator};
pub use segmentor::{build_segmentor, InputNorm, Segmentor, SegmentorConfig, SegmentorOutput, DOWNSAMPLE_FACTOR};

use rand::Rng;

use crate::autodiff::{Activation, Graph, Var};
use crate::error::{PanError, Result};
use crate::tensor::Tensor;

/// Hidden-layer nonlinearity used throughout.
pub const HIDDEN_ACTIVATION: Activation = Activation::LeakyRelu(0.2);

/// Named, ordered parameter tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Insert every tensor into `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        Bound(self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect())
    }

    /// Replace all tensors, checking names' count and shapes line up.
    pub fn assign(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.tensors.len() || tensors.iter().zip(&self.tensors).any(|(a, b)| a.shape() != b.shape()) {
            return Err(PanError::dim("param_set", "replacement tensors do not match layout"));
        }
        self.tensors = tensors;
        Ok(())
    }
}

/// Graph handles of a bound [`ParamSet`], in the same order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wrap explicit handles (e.g. those supplied by a gradient checker).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Gradients for each parameter after `g.backward`; zeros where none flowed.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.0
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect()
    }
}

/// 3×3 (or 1×1) convolution with an optional activation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConvLayer {
    weight: usize,
    bias: Option<usize>,
    out_ch: usize,
    stride: usize,
    padding: usize,
    act: Option<Activation>,
}

impl ConvLayer {
    /// He-style fan-in normal kernel, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        act: Option<Activation>,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let weight = params.push(
            format!("{name}.weight"),
            Tensor::randn(&[out_ch, in_ch, kernel, kernel], (2.0 / fan_in).sqrt(), rng),
        );
        let bias = Some(params.push(format!("{name}.bias"), Tensor::zeros(&[out_ch])));
        ConvLayer {
            weight,
            bias,
            out_ch,
            stride,
            padding: kernel / 2,
            act,
        }
    }

    /// As [`init`](Self::init) with the bias fixed at zero and not registered.
    #[allow(clippy::too_many_arguments)]
    pub fn init_unbiased(
        params: &mut ParamSet,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        act: Option<Activation>,
        rng: &mut impl Rng,
    ) -> Self {
        let mut scratch = ParamSet::new();
        let layer = Self::init(&mut scratch, name, in_ch, out_ch, kernel, stride, act, rng);
        let weight = params.push(format!("{name}.weight"), scratch.tensors()[layer.weight].clone());
        ConvLayer { weight, bias: None, ..layer }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let bias = match self.bias {
            Some(b) => p.0[b],
            None => g.constant(Tensor::zeros(&[self.out_ch])),
        };
        let y = g.conv2d(x, p.0[self.weight], bias, self.stride, self.padding)?;
        match self.act {
            Some(a) => g.activation(y, a),
            None => Ok(y),
        }
    }
}

pub(crate) fn run_stack(layers: &[ConvLayer], g: &mut Graph, p: &Bound, mut x: Var) -> Result<Var> {
    for l in layers {
        x = l.forward(g, p, x)?;
    }
    Ok(x)
}

/// Common access to a network's parameters.
pub trait Network {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
}
