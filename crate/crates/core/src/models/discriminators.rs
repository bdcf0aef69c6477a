use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{run_stack, AttentionModule, Bound, ConvLayer, Network, ParamSet, HIDDEN_ACTIVATION};
use crate::autodiff::{Activation, Graph, Var};
use crate::error::{PanError, Result};
use crate::tensor::Tensor;

/// What the mask branch of the spatial discriminator sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DsInput {
    /// The segmented object, `image ⊙ mask` (one channel).
    Product,
    /// `image` and `mask` stacked as two channels.
    Pair,
}

/// What the projective discriminator sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpInput {
    /// Projected image and projected mask (two channels).
    Pair,
    /// Projected mask only.
    MaskOnly,
}

const BRANCH: [(usize, usize); 4] = [(8, 2), (16, 2), (32, 2), (32, 1)];
const ATTN_BRANCH: usize = 4;
const SHARED: usize = 3;
const FEATURES: usize = 32;

fn strided_stack(params: &mut ParamSet, prefix: &str, in_ch: usize, width: usize, rng: &mut ChaCha8Rng) -> (Vec<ConvLayer>, usize) {
    let mut c = in_ch;
    let layers = BRANCH
        .iter()
        .enumerate()
        .map(|(i, &(out, stride))| {
            let l = ConvLayer::init(params, &format!("{prefix}{i}"), c, out * width, 3, stride, Some(HIDDEN_ACTIVATION), rng);
            c = out * width;
            l
        })
        .collect();
    (layers, c)
}

/// Global pooling followed by a 1×1 sigmoid head, reshaped to `[N, 1]`.
fn score_head(head: &ConvLayer, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(x)?;
    let s = head.forward(g, p, pooled)?;
    let n = g.value(s).shape()[0];
    g.reshape(s, &[n, 1])
}

/// Two-branch discriminator over segmented slices, with late fusion of
/// attention-gated segmentor bottleneck features.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialDiscriminator {
    params: ParamSet,
    input: DsInput,
    mask_branch: Vec<ConvLayer>,
    attention: Option<(AttentionModule, Vec<ConvLayer>)>,
    shared: Vec<ConvLayer>,
    head: ConvLayer,
}

impl SpatialDiscriminator {
    /// `feature_channels` is the segmentor bottleneck width; `None` builds the
    /// single-branch variant with no attention tap.
    pub fn new(width: usize, input: DsInput, feature_channels: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let in_ch = match input {
            DsInput::Product => 1,
            DsInput::Pair => 2,
        };
        let (mask_branch, mut fused) = strided_stack(&mut params, "ds.mask", in_ch, width, &mut rng);
        let attention = feature_channels.map(|c| {
            let module = AttentionModule::init(&mut params, "ds.attn", c, &mut rng);
            let mut ch = c;
            let convs = (0..ATTN_BRANCH)
                .map(|i| {
                    let l = ConvLayer::init(
                        &mut params,
                        &format!("ds.feat{i}"),
                        ch,
                        FEATURES * width,
                        3,
                        1,
                        Some(HIDDEN_ACTIVATION),
                        &mut rng,
                    );
                    ch = FEATURES * width;
                    l
                })
                .collect();
            fused += ch;
            (module, convs)
        });
        let shared = (0..SHARED)
            .map(|i| {
                let l = ConvLayer::init(
                    &mut params,
                    &format!("ds.shared{i}"),
                    fused,
                    FEATURES * width,
                    3,
                    1,
                    Some(HIDDEN_ACTIVATION),
                    &mut rng,
                );
                fused = FEATURES * width;
                l
            })
            .collect();
        let head = ConvLayer::init(&mut params, "ds.head", fused, 1, 1, 1, Some(Activation::Sigmoid), &mut rng);
        SpatialDiscriminator {
            params,
            input,
            mask_branch,
            attention,
            shared,
            head,
        }
    }

    pub fn has_attention(&self) -> bool {
        self.attention.is_some()
    }

    pub fn input_mode(&self) -> DsInput {
        self.input
    }

    /// Scores `[N, 1]` in (0, 1). `bottleneck` is ignored by the
    /// single-branch variant and required otherwise.
    pub fn forward(&self, g: &mut Graph, p: &Bound, image: Var, mask: Var, bottleneck: Option<Var>) -> Result<Var> {
        if g.value(image).shape() != g.value(mask).shape() {
            return Err(PanError::dim(
                "ds_forward",
                format!("image {:?} vs mask {:?}", g.value(image).shape(), g.value(mask).shape()),
            ));
        }
        let top_in = match self.input {
            DsInput::Product => g.mul(image, mask)?,
            DsInput::Pair => g.concat_channels(image, mask)?,
        };
        let mut x = run_stack(&self.mask_branch, g, p, top_in)?;
        if let Some((attn, convs)) = &self.attention {
            let feats = bottleneck.ok_or_else(|| PanError::Contract("attention branch needs bottleneck features".into()))?;
            let a = attn.forward(g, p, feats)?;
            let f = run_stack(convs, g, p, a.gated)?;
            let (sx, sf) = (g.value(x).shape(), g.value(f).shape());
            if sx[2..] != sf[2..] || sx[0] != sf[0] {
                return Err(PanError::dim(
                    "ds_forward",
                    format!("mask branch {sx:?} does not align with feature branch {sf:?}"),
                ));
            }
            x = g.concat_channels(x, f)?;
        }
        let x = run_stack(&self.shared, g, p, x)?;
        score_head(&self.head, g, p, x)
    }

    /// Attention weights for `bottleneck` (frozen), if the branch exists.
    pub fn attention_weights(&self, bottleneck: &Tensor) -> Result<Option<Tensor>> {
        let Some((attn, _)) = &self.attention else { return Ok(None) };
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = g.constant(bottleneck.clone());
        let out = attn.forward(&mut g, &p, f)?;
        Ok(Some(g.value(out.weights).clone()))
    }

    /// Frozen scoring of concrete tensors.
    pub fn score(&self, image: &Tensor, mask: &Tensor, bottleneck: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let i = g.constant(image.clone());
        let m = g.constant(mask.clone());
        let b = bottleneck.map(|b| g.constant(b.clone()));
        let s = self.forward(&mut g, &p, i, m, b)?;
        Ok(g.value(s).clone())
    }
}

impl Network for SpatialDiscriminator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Discriminator over axial projections of whole volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectiveDiscriminator {
    params: ParamSet,
    input: DpInput,
    convs: Vec<ConvLayer>,
    head: ConvLayer,
}

impl ProjectiveDiscriminator {
    pub fn new(width: usize, input: DpInput, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let in_ch = match input {
            DpInput::Pair => 2,
            DpInput::MaskOnly => 1,
        };
        let (convs, c) = strided_stack(&mut params, "dp.conv", in_ch, width, &mut rng);
        let head = ConvLayer::init(&mut params, "dp.head", c, 1, 1, 1, Some(Activation::Sigmoid), &mut rng);
        ProjectiveDiscriminator { params, input, convs, head }
    }

    pub fn input_mode(&self) -> DpInput {
        self.input
    }

    /// `proj_image` and `proj_mask` are `[1, 1, H, W]` projections; returns a
    /// `[1, 1]` score.
    pub fn forward(&self, g: &mut Graph, p: &Bound, proj_image: Var, proj_mask: Var) -> Result<Var> {
        let (si, sm) = (g.value(proj_image).shape(), g.value(proj_mask).shape());
        if si != sm {
            return Err(PanError::dim("dp_forward", format!("projection shapes {si:?} vs {sm:?}")));
        }
        let x = match self.input {
            DpInput::Pair => g.concat_channels(proj_image, proj_mask)?,
            DpInput::MaskOnly => proj_mask,
        };
        let x = run_stack(&self.convs, g, p, x)?;
        score_head(&self.head, g, p, x)
    }

    /// Frozen scoring of `[H, W]` projections.
    pub fn score(&self, proj_image: &Tensor, proj_mask: &Tensor) -> Result<f64> {
        if proj_image.shape() != proj_mask.shape() || proj_image.ndim() != 2 {
            return Err(PanError::dim(
                "dp_forward",
                format!("projection shapes {:?} vs {:?}", proj_image.shape(), proj_mask.shape()),
            ));
        }
        let [h, w] = [proj_image.shape()[0], proj_image.shape()[1]];
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let i = g.constant(proj_image.reshape(&[1, 1, h, w])?);
        let m = g.constant(proj_mask.reshape(&[1, 1, h, w])?);
        let s = self.forward(&mut g, &p, i, m)?;
        Ok(g.value(s).item())
    }
}

impl Network for ProjectiveDiscriminator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}
