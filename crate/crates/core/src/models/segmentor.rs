use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{run_stack, Bound, ConvLayer, Network, ParamSet, HIDDEN_ACTIVATION};
use crate::autodiff::{Activation, Graph, Var};
use crate::error::{PanError, Result};
use crate::tensor::Tensor;

/// Output channels of the ten encoder layers at width 1.
const ENCODER: [usize; 10] = [8, 8, 16, 16, 16, 32, 32, 32, 32, 32];
/// Encoder layers (0-based) that downsample by 2.
const ENCODER_STRIDED: [usize; 3] = [2, 5, 8];
const BOTTLENECK_LAYERS: usize = 4;
const BOTTLENECK_CH: usize = 32;
/// Decoder layers (0-based) preceded by a 2× nearest upsample.
const DECODER_UPSAMPLED: [usize; 3] = [1, 4, 7];

/// Total spatial reduction between input and bottleneck.
pub const DOWNSAMPLE_FACTOR: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentorConfig {
    pub width: usize,
    pub input_hw: (usize, usize),
}

impl SegmentorConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if self.width == 0 {
            return Err(PanError::Config("segmentor width must be at least 1".into()));
        }
        if h == 0 || w == 0 || h % DOWNSAMPLE_FACTOR != 0 || w % DOWNSAMPLE_FACTOR != 0 {
            return Err(PanError::Config(format!(
                "segmentor input {h}x{w} is not divisible by {DOWNSAMPLE_FACTOR}"
            )));
        }
        Ok(())
    }

    /// Channels of the bottleneck tap.
    pub fn bottleneck_channels(&self) -> usize {
        BOTTLENECK_CH * self.width
    }

    pub fn bottleneck_hw(&self) -> (usize, usize) {
        (self.input_hw.0 / DOWNSAMPLE_FACTOR, self.input_hw.1 / DOWNSAMPLE_FACTOR)
    }
}

/// Fixed affine map `(x - mean) / std` applied to raw intensities before
/// the first layer. Not trained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        InputNorm { mean: 0.0, std: 1.0 }
    }
}

impl InputNorm {
    /// Population mean and standard deviation over every voxel of `volumes`.
    pub fn fit<'a>(volumes: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for t in volumes {
            n += t.numel();
            sum += t.sum();
            sq += t.data().iter().map(|v| v * v).sum::<f64>();
        }
        if n == 0 {
            return Err(PanError::Config("cannot fit input statistics to no data".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        InputNorm { mean, std: var.sqrt() }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.mean.is_finite() && self.std.is_finite() && self.std > 1e-12 {
            Ok(self)
        } else {
            Err(PanError::Config(format!("input statistics {self:?} are degenerate")))
        }
    }
}

/// Encoder-decoder with a 10/4/10 conv layout and a 1×1 sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentor {
    config: SegmentorConfig,
    params: ParamSet,
    input_norm: InputNorm,
    encoder: Vec<ConvLayer>,
    bottleneck: Vec<ConvLayer>,
    decoder: Vec<ConvLayer>,
    head: ConvLayer,
}

#[derive(Clone, Copy, Debug)]
pub struct SegmentorOutput {
    /// `[N, 1, H, W]` foreground probabilities.
    pub prob_map: Var,
    /// `[N, c, H/8, W/8]` activation after the last bottleneck layer.
    pub bottleneck: Var,
}

pub fn build_segmentor(width: usize, input_hw: (usize, usize), seed: u64) -> Result<Segmentor> {
    let config = SegmentorConfig { width, input_hw };
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let act = Some(HIDDEN_ACTIVATION);

    let mut in_ch = 1;
    let mut encoder = Vec::with_capacity(ENCODER.len());
    for (i, &c) in ENCODER.iter().enumerate() {
        let stride = if ENCODER_STRIDED.contains(&i) { 2 } else { 1 };
        let out = c * width;
        encoder.push(ConvLayer::init(&mut params, &format!("enc{i}"), in_ch, out, 3, stride, act, &mut rng));
        in_ch = out;
    }
    let mut bottleneck = Vec::with_capacity(BOTTLENECK_LAYERS);
    for i in 0..BOTTLENECK_LAYERS {
        let out = BOTTLENECK_CH * width;
        bottleneck.push(ConvLayer::init(&mut params, &format!("mid{i}"), in_ch, out, 3, 1, act, &mut rng));
        in_ch = out;
    }
    let mut decoder = Vec::with_capacity(ENCODER.len());
    for (i, &c) in ENCODER.iter().rev().enumerate() {
        let out = c * width;
        decoder.push(ConvLayer::init(&mut params, &format!("dec{i}"), in_ch, out, 3, 1, act, &mut rng));
        in_ch = out;
    }
    let head = ConvLayer::init(&mut params, "head", in_ch, 1, 1, 1, Some(Activation::Sigmoid), &mut rng);
    Ok(Segmentor {
        config,
        params,
        input_norm: InputNorm::default(),
        encoder,
        bottleneck,
        decoder,
        head,
    })
}

impl Segmentor {
    pub fn config(&self) -> &SegmentorConfig {
        &self.config
    }

    pub fn input_norm(&self) -> InputNorm {
        self.input_norm
    }

    pub fn set_input_norm(&mut self, norm: InputNorm) -> Result<()> {
        self.input_norm = norm.validated()?;
        Ok(())
    }

    /// Conv layer counts as (encoder, bottleneck, decoder, head).
    pub fn layer_counts(&self) -> (usize, usize, usize, usize) {
        (self.encoder.len(), self.bottleneck.len(), self.decoder.len(), 1)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, batch: Var) -> Result<SegmentorOutput> {
        let [n, c, h, w] = g.value(batch).dims4("segmentor")?;
        if c != 1 || (h, w) != self.config.input_hw {
            return Err(PanError::dim(
                "segmentor",
                format!(
                    "expected [N, 1, {}, {}], got {:?}",
                    self.config.input_hw.0,
                    self.config.input_hw.1,
                    g.value(batch).shape()
                ),
            ));
        }
        let batch = if self.input_norm == InputNorm::default() {
            batch
        } else {
            let shift = g.constant(Tensor::full(&[n, 1, h, w], -self.input_norm.mean));
            let centred = g.add(batch, shift)?;
            g.scale(centred, 1.0 / self.input_norm.std)
        };
        let x = run_stack(&self.encoder, g, p, batch)?;
        let bottleneck = run_stack(&self.bottleneck, g, p, x)?;
        let mut x = bottleneck;
        for (i, layer) in self.decoder.iter().enumerate() {
            if DECODER_UPSAMPLED.contains(&i) {
                x = g.upsample_nearest(x, 2)?;
            }
            x = layer.forward(g, p, x)?;
        }
        let prob_map = self.head.forward(g, p, x)?;
        Ok(SegmentorOutput { prob_map, bottleneck })
    }

    /// Frozen forward pass, returning (probabilities, bottleneck features).
    pub fn predict(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, &p, x)?;
        Ok((g.value(out.prob_map).clone(), g.value(out.bottleneck).clone()))
    }
}

impl Network for Segmentor {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}
