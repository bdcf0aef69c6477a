use rand::Rng;

use super::{Bound, ConvLayer, ParamSet, HIDDEN_ACTIVATION};
use crate::autodiff::{Graph, Var};
use crate::error::{PanError, Result};

/// Soft spatial attention: two 1×1 convolutions to a single-channel logit
/// map, a spatial softmax, and multiplicative gating of the input features.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionModule {
    channels: usize,
    reduce: ConvLayer,
    score: ConvLayer,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// `[N, 1, h, w]`, non-negative, summing to 1 per sample.
    pub weights: Var,
    /// `[N, c, h, w]` features scaled by `weights`.
    pub gated: Var,
}

impl AttentionModule {
    pub(crate) fn init(params: &mut ParamSet, prefix: &str, channels: usize, rng: &mut impl Rng) -> Self {
        let hidden = (channels / 2).max(1);
        let reduce = ConvLayer::init(params, &format!("{prefix}.reduce"), channels, hidden, 1, 1, Some(HIDDEN_ACTIVATION), rng);
        // Softmax cancels any constant shift of the logits.
        let score = ConvLayer::init_unbiased(params, &format!("{prefix}.score"), hidden, 1, 1, 1, None, rng);
        AttentionModule { channels, reduce, score }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, feats: Var) -> Result<AttentionOutput> {
        let [_, c, _, _] = g.value(feats).dims4("attention")?;
        if c != self.channels {
            return Err(PanError::dim("attention", format!("expected {} channels, got {c}", self.channels)));
        }
        let h = self.reduce.forward(g, p, feats)?;
        let logits = self.score.forward(g, p, h)?;
        let weights = g.spatial_softmax(logits)?;
        let gated = g.mul(feats, weights)?;
        Ok(AttentionOutput { weights, gated })
    }
}

impl AttentionModule {
    /// A free-standing module with its own parameter set.
    pub fn standalone(channels: usize, seed: u64) -> (Self, ParamSet) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let module = Self::init(&mut params, "attn", channels, &mut rng);
        (module, params)
    }
}
