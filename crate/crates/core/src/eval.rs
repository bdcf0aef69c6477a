//! Dice similarity and test-set evaluation.

use crate::data::Sample;
use crate::error::{PanError, Result};
use crate::models::Segmentor;
use crate::tensor::Tensor;

/// `2|A∩B| / (|A| + |B|)` of two binary masks; 1 when both are empty.
pub fn dsc(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(PanError::dim(
            "dsc",
            format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape()),
        ));
    }
    let (mut both, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if !(p == 0.0 || p == 1.0) || !(g == 0.0 || g == 1.0) {
            return Err(PanError::Domain {
                op: "dsc",
                detail: format!("masks must be binary, found {p} / {g}"),
            });
        }
        let (p, g) = (p == 1.0, g == 1.0);
        both += (p && g) as usize;
        a += p as usize;
        b += g as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Anything that maps a `[D, 1, H, W]` stack of slices to per-pixel
/// foreground probabilities of the same shape.
pub trait SliceSegmenter {
    fn predict_slices(&self, slices: &Tensor) -> Result<Tensor>;
}

impl SliceSegmenter for Segmentor {
    fn predict_slices(&self, slices: &Tensor) -> Result<Tensor> {
        Ok(self.predict(slices)?.0)
    }
}

/// Per-volume DSC and its summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    /// `(sample id, DSC)` in test-set order.
    pub per_volume: Vec<(String, f64)>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl EvalRecord {
    pub fn from_scores(per_volume: Vec<(String, f64)>) -> Result<Self> {
        if per_volume.is_empty() {
            return Err(PanError::Config("nothing to summarize: empty test set".into()));
        }
        let n = per_volume.len() as f64;
        let mean = per_volume.iter().map(|(_, d)| d).sum::<f64>() / n;
        let var = per_volume.iter().map(|(_, d)| (d - mean).powi(2)).sum::<f64>() / n;
        let min = per_volume.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
        let max = per_volume.iter().map(|(_, d)| *d).fold(f64::NEG_INFINITY, f64::max);
        Ok(EvalRecord {
            per_volume,
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            min,
            max,
        })
    }
}

/// Slice-wise inference on each test volume, binarized at `threshold`
/// (`p >= threshold` is foreground), scored by volumetric DSC.
pub fn evaluate(segmenter: &dyn SliceSegmenter, test: &[Sample], threshold: f64) -> Result<EvalRecord> {
    if test.is_empty() {
        return Err(PanError::Config("evaluation needs at least one test volume".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(PanError::Config(format!("threshold {threshold} must lie in (0, 1)")));
    }
    let mut scores = Vec::with_capacity(test.len());
    for s in test {
        let probs = segmenter.predict_slices(&s.volume.slices())?;
        let pred = probs.map(|p| if p >= threshold { 1.0 } else { 0.0 });
        scores.push((s.id.clone(), dsc(&pred, &s.mask_slices())?));
    }
    EvalRecord::from_scores(scores)
}
