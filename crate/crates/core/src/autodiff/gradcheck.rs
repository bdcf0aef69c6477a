//! Central finite-difference gradient checking.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{PanError, Result};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub pass: bool,
    /// Number of scalar coordinates compared.
    pub checked: usize,
    /// Coordinates left out because the ±step interval straddles a ReLU kink,
    /// where a central difference does not estimate the derivative.
    pub skipped_kinks: usize,
    /// `(input index, flat coordinate)` of the worst mismatch.
    pub worst: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Check only this many randomly chosen coordinates per input tensor.
    pub coords_per_input: Option<usize>,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(tolerance: f64) -> Self {
        GradCheckOptions {
            step: DEFAULT_STEP,
            tolerance,
            coords_per_input: None,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every coordinate of standard-normal inputs of the given shapes.
pub fn grad_check<F>(builder: F, input_shapes: &[Vec<usize>], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let inputs: Vec<Tensor> = input_shapes.iter().map(|s| Tensor::randn(s, 1.0, &mut rng)).collect();
    grad_check_at(builder, &inputs, &GradCheckOptions::new(tolerance))
}

pub fn grad_check_at<F>(builder: F, inputs: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(opts.tolerance > 0.0) {
        return Err(PanError::Parameter {
            op: "grad_check",
            detail: format!("tolerance must be positive, got {}", opts.tolerance),
        });
    }
    let analytic = analytic_gradients(&builder, inputs)?;
    let coords = select_coords(inputs, opts);
    let (numeric, smooth) = numeric_gradients_smooth(&builder, inputs, &coords, opts.step)?;
    Ok(compare(&analytic, &numeric, &smooth, opts.tolerance, coords.iter().map(Vec::len).sum()))
}

/// Gradients of the builder's scalar output with respect to each input.
pub fn analytic_gradients<F>(builder: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = builder(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect())
}

/// Scalar output and kink signature at `inputs`.
fn evaluate<F>(builder: &F, inputs: &[Tensor]) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = builder(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(PanError::Contract(format!("grad_check builder returned shape {:?}", v.shape())));
    }
    Ok((v.item(), g.kink_signature()))
}

fn select_coords(inputs: &[Tensor], opts: &GradCheckOptions) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    inputs
        .iter()
        .map(|t| match opts.coords_per_input {
            Some(k) if k < t.numel() => {
                let mut idx = index::sample(&mut rng, t.numel(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..t.numel()).collect(),
        })
        .collect()
}

/// Central differences at the listed coordinates; other entries stay zero.
pub fn numeric_gradients<F>(builder: &F, inputs: &[Tensor], coords: &[Vec<usize>], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    Ok(numeric_gradients_smooth(builder, inputs, coords, step)?.0)
}

/// Central differences plus, per input, the coordinates whose ±step
/// evaluations stay on the same side of every ReLU kink as the base point.
pub fn numeric_gradients_smooth<F>(builder: &F, inputs: &[Tensor], coords: &[Vec<usize>], step: f64) -> Result<(Vec<Tensor>, Vec<Vec<usize>>)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (_, base) = evaluate(builder, inputs)?;
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    let mut smooth = Vec::with_capacity(inputs.len());
    for (i, idxs) in coords.iter().enumerate() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        let mut keep = Vec::with_capacity(idxs.len());
        for &k in idxs {
            let x0 = inputs[i].data()[k];
            work[i].data_mut()[k] = x0 + step;
            let (plus, sig_plus) = evaluate(builder, &work)?;
            work[i].data_mut()[k] = x0 - step;
            let (minus, sig_minus) = evaluate(builder, &work)?;
            work[i].data_mut()[k] = x0;
            grad.data_mut()[k] = (plus - minus) / (2.0 * step);
            if sig_plus == base && sig_minus == base {
                keep.push(k);
            }
        }
        out.push(grad);
        smooth.push(keep);
    }
    Ok((out, smooth))
}

/// Compare at `coords`; `requested` is the number of coordinates originally
/// asked for, so the difference is reported as skipped.
pub fn compare(analytic: &[Tensor], numeric: &[Tensor], coords: &[Vec<usize>], tolerance: f64, requested: usize) -> GradCheckReport {
    let mut max_rel_error = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for (i, idxs) in coords.iter().enumerate() {
        for &k in idxs {
            let e = relative_error(analytic[i].data()[k], numeric[i].data()[k]);
            checked += 1;
            if e > max_rel_error || e.is_nan() {
                max_rel_error = e;
                worst = Some((i, k));
            }
        }
    }
    let skipped_kinks = requested.saturating_sub(checked);
    GradCheckReport {
        max_rel_error,
        // Mostly-kinked checks say nothing; demand the bulk was compared.
        pass: max_rel_error <= tolerance && skipped_kinks * 10 <= requested,
        checked,
        skipped_kinks,
        worst,
    }
}

/// Every coordinate of every input.
pub fn all_coords(inputs: &[Tensor]) -> Vec<Vec<usize>> {
    inputs.iter().map(|t| (0..t.numel()).collect()).collect()
}
