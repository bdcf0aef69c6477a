//! Axial occupancy projection of volumes and of stacked segmentor predictions.

use crate::autodiff::{Graph, Var};
use crate::data::Volume;
use crate::error::{PanError, Result};
use crate::models::{Bound, Network, Segmentor};
use crate::tensor::Tensor;

/// A 2D axial projection, `P(i,j) = 1 - exp(-sum_k V(k,i,j))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `[H, W]`, every pixel in `[0, 1)` for finite non-negative input.
    pub image: Tensor,
    /// `(H, W, D)` of the projected volume.
    pub source_dims: (usize, usize, usize),
}

fn depth_hw(volume: &Tensor) -> Result<(usize, usize, usize)> {
    match volume.shape() {
        &[d, h, w] => Ok((d, h, w)),
        &[d, 1, h, w] => Ok((d, h, w)),
        s => Err(PanError::dim("project_volume", format!("expected [D, H, W], got {s:?}"))),
    }
}

/// Project a `[D, H, W]` (or `[D, 1, H, W]`) volume of non-negative values
/// along its leading, axial axis.
pub fn project_volume(volume: &Tensor) -> Result<Projection> {
    let (d, h, w) = depth_hw(volume)?;
    let mut g = Graph::new();
    let v = g.constant(volume.clone());
    let p = g.project_axial(v)?;
    Ok(Projection {
        image: g.value(p).reshape(&[h, w])?,
        source_dims: (h, w, d),
    })
}

/// Run the segmentor over every axial slice of `slices` (`[D, 1, H, W]`),
/// stack the probability maps and project them, all inside `g` so that a
/// loss on the projection backpropagates into the segmentor parameters.
///
/// Returns `(projection [1, 1, H, W], per-slice probabilities [D, 1, H, W])`.
pub fn project_prediction_stack_in(g: &mut Graph, segmentor: &Segmentor, params: &Bound, slices: Var) -> Result<(Var, Var)> {
    let out = segmentor.forward(g, params, slices)?;
    let proj = g.project_axial(out.prob_map)?;
    Ok((proj, out.prob_map))
}

/// Frozen version of [`project_prediction_stack_in`] on a whole volume.
pub fn project_prediction_stack(segmentor: &Segmentor, volume: &Volume) -> Result<Projection> {
    let (d, h, w) = volume.dims();
    let mut g = Graph::new();
    let p = segmentor.params().bind(&mut g, false);
    let x = g.constant(volume.slices());
    let (proj, _) = project_prediction_stack_in(&mut g, segmentor, &p, x)?;
    Ok(Projection {
        image: g.value(proj).reshape(&[h, w])?,
        source_dims: (h, w, d),
    })
}
