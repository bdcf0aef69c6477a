//! Pixel-level weighted BCE, the two discriminator losses, and the hybrid
//! segmentor objective `bce - λ·l_Ds - β·l_Dp`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, Var};
use crate::error::{PanError, Result};
use crate::models::{Bound, ProjectiveDiscriminator, SpatialDiscriminator};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the spatial adversarial term.
    pub lambda: f64,
    /// Weight of the projective adversarial term.
    pub beta: f64,
    /// Positive-class weight of the pixel loss.
    pub w_pos: f64,
    /// Clamp applied to probabilities before every log.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            beta: 0.1,
            w_pos: 1.0,
            epsilon: 1e-7,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(PanError::Config(format!("epsilon {} must lie in (0, 1e-3]", self.epsilon)));
        }
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PanError::Config(format!("{name} {v} must be finite and non-negative")));
            }
        }
        if !(self.w_pos.is_finite() && self.w_pos > 0.0) {
            return Err(PanError::Config(format!("w_pos {} must be finite and positive", self.w_pos)));
        }
        Ok(())
    }
}

/// How the adversarial signal enters the segmentor objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdversarialForm {
    /// `-λ·l_D` as written in the min-max objective.
    #[default]
    MinMax,
    /// `+λ·bce(D(fake), 1)`.
    NonSaturating,
}

impl fmt::Display for AdversarialForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdversarialForm::MinMax => "minmax",
            AdversarialForm::NonSaturating => "nonsaturating",
        })
    }
}

impl FromStr for AdversarialForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "minmax" => Ok(AdversarialForm::MinMax),
            "nonsaturating" => Ok(AdversarialForm::NonSaturating),
            other => Err(format!("expected minmax or nonsaturating, got {other:?}")),
        }
    }
}

/// Weighted BCE of concrete tensors; see [`Graph::weighted_bce`].
pub fn weighted_bce(pred: &Tensor, target: &Tensor, w_pos: f64, epsilon: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (p, y) = (g.constant(pred.clone()), g.constant(target.clone()));
    let l = g.weighted_bce(p, y, w_pos, epsilon)?;
    Ok(g.value(l).item())
}

/// A discriminator loss recorded in a graph, with its parts.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorLoss {
    /// `real + fake`
    pub total: Var,
    /// BCE of the ground-truth scores against 1.
    pub real: Var,
    /// BCE of the prediction scores against 0.
    pub fake: Var,
    pub real_score: Var,
    pub fake_score: Var,
}

fn labelled_bce(g: &mut Graph, score: Var, label: f64, eps: f64) -> Result<Var> {
    let target = g.constant(Tensor::full(g.value(score).shape(), label));
    g.weighted_bce(score, target, 1.0, eps)
}

fn assemble(g: &mut Graph, real_score: Var, fake_score: Var, eps: f64) -> Result<DiscriminatorLoss> {
    let real = labelled_bce(g, real_score, 1.0, eps)?;
    let fake = labelled_bce(g, fake_score, 0.0, eps)?;
    let total = g.add(real, fake)?;
    Ok(DiscriminatorLoss {
        total,
        real,
        fake,
        real_score,
        fake_score,
    })
}

/// `bce(Ds(I, y), 1) + bce(Ds(I, ŷ), 0)`, both terms batch-averaged.
#[allow(clippy::too_many_arguments)]
pub fn ds_loss(
    g: &mut Graph,
    d: &SpatialDiscriminator,
    p: &Bound,
    image: Var,
    gt_mask: Var,
    pred_mask: Var,
    bottleneck: Option<Var>,
    epsilon: f64,
) -> Result<DiscriminatorLoss> {
    let real_score = d.forward(g, p, image, gt_mask, bottleneck)?;
    let fake_score = d.forward(g, p, image, pred_mask, bottleneck)?;
    assemble(g, real_score, fake_score, epsilon)
}

/// `bce(Dp(P_I, P_y), 1) + bce(Dp(P_I, P_ŷ), 0)`.
pub fn dp_loss(
    g: &mut Graph,
    d: &ProjectiveDiscriminator,
    p: &Bound,
    proj_image: Var,
    proj_gt: Var,
    proj_pred: Var,
    epsilon: f64,
) -> Result<DiscriminatorLoss> {
    let real_score = d.forward(g, p, proj_image, proj_gt)?;
    let fake_score = d.forward(g, p, proj_image, proj_pred)?;
    assemble(g, real_score, fake_score, epsilon)
}

/// `bce_term - λ·l_ds - β·l_dp`
pub fn hybrid_loss(bce_term: f64, l_ds: f64, l_dp: f64, weights: &LossWeights) -> f64 {
    bce_term - weights.lambda * l_ds - weights.beta * l_dp
}

/// The term a segmentor adds per discriminator, before weighting: `-l_D`
/// in the min-max form, or `bce(D(fake), 1)` in the non-saturating form.
pub fn segmentor_adversarial_term(g: &mut Graph, loss: &DiscriminatorLoss, form: AdversarialForm, epsilon: f64) -> Result<Var> {
    match form {
        AdversarialForm::MinMax => Ok(g.scale(loss.total, -1.0)),
        AdversarialForm::NonSaturating => labelled_bce(g, loss.fake_score, 1.0, epsilon),
    }
}

/// Graph form of [`hybrid_loss`]: `bce + λ·adv_ds + β·adv_dp` with the
/// adversarial terms from [`segmentor_adversarial_term`]. Zero-weighted or
/// absent terms are left out entirely.
pub fn hybrid_loss_in(g: &mut Graph, bce: Var, adv_ds: Option<Var>, adv_dp: Option<Var>, weights: &LossWeights) -> Result<Var> {
    let mut total = bce;
    for (term, w) in [(adv_ds, weights.lambda), (adv_dp, weights.beta)] {
        if let Some(t) = term.filter(|_| w != 0.0) {
            let t = g.scale(t, w);
            total = g.add(total, t)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::{build_segmentor, DpInput, DsInput, Network};

    const LN2: f64 = std::f64::consts::LN_2;
    const EPS: f64 = 1e-7;

    /// Scalar loop over one sample's pixels, averaged over samples.
    fn bce_oracle(pred: &Tensor, target: &Tensor, w: f64, eps: f64) -> f64 {
        let n = pred.shape()[0];
        let per = pred.numel() / n;
        let mut total = 0.0;
        for s in 0..n {
            let mut acc = 0.0;
            for i in 0..per {
                let p = pred.data()[s * per + i].clamp(eps, 1.0 - eps);
                let y = target.data()[s * per + i];
                acc += w * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            }
            total -= acc;
        }
        total / n as f64
    }

    fn px(v: f64) -> Tensor {
        Tensor::full(&[1, 1, 1, 1], v)
    }

    #[test]
    fn bce_closed_forms() {
        assert!((weighted_bce(&px(0.5), &px(1.0), 1.0, EPS).unwrap() - LN2).abs() < 1e-15);
        assert!((weighted_bce(&px(0.5), &px(1.0), 2.0, EPS).unwrap() - 2.0 * LN2).abs() < 1e-15);

        let y = Tensor::new(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bound = 4.0 * 3.0 * -(1.0 - EPS).ln();
        assert!(weighted_bce(&y, &y, 3.0, EPS).unwrap() <= bound);

        assert!(matches!(
            weighted_bce(&px(0.5), &Tensor::zeros(&[1, 1, 1, 2]), 1.0, EPS),
            Err(PanError::Dimension { .. })
        ));
        assert!(matches!(weighted_bce(&px(0.5), &px(1.5), 1.0, EPS), Err(PanError::Domain { .. })));
    }

    #[test]
    fn bce_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (n, w) in [(1, 1.0), (3, 4.5), (2, 20.0)] {
            let pred = Tensor::rand_uniform(&[n, 1, 8, 8], 0.0, 1.0, &mut rng);
            let target = Tensor::rand_uniform(&[n, 1, 8, 8], 0.0, 1.0, &mut rng).map(f64::round);
            let got = weighted_bce(&pred, &target, w, EPS).unwrap();
            assert!((got - bce_oracle(&pred, &target, w, EPS)).abs() < 1e-10);
        }
        let saturated = Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let wrong = Tensor::new(&[1, 1, 1, 2], vec![1.0, 0.0]).unwrap();
        assert!(weighted_bce(&saturated, &wrong, 5.0, EPS).unwrap().is_finite());
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        for bad in [
            LossWeights {
                epsilon: 0.0,
                ..Default::default()
            },
            LossWeights {
                epsilon: 2e-3,
                ..Default::default()
            },
            LossWeights {
                lambda: -0.1,
                ..Default::default()
            },
            LossWeights {
                beta: f64::NAN,
                ..Default::default()
            },
            LossWeights {
                w_pos: 0.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert_eq!("nonsaturating".parse::<AdversarialForm>().unwrap(), AdversarialForm::NonSaturating);
        assert_eq!(AdversarialForm::MinMax.to_string(), "minmax");
        assert!("maxmin".parse::<AdversarialForm>().is_err());
    }

    #[test]
    fn discriminator_loss_closed_forms() {
        let mut g = Graph::new();
        let half = g.constant(Tensor::full(&[3, 1], 0.5));
        let l = assemble(&mut g, half, half, EPS).unwrap();
        assert!((g.value(l.total).item() - 2.0 * LN2).abs() < 1e-15);

        let real = g.constant(Tensor::full(&[2, 1], 1.0 - EPS));
        let fake = g.constant(Tensor::full(&[2, 1], EPS));
        let l = assemble(&mut g, real, fake, EPS).unwrap();
        let v = g.value(l.total).item();
        assert!((v - 2.0 * EPS).abs() < 1e-12, "{v}");

        // Identical real and fake scores d: -ln d - ln(1 - d), minimal at 0.5.
        for d in [0.1, 0.3, 0.5, 0.8] {
            let s = g.constant(Tensor::full(&[1, 1], d));
            let l = assemble(&mut g, s, s, EPS).unwrap();
            let v = g.value(l.total).item();
            assert!((v - (-d.ln() - (1.0 - d).ln())).abs() < 1e-12);
            assert!(v >= 2.0 * LN2 - 1e-15);
        }
    }

    fn toy_ds(attention: bool) -> SpatialDiscriminator {
        SpatialDiscriminator::new(1, DsInput::Product, attention.then_some(32), 5)
    }

    #[test]
    fn ds_and_dp_losses_match_composed_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let ds = toy_ds(true);
        let image = Tensor::rand_uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng);
        let gt = Tensor::rand_uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng).map(f64::round);
        let pred = Tensor::rand_uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng);
        let feats = Tensor::randn(&[2, 32, 2, 2], 1.0, &mut rng);

        let mut g = Graph::new();
        let p = ds.params().bind(&mut g, false);
        let vars: Vec<Var> = [&image, &gt, &pred, &feats].iter().map(|t| g.constant((*t).clone())).collect();
        let l = ds_loss(&mut g, &ds, &p, vars[0], vars[1], vars[2], Some(vars[3]), EPS).unwrap();
        let real = ds.score(&image, &gt, Some(&feats)).unwrap();
        let fake = ds.score(&image, &pred, Some(&feats)).unwrap();
        let composed = bce_oracle(&real, &Tensor::ones(&[2, 1]), 1.0, EPS) + bce_oracle(&fake, &Tensor::zeros(&[2, 1]), 1.0, EPS);
        assert!((g.value(l.total).item() - composed).abs() < 1e-10);

        let dp = ProjectiveDiscriminator::new(1, DpInput::Pair, 6);
        let pi = Tensor::rand_uniform(&[16, 16], 0.0, 0.99, &mut rng);
        let py = Tensor::rand_uniform(&[16, 16], 0.0, 0.99, &mut rng);
        let pp = Tensor::rand_uniform(&[16, 16], 0.0, 0.99, &mut rng);
        let mut g = Graph::new();
        let p = dp.params().bind(&mut g, false);
        let v: Vec<Var> = [&pi, &py, &pp].iter().map(|t| g.constant(t.reshape(&[1, 1, 16, 16]).unwrap())).collect();
        let l = dp_loss(&mut g, &dp, &p, v[0], v[1], v[2], EPS).unwrap();
        let (sr, sf) = (dp.score(&pi, &py).unwrap(), dp.score(&pi, &pp).unwrap());
        let composed = -sr.clamp(EPS, 1.0 - EPS).ln() - (1.0 - sf.clamp(EPS, 1.0 - EPS)).ln();
        assert!((g.value(l.total).item() - composed).abs() < 1e-10);
    }

    #[test]
    fn hybrid_arithmetic() {
        let zero = LossWeights {
            lambda: 0.0,
            beta: 0.0,
            ..Default::default()
        };
        for bce in [0.0, 1e-300, 0.3, 17.25, 1e300] {
            assert_eq!(hybrid_loss(bce, 2.7, 9.1, &zero).to_bits(), bce.to_bits());
        }
        let w = LossWeights {
            lambda: 0.5,
            beta: 0.1,
            ..Default::default()
        };
        assert!((hybrid_loss(1.0, 2.0, 3.0, &w) + 0.3).abs() < 1e-15);

        let mut g = Graph::new();
        let b = g.constant(Tensor::scalar(0.75));
        let a = g.constant(Tensor::scalar(2.0));
        assert_eq!(hybrid_loss_in(&mut g, b, Some(a), Some(a), &zero).unwrap(), b);
        let h = hybrid_loss_in(&mut g, b, Some(a), None, &w).unwrap();
        assert_eq!(g.value(h).item(), 1.75);
    }

    /// S-side gradients of the hybrid objective through a frozen Ds.
    fn segmentor_grads(image: &Tensor, gt: &Tensor, real_mask: &Tensor, form: AdversarialForm, full_loss: bool) -> Vec<Tensor> {
        let seg = build_segmentor(1, (16, 16), 9).unwrap();
        let ds = toy_ds(false);
        let mut g = Graph::new();
        let sp = seg.params().bind(&mut g, true);
        let dp = ds.params().bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = g.constant(gt.clone());
        let real = g.constant(real_mask.clone());
        let out = seg.forward(&mut g, &sp, x).unwrap();
        let bce = g.weighted_bce(out.prob_map, y, 2.0, EPS).unwrap();
        let weights = LossWeights {
            lambda: 1.0,
            beta: 0.0,
            ..Default::default()
        };
        let loss = if full_loss {
            let l = ds_loss(&mut g, &ds, &dp, x, real, out.prob_map, None, EPS).unwrap();
            let adv = segmentor_adversarial_term(&mut g, &l, form, EPS).unwrap();
            hybrid_loss_in(&mut g, bce, Some(adv), None, &weights).unwrap()
        } else {
            // bce - λ·(fake term only)
            let fake_score = ds.forward(&mut g, &dp, x, out.prob_map, None).unwrap();
            let fake = labelled_bce(&mut g, fake_score, 0.0, EPS).unwrap();
            let neg = g.scale(fake, -1.0);
            g.add(bce, neg).unwrap()
        };
        g.backward(loss).unwrap();
        sp.grads(&g)
    }

    #[test]
    fn hybrid_gradient_ignores_the_real_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let image = Tensor::rand_uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng);
        let gt = Tensor::rand_uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng).map(f64::round);
        let full = segmentor_grads(&image, &gt, &gt, AdversarialForm::MinMax, true);
        let fake_only = segmentor_grads(&image, &gt, &gt, AdversarialForm::MinMax, false);
        for (a, b) in full.iter().zip(&fake_only) {
            assert!(a.max_abs_diff(b) <= 1e-12 * (1.0 + b.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))));
        }
        let moved = segmentor_grads(&image, &gt, &gt.map(|v| 1.0 - v), AdversarialForm::MinMax, true);
        assert_eq!(moved, full);
        let ns = segmentor_grads(&image, &gt, &gt, AdversarialForm::NonSaturating, true);
        assert!(ns.iter().zip(&full).any(|(a, b)| a.max_abs_diff(b) > 0.0));
    }

    #[test]
    fn hybrid_gradient_matches_finite_differences() {
        use crate::autodiff::gradcheck::{grad_check_at, GradCheckOptions};
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let ds = toy_ds(false);
        let image = Tensor::rand_uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng);
        let gt = Tensor::rand_uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut rng).map(f64::round);
        let pred = Tensor::rand_uniform(&[1, 1, 8, 8], 0.05, 0.95, &mut rng);
        let w = LossWeights {
            lambda: 1.0,
            beta: 0.0,
            ..Default::default()
        };
        let build = |full: bool| {
            let (ds, image, gt) = (ds.clone(), image.clone(), gt.clone());
            move |g: &mut Graph, v: &[Var]| -> Result<Var> {
                let p = ds.params().bind(g, false);
                let (x, y) = (g.constant(image.clone()), g.constant(gt.clone()));
                let bce = g.weighted_bce(v[0], y, 1.0, EPS)?;
                if full {
                    let l = ds_loss(g, &ds, &p, x, y, v[0], None, EPS)?;
                    let adv = segmentor_adversarial_term(g, &l, AdversarialForm::MinMax, EPS)?;
                    hybrid_loss_in(g, bce, Some(adv), None, &w)
                } else {
                    let s = ds.forward(g, &p, x, v[0], None)?;
                    let fake = labelled_bce(g, s, 0.0, EPS)?;
                    let neg = g.scale(fake, -1.0);
                    g.add(bce, neg)
                }
            }
        };
        let opts = GradCheckOptions::new(1e-4);
        for full in [true, false] {
            let r = grad_check_at(build(full), std::slice::from_ref(&pred), &opts).unwrap();
            assert!(r.pass, "{r:?}");
        }
        let a = crate::autodiff::gradcheck::analytic_gradients(&build(true), std::slice::from_ref(&pred)).unwrap();
        let b = crate::autodiff::gradcheck::analytic_gradients(&build(false), &[pred]).unwrap();
        assert!(a[0].max_abs_diff(&b[0]) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bce_nonnegative_and_symmetric(vals in proptest::collection::vec((0.0f64..=1.0, 0u8..2), 1..20), w in 1.0f64..20.0) {
            let n = vals.len();
            let pred = Tensor::new(&[1, 1, 1, n], vals.iter().map(|v| v.0).collect()).unwrap();
            let y = Tensor::new(&[1, 1, 1, n], vals.iter().map(|v| v.1 as f64).collect()).unwrap();
            let l = weighted_bce(&pred, &y, w, EPS).unwrap();
            prop_assert!(l.is_finite() && l >= 0.0);
            let a = weighted_bce(&pred, &y, 1.0, EPS).unwrap();
            let b = weighted_bce(&pred.map(|p| 1.0 - p), &y.map(|t| 1.0 - t), 1.0, EPS).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
