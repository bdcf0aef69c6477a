//! Alternating adversarial training of the segmentor and its discriminators.
//!
//! Per training volume, in a per-epoch shuffled order:
//!
//! 1. for every slice batch, `ds_steps` updates of the spatial discriminator
//!    on the detached prediction, then `s_steps` updates of the segmentor
//!    through the frozen discriminators;
//! 2. on the last batch of the volume, the whole volume goes through the
//!    segmentor, its stacked prediction is projected, the projective
//!    discriminator is updated once, and the segmentor's first step on that
//!    batch also carries the projective term backpropagated through every
//!    slice.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::config::{TapGradient, TrainingConfig};
use crate::data::{slice_batches, Dataset, Sample, SliceBatch, SliceOrder};
use crate::error::{PanError, Result};
use crate::eval::evaluate;
use crate::losses::{dp_loss, ds_loss, hybrid_loss_in, segmentor_adversarial_term, LossWeights};
use crate::models::{build_segmentor, InputNorm, Network, ParamSet, ProjectiveDiscriminator, Segmentor, SpatialDiscriminator};
use crate::report::{emit_report, metrics_csv};
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "checkpoint.panckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.txt";

const W_POS_RANGE: (f64, f64) = (1.0, 20.0);

/// Subsystem seed from the root seed: the first 8 bytes of
/// `sha256(label ‖ seed_le)`. Adding a label never shifts another stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(seed.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Per-epoch running means; `NaN` marks a term that was never computed.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub bce: f64,
    pub l_ds: f64,
    pub l_dp: f64,
    pub hybrid: f64,
    pub ds_real_score: f64,
    pub ds_fake_score: f64,
    pub dp_real_score: f64,
    pub dp_fake_score: f64,
    pub test_dsc_mean: f64,
}

impl EpochMetrics {
    pub const COLUMNS: [&'static str; 10] = [
        "epoch",
        "bce",
        "l_ds",
        "l_dp",
        "hybrid",
        "ds_real_score",
        "ds_fake_score",
        "dp_real_score",
        "dp_fake_score",
        "test_dsc_mean",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.epoch as f64,
            self.bce,
            self.l_ds,
            self.l_dp,
            self.hybrid,
            self.ds_real_score,
            self.ds_fake_score,
            self.dp_real_score,
            self.dp_fake_score,
            self.test_dsc_mean,
        ]
    }

    fn from_values(v: &[f64]) -> Self {
        EpochMetrics {
            epoch: v[0] as usize,
            bce: v[1],
            l_ds: v[2],
            l_dp: v[3],
            hybrid: v[4],
            ds_real_score: v[5],
            ds_fake_score: v[6],
            dp_real_score: v[7],
            dp_fake_score: v[8],
            test_dsc_mean: v[9],
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn value(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

#[derive(Default)]
struct EpochAccum {
    bce: Mean,
    hybrid: Mean,
    l_ds: Mean,
    l_dp: Mean,
    ds_real: Mean,
    ds_fake: Mean,
    dp_real: Mean,
    dp_fake: Mean,
}

fn mean_of(t: &Tensor) -> f64 {
    t.sum() / t.numel() as f64
}

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PanError::Numerical(format!("{what} became {v}")))
    }
}

/// A network together with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Trained<N> {
    pub net: N,
    pub opt: AdamState,
}

impl<N: Network> Trained<N> {
    fn new(net: N) -> Self {
        let opt = AdamState::new(net.params());
        Trained { net, opt }
    }

    fn step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        adam_step(self.net.params_mut(), grads, &mut self.opt, cfg)
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainingConfig,
    weights: LossWeights,
    pub segmentor: Trained<Segmentor>,
    pub ds: Option<Trained<SpatialDiscriminator>>,
    pub dp: Option<Trained<ProjectiveDiscriminator>>,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochMetrics>,
}

/// Positive-pixel weight for `dataset` under `config`.
pub fn effective_w_pos(config: &TrainingConfig, dataset: &Dataset) -> f64 {
    if config.w_pos_auto {
        dataset.class_ratio().clamp(W_POS_RANGE.0, W_POS_RANGE.1)
    } else {
        config.weights.w_pos
    }
}

/// Networks as initialized for `config`; each draws from its own derived
/// seed, so the segmentor starts identically whatever discriminators exist.
pub fn init_networks(config: &TrainingConfig) -> Result<(Segmentor, Option<SpatialDiscriminator>, Option<ProjectiveDiscriminator>)> {
    let (_, h, w) = config.dhw;
    let seg = build_segmentor(config.width, (h, w), derive_seed(config.seed, "segmentor"))?;
    let feats = seg.config().bottleneck_channels();
    let ds = config.use_ds.then(|| {
        SpatialDiscriminator::new(
            config.width,
            config.ds_input,
            config.use_attention.then_some(feats),
            derive_seed(config.seed, "ds"),
        )
    });
    let dp = config
        .use_dp
        .then(|| ProjectiveDiscriminator::new(config.width, config.dp_input, derive_seed(config.seed, "dp")));
    Ok((seg, ds, dp))
}

impl Trainer {
    pub fn new(config: &TrainingConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        check_dataset(config, dataset)?;
        let (mut seg, ds, dp) = init_networks(config)?;
        seg.set_input_norm(InputNorm::fit(dataset.train.iter().map(|s| s.volume.intensities()))?)?;
        let weights = LossWeights {
            w_pos: effective_w_pos(config, dataset),
            ..config.weights
        };
        weights.validate()?;
        Ok(Trainer {
            config: config.clone(),
            weights,
            segmentor: Trained::new(seg),
            ds: ds.map(Trained::new),
            dp: dp.map(Trained::new),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "order")),
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
        }
    }

    /// One pass over the training volumes, then a test-set evaluation.
    pub fn train_epoch(&mut self, dataset: &Dataset) -> Result<EpochMetrics> {
        check_dataset(&self.config, dataset)?;
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut acc = EpochAccum::default();
        for i in order {
            let slice_seed: u64 = self.rng.gen();
            self.volume_step(&dataset.train[i], slice_seed, &mut acc)?;
        }
        self.epoch += 1;
        let test_dsc_mean = if dataset.test.is_empty() {
            f64::NAN
        } else {
            evaluate(&self.segmentor.net, &dataset.test, self.config.threshold)?.mean
        };
        let m = EpochMetrics {
            epoch: self.epoch,
            bce: acc.bce.value(),
            l_ds: acc.l_ds.value(),
            l_dp: acc.l_dp.value(),
            hybrid: acc.hybrid.value(),
            ds_real_score: acc.ds_real.value(),
            ds_fake_score: acc.ds_fake.value(),
            dp_real_score: acc.dp_real.value(),
            dp_fake_score: acc.dp_fake.value(),
            test_dsc_mean,
        };
        log::info!(
            "epoch {}: bce {:.4} hybrid {:.4} l_ds {:.4} l_dp {:.4} test dsc {:.4}",
            m.epoch,
            m.bce,
            m.hybrid,
            m.l_ds,
            m.l_dp,
            m.test_dsc_mean
        );
        self.history.push(m.clone());
        Ok(m)
    }

    fn volume_step(&mut self, sample: &Sample, slice_seed: u64, acc: &mut EpochAccum) -> Result<()> {
        let batches = slice_batches(sample, self.config.batch_size, SliceOrder::Shuffled(slice_seed))?;
        let last = batches.len() - 1;
        for (b, batch) in batches.iter().enumerate() {
            let volume = (self.dp.is_some() && b == last).then_some(sample);
            self.batch_step(batch, volume, acc)?;
        }
        Ok(())
    }

    /// Discriminator updates followed by segmentor updates on one batch.
    /// `volume` is set on the batch that also drives the projective branch.
    fn batch_step(&mut self, batch: &SliceBatch, volume: Option<&Sample>, acc: &mut EpochAccum) -> Result<()> {
        for s_iter in 0..self.config.s_steps {
            let volume = volume.filter(|_| s_iter == 0);
            let mut g = Graph::new();
            let sp = self.segmentor.net.params().bind(&mut g, true);
            let (prob, bottleneck, stacked) = match volume {
                Some(sample) => {
                    let x = g.constant(sample.volume.slices());
                    let out = self.segmentor.net.forward(&mut g, &sp, x)?;
                    let prob = g.select_leading(out.prob_map, &batch.slice_indices)?;
                    let feats = g.select_leading(out.bottleneck, &batch.slice_indices)?;
                    (prob, feats, Some(out.prob_map))
                }
                None => {
                    let x = g.constant(batch.images.clone());
                    let out = self.segmentor.net.forward(&mut g, &sp, x)?;
                    (out.prob_map, out.bottleneck, None)
                }
            };
            if s_iter == 0 {
                if self.ds.is_some() {
                    let (pred, feats) = (g.value(prob).clone(), g.value(bottleneck).clone());
                    for _ in 0..self.config.ds_steps {
                        self.ds_update(batch, &pred, &feats, acc)?;
                    }
                }
                if let (Some(sample), Some(stacked)) = (volume, stacked) {
                    let proj = crate::projection::project_volume(g.value(stacked))?;
                    self.dp_update(sample, &proj.image, acc)?;
                }
            }
            self.segmentor_update(g, sp.vars(), batch, prob, bottleneck, stacked.zip(volume), acc)?;
        }
        Ok(())
    }

    fn ds_update(&mut self, batch: &SliceBatch, pred: &Tensor, feats: &Tensor, acc: &mut EpochAccum) -> Result<()> {
        let eps = self.weights.epsilon;
        let lr = self.adam(self.config.lr_ds);
        let ds = self.ds.as_mut().expect("ds present");
        let mut g = Graph::new();
        let p = ds.net.params().bind(&mut g, true);
        let image = g.constant(batch.images.clone());
        let gt = g.constant(batch.masks.clone());
        let fake = g.constant(pred.clone());
        let feats = ds.net.has_attention().then(|| g.constant(feats.clone()));
        let l = ds_loss(&mut g, &ds.net, &p, image, gt, fake, feats, eps)?;
        acc.l_ds.add(finite("spatial discriminator loss", g.value(l.total).item())?);
        acc.ds_real.add(mean_of(g.value(l.real_score)));
        acc.ds_fake.add(mean_of(g.value(l.fake_score)));
        g.backward(l.total)?;
        ds.step(&p.grads(&g), &lr)
    }

    fn dp_update(&mut self, sample: &Sample, proj_pred: &Tensor, acc: &mut EpochAccum) -> Result<()> {
        let eps = self.weights.epsilon;
        let lr = self.adam(self.config.lr_dp);
        let (proj_image, proj_gt) = real_projections(sample)?;
        let dp = self.dp.as_mut().expect("dp present");
        let (_, h, w) = sample.volume.dims();
        let mut g = Graph::new();
        let p = dp.net.params().bind(&mut g, true);
        let pi = g.constant(proj_image);
        let py = g.constant(proj_gt);
        let pp = g.constant(proj_pred.reshape(&[1, 1, h, w])?);
        let l = dp_loss(&mut g, &dp.net, &p, pi, py, pp, eps)?;
        acc.l_dp.add(finite("projective discriminator loss", g.value(l.total).item())?);
        acc.dp_real.add(g.value(l.real_score).item());
        acc.dp_fake.add(g.value(l.fake_score).item());
        g.backward(l.total)?;
        dp.step(&p.grads(&g), &lr)
    }

    /// Hybrid-loss step for the segmentor with both discriminators frozen.
    #[allow(clippy::too_many_arguments)]
    fn segmentor_update(
        &mut self,
        mut g: Graph,
        s_vars: &[Var],
        batch: &SliceBatch,
        prob: Var,
        bottleneck: Var,
        projected: Option<(Var, &Sample)>,
        acc: &mut EpochAccum,
    ) -> Result<()> {
        let eps = self.weights.epsilon;
        let form = self.config.adversarial_form;
        let gt = g.constant(batch.masks.clone());
        let bce = g.weighted_bce(prob, gt, self.weights.w_pos, eps)?;
        let mut adv_ds = None;
        if let Some(ds) = self.ds.as_ref().filter(|_| self.weights.lambda != 0.0) {
            let p = ds.net.params().bind(&mut g, false);
            let image = g.constant(batch.images.clone());
            let feats = match (ds.net.has_attention(), self.config.attention_tap_gradient) {
                (false, _) => None,
                (true, TapGradient::Blocked) => Some(g.detach(bottleneck)),
                (true, TapGradient::Open) => Some(bottleneck),
            };
            let l = ds_loss(&mut g, &ds.net, &p, image, gt, prob, feats, eps)?;
            adv_ds = Some(segmentor_adversarial_term(&mut g, &l, form, eps)?);
        }
        let mut adv_dp = None;
        if let (Some(dp), Some((stacked, sample))) = (self.dp.as_ref().filter(|_| self.weights.beta != 0.0), projected) {
            let (proj_image, proj_gt) = real_projections(sample)?;
            let p = dp.net.params().bind(&mut g, false);
            let proj_pred = g.project_axial(stacked)?;
            let pi = g.constant(proj_image);
            let py = g.constant(proj_gt);
            let l = dp_loss(&mut g, &dp.net, &p, pi, py, proj_pred, eps)?;
            adv_dp = Some(segmentor_adversarial_term(&mut g, &l, form, eps)?);
        }
        let loss = hybrid_loss_in(&mut g, bce, adv_ds, adv_dp, &self.weights)?;
        acc.bce.add(finite("pixel loss", g.value(bce).item())?);
        acc.hybrid.add(finite("hybrid loss", g.value(loss).item())?);
        g.backward(loss)?;
        let grads: Vec<Tensor> = s_vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        let lr = self.adam(self.config.lr_s);
        self.segmentor.step(&grads, &lr)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut blobs = Vec::new();
        let mut push_net = |prefix: &str, params: &ParamSet, opt: &AdamState| {
            for (i, (name, t)) in params.iter().enumerate() {
                blobs.push((format!("{prefix}/{name}"), t.clone()));
                blobs.push((format!("{prefix}.adam.m/{name}"), opt.m[i].clone()));
                blobs.push((format!("{prefix}.adam.v/{name}"), opt.v[i].clone()));
            }
            blobs.push((format!("{prefix}.adam.t"), Tensor::scalar(opt.t as f64)));
        };
        push_net("s", self.segmentor.net.params(), &self.segmentor.opt);
        if let Some(ds) = &self.ds {
            push_net("ds", ds.net.params(), &ds.opt);
        }
        if let Some(dp) = &self.dp {
            push_net("dp", dp.net.params(), &dp.opt);
        }
        blobs.push((INPUT_NORM_BLOB.into(), input_norm_blob(self.segmentor.net.input_norm())));
        if !self.history.is_empty() {
            let flat: Vec<f64> = self.history.iter().flat_map(|m| m.values()).collect();
            blobs.push(("metrics".into(), Tensor::new(&[self.history.len(), 10], flat).expect("rows of 10")));
        }
        Checkpoint {
            config_text: self.config.banner(),
            epoch: self.epoch as u32,
            rng: RngState::capture(&self.rng),
            blobs,
        }
    }

    /// Rebuild a trainer from `ckpt`. `config` may differ from the saved one
    /// only in its stopping keys.
    pub fn from_checkpoint(config: &TrainingConfig, ckpt: &Checkpoint, dataset: &Dataset) -> Result<Self> {
        let saved = TrainingConfig::parse(&ckpt.config_text)?;
        if saved.resume_hash() != config.resume_hash() {
            return Err(PanError::Config("checkpoint was written under a different configuration".into()));
        }
        let mut t = Trainer::new(config, dataset)?;
        fn load<N: Network>(prefix: &str, tr: &mut Trained<N>, ckpt: &Checkpoint) -> Result<()> {
            let missing = |n: &str| PanError::Config(format!("checkpoint lacks blob {n}"));
            let names: Vec<String> = tr.net.params().names().to_vec();
            let mut params = Vec::new();
            for (i, name) in names.iter().enumerate() {
                let get = |kind: &str| {
                    let key = format!("{prefix}{kind}/{name}");
                    ckpt.blob(&key).cloned().ok_or_else(|| missing(&key))
                };
                params.push(get("")?);
                tr.opt.m[i] = get(".adam.m")?;
                tr.opt.v[i] = get(".adam.v")?;
            }
            tr.net.params_mut().assign(params)?;
            let key = format!("{prefix}.adam.t");
            tr.opt.t = ckpt.blob(&key).ok_or_else(|| missing(&key))?.item() as u64;
            Ok(())
        }
        load("s", &mut t.segmentor, ckpt)?;
        t.segmentor.net.set_input_norm(input_norm_from(ckpt)?)?;
        if let Some(ds) = t.ds.as_mut() {
            load("ds", ds, ckpt)?;
        }
        if let Some(dp) = t.dp.as_mut() {
            load("dp", dp, ckpt)?;
        }
        t.rng = ckpt.rng.restore();
        t.epoch = ckpt.epoch as usize;
        t.history = match ckpt.blob("metrics") {
            Some(m) => m.data().chunks(10).map(EpochMetrics::from_values).collect(),
            None => Vec::new(),
        };
        if t.history.len() != t.epoch {
            return Err(PanError::Config(format!(
                "checkpoint holds {} metric rows for {} epochs",
                t.history.len(),
                t.epoch
            )));
        }
        Ok(t)
    }
}

const INPUT_NORM_BLOB: &str = "s.input_norm";

fn input_norm_blob(n: InputNorm) -> Tensor {
    Tensor::new(&[2], vec![n.mean, n.std]).expect("two values")
}

fn input_norm_from(ckpt: &Checkpoint) -> Result<InputNorm> {
    match ckpt.blob(INPUT_NORM_BLOB).map(|t| t.data()) {
        Some(&[mean, std]) => Ok(InputNorm { mean, std }),
        _ => Err(PanError::Config(format!("checkpoint lacks a two-value {INPUT_NORM_BLOB} blob"))),
    }
}

/// Projections of the image and ground truth, each `[1, 1, H, W]`.
fn real_projections(sample: &Sample) -> Result<(Tensor, Tensor)> {
    let (_, h, w) = sample.volume.dims();
    let pi = crate::projection::project_volume(sample.volume.intensities())?
        .image
        .reshape(&[1, 1, h, w])?;
    let py = crate::projection::project_volume(sample.mask())?.image.reshape(&[1, 1, h, w])?;
    Ok((pi, py))
}

fn check_dataset(config: &TrainingConfig, dataset: &Dataset) -> Result<()> {
    if dataset.train.is_empty() {
        return Err(PanError::Config("dataset has no training volumes".into()));
    }
    for s in dataset.train.iter().chain(&dataset.test) {
        if s.volume.dims() != config.dhw {
            return Err(PanError::Config(format!(
                "volume {} has dims {:?} but data.dhw is {:?}",
                s.id,
                s.volume.dims(),
                config.dhw
            )));
        }
    }
    Ok(())
}

/// Segmentor stored in a checkpoint, rebuilt under the saved config.
pub fn load_segmentor(ckpt: &Checkpoint) -> Result<(TrainingConfig, Segmentor)> {
    let config = TrainingConfig::parse(&ckpt.config_text)?;
    let (_, h, w) = config.dhw;
    let mut seg = build_segmentor(config.width, (h, w), 0)?;
    let params = seg
        .params()
        .names()
        .iter()
        .map(|n| {
            ckpt.blob(&format!("s/{n}"))
                .cloned()
                .ok_or_else(|| PanError::Config(format!("checkpoint lacks s/{n}")))
        })
        .collect::<Result<Vec<_>>>()?;
    seg.params_mut().assign(params)?;
    seg.set_input_norm(input_norm_from(ckpt)?)?;
    Ok((config, seg))
}

/// Result of [`train`].
#[derive(Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Train on `dataset`, saving a checkpoint and the metrics CSV after every
/// epoch. With `resume`, continue from `out_dir`'s checkpoint if one exists.
pub fn train_on(config: &TrainingConfig, dataset: &Dataset, out_dir: &Path, resume: bool) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| PanError::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut trainer = if resume && ckpt_path.exists() {
        let t = Trainer::from_checkpoint(config, &Checkpoint::read(&ckpt_path)?, dataset)?;
        log::info!("resuming after epoch {}", t.epoch());
        t
    } else {
        Trainer::new(config, dataset)?
    };
    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, config.banner()).map_err(|e| PanError::io(&config_path, e))?;
    let mut best = (f64::NEG_INFINITY, trainer.epoch());
    while trainer.epoch() < config.epochs {
        let m = trainer.train_epoch(dataset).map_err(|e| match e {
            PanError::Numerical(msg) => PanError::Numerical(format!(
                "{msg} during epoch {}; last good checkpoint: {}",
                trainer.epoch() + 1,
                if ckpt_path.exists() {
                    ckpt_path.display().to_string()
                } else {
                    "none".into()
                }
            )),
            other => other,
        })?;
        trainer.to_checkpoint().write(&ckpt_path)?;
        fs::write(&metrics_path, metrics_csv(trainer.history())).map_err(|e| PanError::io(&metrics_path, e))?;
        if m.test_dsc_mean > best.0 {
            best = (m.test_dsc_mean, m.epoch);
        }
        if config.early_stop_patience > 0 && m.epoch - best.1 >= config.early_stop_patience {
            log::info!("no test improvement for {} epochs; stopping", config.early_stop_patience);
            break;
        }
    }
    emit_report(trainer.history(), out_dir)?;
    Ok(TrainOutcome {
        trainer,
        checkpoint: ckpt_path,
        metrics: metrics_path,
    })
}

/// [`train_on`] the dataset stored in `dataset_dir`.
pub fn train(config: &TrainingConfig, dataset_dir: &Path, out_dir: &Path, resume: bool) -> Result<TrainOutcome> {
    let dataset = Dataset::load(dataset_dir)?;
    train_on(config, &dataset, out_dir, resume)
}

#[cfg(test)]
mod tests;
