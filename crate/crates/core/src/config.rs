//! Flat `key = value` experiment configuration.
//!
//! Every key lives in one [`REGISTRY`] entry that knows its documentation and
//! how to read and write the matching [`TrainingConfig`] field, so the parser,
//! the effective-config banner and the CLI help table cannot drift apart.

use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{PanError, Result};
use crate::losses::{AdversarialForm, LossWeights};
use crate::models::{DpInput, DsInput};

/// Whether the segmentor receives gradient through the attention tap of
/// the spatial discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TapGradient {
    #[default]
    Blocked,
    Open,
}

/// Every knob of an experiment. Defaults describe the full four-network
/// setup on the 16×32×32 phantom data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub seed: u64,
    pub dhw: (usize, usize, usize),
    pub width: usize,
    pub ds_input: DsInput,
    pub dp_input: DpInput,
    pub attention_tap_gradient: TapGradient,
    /// `weights.w_pos` is ignored when `w_pos_auto` is set.
    pub weights: LossWeights,
    pub w_pos_auto: bool,
    pub lr_s: f64,
    pub lr_ds: f64,
    pub lr_dp: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ds_steps: usize,
    pub s_steps: usize,
    pub use_ds: bool,
    pub use_attention: bool,
    pub use_dp: bool,
    pub adversarial_form: AdversarialForm,
    /// Stop after this many epochs without a better test DSC; 0 disables.
    pub early_stop_patience: usize,
    pub threshold: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            seed: 0,
            dhw: (16, 32, 32),
            width: 1,
            ds_input: DsInput::Product,
            dp_input: DpInput::Pair,
            attention_tap_gradient: TapGradient::Blocked,
            weights: LossWeights::default(),
            w_pos_auto: true,
            lr_s: 1e-4,
            lr_ds: 1e-4,
            lr_dp: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 30,
            batch_size: 4,
            ds_steps: 1,
            s_steps: 1,
            use_ds: true,
            use_attention: true,
            use_dp: true,
            adversarial_form: AdversarialForm::MinMax,
            early_stop_patience: 0,
            threshold: 0.5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PanError::Config(m));
        if !self.w_pos_auto {
            self.weights.validate()?;
        } else {
            LossWeights { w_pos: 1.0, ..self.weights }.validate()?;
        }
        for (name, lr) in [("lr_s", self.lr_s), ("lr_ds", self.lr_ds), ("lr_dp", self.lr_dp)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("train.{name} must be positive, got {lr}"));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and adam_eps must be positive".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.ds_steps == 0 || self.s_steps == 0 {
            return fail("epochs, batch_size, ds_steps and s_steps must be at least 1".into());
        }
        if self.width == 0 {
            return fail("model.width must be at least 1".into());
        }
        if self.use_attention && !self.use_ds {
            return fail("train.use_attention requires train.use_ds".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("eval.threshold must lie in (0, 1), got {}", self.threshold));
        }
        let (d, h, w) = self.dhw;
        if d == 0 || h == 0 || w == 0 {
            return fail(format!("data.dhw must be positive, got {:?}", self.dhw));
        }
        Ok(())
    }

    /// Parse config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        let mut seen: Vec<(&str, usize)> = Vec::new();
        for (n, raw) in text.lines().enumerate().map(|(n, l)| (n + 1, l)) {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PanError::ConfigLine {
                line: n,
                detail: format!("expected `key = value`, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let entry = REGISTRY.iter().find(|e| e.key == key).ok_or_else(|| PanError::ConfigLine {
                line: n,
                detail: format!("unknown key {key:?}"),
            })?;
            if let Some((_, prev)) = seen.iter().find(|(k, _)| *k == entry.key) {
                log::warn!("config line {n}: {key} repeats line {prev}; the later value wins");
            }
            seen.push((entry.key, n));
            (entry.set)(&mut cfg, value).map_err(|detail| PanError::ConfigLine {
                line: n,
                detail: format!("{key}: {detail}"),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its effective value; parses back to `self`.
    pub fn banner(&self) -> String {
        let mut out = String::from("# effective configuration\n");
        for e in REGISTRY {
            let _ = writeln!(out, "{} = {}", e.key, (e.get)(self));
        }
        out
    }

    /// Hex sha256 of the banner, ignoring the keys that only decide when
    /// training stops, so a run can be resumed with a larger budget.
    pub fn resume_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in REGISTRY.iter().filter(|e| !matches!(e.key, "train.epochs" | "train.early_stop_patience")) {
            h.update(format!("{} = {}\n", e.key, (e.get)(self)).as_bytes());
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// One documented configuration key.
pub struct ConfigKey {
    pub key: &'static str,
    /// Value syntax shown in help.
    pub syntax: &'static str,
    pub doc: &'static str,
    get: fn(&TrainingConfig) -> String,
    set: fn(&mut TrainingConfig, &str) -> std::result::Result<(), String>,
}

impl ConfigKey {
    pub fn default_value(&self) -> String {
        (self.get)(&TrainingConfig::default())
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn real(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{v:?} is not a finite number"))
    }
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

pub fn parse_dhw(v: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = v.split(',').map(|p| num(p.trim())).collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [d, h, w] => Ok((d, h, w)),
        _ => Err(format!("expected three comma-separated extents D,H,W, got {v:?}")),
    }
}

macro_rules! key {
    ($key:literal, $syntax:literal, $doc:literal, |$c:ident| $get:expr, |$m:ident, $v:ident| $set:expr) => {
        ConfigKey {
            key: $key,
            syntax: $syntax,
            doc: $doc,
            get: |$c| $get,
            set: |$m, $v| {
                $set;
                Ok(())
            },
        }
    };
}

pub static REGISTRY: &[ConfigKey] = &[
    key!(
        "seed",
        "int",
        "root seed; every random stream is derived from it",
        |c| c.seed.to_string(),
        |c, v| c.seed = num(v)?
    ),
    key!(
        "data.dhw",
        "D,H,W",
        "volume extents the dataset must have",
        |c| format!("{},{},{}", c.dhw.0, c.dhw.1, c.dhw.2),
        |c, v| c.dhw = parse_dhw(v)?
    ),
    key!(
        "model.width",
        "int",
        "channel multiplier for all networks",
        |c| c.width.to_string(),
        |c, v| c.width = num(v)?
    ),
    key!(
        "model.ds_input",
        "product|pair",
        "spatial discriminator sees image*mask or the (image, mask) pair",
        |c| match c.ds_input {
            DsInput::Product => "product".into(),
            DsInput::Pair => "pair".into(),
        },
        |c, v| c.ds_input = match v {
            "product" => DsInput::Product,
            "pair" => DsInput::Pair,
            _ => return Err(format!("expected product or pair, got {v:?}")),
        }
    ),
    key!(
        "model.dp_input",
        "pair|mask",
        "projective discriminator sees projected image and mask, or the mask only",
        |c| match c.dp_input {
            DpInput::Pair => "pair".into(),
            DpInput::MaskOnly => "mask".into(),
        },
        |c, v| c.dp_input = match v {
            "pair" => DpInput::Pair,
            "mask" => DpInput::MaskOnly,
            _ => return Err(format!("expected pair or mask, got {v:?}")),
        }
    ),
    key!(
        "model.attention_tap_gradient",
        "blocked|open",
        "let the adversarial loss reach the segmentor through its bottleneck features",
        |c| match c.attention_tap_gradient {
            TapGradient::Blocked => "blocked".into(),
            TapGradient::Open => "open".into(),
        },
        |c, v| c.attention_tap_gradient = match v {
            "blocked" => TapGradient::Blocked,
            "open" => TapGradient::Open,
            _ => return Err(format!("expected blocked or open, got {v:?}")),
        }
    ),
    key!(
        "train.lambda",
        "real",
        "weight of the spatial adversarial term",
        |c| c.weights.lambda.to_string(),
        |c, v| c.weights.lambda = real(v)?
    ),
    key!(
        "train.beta",
        "real",
        "weight of the projective adversarial term",
        |c| c.weights.beta.to_string(),
        |c, v| c.weights.beta = real(v)?
    ),
    key!(
        "train.w_pos",
        "auto|real",
        "positive-pixel weight; auto uses the training negative/positive ratio clamped to [1, 20]",
        |c| if c.w_pos_auto { "auto".into() } else { c.weights.w_pos.to_string() },
        |c, v| if v == "auto" {
            c.w_pos_auto = true;
        } else {
            c.w_pos_auto = false;
            c.weights.w_pos = real(v)?;
        }
    ),
    key!(
        "train.epsilon",
        "real",
        "probability clamp before logs",
        |c| c.weights.epsilon.to_string(),
        |c, v| c.weights.epsilon = real(v)?
    ),
    key!("train.lr_s", "real", "segmentor learning rate", |c| c.lr_s.to_string(), |c, v| c.lr_s =
        real(v)?),
    key!(
        "train.lr_ds",
        "real",
        "spatial discriminator learning rate",
        |c| c.lr_ds.to_string(),
        |c, v| c.lr_ds = real(v)?
    ),
    key!(
        "train.lr_dp",
        "real",
        "projective discriminator learning rate",
        |c| c.lr_dp.to_string(),
        |c, v| c.lr_dp = real(v)?
    ),
    key!("train.adam_beta1", "real", "first-moment decay", |c| c.adam_beta1.to_string(), |c, v| c
        .adam_beta1 =
        real(v)?),
    key!("train.adam_beta2", "real", "second-moment decay", |c| c.adam_beta2.to_string(), |c, v| {
        c.adam_beta2 = real(v)?
    }),
    key!(
        "train.adam_eps",
        "real",
        "optimizer denominator guard",
        |c| c.adam_eps.to_string(),
        |c, v| c.adam_eps = real(v)?
    ),
    key!(
        "train.epochs",
        "int",
        "passes over the training volumes",
        |c| c.epochs.to_string(),
        |c, v| c.epochs = num(v)?
    ),
    key!(
        "train.batch_size",
        "int",
        "axial slices per segmentor step",
        |c| c.batch_size.to_string(),
        |c, v| c.batch_size = num(v)?
    ),
    key!(
        "train.ds_steps",
        "int",
        "spatial discriminator updates per slice batch",
        |c| c.ds_steps.to_string(),
        |c, v| c.ds_steps = num(v)?
    ),
    key!(
        "train.s_steps",
        "int",
        "segmentor updates per slice batch",
        |c| c.s_steps.to_string(),
        |c, v| c.s_steps = num(v)?
    ),
    key!(
        "train.use_ds",
        "bool",
        "train with the spatial discriminator",
        |c| c.use_ds.to_string(),
        |c, v| c.use_ds = boolean(v)?
    ),
    key!(
        "train.use_attention",
        "bool",
        "give the spatial discriminator its attention branch",
        |c| c.use_attention.to_string(),
        |c, v| c.use_attention = boolean(v)?
    ),
    key!(
        "train.use_dp",
        "bool",
        "train with the projective discriminator",
        |c| c.use_dp.to_string(),
        |c, v| c.use_dp = boolean(v)?
    ),
    key!(
        "train.adversarial_form",
        "minmax|nonsaturating",
        "how discriminator losses enter the segmentor objective",
        |c| c.adversarial_form.to_string(),
        |c, v| c.adversarial_form = v.parse()?
    ),
    key!(
        "train.early_stop_patience",
        "int",
        "stop after this many epochs without a better test DSC; 0 = off",
        |c| c.early_stop_patience.to_string(),
        |c, v| c.early_stop_patience = num(v)?
    ),
    key!(
        "eval.threshold",
        "real",
        "probability threshold for binarizing predictions",
        |c| c.threshold.to_string(),
        |c, v| c.threshold = real(v)?
    ),
];

/// Help table, one row per key.
pub fn help_table() -> String {
    let width = REGISTRY.iter().map(|e| e.key.len()).max().unwrap_or(0);
    let mut out = String::from("Configuration keys (`key = value`, `#` starts a comment):\n");
    for e in REGISTRY {
        let _ = writeln!(
            out,
            "  {:width$}  {} (default {})\n  {:width$}    {}",
            e.key,
            e.syntax,
            e.default_value(),
            "",
            e.doc
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(TrainingConfig::parse("").unwrap(), TrainingConfig::default());
        assert_eq!(TrainingConfig::parse("# only a comment\n\n").unwrap(), TrainingConfig::default());
    }

    #[test]
    fn table_of_values() {
        let c = TrainingConfig::parse("train.lambda = 0.1\n").unwrap();
        assert_eq!(c.weights.lambda, 0.1);
        let c = TrainingConfig::parse("data.dhw = 16,32,32").unwrap();
        assert_eq!(c.dhw, (16, 32, 32));
        let c = TrainingConfig::parse("train.w_pos = 3.5\ntrain.use_dp=false # trailing\nmodel.dp_input = mask").unwrap();
        assert_eq!(
            (c.w_pos_auto, c.weights.w_pos, c.use_dp, c.dp_input),
            (false, 3.5, false, DpInput::MaskOnly)
        );

        let line_of = |text: &str| match TrainingConfig::parse(text) {
            Err(PanError::ConfigLine { line, .. }) => line,
            other => panic!("expected a line error, got {other:?}"),
        };
        assert_eq!(line_of("seed = 1\ndata.dhw = 16,32"), 2);
        assert_eq!(line_of("\n\nbogus.key = 1"), 3);
        assert_eq!(line_of("train.use_ds = yes"), 1);
        assert_eq!(line_of("train.lambda"), 1);
        assert_eq!(line_of("train.lr_s = inf"), 1);
        assert_eq!(line_of("train.adversarial_form = other"), 1);
        assert!(matches!(TrainingConfig::parse("train.use_ds = false"), Err(PanError::Config(_))));
        assert!(matches!(TrainingConfig::parse("train.epochs = 0"), Err(PanError::Config(_))));
    }

    #[test]
    fn last_duplicate_wins_and_order_is_irrelevant() {
        let a = TrainingConfig::parse("seed = 1\nseed = 2\ntrain.beta = 0.5").unwrap();
        let b = TrainingConfig::parse("train.beta = 0.5\nseed = 2").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, 2);
    }

    #[test]
    fn banner_round_trips() {
        let mut c = TrainingConfig::default();
        c.weights.lambda = 0.01;
        c.lr_s = 3e-4;
        c.w_pos_auto = false;
        c.weights.w_pos = 7.25;
        c.adversarial_form = AdversarialForm::NonSaturating;
        c.attention_tap_gradient = TapGradient::Open;
        for cfg in [TrainingConfig::default(), c] {
            let banner = cfg.banner();
            let back = TrainingConfig::parse(&banner).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.banner(), banner);
        }
    }

    #[test]
    fn help_lists_every_key_and_resume_hash_ignores_budget() {
        let help = help_table();
        for e in REGISTRY {
            assert!(help.contains(e.key), "{}", e.key);
            let mut c = TrainingConfig::default();
            (e.set)(&mut c, &e.default_value()).unwrap();
            assert_eq!(c, TrainingConfig::default(), "{}", e.key);
        }
        let mut c = TrainingConfig {
            epochs: 99,
            ..TrainingConfig::default()
        };
        assert_eq!(c.resume_hash(), TrainingConfig::default().resume_hash());
        c.seed = 1;
        assert_ne!(c.resume_hash(), TrainingConfig::default().resume_hash());
    }
}
