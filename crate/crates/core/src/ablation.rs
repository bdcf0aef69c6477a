//! Baseline comparison: the same data, seeds and schedule under four model
//! variants that differ only in which adversarial terms are switched on.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::TrainingConfig;
use crate::data::Dataset;
use crate::error::{PanError, Result};
use crate::eval::{evaluate, EvalRecord};
use crate::report::{ablation_csv, eval_csv, AblationRow};
use crate::training::train_on;

pub const ABLATION_FILE: &str = "ablation.csv";
pub const MIN_SEEDS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Segmentor alone, pixel loss only.
    S,
    /// Plus the spatial discriminator without attention.
    SDs,
    /// Plus the attention branch.
    SDsA,
    /// Plus the projective discriminator.
    SDsADp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::S, Variant::SDs, Variant::SDsA, Variant::SDsADp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::S => "S",
            Variant::SDs => "S+Ds",
            Variant::SDsA => "S+Ds+A",
            Variant::SDsADp => "S+Ds+A+Dp",
        }
    }

    /// Directory-safe form of the name.
    pub fn slug(self) -> &'static str {
        match self {
            Variant::S => "s",
            Variant::SDs => "s-ds",
            Variant::SDsA => "s-ds-a",
            Variant::SDsADp => "s-ds-a-dp",
        }
    }

    /// `base` with this variant's switches; everything else is untouched.
    pub fn apply(self, base: &TrainingConfig) -> TrainingConfig {
        let (use_ds, use_attention, use_dp) = match self {
            Variant::S => (false, false, false),
            Variant::SDs => (true, false, false),
            Variant::SDsA => (true, true, false),
            Variant::SDsADp => (true, true, true),
        };
        TrainingConfig {
            use_ds,
            use_attention,
            use_dp,
            ..base.clone()
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = PanError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s || v.slug() == s)
            .ok_or_else(|| PanError::Config(format!("unknown variant {s:?}")))
    }
}

/// Outcome of one (variant, seed) run; `Err` holds the failure message.
#[derive(Clone, Debug)]
pub struct Cell {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<EvalRecord, String>,
}

/// Mean, population std, min and max over the successful seeds of a variant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
}

impl AblationResult {
    pub fn cell(&self, variant: Variant, seed: u64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.variant == variant && c.seed == seed)
    }

    /// Summary of the per-seed mean DSCs of `variant`; `None` if every run failed.
    pub fn aggregate(&self, variant: Variant) -> Option<Aggregate> {
        let means: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.variant == variant)
            .filter_map(|c| c.outcome.as_ref().ok().map(|r| r.mean))
            .collect();
        if means.is_empty() {
            return None;
        }
        let n = means.len() as f64;
        let mean = means.iter().sum::<f64>() / n;
        let std = (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(Aggregate {
            mean,
            std,
            min: means.iter().copied().fold(f64::INFINITY, f64::min),
            max: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            runs: means.len(),
        })
    }

    /// Per-seed rows followed by one `all` row per variant that has run.
    pub fn rows(&self) -> Vec<AblationRow> {
        let mut rows = Vec::new();
        for v in Variant::ALL {
            if !self.cells.iter().any(|c| c.variant == v) {
                continue;
            }
            for c in self.cells.iter().filter(|c| c.variant == v) {
                rows.push(AblationRow {
                    variant: v.name().into(),
                    seed: c.seed.to_string(),
                    summary: c.outcome.as_ref().ok().map(|r| [r.mean, r.std, r.min, r.max]),
                });
            }
            rows.push(AblationRow {
                variant: v.name().into(),
                seed: "all".into(),
                summary: self.aggregate(v).map(|a| [a.mean, a.std, a.min, a.max]),
            });
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        ablation_csv(&self.rows())
    }
}

pub fn run_dir(out_dir: &Path, variant: Variant, seed: u64) -> PathBuf {
    out_dir.join(variant.slug()).join(format!("seed-{seed}"))
}

fn run_cell(base: &TrainingConfig, variant: Variant, seed: u64, dataset: &Dataset, dir: &Path) -> Result<EvalRecord> {
    let cfg = TrainingConfig { seed, ..variant.apply(base) };
    let out = train_on(&cfg, dataset, dir, false)?;
    let record = evaluate(&out.trainer.segmentor.net, &dataset.test, cfg.threshold)?;
    let path = dir.join("eval.csv");
    fs::write(&path, eval_csv(&record)).map_err(|e| PanError::io(&path, e))?;
    Ok(record)
}

/// Train and evaluate every variant for every seed on `dataset`. A failed run
/// is recorded in its cell and the remaining runs continue.
pub fn run_ablation_on(base: &TrainingConfig, seeds: &[u64], dataset: &Dataset, out_dir: &Path) -> Result<AblationResult> {
    if seeds.len() < MIN_SEEDS {
        return Err(PanError::Config(format!(
            "ablation needs at least {MIN_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() != seeds.len() {
        return Err(PanError::Config("ablation seeds must be distinct".into()));
    }
    if dataset.test.is_empty() {
        return Err(PanError::Config("ablation needs a test split".into()));
    }
    for v in Variant::ALL {
        v.apply(base).validate()?;
    }
    fs::create_dir_all(out_dir).map_err(|e| PanError::io(out_dir, e))?;
    let mut result = AblationResult {
        seeds: seeds.to_vec(),
        cells: Vec::new(),
    };
    for &seed in seeds {
        for v in Variant::ALL {
            log::info!("ablation: {v} seed {seed}");
            let outcome = run_cell(base, v, seed, dataset, &run_dir(out_dir, v, seed)).map_err(|e| {
                log::error!("ablation: {v} seed {seed} failed: {e}");
                e.to_string()
            });
            result.cells.push(Cell { variant: v, seed, outcome });
            let path = out_dir.join(ABLATION_FILE);
            fs::write(&path, result.to_csv()).map_err(|e| PanError::io(&path, e))?;
        }
    }
    Ok(result)
}

/// [`run_ablation_on`] the dataset stored in `dataset_dir`.
pub fn run_ablation(base: &TrainingConfig, seeds: &[u64], dataset_dir: &Path, out_dir: &Path) -> Result<AblationResult> {
    run_ablation_on(base, seeds, &Dataset::load(dataset_dir)?, out_dir)
}
