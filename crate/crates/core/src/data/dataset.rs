//! On-disk datasets: one PANVOL1 file per sample plus a `manifest.tsv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{generate_sample, read_volume_file, write_volume_file, GeneratorConfig, Sample};
use crate::error::{PanError, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Ids, their split, and the generator provenance needed to regenerate them.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<(String, Split)>,
    pub seed: u64,
    pub dhw: (usize, usize, usize),
    /// Hex sha256 of the generator configuration.
    pub config_hash: String,
}

fn config_hash(cfg: &GeneratorConfig) -> String {
    Sha256::digest(cfg.canonical().as_bytes()).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let (d, h, w) = self.dhw;
        let mut out = format!("# seed\t{}\n# dhw\t{d},{h},{w}\n# config\t{}\n", self.seed, self.config_hash);
        for (id, split) in &self.entries {
            let _ = writeln!(out, "{id}\t{}", split.as_str());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, detail: String| PanError::ConfigLine { line, detail };
        let mut m = DatasetManifest {
            entries: Vec::new(),
            seed: 0,
            dhw: (0, 0, 0),
            config_hash: String::new(),
        };
        for (n, line) in text.lines().enumerate().map(|(n, l)| (n + 1, l)) {
            if line.trim().is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta.split_once('\t').ok_or_else(|| err(n, format!("malformed header {line:?}")))?;
                match key {
                    "seed" => m.seed = value.parse().map_err(|_| err(n, format!("bad seed {value:?}")))?,
                    "dhw" => {
                        let v: Vec<usize> = value
                            .split(',')
                            .map(|x| x.trim().parse())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| err(n, format!("bad dims {value:?}")))?;
                        let [d, h, w] = v[..] else {
                            return Err(err(n, format!("expected D,H,W, got {value:?}")));
                        };
                        m.dhw = (d, h, w);
                    }
                    "config" => m.config_hash = value.to_string(),
                    _ => return Err(err(n, format!("unknown header {key:?}"))),
                }
                continue;
            }
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| err(n, format!("expected id<TAB>split, got {line:?}")))?;
            let split = match split {
                "train" => Split::Train,
                "test" => Split::Test,
                other => return Err(err(n, format!("unknown split {other:?}"))),
            };
            if m.entries.iter().any(|(e, _)| e == id) {
                return Err(err(n, format!("duplicate id {id:?}")));
            }
            m.entries.push((id.to_string(), split));
        }
        Ok(m)
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries.iter().filter(move |(_, s)| *s == split).map(|(id, _)| id.as_str())
    }
}

fn volume_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.panvol"))
}

/// Per-sample seed, `seed ⊕ index`.
fn sample_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// Generate `volumes` phantoms into `dir` and write the manifest. The last
/// `round(volumes / 5)` ids form the test split.
pub fn generate_dataset(dir: &Path, volumes: usize, cfg: &GeneratorConfig, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    if volumes == 0 {
        return Err(PanError::Config("need at least one volume".into()));
    }
    fs::create_dir_all(dir).map_err(|e| PanError::io(dir, e))?;
    let n_test = ((volumes as f64 * TEST_FRACTION).round() as usize).min(volumes - 1);
    let mut entries = Vec::with_capacity(volumes);
    for index in 0..volumes {
        let mut sample = generate_sample(cfg, sample_seed(seed, index))?;
        sample.id = format!("vol{index:04}");
        write_volume_file(&sample, &volume_path(dir, &sample.id))?;
        let split = if index >= volumes - n_test { Split::Test } else { Split::Train };
        entries.push((sample.id, split));
    }
    let manifest = DatasetManifest {
        entries,
        seed,
        dhw: cfg.dhw,
        config_hash: config_hash(cfg),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| PanError::io(&path, e))?;
    log::info!("wrote {volumes} volumes ({n_test} test) to {}", dir.display());
    Ok(manifest)
}

/// A loaded dataset, samples in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PanError::io(&path, e))?;
        let manifest = DatasetManifest::parse(&text)?;
        let load = |split| -> Result<Vec<Sample>> {
            manifest
                .ids(split)
                .map(|id| {
                    let s = read_volume_file(&volume_path(dir, id))?;
                    if s.id != id {
                        return Err(PanError::Config(format!("file for {id} carries id {}", s.id)));
                    }
                    Ok(s)
                })
                .collect()
        };
        let (train, test) = (load(Split::Train)?, load(Split::Test)?);
        if train.is_empty() {
            return Err(PanError::Config(format!("{} lists no training volumes", path.display())));
        }
        let dims = train[0].volume.dims();
        if let Some(bad) = train.iter().chain(&test).find(|s| s.volume.dims() != dims) {
            return Err(PanError::Config(format!(
                "volume {} has dims {:?}, expected {dims:?}",
                bad.id,
                bad.volume.dims()
            )));
        }
        Ok(Dataset { manifest, train, test })
    }

    /// In-memory dataset, e.g. for tests.
    pub fn from_samples(train: Vec<Sample>, test: Vec<Sample>) -> Self {
        let dhw = train.first().map(|s| s.volume.dims()).unwrap_or((0, 0, 0));
        let entries = train
            .iter()
            .map(|s| (s.id.clone(), Split::Train))
            .chain(test.iter().map(|s| (s.id.clone(), Split::Test)))
            .collect();
        Dataset {
            manifest: DatasetManifest {
                entries,
                seed: 0,
                dhw,
                config_hash: String::new(),
            },
            train,
            test,
        }
    }

    /// Negative-to-positive voxel ratio over the training split.
    pub fn class_ratio(&self) -> f64 {
        let (pos, total) = self
            .train
            .iter()
            .fold((0usize, 0usize), |(p, t), s| (p + s.positive_voxels(), t + s.mask().numel()));
        (total - pos) as f64 / pos.max(1) as f64
    }
}
