//! Synthetic phantom volumes, the PANVOL1 container, and slice batching.

mod dataset;
mod panvol;
mod phantom;

pub use dataset::{generate_dataset, Dataset, DatasetManifest, Split, MANIFEST_FILE};
pub use panvol::{read_volume_file, volume_from_bytes, volume_to_bytes, write_volume_file, PANVOL_MAGIC};
pub use phantom::{generate_sample, GeneratorConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PanError, Result};
use crate::tensor::Tensor;

/// Intensity grid `[D, H, W]`, axial slices outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    intensities: Tensor,
    /// Voxel size `(dz, dy, dx)`; carried for reference only.
    pub spacing: (f64, f64, f64),
}

impl Volume {
    pub fn new(intensities: Tensor) -> Result<Self> {
        if intensities.ndim() != 3 {
            return Err(PanError::dim("volume", format!("expected [D, H, W], got {:?}", intensities.shape())));
        }
        if let Some(v) = intensities.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PanError::Domain {
                op: "volume",
                detail: format!("intensity {v} outside [0, 1]"),
            });
        }
        Ok(Volume {
            intensities,
            spacing: (1.0, 1.0, 1.0),
        })
    }

    pub fn intensities(&self) -> &Tensor {
        &self.intensities
    }

    /// `(D, H, W)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.intensities.shape();
        (s[0], s[1], s[2])
    }

    /// All axial slices as a `[D, 1, H, W]` batch.
    pub fn slices(&self) -> Tensor {
        let (d, h, w) = self.dims();
        self.intensities.reshape(&[d, 1, h, w]).expect("same element count")
    }
}

/// A volume with its binary ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub volume: Volume,
    mask: Tensor,
    pub id: String,
}

impl Sample {
    pub fn new(volume: Volume, mask: Tensor, id: impl Into<String>) -> Result<Self> {
        if mask.shape() != volume.intensities.shape() {
            return Err(PanError::dim(
                "sample",
                format!("mask {:?} vs volume {:?}", mask.shape(), volume.intensities.shape()),
            ));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(PanError::Domain {
                op: "sample",
                detail: "mask values must be 0 or 1".into(),
            });
        }
        if mask.sum() < 1.0 {
            return Err(PanError::Domain {
                op: "sample",
                detail: "mask has no positive voxel".into(),
            });
        }
        Ok(Sample { volume, mask, id: id.into() })
    }

    /// `[D, H, W]` of zeros and ones.
    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    /// The mask as a `[D, 1, H, W]` batch.
    pub fn mask_slices(&self) -> Tensor {
        let (d, h, w) = self.volume.dims();
        self.mask.reshape(&[d, 1, h, w]).expect("same element count")
    }

    pub fn positive_voxels(&self) -> usize {
        self.mask.sum() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SliceOrder {
    Sequential,
    Shuffled(u64),
}

/// A run of axial slices of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceBatch {
    /// `[N, 1, H, W]`
    pub images: Tensor,
    /// `[N, 1, H, W]`
    pub masks: Tensor,
    pub slice_indices: Vec<usize>,
}

/// Split the slices of `sample` into batches of at most `batch_size`.
pub fn slice_batches(sample: &Sample, batch_size: usize, order: SliceOrder) -> Result<Vec<SliceBatch>> {
    if batch_size == 0 {
        return Err(PanError::Parameter {
            op: "slice_batches",
            detail: "batch size must be at least 1".into(),
        });
    }
    let (d, _, _) = sample.volume.dims();
    let mut idx: Vec<usize> = (0..d).collect();
    if let SliceOrder::Shuffled(seed) = order {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let images = sample.volume.slices();
    let masks = sample.mask_slices();
    idx.chunks(batch_size)
        .map(|chunk| {
            let pick = |t: &Tensor| Tensor::stack_leading(&chunk.iter().map(|&k| t.sample(k)).collect::<Vec<_>>());
            Ok(SliceBatch {
                images: pick(&images)?,
                masks: pick(&masks)?,
                slice_indices: chunk.to_vec(),
            })
        })
        .collect()
}
