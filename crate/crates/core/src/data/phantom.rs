//! Low-contrast deformed-ellipsoid phantoms.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Sample, Volume};
use crate::error::{PanError, Result};
use crate::models::DOWNSAMPLE_FACTOR;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// `(D, H, W)`
    pub dhw: (usize, usize, usize),
    /// Semi-axis range along the axial direction, in voxels.
    pub radius_axial: (f64, f64),
    /// Semi-axis range within a slice, in voxels.
    pub radius_inplane: (f64, f64),
    /// Largest out-of-plane tilt, degrees.
    pub max_tilt_deg: f64,
    /// Relative amplitude of the radial sinusoidal perturbation.
    pub deform_amplitude: f64,
    /// Angular frequency of the perturbation.
    pub deform_frequency: f64,
    pub object_mean: f64,
    pub background_mean: f64,
    pub noise_sigma: f64,
    /// Accepted range of the positive-voxel fraction.
    pub positive_fraction: (f64, f64),
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dhw: (16, 32, 32),
            radius_axial: (3.0, 5.5),
            radius_inplane: (4.0, 9.0),
            max_tilt_deg: 20.0,
            deform_amplitude: 0.15,
            deform_frequency: 3.0,
            object_mean: 0.55,
            background_mean: 0.45,
            noise_sigma: 0.05,
            positive_fraction: (0.01, 0.15),
            max_attempts: 1000,
        }
    }
}

impl GeneratorConfig {
    /// Defaults with the radius ranges rescaled from the default volume to
    /// `dhw`, axial by depth and in-plane by the shorter slice side.
    pub fn for_dims(dhw: (usize, usize, usize)) -> Self {
        let base = GeneratorConfig::default();
        let axial = dhw.0 as f64 / base.dhw.0 as f64;
        let inplane = dhw.1.min(dhw.2) as f64 / base.dhw.1.min(base.dhw.2) as f64;
        GeneratorConfig {
            dhw,
            radius_axial: (base.radius_axial.0 * axial, base.radius_axial.1 * axial),
            radius_inplane: (base.radius_inplane.0 * inplane, base.radius_inplane.1 * inplane),
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, w) = self.dhw;
        if d == 0 || h == 0 || w == 0 {
            return Err(PanError::Config(format!("volume dims {:?} must be positive", self.dhw)));
        }
        if h % DOWNSAMPLE_FACTOR != 0 || w % DOWNSAMPLE_FACTOR != 0 {
            return Err(PanError::Config(format!("slice size {h}x{w} must be divisible by {DOWNSAMPLE_FACTOR}")));
        }
        for (name, (lo, hi)) in [("axial", self.radius_axial), ("in-plane", self.radius_inplane)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(PanError::Config(format!("{name} radius range ({lo}, {hi}) is invalid")));
            }
        }
        let grow = 1.0 + self.deform_amplitude;
        if self.radius_axial.1 * grow > d as f64 / 2.0 || self.radius_inplane.1 * grow > h.min(w) as f64 / 2.0 {
            return Err(PanError::Config(format!(
                "object radii exceed volume bounds {:?} (axial up to {}, in-plane up to {}, deformation {})",
                self.dhw, self.radius_axial.1, self.radius_inplane.1, self.deform_amplitude
            )));
        }
        if !(0.0..1.0).contains(&self.deform_amplitude) || !(0.0..=90.0).contains(&self.max_tilt_deg) {
            return Err(PanError::Config("deformation amplitude must be in [0, 1) and tilt in [0, 90]".into()));
        }
        let (flo, fhi) = self.positive_fraction;
        if !(0.0 <= flo && flo <= fhi && fhi <= 1.0) || !(self.noise_sigma >= 0.0) || self.max_attempts == 0 {
            return Err(PanError::Config("invalid fraction range, noise level or attempt budget".into()));
        }
        Ok(())
    }

    /// Canonical text form, hashed into dataset manifests.
    pub fn canonical(&self) -> String {
        format!("{self:?}")
    }
}

type Mat3 = [[f64; 3]; 3];

/// Object-to-volume rotation in `(z, y, x)` coordinates: a tilt about the
/// x axis followed by a yaw in the slice plane.
fn rotation(yaw: f64, tilt: f64) -> Mat3 {
    let (sy, cy) = yaw.sin_cos();
    let (st, ct) = tilt.sin_cos();
    let yaw_m = [[1.0, 0.0, 0.0], [0.0, cy, -sy], [0.0, sy, cy]];
    let tilt_m = [[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| yaw_m[i][k] * tilt_m[k][j]).sum();
        }
    }
    r
}

struct Shape {
    center: [f64; 3],
    radii: [f64; 3],
    rot: Mat3,
    amplitude: f64,
    frequency: f64,
    phase: [f64; 2],
}

impl Shape {
    fn contains(&self, p: [f64; 3]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        // Object frame: R^T d, scaled to the unit sphere.
        let u: Vec<f64> = (0..3)
            .map(|j| (0..3).map(|i| self.rot[i][j] * d[i]).sum::<f64>() / self.radii[j])
            .collect();
        let rho = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if rho == 0.0 {
            return true;
        }
        let azimuth = u[1].atan2(u[2]);
        let elevation = (u[0] / rho).asin();
        let bump = 0.5 * ((self.frequency * azimuth + self.phase[0]).sin() + (self.frequency * elevation + self.phase[1]).sin());
        rho <= 1.0 + self.amplitude * bump
    }

    /// Half-extent of the (inflated) object along each volume axis.
    fn half_extent(&self) -> [f64; 3] {
        let grow = 1.0 + self.amplitude;
        let mut e = [0.0; 3];
        for (i, ei) in e.iter_mut().enumerate() {
            *ei = grow * (0..3).map(|j| (self.rot[i][j] * self.radii[j]).powi(2)).sum::<f64>().sqrt();
        }
        e
    }
}

fn single_component(mask: &[bool], (d, h, w): (usize, usize, usize)) -> bool {
    let Some(start) = mask.iter().position(|&m| m) else { return false };
    let mut seen = vec![false; mask.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        let (k, r, c) = (i / (h * w), (i / w) % h, i % w);
        let mut neighbours = Vec::with_capacity(6);
        if k > 0 {
            neighbours.push(i - h * w)
        }
        if k + 1 < d {
            neighbours.push(i + h * w)
        }
        if r > 0 {
            neighbours.push(i - w)
        }
        if r + 1 < h {
            neighbours.push(i + w)
        }
        if c > 0 {
            neighbours.push(i - 1)
        }
        if c + 1 < w {
            neighbours.push(i + 1)
        }
        for n in neighbours {
            if mask[n] && !seen[n] {
                seen[n] = true;
                reached += 1;
                queue.push_back(n);
            }
        }
    }
    reached == mask.iter().filter(|&&m| m).count()
}

fn draw_shape(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Option<Shape> {
    let (d, h, w) = cfg.dhw;
    let rz = rng.gen_range(cfg.radius_axial.0..=cfg.radius_axial.1);
    let ry = rng.gen_range(cfg.radius_inplane.0..=cfg.radius_inplane.1);
    let rx = rng.gen_range(cfg.radius_inplane.0..=cfg.radius_inplane.1);
    let yaw = rng.gen_range(0.0..2.0 * PI);
    let tilt = cfg.max_tilt_deg.to_radians() * rng.gen_range(-1.0..=1.0);
    let phase = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
    let mut shape = Shape {
        center: [0.0; 3],
        radii: [rz, ry, rx],
        rot: rotation(yaw, tilt),
        amplitude: cfg.deform_amplitude,
        frequency: cfg.deform_frequency,
        phase,
    };
    let ext = shape.half_extent();
    for (axis, n) in [d, h, w].into_iter().enumerate() {
        let (lo, hi) = (ext[axis] - 0.5, n as f64 - 0.5 - ext[axis]);
        if lo > hi {
            return None;
        }
        shape.center[axis] = rng.gen_range(lo..=hi);
    }
    Some(shape)
}

/// Deterministic phantom for `seed`: a deformed, rotated ellipsoid of
/// slightly brighter tissue in noisy background. Intensities are rounded to
/// `f32` precision so they survive the PANVOL1 container exactly.
pub fn generate_sample(cfg: &GeneratorConfig, seed: u64) -> Result<Sample> {
    cfg.validate()?;
    let (d, h, w) = cfg.dhw;
    let n = d * h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| PanError::Config(e.to_string()))?;
    for _ in 0..cfg.max_attempts {
        let Some(shape) = draw_shape(cfg, &mut rng) else { continue };
        let mut inside = vec![false; n];
        for k in 0..d {
            for i in 0..h {
                for j in 0..w {
                    inside[(k * h + i) * w + j] = shape.contains([k as f64, i as f64, j as f64]);
                }
            }
        }
        let frac = inside.iter().filter(|&&m| m).count() as f64 / n as f64;
        if frac < cfg.positive_fraction.0 || frac > cfg.positive_fraction.1 || !single_component(&inside, cfg.dhw) {
            continue;
        }
        let intens: Vec<f64> = inside
            .iter()
            .map(|&m| {
                let mean = if m { cfg.object_mean } else { cfg.background_mean };
                ((mean + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32) as f64
            })
            .collect();
        let mask = inside.iter().map(|&m| m as u8 as f64).collect();
        let volume = Volume::new(Tensor::new(&[d, h, w], intens)?)?;
        return Sample::new(volume, Tensor::new(&[d, h, w], mask)?, format!("phantom-{seed}"));
    }
    Err(PanError::Config(format!(
        "no phantom within the positive-fraction range {:?} after {} attempts",
        cfg.positive_fraction, cfg.max_attempts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sample() {
        let cfg = GeneratorConfig::default();
        assert_eq!(generate_sample(&cfg, 3).unwrap(), generate_sample(&cfg, 3).unwrap());
        assert_ne!(generate_sample(&cfg, 3).unwrap().mask(), generate_sample(&cfg, 4).unwrap().mask());
    }

    #[test]
    fn rescaled_configs_validate_and_generate() {
        assert_eq!(GeneratorConfig::for_dims((16, 32, 32)), GeneratorConfig::default());
        for dhw in [(8, 32, 32), (4, 16, 16), (16, 64, 48), (32, 32, 32)] {
            let cfg = GeneratorConfig::for_dims(dhw);
            cfg.validate().unwrap();
            assert_eq!(generate_sample(&cfg, 1).unwrap().volume.dims(), dhw);
        }
        let cfg = GeneratorConfig::for_dims((8, 32, 32));
        assert_eq!((cfg.radius_axial, cfg.radius_inplane), ((1.5, 2.75), (4.0, 9.0)));
    }

    #[test]
    fn fractions_connectivity_and_contrast() {
        let cfg = GeneratorConfig::default();
        for seed in 0..20 {
            let s = generate_sample(&cfg, seed).unwrap();
            let n = s.mask().numel() as f64;
            let frac = s.positive_voxels() as f64 / n;
            assert!((0.01..=0.15).contains(&frac), "seed {seed}: {frac}");
            let m: Vec<bool> = s.mask().data().iter().map(|&v| v == 1.0).collect();
            assert!(single_component(&m, cfg.dhw));
            let (mut fg, mut bg) = ((0.0, 0.0), (0.0, 0.0));
            for (&v, &m) in s.volume.intensities().data().iter().zip(s.mask().data()) {
                let acc = if m == 1.0 { &mut fg } else { &mut bg };
                acc.0 += v;
                acc.1 += 1.0;
                assert_eq!(v, (v as f32) as f64);
            }
            assert!((fg.0 / fg.1 - 0.55).abs() < 0.02 && (bg.0 / bg.1 - 0.45).abs() < 0.01);
        }
    }

    #[test]
    fn undeformed_ellipsoid_volume() {
        let cfg = GeneratorConfig {
            dhw: (32, 32, 32),
            radius_axial: (5.0, 9.0),
            radius_inplane: (5.0, 9.0),
            deform_amplitude: 0.0,
            positive_fraction: (0.0, 1.0),
            ..GeneratorConfig::default()
        };
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = loop {
                if let Some(s) = draw_shape(&cfg, &mut rng) {
                    break s;
                }
            };
            let mut count = 0usize;
            for k in 0..32 {
                for i in 0..32 {
                    for j in 0..32 {
                        count += shape.contains([k as f64, i as f64, j as f64]) as usize;
                    }
                }
            }
            let [a, b, c] = shape.radii;
            let analytic = 4.0 / 3.0 * PI * a * b * c;
            assert!(((count as f64 - analytic) / analytic).abs() < 0.15, "{count} vs {analytic}");
        }
    }

    #[test]
    fn rejects_impossible_configs() {
        let too_big = GeneratorConfig {
            radius_inplane: (4.0, 15.0),
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate_sample(&too_big, 0), Err(PanError::Config(_))));
        let odd = GeneratorConfig {
            dhw: (16, 30, 32),
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate_sample(&odd, 0), Err(PanError::Config(_))));
        let tiny_frac = GeneratorConfig {
            positive_fraction: (0.9, 1.0),
            max_attempts: 5,
            ..GeneratorConfig::default()
        };
        assert!(matches!(generate_sample(&tiny_frac, 0), Err(PanError::Config(_))));
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation(0.7, -0.3);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
