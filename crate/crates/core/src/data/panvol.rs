//! PANVOL1 container: magic, little-endian `u32` D/H/W, `f32` intensities in
//! slice-major order, one mask byte per voxel, then a `u16`-prefixed UTF-8 id.

use std::fs;
use std::path::Path;

use super::{Sample, Volume};
use crate::error::{PanError, Result};
use crate::tensor::Tensor;

pub const PANVOL_MAGIC: &[u8; 8] = b"PANVOL1\0";

const WHAT: &str = "PANVOL1";

fn parse_err(offset: usize, detail: impl Into<String>) -> PanError {
    PanError::Parse {
        what: WHAT,
        offset,
        detail: detail.into(),
    }
}

/// Serialize a sample. Intensities are stored as `f32`; values that are not
/// exactly representable are rounded.
pub fn volume_to_bytes(sample: &Sample) -> Result<Vec<u8>> {
    let (d, h, w) = sample.volume.dims();
    let id = sample.id.as_bytes();
    let id_len = u16::try_from(id.len()).map_err(|_| PanError::Config(format!("sample id longer than {} bytes", u16::MAX)))?;
    let n = d * h * w;
    let mut out = Vec::with_capacity(8 + 12 + 5 * n + 2 + id.len());
    out.extend_from_slice(PANVOL_MAGIC);
    for extent in [d, h, w] {
        let e = u32::try_from(extent).map_err(|_| PanError::Config(format!("extent {extent} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &v in sample.volume.intensities().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend(sample.mask().data().iter().map(|&m| m as u8));
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(parse_err(
                self.buf.len(),
                format!("truncated {field}: need {n} bytes from offset {}", self.pos),
            )),
        }
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
}

pub fn volume_from_bytes(buf: &[u8]) -> Result<Sample> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != PANVOL_MAGIC {
        return Err(parse_err(0, "bad magic"));
    }
    let mut dims = [0usize; 3];
    for (k, name) in ["D", "H", "W"].iter().enumerate() {
        let at = r.pos;
        dims[k] = r.u32(name)? as usize;
        if dims[k] == 0 {
            return Err(parse_err(at, format!("{name} is zero")));
        }
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|n| n.checked_mul(5).is_some())
        .ok_or_else(|| parse_err(8, "dimensions overflow"))?;
    let start = r.pos;
    let raw = r.take(4 * n, "intensities")?;
    let mut vals = Vec::with_capacity(n);
    for (i, c) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
        if !(0.0..=1.0).contains(&v) {
            return Err(parse_err(start + 4 * i, format!("intensity {v} outside [0, 1]")));
        }
        vals.push(v as f64);
    }
    let mask_start = r.pos;
    let raw = r.take(n, "mask")?;
    let mut mask = Vec::with_capacity(n);
    for (i, &b) in raw.iter().enumerate() {
        if b > 1 {
            return Err(parse_err(mask_start + i, format!("mask byte {b} is not 0 or 1")));
        }
        mask.push(b as f64);
    }
    let len_at = r.pos;
    let id_len = u16::from_le_bytes(r.take(2, "id length")?.try_into().expect("2 bytes")) as usize;
    let id = std::str::from_utf8(r.take(id_len, "id")?).map_err(|e| parse_err(len_at + 2 + e.valid_up_to(), "id is not UTF-8"))?;
    if r.pos != buf.len() {
        return Err(parse_err(r.pos, format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let shape = [dims[0], dims[1], dims[2]];
    let volume = Volume::new(Tensor::new(&shape, vals)?)?;
    Sample::new(volume, Tensor::new(&shape, mask)?, id).map_err(|e| parse_err(mask_start, e.to_string()))
}

pub fn write_volume_file(sample: &Sample, path: &Path) -> Result<()> {
    fs::write(path, volume_to_bytes(sample)?).map_err(|e| PanError::io(path, e))
}

pub fn read_volume_file(path: &Path) -> Result<Sample> {
    let buf = fs::read(path).map_err(|e| PanError::io(path, e))?;
    volume_from_bytes(&buf)
}
