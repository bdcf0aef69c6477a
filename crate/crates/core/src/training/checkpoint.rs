//! PANCKPT1 container.
//!
//! Layout, all integers little-endian:
//! magic `PANCKPT1`; 32-byte sha256 of the config text; `u32` length and the
//! UTF-8 config text; `u32` epoch; RNG state (32-byte seed, `u64` stream,
//! `u128` word position); `u32` blob count; then per blob a `u16`-prefixed
//! name, `u32` rank, `u32` extents and `f64` values.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{PanError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PANCKPT1";

/// Resumable position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Effective-config banner of the run.
    pub config_text: String,
    /// Completed epochs.
    pub epoch: u32,
    pub rng: RngState,
    pub blobs: Vec<(String, Tensor)>,
}

const WHAT: &str = "PANCKPT1";

fn parse_err(offset: usize, detail: impl Into<String>) -> PanError {
    PanError::Parse {
        what: WHAT,
        offset,
        detail: detail.into(),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.buf.len()) {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(parse_err(self.buf.len(), format!("truncated {field} at offset {}", self.pos))),
        }
    }

    fn array<const N: usize>(&mut self, field: &str) -> Result<[u8; N]> {
        Ok(self.take(N, field)?.try_into().expect("exact length"))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(field)?))
    }
}

impl Checkpoint {
    pub fn blob(&self, name: &str) -> Option<&Tensor> {
        self.blobs.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&Sha256::digest(self.config_text.as_bytes()));
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, t) in &self.blobs {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(parse_err(0, "bad magic"));
        }
        let hash: [u8; 32] = r.array("config hash")?;
        let len = r.u32("config length")? as usize;
        let text_at = r.pos;
        let text = std::str::from_utf8(r.take(len, "config text")?).map_err(|e| parse_err(text_at + e.valid_up_to(), "config text is not UTF-8"))?;
        if Sha256::digest(text.as_bytes()).as_slice() != hash {
            return Err(parse_err(8, "config hash does not match config text"));
        }
        let epoch = r.u32("epoch")?;
        let rng = RngState {
            seed: r.array("rng seed")?,
            stream: u64::from_le_bytes(r.array("rng stream")?),
            word_pos: u128::from_le_bytes(r.array("rng position")?),
        };
        let count = r.u32("blob count")?;
        let mut blobs = Vec::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array("blob name length")?) as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len, "blob name")?).map_err(|_| parse_err(name_at, "blob name is not UTF-8"))?;
            let rank_at = r.pos;
            let rank = r.u32("blob rank")? as usize;
            if rank == 0 || rank > 8 {
                return Err(parse_err(rank_at, format!("blob {name}: unsupported rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("blob extent")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .filter(|&n| n > 0 && n.checked_mul(8).is_some())
                .ok_or_else(|| parse_err(rank_at, format!("blob {name}: bad shape {shape:?}")))?;
            let raw = r.take(8 * n, "blob data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            blobs.push((name.to_string(), Tensor::new(&shape, data)?));
        }
        if r.pos != buf.len() {
            return Err(parse_err(r.pos, format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_text: text.to_string(),
            epoch,
            rng,
            blobs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        // Write-then-rename so an interrupted save never clobbers the last good file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| PanError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| PanError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| PanError::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        rng.next_u64();
        Checkpoint {
            config_text: "seed = 1\n".into(),
            epoch: 3,
            rng: RngState::capture(&rng),
            blobs: vec![
                ("s/enc0.weight".into(), Tensor::randn(&[2, 1, 3, 3], 1.0, &mut rng)),
                ("s.adam.t".into(), Tensor::scalar(7.0)),
            ],
        }
    }

    #[test]
    fn byte_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.blob("s.adam.t").unwrap().item(), 7.0);
        assert!(back.blob("missing").is_none());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.panckpt");
        c.write(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        assert_eq!(Checkpoint::read(&path).unwrap(), c);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u32();
        let state = RngState::capture(&rng);
        let mut restored = state.restore();
        for _ in 0..10 {
            assert_eq!(rng.next_u64(), restored.next_u64());
        }
    }

    #[test]
    fn corruption_is_reported() {
        let bytes = sample().to_bytes();
        for cut in [0, 7, 40, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(PanError::Parse { offset, .. }) if offset == cut));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[44] ^= 1; // inside the config text
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(PanError::Parse { offset: 8, .. })));
        let mut bad = bytes;
        bad.push(0);
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
