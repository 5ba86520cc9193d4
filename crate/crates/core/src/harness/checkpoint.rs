//! Single-file binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "IPGN" | version u32 | model digest [32]
//! epoch u64 | iter u64 | rng: seed [32], stream u64, word_pos u128
//! n_records u32
//! per record: name_len u32 | name utf-8 | ndim u32 | dims u64 × ndim | f64 × numel
//! ```
//!
//! Parameter records use the parameter name; momentum buffers are stored as
//! `optim/<name>`.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IPGN";
pub const CHECKPOINT_VERSION: u32 = 1;
const OPTIM_PREFIX: &str = "optim/";

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq)]
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
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    /// Completed epochs.
    pub epoch: u64,
    /// Completed iterations.
    pub iter: u64,
    pub rng: RngState,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.iter.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        let n = self.params.len() + self.optimizer.len();
        out.extend_from_slice(&(n as u32).to_le_bytes());
        let optim = self.optimizer.iter().map(|(n, t)| (format!("{OPTIM_PREFIX}{n}"), t));
        for (name, t) in self.params.iter().map(|(n, t)| (n.clone(), t)).chain(optim) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&4u32.to_le_bytes());
            for d in t.shape().0 {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let config_digest = r.array()?;
        let epoch = r.u64()?;
        let iter = r.u64()?;
        let rng = RngState {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.array()?),
        };
        let n = r.u32()?;
        let mut params = Vec::new();
        let mut optimizer = Vec::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("record name is not utf-8".into()))?
                .to_string();
            let ndim = r.u32()?;
            if ndim != 4 {
                return Err(Error::Format(format!("record `{name}` has {ndim} dims, expected 4")));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = usize::try_from(r.u64()?).map_err(|_| Error::Format("dimension overflow".into()))?;
            }
            let numel = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
                .ok_or_else(|| Error::Format(format!("record `{name}` is larger than the file")))?;
            let bytes = r.take(numel * 8)?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::from_vec(Shape(dims), data).map_err(|e| Error::Format(e.to_string()))?;
            match name.strip_prefix(OPTIM_PREFIX) {
                Some(p) => optimizer.push((p.to_string(), t)),
                None => params.push((name, t)),
            }
        }
        if r.pos != buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Checkpoint {
            config_digest,
            epoch,
            iter,
            rng,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Rejects checkpoints written for a different architecture.
    pub fn check_digest(&self, expected: &[u8; 32]) -> Result<()> {
        if &self.config_digest != expected {
            return Err(Error::Config(
                "checkpoint was written for a different model configuration".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sample() -> Checkpoint {
        Checkpoint {
            config_digest: [7; 32],
            epoch: 3,
            iter: 384,
            rng: RngState::capture(&ChaCha8Rng::seed_from_u64(5)),
            params: vec![("a.weight".into(), Tensor::from_fn([2, 1, 1, 3], |n, _, _, w| n as f64 - w as f64 * 0.1))],
            optimizer: vec![("a.weight".into(), Tensor::full([2, 1, 1, 3], -1e-300))],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], b"IPGN");
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 10, 60, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..17 {
            a.random::<u64>();
        }
        let mut b = RngState::capture(&a).restore();
        for _ in 0..5 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }
}
