//! Binary checkpoint container: magic `HLPS`, a format version, then
//! length-prefixed named segments. Matrices are little-endian f64; raw
//! byte segments carry RNG states, counters and the embedded config.

use std::collections::BTreeMap;
 
use std::path::Path;

use anyhow::{bail, Context, Result};
use hlps_core::autodiff::{SharedParam, Tensor};

pub const MAGIC: &[u8; 4] = b"HLPS";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub enum Segment {
    Matrix(Tensor),
    Bytes(Vec<u8>),
}

#[derive(Debug, Default)]
pub struct Checkpoint {
    /// Insertion order preserved for deterministic files.
    order: Vec<String>,
    segments: BTreeMap<String, Segment>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(
            self.segments.insert(name.clone(), Segment::Matrix(t)).is_none(),
            "duplicate checkpoint segment `{name}`"
        );
        self.order.push(name);
    }

    pub fn add_bytes(&mut self, name: impl Into<String>, b: Vec<u8>) {
        let name = name.into();
        assert!(
            self.segments.insert(name.clone(), Segment::Bytes(b)).is_none(),
            "duplicate checkpoint segment `{name}`"
        );
        self.order.push(name);
    }

    pub fn add_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.add_matrix(name, Tensor::scalar(v));
    }

    pub fn add_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.add_matrix(name, Tensor::from_vec(v.len().max(1), 1, if v.is_empty() { vec![0.0] } else { v.to_vec() }));
    }

    /// Serializes a parameter as value + Adam state.
    pub fn add_param(&mut self, prefix: &str, p: &SharedParam) {
        let p = p.borrow();
        self.add_matrix(format!("{prefix}.value"), p.value.clone());
        self.add_matrix(format!("{prefix}.m"), p.m.clone());
        self.add_matrix(format!("{prefix}.v"), p.v.clone());
        self.add_bytes(format!("{prefix}.steps"), p.steps.to_le_bytes().to_vec());
    }

    pub fn matrix(&self, name: &str) -> Result<&Tensor> {
        match self.segments.get(name) {
            Some(Segment::Matrix(t)) => Ok(t),
            Some(Segment::Bytes(_)) => bail!("checkpoint segment `{name}` is a byte blob, not a matrix"),
            None => bail!("checkpoint is missing segment `{name}`"),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.segments.get(name) {
            Some(Segment::Bytes(b)) => Ok(b),
            Some(Segment::Matrix(_)) => bail!("checkpoint segment `{name}` is a matrix, not bytes"),
            None => bail!("checkpoint is missing segment `{name}`"),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        Ok(self.matrix(name)?.item())
    }

    pub fn u64_of(&self, name: &str) -> Result<u64> {
        let b = self.bytes(name)?;
        if b.len() != 8 {
            bail!("segment `{name}` is not a u64");
        }
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    /// Restores value + Adam state into an existing parameter.
    pub fn load_param(&self, prefix: &str, p: &SharedParam) -> Result<()> {
        let mut p = p.borrow_mut();
        let value = self.matrix(&format!("{prefix}.value"))?;
        if value.shape() != p.value.shape() {
            bail!(
                "checkpoint segment `{prefix}.value` has shape {:?}, expected {:?}",
                value.shape(),
                p.value.shape()
            );
        }
        p.value = value.clone();
        p.m = self.matrix(&format!("{prefix}.m"))?.clone();
        p.v = self.matrix(&format!("{prefix}.v"))?.clone();
        p.steps = self.u64_of(&format!("{prefix}.steps"))?;
        p.grad.fill(0.0);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for name in &self.order {
            let seg = &self.segments[name];
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match seg {
                Segment::Matrix(t) => {
                    out.push(0);
                    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
                    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Segment::Bytes(b) => {
                    out.push(1);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        std::fs::write(path, out).with_context(|| format!("writing checkpoint `{}`", path.display()))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).with_context(|| format!("reading checkpoint `{}`", path.display()))?;
        let mut r = Cursor { data: &data, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            bail!("`{}` is not a checkpoint (bad magic)", path.display());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            bail!("checkpoint `{}` has unsupported version {version}", path.display());
        }
        let count = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let mut cp = Checkpoint::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).context("segment name not utf8")?;
            let kind = r.take(1)?[0];
            match kind {
                0 => {
                    let rows = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
                    let cols = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
                    let raw = r.take(rows * cols * 8)?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    cp.add_matrix(name, Tensor::from_vec(rows, cols, data));
                }
                1 => {
                    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
                    cp.add_bytes(name, r.take(len)?.to_vec());
                }
                other => bail!("unknown segment kind {other} in `{}`", path.display()),
            }
        }
        Ok(cp)
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            bail!("checkpoint truncated at byte {}", self.pos);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

/// Serializes a ChaCha RNG as (seed, stream, word_pos).
pub fn rng_to_bytes(rng: &rand_chacha::ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 + 16);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

pub fn rng_from_bytes(b: &[u8]) -> Result<rand_chacha::ChaCha8Rng> {
    use rand::SeedableRng;
    if b.len() != 56 {
        bail!("rng state must be 56 bytes, got {}", b.len());
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&b[..32]);
    let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
    rng.set_stream(u64::from_le_bytes(b[32..40].try_into().unwrap()));
    rng.set_word_pos(u128::from_le_bytes(b[40..56].try_into().unwrap()));
    Ok(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn round_trip_preserves_segments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.hlps");
        let mut cp = Checkpoint::new();
        cp.add_matrix("w", Tensor::from_vec(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]));
        cp.add_bytes("blob", vec![1, 2, 3, 255]);
        cp.add_scalar("s", -0.25);
        cp.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.matrix("w").unwrap().data(), cp.matrix("w").unwrap().data());
        assert_eq!(back.bytes("blob").unwrap(), &[1, 2, 3, 255]);
        assert_eq!(back.scalar("s").unwrap(), -0.25);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hlps");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.hlps");
        let mut data = Vec::new();
        data.extend_from_slice(MAGIC);
        data.extend_from_slice(&9u32.to_le_bytes());
        data.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, data).unwrap();
        let err = Checkpoint::load(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"));
    }

    #[test]
    fn rng_state_round_trips_mid_stream() {
        let mut rng = hlps_core::rng::stream(42, 3);
        for _ in 0..17 {
            rng.next_u64();
        }
        let bytes = rng_to_bytes(&rng);
        let mut back = rng_from_bytes(&bytes).unwrap();
        for _ in 0..100 {
            assert_eq!(rng.next_u64(), back.next_u64());
        }
    }
}
