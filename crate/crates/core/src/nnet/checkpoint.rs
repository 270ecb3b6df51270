//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "FRLT" | u32 version | u32 epoch | u64 rng_seed | u32 tensor_count
//! per tensor: u16 name_len | name | u8 rank | u32 dims[rank] | f64 data[prod(dims)]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ModelParams, NnError, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FRLT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + params.num_parameters() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.epoch().to_le_bytes());
    out.extend_from_slice(&params.rng_seed().to_le_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.tensors() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(NnError::CorruptCheckpoint(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(NnError::CorruptCheckpoint("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let epoch = cur.u32("epoch")?;
    let seed = cur.u64("rng seed")?;
    let count = cur.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| NnError::CorruptCheckpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8("rank")? as usize;
        let dims = (0..rank)
            .map(|_| cur.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let raw = cur.take(n.checked_mul(8).ok_or_else(|| NnError::CorruptCheckpoint("size overflow".into()))?, &name)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(dims, data).map_err(|e| NnError::CorruptCheckpoint(format!("{name}: {e}")))?;
        tensors.push((name, t));
    }
    if cur.pos != bytes.len() {
        return Err(NnError::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    ModelParams::new(tensors, epoch, seed).map_err(|e| NnError::CorruptCheckpoint(e.to_string()))
}

/// Writes atomically: a temporary sibling file is renamed into place.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let tmp = path.with_extension("bin.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&write_checkpoint(params))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::Architecture;

    fn sample() -> ModelParams {
        let mut p = ModelParams::init(Architecture::lstm(24, 25, 4, 3, 2), 0xDEAD_BEEF);
        p.set_epoch(35);
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = sample();
        let q = read_checkpoint(&write_checkpoint(&p)).unwrap();
        assert_eq!(q.epoch(), 35);
        assert_eq!(q.rng_seed(), 0xDEAD_BEEF);
        let a: Vec<u64> = p.flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = q.flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(p, q);
    }

    #[test]
    fn header_layout() {
        let bytes = write_checkpoint(&sample());
        assert_eq!(&bytes[..4], b"FRLT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 35);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 0xDEAD_BEEF);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 9);
        assert_eq!(u16::from_le_bytes(bytes[24..26].try_into().unwrap()), 12);
        assert_eq!(&bytes[26..38], b"lstm.w_input");
        assert_eq!(bytes[38], 2);
    }

    #[test]
    fn truncation_is_corrupt() {
        let bytes = write_checkpoint(&sample());
        for cut in [3, 10, 30, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(NnError::CorruptCheckpoint(_))), "cut {cut}");
        }
    }

    #[test]
    fn bumped_version_is_unsupported() {
        let mut bytes = write_checkpoint(&sample());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(read_checkpoint(&bytes), Err(NnError::UnsupportedVersion(2))));
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = write_checkpoint(&sample());
        bytes.push(0);
        assert!(matches!(read_checkpoint(&bytes), Err(NnError::CorruptCheckpoint(_))));
        bytes.pop();
        bytes[0] = b'X';
        assert!(matches!(read_checkpoint(&bytes), Err(NnError::CorruptCheckpoint(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_epoch_35.bin");
        let p = sample();
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        assert!(!path.with_extension("bin.tmp").exists());
    }
}
