//! Binary checkpoint format.
//!
//! Little-endian throughout: magic `NXMW0001`, `u32` tensor count, then per
//! tensor a `u16` name length, the UTF-8 name, `u32` rank, `u64` dims and the
//! row-major `f64` payload.

use std::fs;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NXMW0001";

pub fn encode_checkpoint(params: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + params.element_count() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("name `{name}` longer than 65535 bytes")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let slice = bytes
            .get(pos..pos + len)
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        pos += len;
        Ok(slice)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        if params.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        let rank = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize);
        }
        let elements = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible shape {shape:?}")))?;
        let data = take(elements * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        params.insert(name, t);
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - pos
        )));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, encode_checkpoint(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_bit_exact() {
        let mut p = ParamStore::new();
        p.insert("ab", Tensor::new(vec![1, 2], vec![1.5, -0.0]).unwrap());
        let bytes = encode_checkpoint(&p).unwrap();
        let mut expected = b"NXMW0001".to_vec();
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u16.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-0.0f64).to_le_bytes());
        assert_eq!(bytes, expected);
        assert!(decode_checkpoint(&bytes).unwrap().bit_eq(&p));
    }

    #[test]
    fn rejects_corruption() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::zeros(&[3]));
        let bytes = encode_checkpoint(&p).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        assert!(decode_checkpoint(b"NXMW0002\0\0\0\0").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_fn(&[4, 8], |i| i as f64 * 0.1));
        save_checkpoint(&path, &p).unwrap();
        assert!(load_checkpoint(&path).unwrap().bit_eq(&p));
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }
}
