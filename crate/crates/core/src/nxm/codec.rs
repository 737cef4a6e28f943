//! Packed values-plus-indices format for NxM-compliant tensors.
//!
//! Byte layout, little-endian throughout:
//!
//! ```text
//! magic     8 bytes   "NXMC0001"
//! n         u32
//! m         u32
//! rank      u32
//! dims      u64 × rank
//! groups    per group in row-major order:
//!             m × f64   retained values, ascending intra-group position
//!             m indices of ceil(log2 n) bits, packed LSB-first,
//!             padded to a whole byte
//! ```

use crate::error::NxmError;
use crate::nxm::pattern::SparsityPattern;
use crate::nxm::project::first_violation;
use crate::tensor::Tensor;

pub const COMPRESSED_MAGIC: &[u8; 8] = b"NXMC0001";

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedNxm {
    pattern: SparsityPattern,
    shape: Vec<usize>,
    values: Vec<f64>,
    indices: Vec<u8>,
}

impl CompressedNxm {
    pub fn pattern(&self) -> SparsityPattern {
        self.pattern
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// `m` values per group.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Intra-group position of each value.
    pub fn indices(&self) -> &[u8] {
        &self.indices
    }

    pub fn group_count(&self) -> usize {
        self.values.len() / self.pattern.m()
    }

    /// Bytes of packed index data per group.
    pub fn index_bytes_per_group(&self) -> usize {
        (self.pattern.m() * self.pattern.index_bits()).div_ceil(8)
    }

    /// Size of the serialized form in bytes.
    pub fn encoded_len(&self) -> usize {
        let header = 8 + 4 * 3 + 8 * self.shape.len();
        header + self.group_count() * (self.pattern.m() * 8 + self.index_bytes_per_group())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(COMPRESSED_MAGIC);
        out.extend_from_slice(&(self.pattern.n() as u32).to_le_bytes());
        out.extend_from_slice(&(self.pattern.m() as u32).to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let m = self.pattern.m();
        let bits = self.pattern.index_bits();
        let per_group = self.index_bytes_per_group();
        for (vals, idx) in self.values.chunks(m).zip(self.indices.chunks(m)) {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let start = out.len();
            out.resize(start + per_group, 0);
            for (k, &pos) in idx.iter().enumerate() {
                write_bits(&mut out[start..], k * bits, bits, pos as u64);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NxmError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != COMPRESSED_MAGIC {
            return Err(NxmError::Format("bad magic".into()));
        }
        let n = r.u32()? as usize;
        let m = r.u32()? as usize;
        let pattern = SparsityPattern::new(n, m)?;
        let rank = r.u32()? as usize;
        if rank == 0 {
            return Err(NxmError::Format("rank 0".into()));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if shape.contains(&0) {
            return Err(NxmError::Format(format!("zero dimension in {shape:?}")));
        }
        pattern.check_dim(*shape.last().expect("rank > 0"))?;
        let elements = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| NxmError::Format("dimension overflow".into()))?;
        let groups = elements / n;
        let bits = pattern.index_bits();
        let per_group = (m * bits).div_ceil(8);
        if r.remaining() != groups * (m * 8 + per_group) {
            return Err(NxmError::Format(format!(
                "expected {} payload bytes, found {}",
                groups * (m * 8 + per_group),
                r.remaining()
            )));
        }
        let mut values = Vec::with_capacity(groups * m);
        let mut indices = Vec::with_capacity(groups * m);
        for g in 0..groups {
            for _ in 0..m {
                values.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            let packed = r.take(per_group)?;
            let mut prev = None;
            for k in 0..m {
                let pos = read_bits(packed, k * bits, bits) as usize;
                if pos >= n || prev.is_some_and(|p| pos <= p) {
                    return Err(NxmError::Format(format!("group {g}: bad index sequence")));
                }
                prev = Some(pos);
                indices.push(pos as u8);
            }
        }
        Ok(Self {
            pattern,
            shape,
            values,
            indices,
        })
    }
}

/// Packs a compliant tensor. Groups with fewer than `m` nonzeros are padded
/// with their lowest-position zero entries so every group stores `m` slots.
pub fn compress(w: &Tensor, pattern: SparsityPattern) -> Result<CompressedNxm, NxmError> {
    if let Some(group) = first_violation(w, pattern)? {
        return Err(NxmError::NonCompliant {
            n: pattern.n(),
            m: pattern.m(),
            group,
        });
    }
    if pattern.n() > 256 {
        return Err(NxmError::Format(format!(
            "group size {} exceeds 256",
            pattern.n()
        )));
    }
    let (n, m) = (pattern.n(), pattern.m());
    let groups = w.len() / n;
    let mut values = Vec::with_capacity(groups * m);
    let mut indices = Vec::with_capacity(groups * m);
    let mut slots = Vec::with_capacity(m);
    for group in w.data().chunks(n) {
        slots.clear();
        slots.extend((0..n).filter(|&i| group[i] != 0.0));
        // Prefer keeping signed zeros so the round trip stays bitwise exact.
        let fill = (0..n)
            .filter(|&i| group[i] == 0.0 && group[i].is_sign_negative())
            .chain((0..n).filter(|&i| group[i].to_bits() == 0));
        for i in fill {
            if slots.len() == m {
                break;
            }
            slots.push(i);
        }
        slots.sort_unstable();
        for &i in &slots {
            values.push(group[i]);
            indices.push(i as u8);
        }
    }
    Ok(CompressedNxm {
        pattern,
        shape: w.shape().to_vec(),
        values,
        indices,
    })
}

/// Scatters the stored values back into a dense tensor.
pub fn decompress(c: &CompressedNxm) -> Result<Tensor, NxmError> {
    let (n, m) = (c.pattern.n(), c.pattern.m());
    let mut t = Tensor::zeros(&c.shape);
    for ((group, vals), idx) in t
        .data_mut()
        .chunks_mut(n)
        .zip(c.values.chunks(m))
        .zip(c.indices.chunks(m))
    {
        for (&v, &i) in vals.iter().zip(idx) {
            group[i as usize] = v;
        }
    }
    Ok(t)
}

fn write_bits(buf: &mut [u8], offset: usize, width: usize, value: u64) {
    for b in 0..width {
        if (value >> b) & 1 == 1 {
            let bit = offset + b;
            buf[bit / 8] |= 1 << (bit % 8);
        }
    }
}

fn read_bits(buf: &[u8], offset: usize, width: usize) -> u64 {
    (0..width).fold(0, |acc, b| {
        let bit = offset + b;
        acc | ((((buf[bit / 8] >> (bit % 8)) & 1) as u64) << b)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], NxmError> {
        let end = self.pos + len;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| NxmError::Format("truncated payload".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, NxmError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, NxmError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}
