use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::NxmError;

/// Group size `n` and retained count `m`: at most `m` nonzeros in every
/// contiguous run of `n` weights along the input dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPattern", into = "RawPattern")]
pub struct SparsityPattern {
    n: usize,
    m: usize,
}

#[derive(Serialize, Deserialize)]
struct RawPattern {
    n: usize,
    m: usize,
}

impl TryFrom<RawPattern> for SparsityPattern {
    type Error = NxmError;
    fn try_from(raw: RawPattern) -> Result<Self, NxmError> {
        Self::new(raw.n, raw.m)
    }
}

impl From<SparsityPattern> for RawPattern {
    fn from(p: SparsityPattern) -> Self {
        RawPattern { n: p.n, m: p.m }
    }
}

impl Default for SparsityPattern {
    fn default() -> Self {
        Self { n: 4, m: 2 }
    }
}

impl SparsityPattern {
    pub fn new(n: usize, m: usize) -> Result<Self, NxmError> {
        if m == 0 || m > n {
            return Err(NxmError::InvalidPattern { n, m });
        }
        Ok(Self { n, m })
    }

    pub fn n(self) -> usize {
        self.n
    }

    pub fn m(self) -> usize {
        self.m
    }

    /// Fraction of entries retained.
    pub fn density(self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// Bits needed to address a position inside a group: `ceil(log2 n)`.
    pub fn index_bits(self) -> usize {
        (usize::BITS - (self.n - 1).leading_zeros()) as usize
    }

    /// Checks that a tensor's input (last) dimension splits into whole groups.
    pub fn check_dim(self, dim: usize) -> Result<(), NxmError> {
        if dim % self.n != 0 {
            return Err(NxmError::NotDivisible { dim, n: self.n });
        }
        Ok(())
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

impl FromStr for SparsityPattern {
    type Err = NxmError;

    /// Parses `"n:m"`, e.g. `"4:2"`.
    fn from_str(s: &str) -> Result<Self, NxmError> {
        let bad = || NxmError::Format(format!("pattern `{s}` is not of the form n:m"));
        let (n, m) = s.split_once(':').ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let m = m.trim().parse().map_err(|_| bad())?;
        Self::new(n, m)
    }
}
