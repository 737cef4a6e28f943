//! Boolean retention masks.

use crate::error::NxmError;
use crate::nxm::pattern::SparsityPattern;
use crate::tensor::Tensor;

/// A boolean per element of a tensor; `true` marks a retained position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self, NxmError> {
        if shape.iter().product::<usize>() != bits.len() {
            return Err(NxmError::MaskMismatch(format!(
                "shape {shape:?} does not hold {} bits",
                bits.len()
            )));
        }
        Ok(Self { shape, bits })
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            bits: vec![true; shape.iter().product()],
        }
    }

    /// Positions holding a nonzero value.
    pub fn nonzero(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            bits: t.data().iter().map(|&v| v != 0.0).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of positions retained by both masks.
    pub fn overlap(&self, other: &Mask) -> Result<usize, NxmError> {
        if self.shape != other.shape {
            return Err(NxmError::MaskMismatch(format!(
                "shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count())
    }

    /// Zeroes every position of `t` outside the mask.
    pub fn apply(&self, t: &mut Tensor) -> Result<(), NxmError> {
        if t.shape() != self.shape.as_slice() {
            return Err(NxmError::MaskMismatch(format!(
                "mask {:?} applied to tensor {:?}",
                self.shape,
                t.shape()
            )));
        }
        for (v, &keep) in t.data_mut().iter_mut().zip(&self.bits) {
            if !keep {
                *v = 0.0;
            }
        }
        Ok(())
    }
}

/// A mask whose every group of `n` along the input dimension retains
/// exactly `m` positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NxmMask {
    pattern: SparsityPattern,
    mask: Mask,
}

impl NxmMask {
    /// Validates the exact-`m`-per-group property.
    pub fn new(pattern: SparsityPattern, mask: Mask) -> Result<Self, NxmError> {
        let dim = *mask
            .shape
            .last()
            .ok_or_else(|| NxmError::MaskMismatch("rank-0 mask".into()))?;
        pattern.check_dim(dim)?;
        for (group, bits) in mask.bits.chunks(pattern.n()).enumerate() {
            if bits.iter().filter(|&&b| b).count() != pattern.m() {
                return Err(NxmError::NonCompliant {
                    n: pattern.n(),
                    m: pattern.m(),
                    group,
                });
            }
        }
        Ok(Self { pattern, mask })
    }

    pub(crate) fn from_parts_unchecked(pattern: SparsityPattern, mask: Mask) -> Self {
        Self { pattern, mask }
    }

    pub fn pattern(&self) -> SparsityPattern {
        self.pattern
    }

    pub fn as_mask(&self) -> &Mask {
        &self.mask
    }

    pub fn into_mask(self) -> Mask {
        self.mask
    }

    pub fn shape(&self) -> &[usize] {
        self.mask.shape()
    }

    pub fn bits(&self) -> &[bool] {
        self.mask.bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nxm_mask_requires_exactly_m_per_group() {
        let p = SparsityPattern::default();
        let good = Mask::new(
            vec![1, 8],
            vec![true, true, false, false, false, true, false, true],
        )
        .unwrap();
        assert!(NxmMask::new(p, good).is_ok());
        let short = Mask::new(vec![1, 4], vec![true, false, false, false]).unwrap();
        assert!(matches!(
            NxmMask::new(p, short),
            Err(NxmError::NonCompliant { group: 0, .. })
        ));
        let ragged = Mask::new(vec![1, 6], vec![true; 6]).unwrap();
        assert!(matches!(
            NxmMask::new(p, ragged),
            Err(NxmError::NotDivisible { .. })
        ));
    }

    #[test]
    fn overlap_and_apply() {
        let a = Mask::new(vec![4], vec![true, true, false, false]).unwrap();
        let b = Mask::new(vec![4], vec![true, false, true, false]).unwrap();
        assert_eq!(a.overlap(&b).unwrap(), 1);
        let mut t = Tensor::from_fn(&[4], |i| i as f64 + 1.0);
        a.apply(&mut t).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 0.0, 0.0]);
        assert!(a.overlap(&Mask::ones(&[2, 2])).is_err());
    }
}
