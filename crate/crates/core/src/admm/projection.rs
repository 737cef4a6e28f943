//! The constraint set the sparsity step projects onto.

use serde::{Deserialize, Serialize};

use crate::baselines::{project_unstructured, unstructured_keep_count, unstructured_mask};
use crate::error::{Error, NxmError, Result};
use crate::nxm::{check_compliance, extract_mask, project_nxm, Mask, SparsityPattern};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Projection {
    /// NxM groups along the input dimension.
    Nxm(SparsityPattern),
    /// Per-layer top-magnitude selection at the given sparsity.
    Unstructured { sparsity: f64 },
}

impl Projection {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Projection::Nxm(_) => Ok(()),
            Projection::Unstructured { sparsity } if sparsity > 0.0 && sparsity < 1.0 => Ok(()),
            Projection::Unstructured { sparsity } => Err(Error::Config(format!(
                "unstructured sparsity must lie in (0, 1), got {sparsity}"
            ))),
        }
    }

    /// Fails when `w` cannot carry this constraint.
    pub fn check_shape(&self, w: &Tensor) -> Result<(), NxmError> {
        match self {
            Projection::Nxm(p) => p.check_dim(w.last_dim()),
            Projection::Unstructured { .. } => Ok(()),
        }
    }

    pub fn project(&self, w: &Tensor) -> Result<Tensor, NxmError> {
        match *self {
            Projection::Nxm(p) => project_nxm(w, p),
            Projection::Unstructured { sparsity } => project_unstructured(w, sparsity),
        }
    }

    /// Positions [`Projection::project`] retains.
    pub fn mask(&self, w: &Tensor) -> Result<Mask, NxmError> {
        match *self {
            Projection::Nxm(p) => Ok(extract_mask(w, p)?.into_mask()),
            Projection::Unstructured { sparsity } => unstructured_mask(w, sparsity),
        }
    }

    pub fn is_compliant(&self, w: &Tensor) -> Result<bool, NxmError> {
        match *self {
            Projection::Nxm(p) => check_compliance(w, p),
            Projection::Unstructured { sparsity } => {
                let nonzero = w.data().iter().filter(|&&v| v != 0.0).count();
                Ok(nonzero <= unstructured_keep_count(w.len(), sparsity))
            }
        }
    }
}
