//! Mask similarity between consecutive ADMM iterations.

use crate::error::NxmError;
use crate::nxm::Mask;

/// `|prev ∩ next| / |prev|`. An empty `prev` compares equal only to an
/// empty `next`.
pub fn mask_similarity(prev: &Mask, next: &Mask) -> Result<f64, NxmError> {
    let shared = prev.overlap(next)?;
    let kept = prev.count();
    if kept == 0 {
        return Ok(if next.count() == 0 { 1.0 } else { 0.0 });
    }
    Ok(shared as f64 / kept as f64)
}

/// Per-layer similarity averaged with equal weight per layer.
pub fn mean_mask_similarity(prev: &[Mask], next: &[Mask]) -> Result<f64, NxmError> {
    if prev.len() != next.len() || prev.is_empty() {
        return Err(NxmError::MaskMismatch(format!(
            "cannot compare {} layer masks with {}",
            prev.len(),
            next.len()
        )));
    }
    let mut total = 0.0;
    for (a, b) in prev.iter().zip(next) {
        total += mask_similarity(a, b)?;
    }
    Ok(total / prev.len() as f64)
}
