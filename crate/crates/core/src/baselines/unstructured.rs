//! Per-layer unstructured magnitude projection.

use crate::error::NxmError;
use crate::nxm::Mask;
use crate::tensor::Tensor;

/// Entries kept at the given sparsity: `⌈(1 − sparsity)·count⌉`.
pub fn unstructured_keep_count(count: usize, sparsity: f64) -> usize {
    (((1.0 - sparsity) * count as f64).ceil() as usize).min(count)
}

fn retained(w: &Tensor, sparsity: f64) -> Result<Vec<bool>, NxmError> {
    w.validate_finite()?;
    let data = w.data();
    let keep = unstructured_keep_count(data.len(), sparsity);
    let mut order: Vec<usize> = (0..data.len()).collect();
    // Stable: equal magnitudes keep the lower flat index first.
    order.sort_by(|&a, &b| data[b].abs().total_cmp(&data[a].abs()));
    let mut bits = vec![false; data.len()];
    for &i in &order[..keep] {
        bits[i] = true;
    }
    Ok(bits)
}

/// Keeps the largest-magnitude `⌈(1 − sparsity)·count⌉` entries of the whole
/// tensor and zeroes the rest.
pub fn project_unstructured(w: &Tensor, sparsity: f64) -> Result<Tensor, NxmError> {
    let bits = retained(w, sparsity)?;
    let mut out = w.clone();
    for (v, keep) in out.data_mut().iter_mut().zip(bits) {
        if !keep {
            *v = 0.0;
        }
    }
    Ok(out)
}

pub fn unstructured_mask(w: &Tensor, sparsity: f64) -> Result<Mask, NxmError> {
    Mask::new(w.shape().to_vec(), retained(w, sparsity)?)
}
