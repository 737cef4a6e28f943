//! Magnitude change of constrained weights grouped by how often they sat in
//! the sparse mask.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::nxm::Mask;

/// Initial magnitudes below this are skipped.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceBucket {
    /// Number of iterations the weight was retained.
    pub presence: usize,
    pub population: usize,
    /// Mean `|w_final| / |w_initial|`; `None` for an empty bucket.
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceHistogram {
    pub iterations: usize,
    /// One bucket per presence count `0..=iterations`.
    pub buckets: Vec<PresenceBucket>,
    /// Constrained weights skipped by the magnitude floor.
    pub below_floor: usize,
}

impl PresenceHistogram {
    pub fn population(&self) -> usize {
        self.buckets.iter().map(|b| b.population).sum()
    }

    /// True when bucket means never rise as presence falls, ignoring empty
    /// buckets.
    pub fn is_monotone(&self) -> bool {
        let means: Vec<f64> = self.buckets.iter().filter_map(|b| b.mean_ratio).collect();
        means.windows(2).all(|w| w[0] <= w[1])
    }

    /// Mean ratio of the always-retained bucket.
    pub fn always_present(&self) -> Option<f64> {
        self.buckets.last().and_then(|b| b.mean_ratio)
    }
}

/// `history[j][i]` is layer `i`'s mask after iteration `j`; `layers` names
/// the constrained tensors in the same order.
pub fn decay_report(
    initial: &ParamStore,
    last: &ParamStore,
    layers: &[String],
    history: &[Vec<Mask>],
) -> Result<PresenceHistogram> {
    let iterations = history.len();
    if let Some(j) = history.iter().position(|h| h.len() != layers.len()) {
        return Err(Error::Config(format!(
            "mask history entry {j} has {} layers, expected {}",
            history[j].len(),
            layers.len()
        )));
    }
    let mut sums = vec![0.0; iterations + 1];
    let mut counts = vec![0usize; iterations + 1];
    let mut below_floor = 0;
    for (i, name) in layers.iter().enumerate() {
        let w0 = initial
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.clone()))?;
        let w1 = last
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.clone()))?;
        if w0.shape() != w1.shape() {
            return Err(Error::Config(format!("`{name}` changed shape")));
        }
        for h in history {
            if h[i].shape() != w0.shape() {
                return Err(Error::Config(format!("mask shape mismatch for `{name}`")));
            }
        }
        for (e, (a, b)) in w0.data().iter().zip(w1.data()).enumerate() {
            if a.abs() < MAGNITUDE_FLOOR {
                below_floor += 1;
                continue;
            }
            let presence = history.iter().filter(|h| h[i].bits()[e]).count();
            sums[presence] += b.abs() / a.abs();
            counts[presence] += 1;
        }
    }
    let buckets = (0..=iterations)
        .map(|p| PresenceBucket {
            presence: p,
            population: counts[p],
            mean_ratio: (counts[p] > 0).then(|| sums[p] / counts[p] as f64),
        })
        .collect();
    Ok(PresenceHistogram {
        iterations,
        buckets,
        below_floor,
    })
}
