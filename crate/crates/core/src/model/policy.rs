//! Which weight tensors carry the NxM constraint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::network::Network;

/// Per-tensor constrained flag, in parameter order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPolicy {
    entries: Vec<(String, bool)>,
}

impl LayerPolicy {
    pub fn is_constrained(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, c)| n == name && *c)
    }

    /// Constrained tensor names in parameter order.
    pub fn constrained(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, c)| *c)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn entries(&self) -> &[(String, bool)] {
        &self.entries
    }
}

/// Default policy: the per-block matmul weights are constrained; the input
/// projection, classifier, biases and layer-norm parameters are not.
/// `overrides` may flip any rank-2 weight.
pub fn build_policy(net: &Network, overrides: &BTreeMap<String, bool>) -> Result<LayerPolicy> {
    let defaults = net.block_weights();
    for (name, &on) in overrides {
        let t = net
            .params()
            .get(name)
            .ok_or_else(|| Error::UnknownTensor(name.clone()))?;
        if on && t.rank() != 2 {
            return Err(Error::Config(format!(
                "`{name}` is not a weight matrix and cannot be constrained"
            )));
        }
    }
    let entries = net
        .params()
        .names()
        .iter()
        .map(|name| {
            let on = overrides
                .get(name)
                .copied()
                .unwrap_or_else(|| defaults.contains(name));
            (name.clone(), on)
        })
        .collect();
    Ok(LayerPolicy { entries })
}
