//! Comparison methods: one-shot magnitude pruning with a frozen mask (ASP),
//! ADMM with an unstructured per-layer projection, and plain dense
//! fine-tuning.

mod unstructured;

pub use unstructured::{project_unstructured, unstructured_keep_count, unstructured_mask};

use crate::admm::{
    init_admm, run_with, AdmmSchedule, AdmmState, Projection, RunResult, RunSetup, StepRule,
};
use crate::autodiff::{Adam, Graph};
use crate::error::{Error, Result};
use crate::model::{dense_step, Batch, LayerPolicy, Network, TaskData};
use crate::nxm::{Mask, SparsityPattern};

/// Per-layer masks fixed at creation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenMask {
    /// `None` for the all-ones mask.
    projection: Option<Projection>,
    layers: Vec<(String, usize, Mask)>,
}

impl FrozenMask {
    /// Masks selected by `projection` on the current weights.
    pub fn from_weights(
        net: &Network,
        policy: &LayerPolicy,
        projection: Projection,
    ) -> Result<Self> {
        projection.validate()?;
        let mut layers = Vec::new();
        for name in policy.constrained() {
            let id = net.params().require(name)?;
            let w = net.params().tensor(id);
            projection.check_shape(w)?;
            layers.push((name.to_string(), id, projection.mask(w)?));
        }
        Ok(Self {
            projection: Some(projection),
            layers,
        })
    }

    /// All-ones masks over the constrained layers.
    pub fn dense(net: &Network, policy: &LayerPolicy) -> Result<Self> {
        let mut layers = Vec::new();
        for name in policy.constrained() {
            let id = net.params().require(name)?;
            layers.push((
                name.to_string(),
                id,
                Mask::ones(net.params().tensor(id).shape()),
            ));
        }
        Ok(Self {
            projection: None,
            layers,
        })
    }

    pub fn projection(&self) -> Option<Projection> {
        self.projection
    }

    pub fn names(&self) -> Vec<String> {
        self.layers.iter().map(|(n, _, _)| n.clone()).collect()
    }

    pub fn mask(&self, name: &str) -> Option<&Mask> {
        self.layers
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, m)| m)
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.layers.iter().map(|(_, _, m)| m.clone()).collect()
    }

    /// Zeroes every masked-out weight.
    pub fn apply(&self, net: &mut Network) -> Result<()> {
        for (_, id, mask) in &self.layers {
            mask.apply(net.params_mut().tensor_mut(*id))?;
        }
        Ok(())
    }
}

/// One-shot magnitude prune: extracts the NxM mask of every constrained
/// weight and zeroes the rest.
pub fn asp_prune(
    net: &mut Network,
    policy: &LayerPolicy,
    pattern: SparsityPattern,
) -> Result<FrozenMask> {
    let mask = FrozenMask::from_weights(net, policy, Projection::Nxm(pattern))?;
    mask.apply(net)?;
    Ok(mask)
}

/// Adam step on the task loss with gradients outside the mask cleared and
/// the mask re-applied afterwards. Returns the pre-step loss.
pub fn masked_finetune_step(
    net: &mut Network,
    mask: &FrozenMask,
    adam: &mut Adam,
    batch: &Batch,
) -> Result<f64> {
    let (loss, mut grads) = {
        let mut g = Graph::new(net.params());
        let loss = net.loss(&mut g, batch)?;
        g.set_output(loss)?;
        (g.loss_value()?, g.backward()?)
    };
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step: adam.step_count() as usize,
            reason: format!("loss is {loss}"),
        });
    }
    for (_, id, m) in &mask.layers {
        m.apply(grads.get_mut(*id))?;
    }
    adam.step(net.params_mut(), &grads)?;
    mask.apply(net)?;
    Ok(loss)
}

/// ADMM state whose sparsity step keeps the top `1 − sparsity` fraction of
/// each layer by magnitude.
pub fn unstructured_admm_prune(
    net: &Network,
    policy: &LayerPolicy,
    sparsity: f64,
    rho: f64,
) -> Result<AdmmState> {
    init_admm(net, policy, Projection::Unstructured { sparsity }, rho)
}

struct MaskedRule<'m> {
    mask: &'m FrozenMask,
}

impl StepRule for MaskedRule<'_> {
    fn step(
        &mut self,
        net: &mut Network,
        batch: &Batch,
        adam: &mut Adam,
    ) -> Result<(f64, Option<f64>)> {
        masked_finetune_step(net, self.mask, adam, batch).map(|l| (l, None))
    }
}

struct DenseRule;

impl StepRule for DenseRule {
    fn step(
        &mut self,
        net: &mut Network,
        batch: &Batch,
        adam: &mut Adam,
    ) -> Result<(f64, Option<f64>)> {
        dense_step(net, batch, adam).map(|l| (l, None))
    }
}

/// Fine-tunes with a frozen mask under the same schedule and logging as the
/// ADMM runs.
pub fn run_masked_finetune(
    net: &mut Network,
    mask: &FrozenMask,
    schedule: &AdmmSchedule,
    data: &TaskData,
    adam: &mut Adam,
    setup: RunSetup,
) -> RunResult {
    run_with(net, &mut MaskedRule { mask }, schedule, data, adam, setup)
}

/// Unconstrained fine-tuning; epoch-end evaluation uses the dense model.
pub fn run_dense_finetune(
    net: &mut Network,
    schedule: &AdmmSchedule,
    data: &TaskData,
    adam: &mut Adam,
    setup: RunSetup,
) -> RunResult {
    run_with(net, &mut DenseRule, schedule, data, adam, setup)
}
