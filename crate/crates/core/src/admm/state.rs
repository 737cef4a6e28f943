//! ADMM variables and the three alternating updates.

use serde::{Deserialize, Serialize};

use crate::admm::projection::Projection;
use crate::autodiff::{penalty_residual, Graph, Var};
use crate::error::{Error, Result};
use crate::model::{Batch, LayerPolicy, Network};
use crate::nxm::Mask;
use crate::tensor::Tensor;

/// Auxiliary and dual variables of one constrained weight.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmLayer {
    name: String,
    id: usize,
    z: Tensor,
    u: Tensor,
    mask: Mask,
}

impl AdmmLayer {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Parameter id of the owning weight.
    pub fn param_id(&self) -> usize {
        self.id
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn u(&self) -> &Tensor {
        &self.u
    }

    /// Support selected by the latest projection.
    pub fn mask(&self) -> &Mask {
        &self.mask
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    projection: Projection,
    rho: f64,
    k: usize,
    layers: Vec<AdmmLayer>,
}

/// Forward-graph handles returned by [`AdmmState::augmented_loss`].
#[derive(Debug, Clone, Copy)]
pub struct AugmentedLoss {
    pub task: Var,
    pub total: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResidual {
    pub name: String,
    /// `‖W − Z‖_F`
    pub abs: f64,
    /// `‖W − Z‖_F / ‖W‖_F`
    pub rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRecord {
    pub k: usize,
    pub layers: Vec<LayerResidual>,
    /// Frobenius norm of the residual over all constrained layers jointly.
    pub aggregate: f64,
    pub max_rel: f64,
}

/// Sets up Z = proj(W) and U = 0 for every constrained weight.
///
/// ρ = 0 is accepted: the penalty then vanishes and the run degenerates to
/// plain fine-tuning with Z and U tracked alongside.
pub fn init_admm(
    net: &Network,
    policy: &LayerPolicy,
    projection: Projection,
    rho: f64,
) -> Result<AdmmState> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::Config(format!(
            "rho must be finite and non-negative, got {rho}"
        )));
    }
    projection.validate()?;
    let params = net.params();
    let mut layers = Vec::new();
    for name in policy.constrained() {
        let id = params.require(name)?;
        let w = params.tensor(id);
        projection.check_shape(w)?;
        layers.push(AdmmLayer {
            name: name.to_string(),
            id,
            z: projection.project(w)?,
            u: Tensor::zeros(w.shape()),
            mask: projection.mask(w)?,
        });
    }
    if layers.is_empty() {
        return Err(Error::Config("policy constrains no tensors".into()));
    }
    Ok(AdmmState {
        projection,
        rho,
        k: 0,
        layers,
    })
}

impl AdmmState {
    pub fn projection(&self) -> Projection {
        self.projection
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Completed ADMM iterations.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn layers(&self) -> &[AdmmLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&AdmmLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.layers.iter().map(|l| l.mask.clone()).collect()
    }

    /// Records `f(batch) + Σ ρ/2 ‖W − Z + U‖²` on `g`.
    pub fn augmented_loss(
        &self,
        g: &mut Graph<'_>,
        net: &Network,
        batch: &Batch,
    ) -> Result<AugmentedLoss> {
        let task = net.loss(g, batch)?;
        let mut penalty: Option<Var> = None;
        for layer in &self.layers {
            let w = g.param_by_id(layer.id);
            let p = g.penalty_distance(w, &layer.z, &layer.u)?;
            penalty = Some(match penalty {
                Some(acc) => g.add(acc, p)?,
                None => p,
            });
        }
        let penalty = penalty.expect("at least one constrained layer");
        let scaled = g.scale(penalty, self.rho / 2.0)?;
        let total = g.add(task, scaled)?;
        Ok(AugmentedLoss { task, total })
    }

    /// `Σ ρ/2 ‖W − Z + U‖²` evaluated directly.
    pub fn penalty_value(&self, net: &Network) -> f64 {
        let params = net.params();
        let sum: f64 = self
            .layers
            .iter()
            .map(|l| {
                penalty_residual(params.tensor(l.id).data(), l.z.data(), l.u.data())
                    .map(|r| r * r)
                    .sum::<f64>()
            })
            .sum();
        self.rho / 2.0 * sum
    }

    /// Analytic penalty gradient `ρ(W − Z + U)` for one layer.
    pub fn penalty_gradient(&self, net: &Network, layer: usize) -> Tensor {
        let l = &self.layers[layer];
        let w = net.params().tensor(l.id);
        let data = penalty_residual(w.data(), l.z.data(), l.u.data())
            .map(|r| self.rho * r)
            .collect();
        Tensor::new(w.shape().to_vec(), data).expect("shape of W")
    }

    /// `Z ← proj(W + U)` for every layer.
    pub fn sparsity_step(&mut self, net: &Network) -> Result<()> {
        let params = net.params();
        for l in &mut self.layers {
            let target = params.tensor(l.id).add(&l.u)?;
            l.z = self.projection.project(&target)?;
            l.mask = self.projection.mask(&target)?;
        }
        Ok(())
    }

    /// `U ← U + (W − Z)` for every layer, then advances `k`.
    pub fn dual_step(&mut self, net: &Network) -> Result<()> {
        let params = net.params();
        for l in &mut self.layers {
            let w = params.tensor(l.id);
            for ((u, &w), &z) in l.u.data_mut().iter_mut().zip(w.data()).zip(l.z.data()) {
                *u += w - z;
            }
        }
        self.k += 1;
        Ok(())
    }

    pub fn residuals(&self, net: &Network) -> ResidualRecord {
        let params = net.params();
        let mut total_sq = 0.0;
        let mut max_rel: f64 = 0.0;
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = params.tensor(l.id);
                let sq: f64 = w
                    .data()
                    .iter()
                    .zip(l.z.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                total_sq += sq;
                let abs = sq.sqrt();
                let norm = w.norm();
                let rel = if abs == 0.0 { 0.0 } else { abs / norm };
                max_rel = max_rel.max(rel);
                LayerResidual {
                    name: l.name.clone(),
                    abs,
                    rel,
                }
            })
            .collect();
        ResidualRecord {
            k: self.k,
            layers,
            aggregate: total_sq.sqrt(),
            max_rel,
        }
    }

    /// Hard-prunes the constrained weights of a copy of `net`.
    pub fn pruned_copy(&self, net: &Network) -> Result<Network> {
        let mut copy = net.clone();
        for l in &self.layers {
            let w = copy.params().tensor(l.id);
            let p = self.projection.project(w)?;
            *copy.params_mut().tensor_mut(l.id) = p;
        }
        Ok(copy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalizeReport {
    /// Whether each layer took `Z` rather than `proj(W)`.
    pub adopted_z: bool,
    pub layers: Vec<String>,
    /// `‖W_before − W_after‖_F` per layer.
    pub change: Vec<f64>,
}

/// Replaces every constrained weight by `proj(W)`, or by `Z` when
/// `adopt_z` is set, and verifies compliance.
pub fn finalize(net: &mut Network, state: &AdmmState, adopt_z: bool) -> Result<FinalizeReport> {
    let projection = state.projection();
    let mut change = Vec::with_capacity(state.layers.len());
    for l in &state.layers {
        let w = net.params().tensor(l.id);
        let next = if adopt_z {
            l.z.clone()
        } else {
            projection.project(w)?
        };
        change.push(w.sub(&next)?.norm());
        *net.params_mut().tensor_mut(l.id) = next;
        if !projection.is_compliant(net.params().tensor(l.id))? {
            return Err(Error::op(
                "finalize",
                format!("`{}` is not compliant", l.name),
            ));
        }
    }
    Ok(FinalizeReport {
        adopted_z: adopt_z,
        layers: state.layer_names(),
        change,
    })
}
