//! Desk-scale networks: a post-LN toy transformer and a plain MLP.
//!
//! Weights are stored `[out, in]`, so the input dimension is the last,
//! contiguous one and NxM groups run along it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::model::task::{Batch, BatchTargets};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Transformer,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Gelu,
    Relu,
}

/// Shape of a network. For the MLP, `blocks` counts hidden-to-hidden layers
/// and the sequence is flattened into one input vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub seq_len: usize,
    pub input_dim: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            arch: Architecture::Transformer,
            blocks: 2,
            hidden: 32,
            heads: 2,
            ffn_mult: 4,
            seq_len: 4,
            input_dim: 16,
            outputs: 1,
            activation: Activation::Gelu,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden == 0 || self.seq_len == 0 || self.input_dim == 0 || self.outputs == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if self.arch == Architecture::Transformer {
            if self.blocks == 0 || self.heads == 0 || self.ffn_mult == 0 {
                return bad("transformer needs blocks, heads and ffn_mult >= 1".into());
            }
            if !self.hidden.is_multiple_of(self.heads) {
                return bad(format!(
                    "hidden {} not divisible by heads {}",
                    self.hidden, self.heads
                ));
            }
        }
        Ok(())
    }

    pub fn ffn_dim(&self) -> usize {
        self.hidden * self.ffn_mult
    }

    /// Width of one flattened sample.
    pub fn sample_width(&self) -> usize {
        self.seq_len * self.input_dim
    }
}

/// Names of the six fully connected sub-layers of transformer block `b`.
pub fn block_weight_names(b: usize) -> [String; 6] {
    ["attn.q", "attn.k", "attn.v", "attn.o", "ffn1", "ffn2"]
        .map(|s| format!("blocks.{b}.{s}.weight"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    params: ParamStore,
}

impl Network {
    /// Builds a network with freshly initialised parameters.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let linear =
            |params: &mut ParamStore, name: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng| {
                let normal = Normal::new(0.0, (1.0 / inp as f64).sqrt()).expect("valid std");
                params.insert(
                    format!("{name}.weight"),
                    Tensor::from_fn(&[out, inp], |_| normal.sample(rng)),
                );
                params.insert(format!("{name}.bias"), Tensor::zeros(&[out]));
            };
        let d = spec.hidden;
        match spec.arch {
            Architecture::Transformer => {
                linear(&mut params, "input", d, spec.input_dim, &mut rng);
                for b in 0..spec.blocks {
                    for part in ["attn.q", "attn.k", "attn.v", "attn.o"] {
                        linear(&mut params, &format!("blocks.{b}.{part}"), d, d, &mut rng);
                    }
                    params.insert(format!("blocks.{b}.ln1.gain"), Tensor::filled(&[d], 1.0));
                    params.insert(format!("blocks.{b}.ln1.bias"), Tensor::zeros(&[d]));
                    linear(
                        &mut params,
                        &format!("blocks.{b}.ffn1"),
                        spec.ffn_dim(),
                        d,
                        &mut rng,
                    );
                    linear(
                        &mut params,
                        &format!("blocks.{b}.ffn2"),
                        d,
                        spec.ffn_dim(),
                        &mut rng,
                    );
                    params.insert(format!("blocks.{b}.ln2.gain"), Tensor::filled(&[d], 1.0));
                    params.insert(format!("blocks.{b}.ln2.bias"), Tensor::zeros(&[d]));
                }
            }
            Architecture::Mlp => {
                linear(&mut params, "input", d, spec.sample_width(), &mut rng);
                for l in 0..spec.blocks {
                    linear(&mut params, &format!("hidden.{l}"), d, d, &mut rng);
                }
            }
        }
        linear(&mut params, "classifier", spec.outputs, d, &mut rng);
        Ok(Self { spec, params })
    }

    /// Wraps existing parameters, checking names and shapes against `spec`.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        let reference = Self::new(spec.clone(), 0)?;
        if reference.params.names() != params.names() {
            return Err(Error::Checkpoint(format!(
                "parameter names do not match the {:?} architecture",
                spec.arch
            )));
        }
        for ((name, a), b) in reference.params.iter().zip(params.tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// The matmul weights a default policy constrains.
    pub fn block_weights(&self) -> Vec<String> {
        match self.spec.arch {
            Architecture::Transformer => {
                (0..self.spec.blocks).flat_map(block_weight_names).collect()
            }
            Architecture::Mlp => (0..self.spec.blocks)
                .map(|l| format!("hidden.{l}.weight"))
                .collect(),
        }
    }

    /// Records the forward pass for `x` (shape `[batch, seq_len·input_dim]`)
    /// and returns the `[batch, outputs]` predictions.
    pub fn predict(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        let width = self.spec.sample_width();
        if x.rank() != 2 || x.shape()[1] != width {
            return Err(Error::op(
                "forward",
                format!("input {:?} does not match sample width {width}", x.shape()),
            ));
        }
        let batch = x.shape()[0];
        let features = match self.spec.arch {
            Architecture::Transformer => self.transformer_features(g, x, batch)?,
            Architecture::Mlp => self.mlp_features(g, x)?,
        };
        let w = g.param("classifier.weight")?;
        let b = g.param("classifier.bias")?;
        g.linear(features, w, Some(b))
    }

    /// Task loss on a batch: MSE for regression targets, cross-entropy for labels.
    pub fn loss(&self, g: &mut Graph<'_>, batch: &Batch) -> Result<Var> {
        let pred = self.predict(g, &batch.x)?;
        match &batch.targets {
            BatchTargets::Regression(t) => g.mse(pred, t.clone()),
            BatchTargets::Classes(labels) => g.cross_entropy(pred, labels),
        }
    }

    /// Evaluates the task loss without keeping the graph.
    pub fn loss_value(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new(&self.params);
        let loss = self.loss(&mut g, batch)?;
        Ok(g.value(loss).data()[0])
    }

    pub fn predictions(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let out = self.predict(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    fn layer(&self, g: &mut Graph<'_>, x: Var, name: &str) -> Result<Var> {
        let w = g.param(&format!("{name}.weight"))?;
        let b = g.param(&format!("{name}.bias"))?;
        g.linear(x, w, Some(b))
    }

    fn activate(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        match self.spec.activation {
            Activation::Gelu => g.gelu(x),
            Activation::Relu => g.relu(x),
        }
    }

    fn mlp_features(&self, g: &mut Graph<'_>, x: &Tensor) -> Result<Var> {
        let xi = g.input(x.clone())?;
        let h = self.layer(g, xi, "input")?;
        let mut h = self.activate(g, h)?;
        for l in 0..self.spec.blocks {
            let z = self.layer(g, h, &format!("hidden.{l}"))?;
            h = self.activate(g, z)?;
        }
        Ok(h)
    }

    fn transformer_features(&self, g: &mut Graph<'_>, x: &Tensor, batch: usize) -> Result<Var> {
        let s = &self.spec;
        let tokens = x.clone().reshape(&[batch * s.seq_len, s.input_dim])?;
        let xi = g.input(tokens)?;
        let mut h = self.layer(g, xi, "input")?;
        let inv_sqrt_dh = 1.0 / ((s.hidden / s.heads) as f64).sqrt();
        for b in 0..s.blocks {
            let p = format!("blocks.{b}");
            let q = self.layer(g, h, &format!("{p}.attn.q"))?;
            let k = self.layer(g, h, &format!("{p}.attn.k"))?;
            let v = self.layer(g, h, &format!("{p}.attn.v"))?;
            let qh = g.split_heads(q, batch, s.seq_len, s.heads)?;
            let kh = g.split_heads(k, batch, s.seq_len, s.heads)?;
            let vh = g.split_heads(v, batch, s.seq_len, s.heads)?;
            let scores = g.matmul(qh, kh, true)?;
            let scores = g.scale(scores, inv_sqrt_dh)?;
            let attn = g.softmax(scores)?;
            let ctx = g.matmul(attn, vh, false)?;
            let ctx = g.merge_heads(ctx, batch, s.seq_len, s.heads)?;
            let o = self.layer(g, ctx, &format!("{p}.attn.o"))?;
            let r = g.add(h, o)?;
            let (gain, bias) = (
                g.param(&format!("{p}.ln1.gain"))?,
                g.param(&format!("{p}.ln1.bias"))?,
            );
            h = g.layer_norm(r, gain, bias)?;

            let f = self.layer(g, h, &format!("{p}.ffn1"))?;
            let f = self.activate(g, f)?;
            let f = self.layer(g, f, &format!("{p}.ffn2"))?;
            let r = g.add(h, f)?;
            let (gain, bias) = (
                g.param(&format!("{p}.ln2.gain"))?,
                g.param(&format!("{p}.ln2.bias"))?,
            );
            h = g.layer_norm(r, gain, bias)?;
        }
        g.mean_pool(h, s.seq_len)
    }
}
