//! Run configuration and `key=value` overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::admm::{AdmmSchedule, Projection};
use crate::analytics::Method;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, PretrainConfig, TaskSpec};
use crate::nxm::SparsityPattern;

pub const DEFAULT_RHO: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub pattern: SparsityPattern,
    /// Penalty coefficient; ADMM methods only. Unset means [`DEFAULT_RHO`].
    pub rho: Option<f64>,
    /// Per-layer sparsity of `admm-unstructured`.
    pub sparsity: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub steps_per_iteration: usize,
    pub min_iterations: usize,
    pub prune_eval_each_epoch: bool,
    pub reset_adam: bool,
    /// Finalize by adopting Z instead of projecting W.
    pub finalize_adopt_z: bool,
    pub seed: u64,
    pub task: TaskSpec,
    pub model: ModelSpec,
    pub pretrain: PretrainConfig,
    /// Pretrained weights to start from; pretrains when unset.
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Constrained-flag overrides keyed by tensor name.
    pub layers: BTreeMap<String, bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = AdmmSchedule::default();
        Self {
            method: Method::AdmmNxm,
            pattern: SparsityPattern::default(),
            rho: None,
            sparsity: 0.5,
            lr: 1e-3,
            batch_size: 32,
            epochs: schedule.epochs,
            steps_per_iteration: schedule.steps_per_iteration,
            min_iterations: schedule.min_iterations,
            prune_eval_each_epoch: schedule.prune_eval_each_epoch,
            reset_adam: schedule.reset_adam,
            finalize_adopt_z: false,
            seed: 0,
            task: TaskSpec::default(),
            model: ModelSpec::default(),
            pretrain: PretrainConfig::default(),
            checkpoint: None,
            output_dir: PathBuf::from("runs/run"),
            layers: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    /// Reference task: 20k samples, ρ = 1e-2.
    pub fn reference(seed: u64) -> Self {
        Self {
            seed,
            task: TaskSpec {
                seed,
                ..TaskSpec::default()
            },
            epochs: 2,
            ..Self::default()
        }
    }

    /// Small task: fewer samples, larger learning rate and ρ.
    pub fn low_resource(seed: u64) -> Self {
        Self {
            seed,
            task: TaskSpec::low_resource(seed),
            lr: 2e-3,
            rho: Some(3e-2),
            ..Self::default()
        }
    }

    /// Large task: more samples, smaller learning rate and ρ.
    pub fn high_resource(seed: u64) -> Self {
        Self {
            seed,
            task: TaskSpec::high_resource(seed),
            lr: 5e-4,
            rho: Some(3e-3),
            epochs: 1,
            ..Self::default()
        }
    }

    pub fn effective_rho(&self) -> Option<f64> {
        self.method
            .is_admm()
            .then(|| self.rho.unwrap_or(DEFAULT_RHO))
    }

    pub fn projection(&self) -> Option<Projection> {
        match self.method {
            Method::AdmmNxm | Method::Asp => Some(Projection::Nxm(self.pattern)),
            Method::AdmmUnstructured => Some(Projection::Unstructured {
                sparsity: self.sparsity,
            }),
            Method::Dense => None,
        }
    }

    pub fn schedule(&self) -> AdmmSchedule {
        AdmmSchedule {
            steps_per_iteration: self.steps_per_iteration,
            epochs: self.epochs,
            min_iterations: self.min_iterations,
            prune_eval_each_epoch: self.prune_eval_each_epoch,
            reset_adam: self.reset_adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho.is_some() && !self.method.is_admm() {
            return Err(Error::Config(format!(
                "rho is only meaningful for ADMM methods, not `{}`",
                self.method.as_str()
            )));
        }
        if let Some(rho) = self.rho {
            if !rho.is_finite() || rho < 0.0 {
                return Err(Error::Config(format!(
                    "rho must be finite and >= 0, got {rho}"
                )));
            }
        }
        if self.reset_adam && !self.method.is_admm() {
            return Err(Error::Config(
                "reset_adam applies to ADMM methods only".into(),
            ));
        }
        if self.finalize_adopt_z && !self.method.is_admm() {
            return Err(Error::Config(
                "finalize_adopt_z applies to ADMM methods only".into(),
            ));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(p) = self.projection() {
            p.validate()?;
        }
        self.schedule().validate()?;
        self.task.validate()?;
        self.model.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses `base` with `key=value` overrides applied. Keys may be dotted
    /// (`task.train_samples`); values are read as JSON and fall back to a
    /// plain string.
    pub fn with_overrides(base: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = match base {
            Some(text) => serde_json::from_str(text)?,
            None => serde_json::to_value(Self::default())?,
        };
        apply_overrides(&mut doc, overrides)?;
        Ok(serde_json::from_value(doc)?)
    }
}

/// Applies `key=value` pairs to a JSON document in order.
pub fn apply_overrides(doc: &mut Value, overrides: &[(String, String)]) -> Result<()> {
    for (key, raw) in overrides {
        set_path(doc, key, parse_value(raw))?;
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a nested field")))?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not name a nested field")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
