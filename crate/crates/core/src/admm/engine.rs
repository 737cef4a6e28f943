//! The fine-tuning loop shared by ADMM and the baselines.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::admm::state::{AdmmState, ResidualRecord};
use crate::analytics::{mean_mask_similarity, Method, MetricLog, MetricRow};
use crate::autodiff::{Adam, Graph};
use crate::error::{Error, Result, TensorError};
use crate::model::{check_finite, evaluate, Batch, Batcher, Network, TaskData};
use crate::nxm::Mask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmSchedule {
    /// Adam steps between projections.
    pub steps_per_iteration: usize,
    pub epochs: usize,
    /// Epochs are extended until at least this many iterations fit.
    pub min_iterations: usize,
    /// Evaluate a hard-pruned copy on the validation set after each epoch.
    pub prune_eval_each_epoch: bool,
    /// Clear Adam moments at every iteration boundary.
    pub reset_adam: bool,
}

impl Default for AdmmSchedule {
    fn default() -> Self {
        Self {
            steps_per_iteration: 80,
            epochs: 10,
            min_iterations: 10,
            prune_eval_each_epoch: true,
            reset_adam: false,
        }
    }
}

impl AdmmSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_iteration == 0 || self.min_iterations == 0 {
            return Err(Error::Config(
                "steps_per_iteration and min_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Epoch count actually run for a given epoch length.
    pub fn planned_epochs(&self, steps_per_epoch: usize) -> usize {
        let needed = self.min_iterations * self.steps_per_iteration;
        self.epochs.max(needed.div_ceil(steps_per_epoch.max(1)))
    }
}

/// Identity of a run as it appears in the metric log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSetup {
    pub method: Method,
    pub seed: u64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FinetuneOutcome {
    pub log: MetricLog,
    /// One record per completed ADMM iteration.
    pub residuals: Vec<ResidualRecord>,
    /// `mask_history[j]` holds every layer's mask after iteration `j + 1`.
    pub mask_history: Vec<Vec<Mask>>,
    pub steps: usize,
    pub epochs: usize,
}

/// A run that stopped early. The partial outcome is kept for inspection.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub partial: FinetuneOutcome,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} steps)", self.error, self.partial.steps)
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type RunResult = std::result::Result<FinetuneOutcome, Box<Aborted>>;

/// Per-method behaviour plugged into [`drive`].
pub(crate) trait StepRule {
    /// One optimizer step. Returns the task loss and, if different, the
    /// objective actually minimized.
    fn step(
        &mut self,
        net: &mut Network,
        batch: &Batch,
        adam: &mut Adam,
    ) -> Result<(f64, Option<f64>)>;

    /// Called every `steps_per_iteration` steps.
    fn boundary(
        &mut self,
        _net: &Network,
        _row: &mut MetricRow,
        _out: &mut FinetuneOutcome,
    ) -> Result<()> {
        Ok(())
    }

    /// The model evaluated at epoch end; `None` evaluates `net` itself.
    fn eval_model(&self, _net: &Network) -> Result<Option<Network>> {
        Ok(None)
    }
}

fn as_divergence(step: usize, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { index, value }) => Error::Divergence {
            step,
            reason: format!("non-finite value {value} at flat index {index}"),
        },
        other => other,
    }
}

pub(crate) fn run_with<R: StepRule>(
    net: &mut Network,
    rule: &mut R,
    schedule: &AdmmSchedule,
    data: &TaskData,
    adam: &mut Adam,
    setup: RunSetup,
) -> RunResult {
    let mut out = FinetuneOutcome::default();
    match drive(net, rule, schedule, data, adam, setup, &mut out) {
        Ok(()) => Ok(out),
        Err(error) => Err(Box::new(Aborted {
            error,
            partial: out,
        })),
    }
}

fn drive<R: StepRule>(
    net: &mut Network,
    rule: &mut R,
    schedule: &AdmmSchedule,
    data: &TaskData,
    adam: &mut Adam,
    setup: RunSetup,
    out: &mut FinetuneOutcome,
) -> Result<()> {
    schedule.validate()?;
    let batcher = Batcher::new(data.train.len(), setup.batch_size, setup.seed)?;
    let epochs = schedule.planned_epochs(batcher.steps_per_epoch());
    out.epochs = epochs;
    let mut step = 0;
    let (mut win_task, mut win_obj, mut win_n) = (0.0, None::<f64>, 0usize);
    for epoch in 0..epochs {
        for idx in batcher.epoch(epoch) {
            let batch = data.train.batch(&idx);
            let (task, objective) = rule
                .step(net, &batch, adam)
                .map_err(|e| as_divergence(step, e))?;
            check_finite(step, "training loss", task)?;
            step += 1;
            out.steps = step;
            win_task += task;
            if let Some(o) = objective {
                win_obj = Some(win_obj.unwrap_or(0.0) + o);
            }
            win_n += 1;
            if step % schedule.steps_per_iteration == 0 {
                let mut row = MetricRow::new(step, epoch, setup.method, setup.seed);
                row.train_loss = Some(win_task / win_n as f64);
                row.aug_loss = win_obj.map(|s| s / win_n as f64);
                rule.boundary(net, &mut row, out)?;
                if schedule.reset_adam && setup.method.is_admm() {
                    adam.reset();
                }
                out.log.push(row);
                (win_task, win_obj, win_n) = (0.0, None, 0);
            }
        }
        if schedule.prune_eval_each_epoch {
            let pruned = rule.eval_model(net)?;
            let val = evaluate(pruned.as_ref().unwrap_or(net), &data.validation)?;
            check_finite(step, "validation loss", val)?;
            let mut row = MetricRow::new(step, epoch, setup.method, setup.seed);
            row.val_loss_pruned = Some(val);
            out.log.push(row);
        }
    }
    Ok(())
}

struct AdmmRule<'s> {
    state: &'s mut AdmmState,
}

impl StepRule for AdmmRule<'_> {
    fn step(
        &mut self,
        net: &mut Network,
        batch: &Batch,
        adam: &mut Adam,
    ) -> Result<(f64, Option<f64>)> {
        let (task, total, grads) = {
            let mut g = Graph::new(net.params());
            let loss = self.state.augmented_loss(&mut g, net, batch)?;
            g.set_output(loss.total)?;
            (g.value(loss.task).data()[0], g.loss_value()?, g.backward()?)
        };
        adam.step(net.params_mut(), &grads)?;
        Ok((task, Some(total)))
    }

    fn boundary(
        &mut self,
        net: &Network,
        row: &mut MetricRow,
        out: &mut FinetuneOutcome,
    ) -> Result<()> {
        let before = self.state.masks();
        self.state.sparsity_step(net)?;
        self.state.dual_step(net)?;
        let after = self.state.masks();
        let residual = self.state.residuals(net);
        row.k = Some(self.state.k());
        row.residual = Some(residual.max_rel);
        row.similarity = Some(mean_mask_similarity(&before, &after)?);
        out.residuals.push(residual);
        out.mask_history.push(after);
        Ok(())
    }

    fn eval_model(&self, net: &Network) -> Result<Option<Network>> {
        self.state.pruned_copy(net).map(Some)
    }
}

/// Alternates `steps_per_iteration` Adam steps on the augmented loss with a
/// sparsity step and a dual step, for the scheduled number of epochs.
/// Validation after each epoch uses a hard-pruned copy; the training
/// weights stay dense.
pub fn run_admm_finetune(
    net: &mut Network,
    state: &mut AdmmState,
    schedule: &AdmmSchedule,
    data: &TaskData,
    adam: &mut Adam,
    setup: RunSetup,
) -> RunResult {
    run_with(net, &mut AdmmRule { state }, schedule, data, adam, setup)
}
