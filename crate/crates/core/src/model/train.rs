//! Batching, evaluation, plain fine-tuning steps and dense pretraining.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph};
use crate::error::{Error, Result};
use crate::model::network::{ModelSpec, Network};
use crate::model::task::{generate_task, Batch, Dataset, Targets, TaskSpec};

const EVAL_CHUNK: usize = 512;

/// Deterministic per-epoch shuffling into fixed-size minibatches. A trailing
/// partial batch is dropped unless the dataset is smaller than one batch.
#[derive(Debug, Clone, Copy)]
pub struct Batcher {
    samples: usize,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(samples: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if samples == 0 || batch_size == 0 {
            return Err(Error::Config(
                "batcher needs samples and batch_size > 0".into(),
            ));
        }
        Ok(Self {
            samples,
            batch_size: batch_size.min(samples),
            seed,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.samples / self.batch_size
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.samples).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + epoch as u64);
        order.shuffle(&mut rng);
        order
            .chunks_exact(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Mean task loss over a whole dataset.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for batch in data.chunks(EVAL_CHUNK) {
        total += net.loss_value(&batch)? * batch.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Fraction of correctly classified samples; `None` for regression data.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<Option<f64>> {
    let Targets::Classes { labels, .. } = data.targets() else {
        return Ok(None);
    };
    let mut correct = 0usize;
    for (chunk_idx, batch) in data.chunks(EVAL_CHUNK).enumerate() {
        let pred = net.predictions(&batch.x)?;
        let c = pred.last_dim();
        for (i, row) in pred.data().chunks(c).enumerate() {
            let best = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .expect("non-empty row");
            if best == labels[chunk_idx * EVAL_CHUNK + i] {
                correct += 1;
            }
        }
    }
    Ok(Some(correct as f64 / data.len() as f64))
}

/// One Adam step on the plain task loss. Returns the pre-step loss.
pub fn dense_step(net: &mut Network, batch: &Batch, adam: &mut Adam) -> Result<f64> {
    let (loss, grads) = {
        let mut g = Graph::new(net.params());
        let loss = net.loss(&mut g, batch)?;
        g.set_output(loss)?;
        (g.loss_value()?, g.backward()?)
    };
    adam.step(net.params_mut(), &grads)?;
    Ok(loss)
}

pub(crate) fn check_finite(step: usize, what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            reason: format!("{what} is {value}"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_samples: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            lr: 2e-3,
            batch_size: 32,
            train_samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub network: Network,
    /// Mean training loss over the final epoch.
    pub final_train_loss: f64,
    /// Validation loss on the pretraining distribution.
    pub val_loss: f64,
}

/// Trains a dense network from scratch on the unshifted variant of `task`.
pub fn pretrain_dense(
    task: &TaskSpec,
    model: &ModelSpec,
    cfg: &PretrainConfig,
) -> Result<Pretrained> {
    let broad = TaskSpec {
        train_samples: cfg.train_samples,
        ..task.pretraining()
    };
    let data = generate_task(&broad, model)?;
    let mut net = Network::new(model.clone(), cfg.seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), net.params())?;
    let batcher = Batcher::new(data.train.len(), cfg.batch_size, cfg.seed)?;
    let mut step = 0;
    let mut final_train_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let batches = batcher.epoch(epoch);
        for idx in &batches {
            let loss = dense_step(&mut net, &data.train.batch(idx), &mut adam)?;
            check_finite(step, "pretraining loss", loss)?;
            epoch_loss += loss;
            step += 1;
        }
        final_train_loss = epoch_loss / batches.len() as f64;
    }
    let val_loss = evaluate(&net, &data.validation)?;
    check_finite(step, "pretraining validation loss", val_loss)?;
    Ok(Pretrained {
        network: net,
        final_train_loss,
        val_loss,
    })
}
