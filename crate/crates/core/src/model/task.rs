//! Deterministic synthetic tasks standing in for downstream datasets.
//!
//! Two kinds exist. `teacher-regression` labels Gaussian inputs with a
//! randomly initialised teacher network of the student's architecture plus
//! Gaussian label noise. `cluster-classification` draws each sample around
//! one of several class centres. A nonzero `shift` perturbs the teacher (or
//! the centres) to produce a related subtask of the `shift = 0` task, which
//! is what dense pretraining uses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::network::{ModelSpec, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TeacherRegression,
    ClusterClassification,
}

pub const LOW_RESOURCE_SAMPLES: usize = 2_500;
pub const HIGH_RESOURCE_SAMPLES: usize = 50_000;
pub const REFERENCE_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub train_samples: usize,
    pub val_samples: usize,
    /// Label noise, relative to the normalised target scale.
    pub noise_std: f64,
    /// Standard deviation of the unshifted regression targets.
    pub target_scale: f64,
    /// Seed of the sample stream.
    pub seed: u64,
    /// Seed of the task structure (teacher weights or class centres).
    pub teacher_seed: u64,
    /// Relative perturbation of the task structure; 0 is the broad task.
    pub shift: f64,
    /// Class count for classification.
    pub classes: usize,
    /// Standard deviation of class centres per input coordinate.
    pub separation: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::TeacherRegression,
            train_samples: REFERENCE_SAMPLES,
            val_samples: 2_000,
            noise_std: 0.3,
            target_scale: 0.3,
            seed: 0,
            teacher_seed: 1_000,
            shift: 0.1,
            classes: 4,
            separation: 1.0,
        }
    }
}

impl TaskSpec {
    pub fn low_resource(seed: u64) -> Self {
        Self {
            train_samples: LOW_RESOURCE_SAMPLES,
            val_samples: 1_000,
            seed,
            ..Self::default()
        }
    }

    pub fn high_resource(seed: u64) -> Self {
        Self {
            train_samples: HIGH_RESOURCE_SAMPLES,
            seed,
            ..Self::default()
        }
    }

    /// The broad distribution the pretraining stage sees.
    pub fn pretraining(&self) -> Self {
        Self {
            shift: 0.0,
            seed: self.seed.wrapping_add(0x9e37_79b9),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_samples == 0 || self.val_samples == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.target_scale > 0.0) || !self.target_scale.is_finite() {
            return Err(Error::Config("target_scale must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.shift >= 0.0) {
            return Err(Error::Config("noise_std and shift must be >= 0".into()));
        }
        if self.kind == TaskKind::ClusterClassification && self.classes < 2 {
            return Err(Error::Config(
                "classification needs at least 2 classes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression { dim: usize, values: Vec<f64> },
    Classes { count: usize, labels: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    Regression(Tensor),
    Classes(Vec<usize>),
}

/// A minibatch: inputs `[batch, width]` and matching targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub targets: BatchTargets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    width: usize,
    x: Vec<f64>,
    targets: Targets,
}

impl Dataset {
    pub fn new(width: usize, x: Vec<f64>, targets: Targets) -> Result<Self> {
        let n = match &targets {
            Targets::Regression { dim, values } => values.len() / dim,
            Targets::Classes { labels, .. } => labels.len(),
        };
        if width == 0 || x.len() != n * width || n == 0 {
            return Err(Error::Config(format!(
                "dataset of {n} samples cannot hold {} inputs of width {width}",
                x.len()
            )));
        }
        Ok(Self { width, x, targets })
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn inputs(&self) -> &[f64] {
        &self.x
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.x[i * self.width..(i + 1) * self.width]
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(indices.len() * self.width);
        for &i in indices {
            x.extend_from_slice(self.sample(i));
        }
        let x = Tensor::new(vec![indices.len(), self.width], x).expect("batch shape");
        let targets = match &self.targets {
            Targets::Regression { dim, values } => {
                let mut y = Vec::with_capacity(indices.len() * dim);
                for &i in indices {
                    y.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                }
                BatchTargets::Regression(
                    Tensor::new(vec![indices.len(), *dim], y).expect("target shape"),
                )
            }
            Targets::Classes { labels, .. } => {
                BatchTargets::Classes(indices.iter().map(|&i| labels[i]).collect())
            }
        };
        Batch { x, targets }
    }

    /// Contiguous batches covering every sample once, in order.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let n = self.len();
        (0..n).step_by(size.max(1)).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(n)).collect();
            self.batch(&idx)
        })
    }

    /// Canonical little-endian serialization, used to compare datasets.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.width as u64).to_le_bytes());
        for v in &self.x {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.targets {
            Targets::Regression { dim, values } => {
                out.extend_from_slice(&(*dim as u64).to_le_bytes());
                values
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Targets::Classes { count, labels } => {
                out.extend_from_slice(&(*count as u64).to_le_bytes());
                labels
                    .iter()
                    .for_each(|&l| out.extend_from_slice(&(l as u64).to_le_bytes()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub validation: Dataset,
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

const PROBE_SAMPLES: usize = 1_024;

/// Teacher network for a regression task, with output normalisation that
/// gives the unshifted teacher zero-mean, unit-variance targets.
pub struct Teacher {
    net: Network,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Teacher {
    pub fn new(spec: &TaskSpec, arch: &ModelSpec) -> Result<Self> {
        let base = Network::new(arch.clone(), spec.teacher_seed)?;
        let mut probe_rng = stream(spec.teacher_seed, 7);
        let probe = Tensor::from_fn(&[PROBE_SAMPLES, arch.sample_width()], |_| {
            gaussian(&mut probe_rng)
        });
        let out = base.predictions(&probe)?;
        let dim = arch.outputs;
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for row in out.data().chunks(dim) {
            for j in 0..dim {
                mean[j] += row[j] / PROBE_SAMPLES as f64;
            }
        }
        for row in out.data().chunks(dim) {
            for j in 0..dim {
                var[j] += (row[j] - mean[j]).powi(2) / PROBE_SAMPLES as f64;
            }
        }
        let std = var.iter().map(|v| v.sqrt().max(1e-12)).collect();

        let mut net = base;
        if spec.shift > 0.0 {
            let mut rng = stream(spec.teacher_seed, 8);
            for t in net.params_mut().tensors_mut() {
                let scale = (t.sum_squares() / t.len() as f64).sqrt().max(0.1);
                for v in t.data_mut() {
                    *v += spec.shift * scale * gaussian(&mut rng);
                }
            }
        }
        Ok(Self { net, mean, std })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Normalised noiseless targets for `x`.
    pub fn targets(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = self.net.predictions(x)?;
        let dim = self.mean.len();
        for row in out.data_mut().chunks_mut(dim) {
            for j in 0..dim {
                row[j] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }
}

/// Generates the train and validation splits of a task. Regression tasks use
/// a teacher of architecture `arch`; classification only uses its shape.
pub fn generate_task(spec: &TaskSpec, arch: &ModelSpec) -> Result<TaskData> {
    spec.validate()?;
    arch.validate()?;
    let width = arch.sample_width();
    let make = |count: usize, stream_id: u64| -> Result<Dataset> {
        let mut rng = stream(spec.seed, stream_id);
        match spec.kind {
            TaskKind::TeacherRegression => {
                let teacher = Teacher::new(spec, arch)?;
                let x = Tensor::from_fn(&[count, width], |_| gaussian(&mut rng));
                let mut y = Tensor::zeros(&[count, arch.outputs]);
                // Chunked to bound graph size.
                for start in (0..count).step_by(1024) {
                    let end = (start + 1024).min(count);
                    let chunk = Tensor::new(
                        vec![end - start, width],
                        x.data()[start * width..end * width].to_vec(),
                    )?;
                    let t = teacher.targets(&chunk)?;
                    y.data_mut()[start * arch.outputs..end * arch.outputs]
                        .copy_from_slice(t.data());
                }
                for v in y.data_mut() {
                    *v = spec.target_scale * (*v + spec.noise_std * gaussian(&mut rng));
                }
                Dataset::new(
                    width,
                    x.into_data(),
                    Targets::Regression {
                        dim: arch.outputs,
                        values: y.into_data(),
                    },
                )
            }
            TaskKind::ClusterClassification => {
                let centres = class_centres(spec, width);
                let mut x = Vec::with_capacity(count * width);
                let mut labels = Vec::with_capacity(count);
                for _ in 0..count {
                    let label = rng.gen_range(0..spec.classes);
                    let c = &centres[label * width..(label + 1) * width];
                    x.extend(c.iter().map(|&m| m + spec.noise_std * gaussian(&mut rng)));
                    labels.push(label);
                }
                Dataset::new(
                    width,
                    x,
                    Targets::Classes {
                        count: spec.classes,
                        labels,
                    },
                )
            }
        }
    };
    Ok(TaskData {
        train: make(spec.train_samples, 1)?,
        validation: make(spec.val_samples, 2)?,
    })
}

fn class_centres(spec: &TaskSpec, width: usize) -> Vec<f64> {
    let mut rng = stream(spec.teacher_seed, 9);
    let mut centres: Vec<f64> = (0..spec.classes * width)
        .map(|_| spec.separation * gaussian(&mut rng))
        .collect();
    if spec.shift > 0.0 {
        let mut shift_rng = stream(spec.teacher_seed, 10);
        for c in &mut centres {
            *c += spec.shift * spec.separation * gaussian(&mut shift_rng);
        }
    }
    centres
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            train_samples: 300,
            val_samples: 100,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let arch = ModelSpec::default();
        for kind in [TaskKind::TeacherRegression, TaskKind::ClusterClassification] {
            let a = generate_task(&small(kind), &arch).unwrap();
            let b = generate_task(&small(kind), &arch).unwrap();
            assert_eq!(a.train.to_bytes(), b.train.to_bytes());
            assert_eq!(a.validation.to_bytes(), b.validation.to_bytes());
            let other = generate_task(
                &TaskSpec {
                    seed: 1,
                    ..small(kind)
                },
                &arch,
            )
            .unwrap();
            assert_ne!(a.train.to_bytes(), other.train.to_bytes());
        }
    }

    #[test]
    fn train_and_validation_are_disjoint() {
        let data =
            generate_task(&small(TaskKind::TeacherRegression), &ModelSpec::default()).unwrap();
        let key = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
        let train: HashSet<_> = (0..data.train.len())
            .map(|i| key(data.train.sample(i)))
            .collect();
        assert!(
            (0..data.validation.len()).all(|i| !train.contains(&key(data.validation.sample(i))))
        );
    }

    #[test]
    fn presets_follow_resource_regimes() {
        assert_eq!(TaskSpec::low_resource(0).train_samples, 2_500);
        assert_eq!(TaskSpec::high_resource(0).train_samples, 50_000);
        assert!(TaskSpec {
            train_samples: 0,
            ..TaskSpec::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn unshifted_teacher_targets_are_standardised() {
        let spec = TaskSpec {
            shift: 0.0,
            noise_std: 0.0,
            target_scale: 2.0,
            train_samples: 4_000,
            ..small(TaskKind::TeacherRegression)
        };
        let data = generate_task(&spec, &ModelSpec::default()).unwrap();
        let Targets::Regression { values, .. } = data.train.targets() else {
            panic!()
        };
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        assert!(mean.abs() < 0.2, "mean {mean}");
        assert!((var / 4.0 - 1.0).abs() < 0.15, "var {var}");
    }
}
