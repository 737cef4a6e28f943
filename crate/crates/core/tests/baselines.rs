mod common;

use std::collections::BTreeMap;

use nxm_admm::admm::{init_admm, AdmmSchedule, Projection, RunSetup};
use nxm_admm::analytics::Method;
use nxm_admm::autodiff::{Adam, AdamConfig};
use nxm_admm::baselines::{
    asp_prune, masked_finetune_step, project_unstructured, run_masked_finetune,
    unstructured_admm_prune, FrozenMask,
};
use nxm_admm::model::{
    build_policy, dense_step, evaluate, generate_task, pretrain_dense, Batcher, ModelSpec, Network,
    PretrainConfig, TaskData, TaskSpec,
};
use nxm_admm::nxm::{check_compliance, project_nxm, projection_distance_sq, SparsityPattern};
use rand::Rng;

use common::*;

fn p42() -> SparsityPattern {
    SparsityPattern::new(4, 2).unwrap()
}

fn small() -> ModelSpec {
    ModelSpec {
        blocks: 1,
        hidden: 16,
        seq_len: 2,
        input_dim: 4,
        ..ModelSpec::default()
    }
}

fn task(samples: usize) -> TaskSpec {
    TaskSpec {
        train_samples: samples,
        val_samples: 256,
        ..TaskSpec::default()
    }
}

fn pretrained() -> (Network, TaskData) {
    let cfg = PretrainConfig {
        epochs: 3,
        train_samples: 2_000,
        ..PretrainConfig::default()
    };
    let net = pretrain_dense(&task(2_000), &small(), &cfg)
        .unwrap()
        .network;
    (net, generate_task(&task(2_000), &small()).unwrap())
}

#[test]
fn asp_prunes_to_the_admm_starting_mask() {
    let (mut net, data) = pretrained();
    let dense = net.clone();
    let policy = build_policy(&net, &BTreeMap::new()).unwrap();
    let state = init_admm(&dense, &policy, Projection::Nxm(p42()), 1e-2).unwrap();
    let mask = asp_prune(&mut net, &policy, p42()).unwrap();
    assert_eq!(mask.masks(), state.masks());
    for name in policy.constrained() {
        assert!(check_compliance(net.params().get(name).unwrap(), p42()).unwrap());
    }
    // Logged rather than asserted: pruning usually costs loss, but need not.
    let before = evaluate(&dense, &data.validation).unwrap();
    let after = evaluate(&net, &data.validation).unwrap();
    println!("dense val loss {before:.5}, one-shot pruned {after:.5}");
}

#[test]
fn masked_steps_keep_pruned_weights_at_zero_and_reduce_loss() {
    let (mut net, data) = pretrained();
    let policy = build_policy(&net, &BTreeMap::new()).unwrap();
    let mask = asp_prune(&mut net, &policy, p42()).unwrap();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), net.params()).unwrap();
    let batcher = Batcher::new(data.train.len(), 32, 0).unwrap();
    let initial = evaluate(&net, &data.validation).unwrap();
    let batches: Vec<Vec<usize>> = (0..).flat_map(|e| batcher.epoch(e)).take(100).collect();
    for idx in &batches {
        masked_finetune_step(&mut net, &mask, &mut adam, &data.train.batch(idx)).unwrap();
        for name in mask.names() {
            let w = net.params().get(&name).unwrap();
            let m = mask.mask(&name).unwrap();
            assert!(w
                .data()
                .iter()
                .zip(m.bits())
                .all(|(&v, &keep)| keep || v == 0.0));
        }
    }
    let last = evaluate(&net, &data.validation).unwrap();
    assert!(last < initial, "val loss {initial} -> {last}");
}

#[test]
fn all_ones_mask_is_vanilla_adam() {
    let net = Network::new(small(), 3).unwrap();
    let data = generate_task(&task(320), &small()).unwrap();
    let policy = build_policy(&net, &BTreeMap::new()).unwrap();
    let mask = FrozenMask::dense(&net, &policy).unwrap();
    let (mut a, mut b) = (net.clone(), net.clone());
    let mut adam_a = Adam::new(AdamConfig::with_lr(1e-3), net.params()).unwrap();
    let mut adam_b = adam_a.clone();
    let batcher = Batcher::new(data.train.len(), 32, 1).unwrap();
    for idx in (0..).flat_map(|e| batcher.epoch(e)).take(30) {
        let batch = data.train.batch(&idx);
        let la = masked_finetune_step(&mut a, &mask, &mut adam_a, &batch).unwrap();
        let lb = dense_step(&mut b, &batch, &mut adam_b).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert!(a.params().bit_eq(b.params()));
    }
}

#[test]
fn masked_run_logs_like_admm_without_admm_columns() {
    let (mut net, data) = pretrained();
    let policy = build_policy(&net, &BTreeMap::new()).unwrap();
    let mask = asp_prune(&mut net, &policy, p42()).unwrap();
    let schedule = AdmmSchedule {
        steps_per_iteration: 20,
        epochs: 1,
        min_iterations: 3,
        ..AdmmSchedule::default()
    };
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), net.params()).unwrap();
    let setup = RunSetup {
        method: Method::Asp,
        seed: 0,
        batch_size: 32,
    };
    let out = run_masked_finetune(&mut net, &mask, &schedule, &data, &mut adam, setup).unwrap();
    assert_eq!(out.steps, 62);
    let boundaries: Vec<_> = out
        .log
        .rows()
        .iter()
        .filter(|r| r.train_loss.is_some())
        .collect();
    assert_eq!(boundaries.len(), 3);
    assert!(boundaries
        .iter()
        .all(|r| r.k.is_none() && r.residual.is_none() && r.similarity.is_none()));
    assert!(out.residuals.is_empty() && out.mask_history.is_empty());
}

#[test]
fn unstructured_admm_keeps_half_of_every_layer() {
    let net = Network::new(small(), 4).unwrap();
    let policy = build_policy(&net, &BTreeMap::new()).unwrap();
    let mut state = unstructured_admm_prune(&net, &policy, 0.5, 1e-2).unwrap();
    state.sparsity_step(&net).unwrap();
    for l in state.layers() {
        let kept = l.z().data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(kept, l.z().len() / 2);
        assert_eq!(l.mask().count(), l.z().len() / 2);
    }
}

#[test]
fn unstructured_projection_matches_a_selection_oracle() {
    let mut r = rng(30);
    for _ in 0..200 {
        let shape = [r.gen_range(1..=6), 4 * r.gen_range(1..=4)];
        let w = randn(&mut r, &shape);
        let keep = w.len().div_ceil(2);
        assert!(project_unstructured(&w, 0.5)
            .unwrap()
            .bit_eq(&brute_force_unstructured(&w, keep)));
    }
}

#[test]
fn unstructured_never_loses_to_nxm_at_matched_density() {
    let mut r = rng(31);
    for _ in 0..200 {
        let shape = [r.gen_range(1..=8), 8 * r.gen_range(1..=4)];
        let w = randn(&mut r, &shape);
        let u = projection_distance_sq(&w, &project_unstructured(&w, 0.5).unwrap());
        for p in [p42(), SparsityPattern::new(8, 4).unwrap()] {
            assert!(u <= projection_distance_sq(&w, &project_nxm(&w, p).unwrap()));
        }
    }
}
