//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use nxm_admm::autodiff::{Graph, ParamStore, Var};
use nxm_admm::model::{pretrain_dense, ModelSpec, Network, PretrainConfig, TaskSpec};
use nxm_admm::nxm::SparsityPattern;
use nxm_admm::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Gaussian entries pushed at least `gap` away from zero.
pub fn randn_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.sample(StandardNormal);
        v + gap * v.signum()
    })
}

/// Every `m`-subset of `0..n` in lexicographic order.
pub fn supports(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, m, &mut Vec::new(), &mut out);
    out
}

/// Exhaustive Euclidean projection: per group, the support minimising the
/// dropped energy; among equal distances the lexicographically first.
pub fn brute_force_projection(w: &Tensor, pattern: SparsityPattern) -> Tensor {
    let (n, m) = (pattern.n(), pattern.m());
    let all = supports(n, m);
    let mut out = Tensor::zeros(w.shape());
    for (g, group) in w.data().chunks(n).enumerate() {
        let mut best: Option<(f64, &Vec<usize>)> = None;
        for s in &all {
            let dropped: f64 = (0..n)
                .filter(|i| !s.contains(i))
                .map(|i| group[i] * group[i])
                .sum();
            if best.map_or(true, |(d, _)| dropped < d) {
                best = Some((dropped, s));
            }
        }
        for &i in best.unwrap().1 {
            out.data_mut()[g * n + i] = group[i];
        }
    }
    out
}

/// Keeps the `keep` largest magnitudes, scanning a plain index list.
pub fn brute_force_unstructured(w: &Tensor, keep: usize) -> Tensor {
    let data = w.data();
    let mut chosen = vec![false; data.len()];
    for _ in 0..keep {
        let mut best: Option<usize> = None;
        for i in 0..data.len() {
            if !chosen[i] && best.map_or(true, |b| data[i].abs() > data[b].abs()) {
                best = Some(i);
            }
        }
        chosen[best.unwrap()] = true;
    }
    let values = data
        .iter()
        .zip(&chosen)
        .map(|(&v, &c)| if c { v } else { 0.0 })
        .collect();
    Tensor::new(w.shape().to_vec(), values).unwrap()
}

pub type Build = Box<dyn Fn(&mut Graph<'_>) -> Result<Var>>;

/// A scalar function of the tensors in `params`.
pub struct Probe {
    pub params: ParamStore,
    pub build: Build,
}

fn scalar_value(params: &ParamStore, build: &Build) -> f64 {
    let mut g = Graph::new(params);
    let v = build(&mut g).expect("forward");
    g.value(v).data()[0]
}

pub const FD_STEP: f64 = 1e-5;

/// Worst relative error between the autodiff directional derivative and a
/// central difference, over one random direction per parameter tensor.
pub fn gradient_error(probe: &Probe, rng: &mut ChaCha8Rng) -> f64 {
    let grads = {
        let mut g = Graph::new(&probe.params);
        let out = (probe.build)(&mut g).expect("forward");
        g.set_output(out).expect("scalar output");
        g.backward().expect("backward")
    };
    let mut worst: f64 = 0.0;
    for id in 0..probe.params.len() {
        let dir = randn(rng, probe.params.tensor(id).shape());
        let analytic: f64 = grads
            .get(id)
            .data()
            .iter()
            .zip(dir.data())
            .map(|(a, b)| a * b)
            .sum();
        let dirs = [(id, dir)];
        let err = directional_error(analytic, |t| {
            scalar_value(&displaced(&probe.params, &dirs, t), &probe.build)
        });
        worst = worst.max(err);
    }
    worst
}

fn store(tensors: Vec<(&str, Tensor)>) -> ParamStore {
    let mut p = ParamStore::new();
    for (name, t) in tensors {
        p.insert(name, t);
    }
    p
}

/// Reduces a non-scalar op output with fixed random weights.
fn reduce(
    out_shape: &[usize],
    rng: &mut ChaCha8Rng,
    op: impl Fn(&mut Graph<'_>) -> Result<Var> + 'static,
) -> Build {
    let weights = randn(rng, out_shape);
    Box::new(move |g| {
        let y = op(g)?;
        g.weighted_sum(y, weights.clone())
    })
}

pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "matmul_trans_b",
    "matmul_batched",
    "matmul_batched_trans_b",
    "linear",
    "linear_no_bias",
    "add",
    "add_bias",
    "scale",
    "gelu",
    "relu",
    "softmax",
    "layer_norm",
    "split_heads",
    "merge_heads",
    "mean_pool",
    "sum",
    "weighted_sum",
    "mse",
    "cross_entropy",
    "penalty_distance",
];

/// A random instance of the named primitive.
pub fn primitive_probe(name: &str, rng: &mut ChaCha8Rng) -> Probe {
    let p = |g: &mut Graph<'_>, n: &str| g.param(n);
    match name {
        "matmul" | "matmul_trans_b" => {
            let tb = name.ends_with("trans_b");
            let b_shape = if tb { [5, 4] } else { [4, 5] };
            let params = store(vec![
                ("a", randn(rng, &[3, 4])),
                ("b", randn(rng, &b_shape)),
            ]);
            let build = reduce(&[3, 5], rng, move |g| {
                let (a, b) = (p(g, "a")?, p(g, "b")?);
                g.matmul(a, b, tb)
            });
            Probe { params, build }
        }
        "matmul_batched" | "matmul_batched_trans_b" => {
            let tb = name.ends_with("trans_b");
            let b_shape = if tb { [2, 5, 4] } else { [2, 4, 5] };
            let params = store(vec![
                ("a", randn(rng, &[2, 3, 4])),
                ("b", randn(rng, &b_shape)),
            ]);
            let build = reduce(&[2, 3, 5], rng, move |g| {
                let (a, b) = (p(g, "a")?, p(g, "b")?);
                g.matmul(a, b, tb)
            });
            Probe { params, build }
        }
        "linear" | "linear_no_bias" => {
            let bias = name == "linear";
            let params = store(vec![
                ("x", randn(rng, &[3, 4])),
                ("w", randn(rng, &[5, 4])),
                ("b", randn(rng, &[5])),
            ]);
            let build = reduce(&[3, 5], rng, move |g| {
                let (x, w) = (p(g, "x")?, p(g, "w")?);
                let b = if bias { Some(p(g, "b")?) } else { None };
                g.linear(x, w, b)
            });
            Probe { params, build }
        }
        "add" => {
            let params = store(vec![("a", randn(rng, &[3, 4])), ("b", randn(rng, &[3, 4]))]);
            let build = reduce(&[3, 4], rng, move |g| {
                let (a, b) = (p(g, "a")?, p(g, "b")?);
                g.add(a, b)
            });
            Probe { params, build }
        }
        "add_bias" => {
            let params = store(vec![("x", randn(rng, &[2, 3, 4])), ("b", randn(rng, &[4]))]);
            let build = reduce(&[2, 3, 4], rng, move |g| {
                let (x, b) = (p(g, "x")?, p(g, "b")?);
                g.add_bias(x, b)
            });
            Probe { params, build }
        }
        "scale" => {
            let c: f64 = rng.sample(StandardNormal);
            let params = store(vec![("x", randn(rng, &[3, 4]))]);
            let build = reduce(&[3, 4], rng, move |g| {
                let x = p(g, "x")?;
                g.scale(x, c)
            });
            Probe { params, build }
        }
        "gelu" | "relu" => {
            let relu = name == "relu";
            let x = if relu {
                randn_away_from_zero(rng, &[3, 4], 1e-2)
            } else {
                randn(rng, &[3, 4])
            };
            let params = store(vec![("x", x)]);
            let build = reduce(&[3, 4], rng, move |g| {
                let x = p(g, "x")?;
                if relu {
                    g.relu(x)
                } else {
                    g.gelu(x)
                }
            });
            Probe { params, build }
        }
        "softmax" => {
            let params = store(vec![("x", randn(rng, &[3, 5]))]);
            let build = reduce(&[3, 5], rng, move |g| {
                let x = p(g, "x")?;
                g.softmax(x)
            });
            Probe { params, build }
        }
        "layer_norm" => {
            let params = store(vec![
                ("x", randn(rng, &[3, 6])),
                ("gain", randn(rng, &[6])),
                ("bias", randn(rng, &[6])),
            ]);
            let build = reduce(&[3, 6], rng, move |g| {
                let (x, gain, bias) = (p(g, "x")?, p(g, "gain")?, p(g, "bias")?);
                g.layer_norm(x, gain, bias)
            });
            Probe { params, build }
        }
        "split_heads" => {
            let params = store(vec![("x", randn(rng, &[6, 4]))]);
            let build = reduce(&[4, 3, 2], rng, move |g| {
                let x = p(g, "x")?;
                g.split_heads(x, 2, 3, 2)
            });
            Probe { params, build }
        }
        "merge_heads" => {
            let params = store(vec![("x", randn(rng, &[4, 3, 2]))]);
            let build = reduce(&[6, 4], rng, move |g| {
                let x = p(g, "x")?;
                g.merge_heads(x, 2, 3, 2)
            });
            Probe { params, build }
        }
        "mean_pool" => {
            let params = store(vec![("x", randn(rng, &[6, 4]))]);
            let build = reduce(&[2, 4], rng, move |g| {
                let x = p(g, "x")?;
                g.mean_pool(x, 3)
            });
            Probe { params, build }
        }
        "sum" => {
            let params = store(vec![("x", randn(rng, &[3, 4]))]);
            let build: Build = Box::new(move |g| {
                let x = p(g, "x")?;
                let sq = g.matmul(x, x, true)?;
                g.sum(sq)
            });
            Probe { params, build }
        }
        "weighted_sum" => {
            let params = store(vec![("x", randn(rng, &[3, 4]))]);
            let build = reduce(&[3, 3], rng, move |g| {
                let x = p(g, "x")?;
                g.matmul(x, x, true)
            });
            Probe { params, build }
        }
        "mse" => {
            let target = randn(rng, &[3, 2]);
            let params = store(vec![("x", randn(rng, &[3, 2]))]);
            let build: Build = Box::new(move |g| {
                let x = p(g, "x")?;
                g.mse(x, target.clone())
            });
            Probe { params, build }
        }
        "cross_entropy" => {
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..3)).collect();
            let params = store(vec![("x", randn(rng, &[4, 3]))]);
            let build: Build = Box::new(move |g| {
                let x = p(g, "x")?;
                g.cross_entropy(x, &labels)
            });
            Probe { params, build }
        }
        "penalty_distance" => {
            let z = randn(rng, &[4, 8]);
            let u = randn(rng, &[4, 8]);
            let params = store(vec![("w", randn(rng, &[4, 8]))]);
            let build: Build = Box::new(move |g| {
                let w = p(g, "w")?;
                g.penalty_distance(w, &z, &u)
            });
            Probe { params, build }
        }
        other => panic!("no probe for `{other}`"),
    }
}

/// The reference setup: default task and model, dense pretraining on the
/// unshifted task. Computed once per test binary.
pub fn reference_pretrained() -> &'static Network {
    static NET: OnceLock<Network> = OnceLock::new();
    NET.get_or_init(|| {
        pretrain_dense(
            &TaskSpec::default(),
            &ModelSpec::default(),
            &PretrainConfig::default(),
        )
        .expect("reference pretraining")
        .network
    })
}

/// Relative error between `analytic` and the central difference of `f`
/// around `t = 0`.
pub fn directional_error(analytic: f64, f: impl Fn(f64) -> f64) -> f64 {
    let numeric = (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Returns `p` with `t · dir[id]` added to every tensor in `dirs`.
pub fn displaced(p: &ParamStore, dirs: &[(usize, Tensor)], t: f64) -> ParamStore {
    let mut out = p.clone();
    for (id, d) in dirs {
        for (v, dv) in out.tensor_mut(*id).data_mut().iter_mut().zip(d.data()) {
            *v += t * dv;
        }
    }
    out
}
