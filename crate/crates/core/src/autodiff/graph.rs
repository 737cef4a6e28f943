//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward
//! pass. Every primitive appends a node to the tape; the node list is
//! therefore topologically ordered by construction and [`Graph::backward`]
//! walks it in exact reverse order.

use crate::autodiff::kernels;
use crate::autodiff::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SplitHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MergeHeads {
        x: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MeanPool {
        x: Var,
        seq: usize,
    },
    Sum(Var),
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    PenaltyDistance {
        w: Var,
        z: Tensor,
        u: Tensor,
    },
}

struct Node {
    op: Op,
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
}

/// A single forward pass recorded for differentiation.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    output: Option<Var>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            output: None,
        }
    }

    pub fn params(&self) -> &ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.tensor(*id),
            (_, Some(t)) => t,
            (_, None) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var> {
        value
            .validate_finite()
            .map_err(|e| Error::op(name, format!("non-finite intermediate: {e}")))?;
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Binds a constant input tensor.
    pub fn input(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Input, t, "input")
    }

    /// The node for a named parameter; repeated lookups share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let id = self.params.require(name)?;
        Ok(self.param_by_id(id))
    }

    pub fn param_by_id(&mut self, id: usize) -> Var {
        if let Some(v) = self.param_nodes[id] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id] = Some(v);
        v
    }

    /// Matrix product, optionally against the transpose of `b`.
    ///
    /// Rank-2 operands multiply directly; rank-3 operands are treated as a
    /// batch of matrices sharing the leading dimension.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (
            self.value(a).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        let dims = MatDims::resolve(&sa, &sb, trans_b)?;
        let mut out = vec![0.0; dims.batch * dims.rows * dims.cols];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for g in 0..dims.batch {
            let a_g = &da[g * dims.rows * dims.inner..(g + 1) * dims.rows * dims.inner];
            let b_g = &db[g * dims.inner * dims.cols..(g + 1) * dims.inner * dims.cols];
            let o_g = &mut out[g * dims.rows * dims.cols..(g + 1) * dims.rows * dims.cols];
            if trans_b {
                kernels::mm_nt(a_g, b_g, o_g, dims.rows, dims.inner, dims.cols);
            } else {
                kernels::mm_nn(a_g, b_g, o_g, dims.rows, dims.inner, dims.cols);
            }
        }
        let shape = if sa.len() == 3 {
            vec![dims.batch, dims.rows, dims.cols]
        } else {
            vec![dims.rows, dims.cols]
        };
        let value = Tensor::new(shape, out)?;
        self.push(Op::MatMul { a, b, trans_b }, value, "matmul")
    }

    /// `x · wᵀ + bias` for a weight stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight, true)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .add(self.value(b))
            .map_err(|e| Error::op("add", e.to_string()))?;
        self.push(Op::Add(a, b), value, "add")
    }

    /// Adds a rank-1 bias to every row of `x` (broadcast over leading dims).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = xv.last_dim();
        if bv.rank() != 1 || bv.len() != c {
            return Err(Error::op(
                "add_bias",
                format!(
                    "bias {:?} does not broadcast over {:?}",
                    bv.shape(),
                    xv.shape()
                ),
            ));
        }
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(Op::AddBias { x, bias }, value, "add_bias")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let value = self.value(x).scale(c);
        self.push(Op::Scale(x, c), value, "scale")
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| {
            let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
            0.5 * v * (1.0 + t)
        });
        self.push(Op::Gelu(x), value, "gelu")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), value, "relu")
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.last_dim();
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(c) {
            kernels::softmax_in_place(row);
        }
        self.push(Op::Softmax(x), value, "softmax")
    }

    /// Layer normalization over the last dimension with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let c = xv.last_dim();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::op(
                "layer_norm",
                format!(
                    "gain/bias must be [{c}], got {:?}/{:?}",
                    gv.shape(),
                    bv.shape()
                ),
            ));
        }
        let rows = xv.len() / c;
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            value,
            "layer_norm",
        )
    }

    /// `[batch·seq, heads·dh]` → `[batch·heads, seq, dh]`.
    pub fn split_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rank() != 2 || xv.shape()[0] != batch * seq || !d.is_multiple_of(heads) {
            return Err(Error::op(
                "split_heads",
                format!(
                    "cannot split {:?} into {batch}x{seq} with {heads} heads",
                    xv.shape()
                ),
            ));
        }
        let dh = d / heads;
        let mut out = vec![0.0; xv.len()];
        kernels::permute_heads(xv.data(), &mut out, batch, seq, heads, dh, true);
        let value = Tensor::new(vec![batch * heads, seq, dh], out)?;
        self.push(
            Op::SplitHeads {
                x,
                batch,
                seq,
                heads,
            },
            value,
            "split_heads",
        )
    }

    /// Inverse of [`Graph::split_heads`].
    pub fn merge_heads(&mut self, x: Var, batch: usize, seq: usize, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 || xv.shape()[0] != batch * heads || xv.shape()[1] != seq {
            return Err(Error::op(
                "merge_heads",
                format!(
                    "cannot merge {:?} as {batch}x{seq} with {heads} heads",
                    xv.shape()
                ),
            ));
        }
        let dh = xv.shape()[2];
        let mut out = vec![0.0; xv.len()];
        kernels::permute_heads(xv.data(), &mut out, batch, seq, heads, dh, false);
        let value = Tensor::new(vec![batch * seq, heads * dh], out)?;
        self.push(
            Op::MergeHeads {
                x,
                batch,
                seq,
                heads,
            },
            value,
            "merge_heads",
        )
    }

    /// Averages consecutive groups of `seq` rows: `[batch·seq, d]` → `[batch, d]`.
    pub fn mean_pool(&mut self, x: Var, seq: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || seq == 0 || !xv.shape()[0].is_multiple_of(seq) {
            return Err(Error::op(
                "mean_pool",
                format!(
                    "{:?} is not a whole number of length-{seq} sequences",
                    xv.shape()
                ),
            ));
        }
        let d = xv.shape()[1];
        let batch = xv.shape()[0] / seq;
        let mut out = vec![0.0; batch * d];
        for b in 0..batch {
            for t in 0..seq {
                let row = &xv.data()[(b * seq + t) * d..(b * seq + t + 1) * d];
                for (o, &v) in out[b * d..(b + 1) * d].iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in &mut out[b * d..(b + 1) * d] {
                *o /= seq as f64;
            }
        }
        let value = Tensor::new(vec![batch, d], out)?;
        self.push(Op::MeanPool { x, seq }, value, "mean_pool")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value, "sum")
    }

    /// `Σ x ⊙ weights` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_same_shape(&weights)
            .map_err(|e| Error::op("weighted_sum", e.to_string()))?;
        let s = xv
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        self.push(
            Op::WeightedSum { x, weights },
            Tensor::scalar(s),
            "weighted_sum",
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let pv = self.value(pred);
        pv.expect_same_shape(&target)
            .map_err(|e| Error::op("mse", e.to_string()))?;
        let s: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let value = Tensor::scalar(s / pv.len() as f64);
        self.push(Op::Mse { pred, target }, value, "mse")
    }

    /// Mean cross-entropy of row-wise logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::op(
                "cross_entropy",
                format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            ));
        }
        let c = lv.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::op(
                "cross_entropy",
                format!("label {bad} >= {c} classes"),
            ));
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        for (row, &label) in probs.chunks_mut(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[label];
            kernels::softmax_in_place(row);
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            value,
            "cross_entropy",
        )
    }

    /// `‖w − z + u‖²_F` with `z`, `u` held constant.
    pub fn penalty_distance(&mut self, w: Var, z: &Tensor, u: &Tensor) -> Result<Var> {
        let wv = self.value(w);
        wv.expect_same_shape(z)
            .and_then(|_| wv.expect_same_shape(u))
            .map_err(|e| Error::op("penalty_distance", e.to_string()))?;
        let s = penalty_residual(wv.data(), z.data(), u.data())
            .map(|d| d * d)
            .sum();
        self.push(
            Op::PenaltyDistance {
                w,
                z: z.clone(),
                u: u.clone(),
            },
            Tensor::scalar(s),
            "penalty_distance",
        )
    }

    /// Marks `loss` as the output of this forward pass.
    pub fn set_output(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::op(
                "set_output",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        self.output = Some(loss);
        Ok(())
    }

    pub fn output(&self) -> Option<Var> {
        self.output
    }

    /// Value of the recorded scalar output.
    pub fn loss_value(&self) -> Result<f64> {
        let v = self.output.ok_or(Error::BackwardWithoutForward)?;
        Ok(self.value(v).data()[0])
    }

    /// Gradients of the recorded output with respect to every parameter.
    /// Parameters the pass never touched receive zeros.
    pub fn backward(&self) -> Result<Gradients> {
        let out = self.output.ok_or(Error::BackwardWithoutForward)?;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[out.0] = Some(Tensor::scalar(1.0));
        let mut result = Gradients::zeros_like(self.params);

        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(id) => *result.get_mut(*id) = g,
                Op::MatMul { a, b, trans_b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let dims = MatDims::resolve(av.shape(), bv.shape(), *trans_b)?;
                    let mut ga = vec![0.0; av.len()];
                    let mut gb = vec![0.0; bv.len()];
                    let (r, k, c) = (dims.rows, dims.inner, dims.cols);
                    for bi in 0..dims.batch {
                        let g_g = &g.data()[bi * r * c..(bi + 1) * r * c];
                        let a_g = &av.data()[bi * r * k..(bi + 1) * r * k];
                        let b_g = &bv.data()[bi * k * c..(bi + 1) * k * c];
                        let ga_g = &mut ga[bi * r * k..(bi + 1) * r * k];
                        let gb_g = &mut gb[bi * k * c..(bi + 1) * k * c];
                        if *trans_b {
                            // out = A Bᵀ, B is [c, k]
                            kernels::mm_nn(g_g, b_g, ga_g, r, c, k);
                            kernels::mm_tn(g_g, a_g, gb_g, r, c, k);
                        } else {
                            // out = A B, B is [k, c]
                            kernels::mm_nt(g_g, b_g, ga_g, r, c, k);
                            kernels::mm_tn(a_g, g_g, gb_g, r, k, c);
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
                    accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddBias { x, bias } => {
                    let c = g.last_dim();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *bias, Tensor::new(vec![c], gb)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, c) => accumulate(&mut grads, *x, g.scale(*c)),
                Op::Gelu(x) => {
                    let gx = self.value(*x).zip_map(&g, |v, up| {
                        let inner = GELU_C * (v + GELU_A * v * v * v);
                        let t = inner.tanh();
                        let dinner = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        up * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner)
                    })?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = self
                        .value(*x)
                        .zip_map(&g, |v, up| if v > 0.0 { up } else { 0.0 })?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = self.nodes[idx].value.as_ref().expect("softmax value");
                    let c = y.last_dim();
                    let mut gx = vec![0.0; y.len()];
                    for ((yr, gr), or) in y
                        .data()
                        .chunks(c)
                        .zip(g.data().chunks(c))
                        .zip(gx.chunks_mut(c))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            or[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(y.shape().to_vec(), gx)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain);
                    let c = gv.len();
                    let mut gx = vec![0.0; xhat.len()];
                    let mut ggain = vec![0.0; c];
                    let mut gbias = vec![0.0; c];
                    let mut dxhat = vec![0.0; c];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let up = &g.data()[r * c..(r + 1) * c];
                        let h = &xhat[r * c..(r + 1) * c];
                        for j in 0..c {
                            ggain[j] += up[j] * h[j];
                            gbias[j] += up[j];
                            dxhat[j] = up[j] * gv.data()[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                        let mean_dh =
                            dxhat.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[r * c + j] = rs * (dxhat[j] - mean_d - h[j] * mean_dh);
                        }
                    }
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(shape, gx)?);
                    accumulate(&mut grads, *gain, Tensor::new(vec![c], ggain)?);
                    accumulate(&mut grads, *bias, Tensor::new(vec![c], gbias)?);
                }
                Op::SplitHeads {
                    x,
                    batch,
                    seq,
                    heads,
                } => {
                    let dh = g.last_dim();
                    let mut gx = vec![0.0; g.len()];
                    kernels::permute_heads(g.data(), &mut gx, *batch, *seq, *heads, dh, false);
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(shape, gx)?);
                }
                Op::MergeHeads {
                    x,
                    batch,
                    seq,
                    heads,
                } => {
                    let dh = g.last_dim() / heads;
                    let mut gx = vec![0.0; g.len()];
                    kernels::permute_heads(g.data(), &mut gx, *batch, *seq, *heads, dh, true);
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(shape, gx)?);
                }
                Op::MeanPool { x, seq } => {
                    let d = g.last_dim();
                    let shape = self.value(*x).shape().to_vec();
                    let mut gx = vec![0.0; shape[0] * d];
                    for (r, row) in gx.chunks_mut(d).enumerate() {
                        let b = r / seq;
                        for (o, &v) in row.iter_mut().zip(&g.data()[b * d..(b + 1) * d]) {
                            *o = v / *seq as f64;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(shape, gx)?);
                }
                Op::Sum(x) => {
                    let up = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::filled(self.value(*x).shape(), up));
                }
                Op::WeightedSum { x, weights } => {
                    let up = g.data()[0];
                    accumulate(&mut grads, *x, weights.scale(up));
                }
                Op::Mse { pred, target } => {
                    let up = g.data()[0];
                    let n = target.len() as f64;
                    let gp = self
                        .value(*pred)
                        .zip_map(target, |p, t| up * 2.0 * (p - t) / n)?;
                    accumulate(&mut grads, *pred, gp);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let up = g.data()[0];
                    let c = probs.len() / labels.len();
                    let scale = up / labels.len() as f64;
                    let mut gl = probs.clone();
                    for (row, &label) in gl.chunks_mut(c).zip(labels) {
                        row[label] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    let shape = self.value(*logits).shape().to_vec();
                    accumulate(&mut grads, *logits, Tensor::new(shape, gl)?);
                }
                Op::PenaltyDistance { w, z, u } => {
                    // d/dw (c·‖w − z + u‖²) = 2c·(w − z + u)
                    let coeff = 2.0 * g.data()[0];
                    let wv = self.value(*w);
                    let data = penalty_residual(wv.data(), z.data(), u.data())
                        .map(|d| coeff * d)
                        .collect();
                    accumulate(&mut grads, *w, Tensor::new(wv.shape().to_vec(), data)?);
                }
            }
        }
        Ok(result)
    }
}

/// `(w − z) + u` elementwise, in the one evaluation order used everywhere.
pub fn penalty_residual<'a>(
    w: &'a [f64],
    z: &'a [f64],
    u: &'a [f64],
) -> impl Iterator<Item = f64> + 'a {
    w.iter().zip(z).zip(u).map(|((w, z), u)| (w - z) + u)
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing
            .add_assign(&g)
            .expect("gradient shape matches its node"),
        slot @ None => *slot = Some(g),
    }
}

struct MatDims {
    batch: usize,
    rows: usize,
    inner: usize,
    cols: usize,
}

impl MatDims {
    fn resolve(sa: &[usize], sb: &[usize], trans_b: bool) -> Result<Self> {
        let mismatch = || {
            Error::op(
                "matmul",
                format!("incompatible operands {sa:?} x {sb:?} (trans_b = {trans_b})"),
            )
        };
        let (batch, a, b) = match (sa.len(), sb.len()) {
            (2, 2) => (1, sa, sb),
            (3, 3) if sa[0] == sb[0] => (sa[0], &sa[1..], &sb[1..]),
            _ => return Err(mismatch()),
        };
        let (inner_b, cols) = if trans_b { (b[1], b[0]) } else { (b[0], b[1]) };
        if a[1] != inner_b {
            return Err(mismatch());
        }
        Ok(Self {
            batch,
            rows: a[0],
            inner: a[1],
            cols,
        })
    }
}
