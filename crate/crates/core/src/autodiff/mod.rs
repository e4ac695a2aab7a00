//! Tensor-valued reverse-mode differentiation.
//!
//! A [`Tape`] is an append-only list of nodes. Every operation records its
//! inputs, which always precede it, so walking the list backwards visits nodes
//! in reverse topological order. Spike generation (the step function and the
//! LIF layer) is differentiated through the triangular surrogate of
//! [`SurrogateSpec`]; every other operation uses its exact local derivative.

mod check;

pub use check::{grad_check, grad_check_case, GradCheckCase, GradCheckReport};

use crate::blocks::conv::{self, ConvDims, ConvGeometry};
use crate::blocks::norm::{self, NormLayout};
use crate::error::{shape_err, Error, Result};
use crate::neurons::{LifParams, SurrogateSpec};
use crate::scalar::Scalar;
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    MulConst(NodeId, F),
    ScaleBy(NodeId, NodeId),
    MulBlocks(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    BatchMatMul {
        a: NodeId,
        b: NodeId,
        trans_b: bool,
        dims: (usize, usize, usize, usize),
    },
    Reshape(NodeId),
    TransposeLast2 {
        x: NodeId,
        dims: (usize, usize, usize),
    },
    SumLast(NodeId),
    SumAll(NodeId),
    MeanAxes {
        x: NodeId,
        out_index: Vec<usize>,
        count: usize,
    },
    Outer {
        a: NodeId,
        b: NodeId,
        dims: (usize, usize),
    },
    Threshold {
        u: NodeId,
        v: NodeId,
        spec: SurrogateSpec,
    },
    Lif {
        x: NodeId,
        u_trace: Vec<F>,
        params: LifParams<F>,
        spec: SurrogateSpec,
    },
    Mask {
        s: NodeId,
        v: NodeId,
        d: usize,
    },
    Conv2d {
        x: NodeId,
        w: NodeId,
        dims: ConvDims,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        x_hat: Vec<F>,
        inv_std: Vec<F>,
        layout: NormLayout,
        batch_mode: bool,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Vec<F>,
        labels: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Statistics used by a batch-norm node, for updating running buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    pub count: usize,
}

/// How a batch-norm node normalises.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a, F> {
    Batch,
    Fixed { mean: &'a [F], var: &'a [F] },
}

#[derive(Debug, Clone, Default)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

/// Gradients indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId) -> Tensor<F> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id.0].clone()))
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, shape: &[usize], data: Vec<F>) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(data) {
                *a = *a + b;
            }
        }
        None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape matches value"));
        }
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes whose value is a spike train (step and LIF outputs).
    pub fn spiking_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Threshold { .. } | Op::Lif { .. }))
            .map(|(i, _)| NodeId(i))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn check(&self, ids: &[NodeId]) -> Result<()> {
        for id in ids {
            if id.0 >= self.nodes.len() {
                return Err(Error::Tape(format!("node {} is not on this tape", id.0)));
            }
        }
        Ok(())
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = self.needs(inputs);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> NodeId {
        if requires_grad {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x + bias` with `bias` broadcast along the last axis.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check(&[x, bias])?;
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = bv.len();
        if xv.rank() == 0 || *xv.shape().last().unwrap() != c {
            return shape_err(format!("bias {:?} does not fit {:?}", bv.shape(), xv.shape()));
        }
        let b = bv.data();
        let out = Tensor::from_fn(xv.shape().to_vec(), |i| xv.data()[i] + b[i % c]);
        Ok(self.push(out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn mul_const(&mut self, x: NodeId, c: F) -> Result<NodeId> {
        self.check(&[x])?;
        let v = self.value(x).scale(c);
        Ok(self.push(v, Op::MulConst(x, c), &[x]))
    }

    /// `x · s` for a one-element node `s`.
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.check(&[x, s])?;
        if self.value(s).len() != 1 {
            return shape_err("scale_by expects a one-element scale");
        }
        let c = self.value(s).data()[0];
        let v = self.value(x).scale(c);
        Ok(self.push(v, Op::ScaleBy(x, s), &[x, s]))
    }

    /// Splits `x` into `a.len()` equal contiguous blocks and scales block `g` by `a[g]`.
    pub fn mul_blocks(&mut self, x: NodeId, a: NodeId) -> Result<NodeId> {
        self.check(&[x, a])?;
        let (xv, av) = (self.value(x), self.value(a));
        let g = av.len();
        if g == 0 || xv.len() % g != 0 {
            return shape_err(format!("cannot split {:?} into {g} blocks", xv.shape()));
        }
        let block = xv.len() / g;
        let out = Tensor::from_fn(xv.shape().to_vec(), |i| xv.data()[i] * av.data()[i / block]);
        Ok(self.push(out, Op::MulBlocks(x, a), &[x, a]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// Batched product over the leading axis: `[G, N, K] × [G, K, M]`, or with
    /// `trans_b`, `[G, N, K] × [G, M, K]ᵀ`.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, trans_b: bool) -> Result<NodeId> {
        self.check(&[a, b])?;
        let (av, bv) = (self.value(a), self.value(b));
        let (g, n, k) = match *av.shape() {
            [g, n, k] => (g, n, k),
            _ => return shape_err(format!("batch_matmul lhs must be rank 3, got {:?}", av.shape())),
        };
        let (g2, b1, b2) = match *bv.shape() {
            [g, x, y] => (g, x, y),
            _ => return shape_err(format!("batch_matmul rhs must be rank 3, got {:?}", bv.shape())),
        };
        let (kb, m) = if trans_b { (b2, b1) } else { (b1, b2) };
        if g != g2 || kb != k {
            return shape_err(format!(
                "batch_matmul mismatch {:?} x {:?} (trans_b = {trans_b})",
                av.shape(),
                bv.shape()
            ));
        }
        let mut out = Vec::with_capacity(g * n * m);
        for gi in 0..g {
            let a_blk = &av.data()[gi * n * k..(gi + 1) * n * k];
            let b_blk = &bv.data()[gi * k * m..(gi + 1) * k * m];
            let b_use = if trans_b { transpose_raw(b_blk, m, k) } else { b_blk.to_vec() };
            out.extend(matmul_raw(a_blk, &b_use, n, k, m));
        }
        let v = Tensor::new(vec![g, n, m], out)?;
        Ok(self.push(
            v,
            Op::BatchMatMul {
                a,
                b,
                trans_b,
                dims: (g, n, k, m),
            },
            &[a, b],
        ))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.check(&[x])?;
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let xv = self.value(x);
        let r = xv.rank();
        if r < 2 {
            return shape_err("transpose_last2 needs rank >= 2");
        }
        let (p, q) = (xv.shape()[r - 2], xv.shape()[r - 1]);
        let g = xv.len() / (p * q).max(1);
        let mut out = Vec::with_capacity(xv.len());
        for gi in 0..g {
            out.extend(transpose_raw(&xv.data()[gi * p * q..(gi + 1) * p * q], p, q));
        }
        let mut shape = xv.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let v = Tensor::new(shape, out)?;
        Ok(self.push(v, Op::TransposeLast2 { x, dims: (g, p, q) }, &[x]))
    }

    pub fn sum_last(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let xv = self.value(x);
        if xv.rank() == 0 {
            return shape_err("sum_last needs rank >= 1");
        }
        let v = xv.sum_axis(xv.rank() - 1)?;
        Ok(self.push(v, Op::SumLast(x), &[x]))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(&[x])?;
        let v = Tensor::scalar(self.value(x).sum());
        Ok(self.push(v, Op::SumAll(x), &[x]))
    }

    /// Mean over `axes`, which are removed from the shape.
    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.check(&[x])?;
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        if axes.iter().any(|&a| a >= shape.len()) {
            return shape_err(format!("mean axes {axes:?} out of range for {shape:?}"));
        }
        let keep: Vec<usize> = (0..shape.len()).filter(|a| !axes.contains(a)).collect();
        let out_shape: Vec<usize> = keep.iter().map(|&a| shape[a]).collect();
        let out_len: usize = out_shape.iter().product();
        let count = xv.len() / out_len.max(1);
        let in_strides = crate::tensor::strides(&shape);
        let out_strides = crate::tensor::strides(&out_shape);
        let out_index: Vec<usize> = (0..xv.len())
            .map(|flat| {
                keep.iter().enumerate().fold(0, |acc, (oi, &a)| {
                    acc + ((flat / in_strides[a]) % shape[a]) * out_strides[oi]
                })
            })
            .collect();
        let mut out = vec![F::zero(); out_len];
        for (i, &o) in out_index.iter().enumerate() {
            out[o] = out[o] + xv.data()[i];
        }
        let inv = F::one() / F::of(count as f64);
        let v = Tensor::new(out_shape, out.into_iter().map(|s| s * inv).collect())?;
        Ok(self.push(
            v,
            Op::MeanAxes {
                x,
                out_index,
                count,
            },
            &[x],
        ))
    }

    /// Per-row outer product: `[G, N] × [G, N] → [G, N, N]`.
    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(&[a, b])?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.rank() < 1 {
            return shape_err(format!("outer operands differ: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let n = *av.shape().last().unwrap();
        let g = av.len() / n.max(1);
        let v = Tensor::from_fn(
            av.shape().iter().copied().chain([n]).collect(),
            |idx| {
                let gi = idx / (n * n);
                let i = (idx / n) % n;
                let j = idx % n;
                av.data()[gi * n + i] * bv.data()[gi * n + j]
            },
        );
        Ok(self.push(v, Op::Outer { a, b, dims: (g, n) }, &[a, b]))
    }

    /// `Θ(u[t, ...] − v[t])` with the surrogate derivative in the backward pass.
    pub fn threshold(&mut self, u: NodeId, v: NodeId, spec: SurrogateSpec) -> Result<NodeId> {
        self.check(&[u, v])?;
        let (uv, vv) = (self.value(u), self.value(v));
        let t = vv.len();
        if uv.rank() == 0 || uv.shape()[0] != t {
            return shape_err(format!(
                "thresholds {:?} do not match leading axis of {:?}",
                vv.shape(),
                uv.shape()
            ));
        }
        let row = uv.len() / t;
        let s = Tensor::from_fn(uv.shape().to_vec(), |i| {
            if uv.data()[i] - vv.data()[i / row] >= F::zero() {
                F::one()
            } else {
                F::zero()
            }
        });
        Ok(self.push(s, Op::Threshold { u, v, spec }, &[u, v]))
    }

    /// Multi-step LIF layer over the leading time axis, starting from rest.
    ///
    /// The reset is treated as a constant in the backward pass.
    pub fn lif(&mut self, x: NodeId, params: LifParams<F>, spec: SurrogateSpec) -> Result<NodeId> {
        self.check(&[x])?;
        let xv = self.value(x);
        if xv.rank() == 0 {
            return shape_err("lif needs a leading time axis");
        }
        let t_steps = xv.shape()[0];
        let w = xv.len() / t_steps.max(1);
        let mut h = vec![F::zero(); w];
        let mut u_trace = vec![F::zero(); xv.len()];
        let mut s = vec![F::zero(); xv.len()];
        for t in 0..t_steps {
            for i in 0..w {
                let u = h[i] + xv.data()[t * w + i];
                let fire = u - params.v_th >= F::zero();
                u_trace[t * w + i] = u;
                s[t * w + i] = if fire { F::one() } else { F::zero() };
                h[i] = if fire { params.v_reset } else { params.tau * u };
            }
        }
        let v = Tensor::new(xv.shape().to_vec(), s)?;
        Ok(self.push(
            v,
            Op::Lif {
                x,
                u_trace,
                params,
                spec,
            },
            &[x],
        ))
    }

    /// `v[..., n, :] · s[..., n]`: keeps the tokens selected by `s`.
    pub fn mask(&mut self, s: NodeId, v: NodeId) -> Result<NodeId> {
        self.check(&[s, v])?;
        let (sv, vv) = (self.value(s), self.value(v));
        if sv.len() == 0 || vv.len() % sv.len() != 0 || vv.rank() != sv.rank() + 1 {
            return shape_err(format!("mask {:?} does not fit {:?}", sv.shape(), vv.shape()));
        }
        let d = vv.len() / sv.len();
        let out = Tensor::from_fn(vv.shape().to_vec(), |i| vv.data()[i] * sv.data()[i / d]);
        Ok(self.push(out, Op::Mask { s, v, d }, &[s, v]))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, geom: ConvGeometry) -> Result<NodeId> {
        self.check(&[x, w])?;
        let (xv, wv) = (self.value(x), self.value(w));
        let dims = conv::conv_dims(xv.shape(), wv.shape(), &geom)?;
        let out = conv::conv2d_forward(xv.data(), wv.data(), &dims, &geom);
        let v = Tensor::new(vec![dims.batch, dims.c_out, dims.h_out, dims.w_out], out)?;
        Ok(self.push(v, Op::Conv2d { x, w, dims, geom }, &[x, w]))
    }

    /// Batch normalisation over axis 1. With [`NormStats::Batch`] the batch
    /// statistics are returned so the caller can update running buffers.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        stats: NormStats<'_, F>,
        eps: F,
    ) -> Result<(NodeId, Option<BatchStats<F>>)> {
        self.check(&[x, gamma, beta])?;
        let xv = self.value(x);
        let layout = NormLayout::of(xv.shape())
            .ok_or_else(|| Error::Shape(format!("batch_norm needs rank >= 2, got {:?}", xv.shape())))?;
        let c = layout.channels;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return shape_err(format!("batch_norm affine parameters do not match {c} channels"));
        }
        let (mean, var, batch) = match stats {
            NormStats::Batch => {
                let (m, v) = norm::batch_stats(xv.data(), &layout);
                (m, v, true)
            }
            NormStats::Fixed { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return shape_err("batch_norm running statistics do not match channels");
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std = norm::inv_std(&var, eps);
        let (y, x_hat) = norm::normalize(
            xv.data(),
            &layout,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let v = Tensor::new(xv.shape().to_vec(), y)?;
        let out_stats = batch.then(|| BatchStats {
            mean,
            var,
            count: layout.count(),
        });
        let id = self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                layout,
                batch_mode: batch,
            },
            &[x, gamma, beta],
        );
        Ok((id, out_stats))
    }

    /// Mean softmax cross-entropy of `[B, C]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(&[logits])?;
        let lv = self.value(logits);
        let (b, c) = match *lv.shape() {
            [b, c] => (b, c),
            _ => return shape_err(format!("logits must be [B, C], got {:?}", lv.shape())),
        };
        if labels.len() != b || labels.iter().any(|&l| l >= c) {
            return shape_err("labels do not match logits");
        }
        let mut probs = vec![F::zero(); b * c];
        let mut loss = F::zero();
        for i in 0..b {
            let row = &lv.data()[i * c..(i + 1) * c];
            let m = row.iter().fold(F::neg_infinity(), |a, &v| a.max(v));
            let z: F = row.iter().map(|&v| (v - m).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - m).exp() / z;
            }
            loss = loss - (row[labels[i]] - m - z.ln());
        }
        let v = Tensor::scalar(loss / F::of(b as f64));
        Ok(self.push(
            v,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Propagates `d loss / d node` for every node that the loss depends on.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>> {
        self.check(&[loss])?;
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape().to_vec()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn send(&self, grads: &mut [Option<Tensor<F>>], to: NodeId, data: Vec<F>) {
        if self.nodes[to.0].needs_grad {
            accumulate(&mut grads[to.0], self.nodes[to.0].value.shape(), data);
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn backward_node(&self, i: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let gd = g.data();
        let node = &self.nodes[i];
        let inputs_ok = |ids: &[NodeId]| -> Result<()> {
            if ids.iter().any(|id| id.0 >= i) {
                return Err(Error::Tape(format!("node {i} depends on a later node (cycle)")));
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                inputs_ok(&[*a, *b])?;
                self.send(grads, *a, gd.to_vec());
                self.send(grads, *b, gd.to_vec());
            }
            Op::Mul(a, b) => {
                inputs_ok(&[*a, *b])?;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.send(grads, *a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if self.wants(*b) {
                    self.send(grads, *b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::AddBias(x, bias) => {
                inputs_ok(&[*x, *bias])?;
                self.send(grads, *x, gd.to_vec());
                if self.wants(*bias) {
                    let c = self.value(*bias).len();
                    let mut gb = vec![F::zero(); c];
                    for (k, &v) in gd.iter().enumerate() {
                        gb[k % c] = gb[k % c] + v;
                    }
                    self.send(grads, *bias, gb);
                }
            }
            Op::MulConst(x, c) => {
                inputs_ok(&[*x])?;
                self.send(grads, *x, gd.iter().map(|&v| v * *c).collect());
            }
            Op::ScaleBy(x, s) => {
                inputs_ok(&[*x, *s])?;
                let c = self.value(*s).data()[0];
                self.send(grads, *x, gd.iter().map(|&v| v * c).collect());
                if self.wants(*s) {
                    let xs = self.value(*x).data();
                    let d: F = gd.iter().zip(xs).map(|(&a, &b)| a * b).sum();
                    self.send(grads, *s, vec![d]);
                }
            }
            Op::MulBlocks(x, a) => {
                inputs_ok(&[*x, *a])?;
                let av = self.value(*a).data();
                let block = gd.len() / av.len();
                self.send(grads, *x, gd.iter().enumerate().map(|(k, &v)| v * av[k / block]).collect());
                if self.wants(*a) {
                    let xs = self.value(*x).data();
                    let mut ga = vec![F::zero(); av.len()];
                    for (k, (&gv, &xv)) in gd.iter().zip(xs).enumerate() {
                        ga[k / block] = ga[k / block] + gv * xv;
                    }
                    self.send(grads, *a, ga);
                }
            }
            Op::MatMul(a, b) => {
                inputs_ok(&[*a, *b])?;
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let bt = transpose_raw(bv.data(), k, n);
                    self.send(grads, *a, matmul_raw(gd, &bt, m, n, k));
                }
                if self.wants(*b) {
                    let at = transpose_raw(av.data(), m, k);
                    self.send(grads, *b, matmul_raw(&at, gd, k, m, n));
                }
            }
            Op::BatchMatMul { a, b, trans_b, dims } => {
                inputs_ok(&[*a, *b])?;
                let (g, n, k, m) = *dims;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = self.wants(*a).then(|| Vec::with_capacity(g * n * k));
                let mut gb = self.wants(*b).then(|| Vec::with_capacity(g * k * m));
                for gi in 0..g {
                    let go = &gd[gi * n * m..(gi + 1) * n * m];
                    let a_blk = &av[gi * n * k..(gi + 1) * n * k];
                    let b_blk = &bv[gi * k * m..(gi + 1) * k * m];
                    // effective rhs B_eff is [k, m]
                    let b_eff = if *trans_b { transpose_raw(b_blk, m, k) } else { b_blk.to_vec() };
                    if let Some(ga) = ga.as_mut() {
                        let bt = transpose_raw(&b_eff, k, m);
                        ga.extend(matmul_raw(go, &bt, n, m, k));
                    }
                    if let Some(gb) = gb.as_mut() {
                        let at = transpose_raw(a_blk, n, k);
                        let g_eff = matmul_raw(&at, go, k, n, m);
                        if *trans_b {
                            gb.extend(transpose_raw(&g_eff, k, m));
                        } else {
                            gb.extend(g_eff);
                        }
                    }
                }
                if let Some(ga) = ga {
                    self.send(grads, *a, ga);
                }
                if let Some(gb) = gb {
                    self.send(grads, *b, gb);
                }
            }
            Op::Reshape(x) => {
                inputs_ok(&[*x])?;
                self.send(grads, *x, gd.to_vec());
            }
            Op::TransposeLast2 { x, dims } => {
                inputs_ok(&[*x])?;
                let (g, p, q) = *dims;
                let mut out = Vec::with_capacity(gd.len());
                for gi in 0..g {
                    out.extend(transpose_raw(&gd[gi * p * q..(gi + 1) * p * q], q, p));
                }
                self.send(grads, *x, out);
            }
            Op::SumLast(x) => {
                inputs_ok(&[*x])?;
                let xv = self.value(*x);
                let n = *xv.shape().last().unwrap();
                self.send(grads, *x, (0..xv.len()).map(|k| gd[k / n]).collect());
            }
            Op::SumAll(x) => {
                inputs_ok(&[*x])?;
                let n = self.value(*x).len();
                self.send(grads, *x, vec![gd[0]; n]);
            }
            Op::MeanAxes { x, out_index, count } => {
                inputs_ok(&[*x])?;
                let inv = F::one() / F::of(*count as f64);
                self.send(grads, *x, out_index.iter().map(|&o| gd[o] * inv).collect());
            }
            Op::Outer { a, b, dims } => {
                inputs_ok(&[*a, *b])?;
                let (g, n) = *dims;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![F::zero(); g * n];
                let mut gb = vec![F::zero(); g * n];
                for gi in 0..g {
                    for r in 0..n {
                        for c in 0..n {
                            let gv = gd[(gi * n + r) * n + c];
                            ga[gi * n + r] = ga[gi * n + r] + gv * bv[gi * n + c];
                            gb[gi * n + c] = gb[gi * n + c] + gv * av[gi * n + r];
                        }
                    }
                }
                self.send(grads, *a, ga);
                self.send(grads, *b, gb);
            }
            Op::Threshold { u, v, spec } => {
                inputs_ok(&[*u, *v])?;
                let (uv, vv) = (self.value(*u).data(), self.value(*v).data());
                let row = uv.len() / vv.len();
                let du: Vec<F> = gd
                    .iter()
                    .enumerate()
                    .map(|(k, &gv)| gv * spec.derivative(uv[k] - vv[k / row]))
                    .collect();
                if self.wants(*v) {
                    let mut gv = vec![F::zero(); vv.len()];
                    for (k, &d) in du.iter().enumerate() {
                        gv[k / row] = gv[k / row] - d;
                    }
                    self.send(grads, *v, gv);
                }
                self.send(grads, *u, du);
            }
            Op::Lif {
                x,
                u_trace,
                params,
                spec,
            } => {
                inputs_ok(&[*x])?;
                let t_steps = self.value(*x).shape()[0];
                let w = gd.len() / t_steps.max(1);
                let s = node.value.data();
                let mut gx = vec![F::zero(); gd.len()];
                let mut g_h = vec![F::zero(); w];
                for t in (0..t_steps).rev() {
                    for k in 0..w {
                        let idx = t * w + k;
                        let du = gd[idx] * spec.derivative(u_trace[idx] - params.v_th)
                            + g_h[k] * params.tau * (F::one() - s[idx]);
                        gx[idx] = du;
                        g_h[k] = du;
                    }
                }
                self.send(grads, *x, gx);
            }
            Op::Mask { s, v, d } => {
                inputs_ok(&[*s, *v])?;
                let (sv, vv) = (self.value(*s).data(), self.value(*v).data());
                self.send(grads, *v, gd.iter().enumerate().map(|(k, &gv)| gv * sv[k / d]).collect());
                if self.wants(*s) {
                    let mut gs = vec![F::zero(); sv.len()];
                    for (k, (&gv, &x)) in gd.iter().zip(vv).enumerate() {
                        gs[k / d] = gs[k / d] + gv * x;
                    }
                    self.send(grads, *s, gs);
                }
            }
            Op::Conv2d { x, w, dims, geom } => {
                inputs_ok(&[*x, *w])?;
                let (gx, gw) = conv::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    dims,
                    geom,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(gx) = gx {
                    self.send(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.send(grads, *w, gw);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                layout,
                batch_mode,
            } => {
                inputs_ok(&[*x, *gamma, *beta])?;
                let (gx, gg, gb) = norm::backward(
                    gd,
                    x_hat,
                    layout,
                    inv_std,
                    self.value(*gamma).data(),
                    *batch_mode,
                );
                self.send(grads, *x, gx);
                self.send(grads, *gamma, gg);
                self.send(grads, *beta, gb);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                inputs_ok(&[*logits])?;
                let b = labels.len();
                let c = probs.len() / b;
                let scale = gd[0] / F::of(b as f64);
                let out = probs
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| {
                        let y = if labels[k / c] == k % c { F::one() } else { F::zero() };
                        (p - y) * scale
                    })
                    .collect();
                self.send(grads, *logits, out);
            }
        }
        Ok(())
    }
}
