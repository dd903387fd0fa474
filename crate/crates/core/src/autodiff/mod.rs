//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in
//! creation order, which is already a topological order. [`Graph::backward`]
//! walks that record in reverse, visiting each node once, and adds the
//! resulting gradients into the accumulators of the trainable leaves.
//!
//! ```
//! use adaf::autodiff::Graph;
//! use adaf::Tensor;
//!
//! let g = Graph::<f64>::new();
//! let x = g.param(Tensor::from_f64(&[3], &[1.0, -2.0, 3.0]).unwrap());
//! let loss = x.relu().sum();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 1.0]);
//! ```

pub mod gradcheck;
pub mod kernels;

use std::cell::{Ref, RefCell};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use kernels::{axpy, dot};

/// Variance floor used by [`Var::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
    },
    Relu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    MaxLast {
        x: usize,
        argmax: Vec<usize>,
    },
    MeanAxis {
        x: usize,
        len: usize,
        inner: usize,
    },
    Softmax {
        x: usize,
    },
    Scale {
        x: usize,
        c: F,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    AddBroadcast {
        x: usize,
        y: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        probs: Vec<F>,
    },
    SwapAxes12 {
        x: usize,
    },
    Reshape {
        x: usize,
    },
    Narrow {
        x: usize,
    },
    Stack {
        xs: Vec<usize>,
        axis: usize,
    },
    Combine {
        routes: usize,
        weights: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<F>,
    },
    Huber {
        pred: usize,
        target: usize,
        delta: F,
    },
    Sum {
        x: usize,
    },
}

impl<F> Op<F> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Conv1d { x, w, b } => vec![*x, *w, *b],
            Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::MaxLast { x, .. }
            | Op::MeanAxis { x, .. }
            | Op::Softmax { x }
            | Op::Scale { x, .. }
            | Op::SwapAxes12 { x }
            | Op::Reshape { x }
            | Op::Narrow { x }
            | Op::Dropout { x, .. }
            | Op::Sum { x } => vec![*x],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::AddBroadcast { x, y } => vec![*x, *y],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Stack { xs, .. } => xs.clone(),
            Op::Combine { routes, weights } => vec![*routes, *weights],
            Op::Huber { pred, target, .. } => vec![*pred, *target],
        }
    }
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Operation record for one forward pass.
pub struct Graph<F: Real = f32> {
    nodes: RefCell<Vec<Node<F>>>,
    grads: RefCell<Vec<Option<Tensor<F>>>>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, F: Real> {
    graph: &'g Graph<F>,
    id: usize,
}

impl<F: Real> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(Vec::new()),
        }
    }

    /// Trainable leaf: gradients accumulate into it.
    pub fn param(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push_leaf(value, true)
    }

    /// Leaf without gradient tracking.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor<F>, requires_grad: bool) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor<F>, op: Op<F>) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, var: Var<'_, F>) -> Option<Tensor<F>> {
        self.grads.borrow().get(var.id).cloned().flatten()
    }

    /// Distance of the recorded gradient-carrying computation from its
    /// nearest non-differentiable point: relu inputs from zero, max-pooling
    /// top-two gaps, Huber residuals from `±delta`. Infinite when there are
    /// no such operations.
    pub fn kink_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        let mut margin = f64::INFINITY;
        for node in nodes.iter().filter(|n| n.requires_grad) {
            match &node.op {
                Op::Relu { x } => {
                    for v in nodes[*x].value.data() {
                        margin = margin.min(v.abs().as_f64());
                    }
                }
                Op::MaxLast { x, argmax } => {
                    let xv = &nodes[*x].value;
                    for (row, &a) in xv.rows().zip(argmax) {
                        for (i, &v) in row.iter().enumerate() {
                            if i != a {
                                margin = margin.min((row[a] - v).as_f64());
                            }
                        }
                    }
                }
                Op::Huber { pred, target, delta } => {
                    let p = nodes[*pred].value.data();
                    let t = nodes[*target].value.data();
                    for (&a, &b) in p.iter().zip(t) {
                        margin = margin.min(((a - b).abs() - *delta).abs().as_f64());
                    }
                }
                _ => {}
            }
        }
        margin
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Propagate `∂loss/∂leaf` into every trainable leaf's accumulator.
    ///
    /// Repeated calls add to the existing accumulators.
    pub fn backward(&self, loss: Var<'_, F>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut adj: Vec<Option<Tensor<F>>> = (0..=loss.id).map(|_| None).collect();
        adj[loss.id] = Some(Tensor::full(root.value.shape(), F::one()));

        let mut grads = self.grads.borrow_mut();
        if grads.len() < nodes.len() {
            grads.resize_with(nodes.len(), || None);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => match &mut grads[id] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                },
                op => backprop(&nodes, node, op, &g, &mut adj),
            }
        }
        Ok(())
    }
}

/// Run `f` on the adjoint buffer of `id`, creating it on first touch.
/// Inputs that do not require gradients are skipped.
fn acc<F: Real>(nodes: &[Node<F>], adj: &mut [Option<Tensor<F>>], id: usize, f: impl FnOnce(&mut [F])) {
    if !nodes[id].requires_grad {
        return;
    }
    let t = adj[id].get_or_insert_with(|| Tensor::zeros(nodes[id].value.shape()));
    f(t.data_mut());
}

fn backprop<F: Real>(nodes: &[Node<F>], node: &Node<F>, op: &Op<F>, g: &Tensor<F>, adj: &mut [Option<Tensor<F>>]) {
    let gd = g.data();
    match op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let xv = &nodes[*x].value;
            let wv = &nodes[*w].value;
            let (inner, cols) = (wv.shape()[0], wv.shape()[1]);
            acc(nodes, adj, *x, |dx| {
                kernels::matmul_grad_x(gd, wv.data(), dx, inner, cols)
            });
            acc(nodes, adj, *w, |dw| {
                kernels::matmul_grad_w(xv.data(), gd, dw, inner, cols)
            });
            if let Some(b) = b {
                acc(nodes, adj, *b, |db| {
                    for row in gd.chunks(cols) {
                        axpy(F::one(), row, db);
                    }
                });
            }
        }
        Op::Conv1d { x, w, b } => {
            let xv = &nodes[*x].value;
            let wv = &nodes[*w].value;
            let (filters, k) = (wv.shape()[0], wv.shape()[1]);
            let len = xv.last_dim();
            let batch = xv.numel() / len;
            let (left, _) = kernels::same_padding(k);
            let mut buf = vec![F::zero(); len + k - 1];
            if nodes[*w].requires_grad {
                acc(nodes, adj, *w, |dw| {
                    for n in 0..batch {
                        kernels::pad_into(&xv.data()[n * len..(n + 1) * len], left, &mut buf);
                        for f in 0..filters {
                            let grow = &gd[(n * filters + f) * len..(n * filters + f + 1) * len];
                            for j in 0..k {
                                dw[f * k + j] += dot(grow, &buf[j..j + len]);
                            }
                        }
                    }
                });
            }
            acc(nodes, adj, *b, |db| {
                for (i, row) in gd.chunks(len).enumerate() {
                    db[i % filters] += row.iter().copied().sum::<F>();
                }
            });
            acc(nodes, adj, *x, |dx| {
                for n in 0..batch {
                    buf.fill(F::zero());
                    for f in 0..filters {
                        let grow = &gd[(n * filters + f) * len..(n * filters + f + 1) * len];
                        for j in 0..k {
                            axpy(wv.data()[f * k + j], grow, &mut buf[j..j + len]);
                        }
                    }
                    axpy(F::one(), &buf[left..left + len], &mut dx[n * len..(n + 1) * len]);
                }
            });
        }
        Op::Relu { x } => {
            let xv = nodes[*x].value.data();
            acc(nodes, adj, *x, |dx| {
                for ((d, &xi), &gi) in dx.iter_mut().zip(xv).zip(gd) {
                    if xi > F::zero() {
                        *d += gi;
                    }
                }
            });
        }
        Op::Sigmoid { x } => {
            let y = node.value.data();
            acc(nodes, adj, *x, |dx| {
                for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(gd) {
                    *d += gi * yi * (F::one() - yi);
                }
            });
        }
        Op::MaxLast { x, argmax } => {
            let len = nodes[*x].value.last_dim();
            acc(nodes, adj, *x, |dx| {
                for (r, (&a, &gi)) in argmax.iter().zip(gd).enumerate() {
                    dx[r * len + a] += gi;
                }
            });
        }
        Op::MeanAxis { x, len, inner } => {
            let scale = F::one() / F::lit(*len as f64);
            let (len, inner) = (*len, *inner);
            acc(nodes, adj, *x, |dx| {
                for (o, grow) in gd.chunks(inner).enumerate() {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        axpy(scale, grow, &mut dx[base..base + inner]);
                    }
                }
            });
        }
        Op::Softmax { x } => {
            let y = &node.value;
            let d = y.last_dim();
            acc(nodes, adj, *x, |dx| {
                for ((yr, gr), dr) in y.data().chunks(d).zip(gd.chunks(d)).zip(dx.chunks_mut(d)) {
                    let s = dot(gr, yr);
                    for ((di, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *di += yi * (gi - s);
                    }
                }
            });
        }
        Op::Scale { x, c } => acc(nodes, adj, *x, |dx| axpy(*c, gd, dx)),
        Op::Add { a, b } => {
            acc(nodes, adj, *a, |d| axpy(F::one(), gd, d));
            acc(nodes, adj, *b, |d| axpy(F::one(), gd, d));
        }
        Op::Mul { a, b } => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            acc(nodes, adj, *a, |d| {
                for ((di, &gi), &bi) in d.iter_mut().zip(gd).zip(bv) {
                    *di += gi * bi;
                }
            });
            acc(nodes, adj, *b, |d| {
                for ((di, &gi), &ai) in d.iter_mut().zip(gd).zip(av) {
                    *di += gi * ai;
                }
            });
        }
        Op::AddBroadcast { x, y } => {
            acc(nodes, adj, *x, |d| axpy(F::one(), gd, d));
            let n = nodes[*y].value.numel();
            acc(nodes, adj, *y, |d| {
                for row in gd.chunks(n) {
                    axpy(F::one(), row, d);
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let gam = nodes[*gain].value.data();
            let d = gam.len();
            let inv_d = F::one() / F::lit(d as f64);
            acc(nodes, adj, *x, |dx| {
                let mut dyhat = vec![F::zero(); d];
                for (r, (gr, dr)) in gd.chunks(d).zip(dx.chunks_mut(d)).enumerate() {
                    let xh = &xhat[r * d..(r + 1) * d];
                    for ((dy, &gi), &gm) in dyhat.iter_mut().zip(gr).zip(gam) {
                        *dy = gi * gm;
                    }
                    let m1 = dyhat.iter().copied().sum::<F>() * inv_d;
                    let m2 = dot(&dyhat, xh) * inv_d;
                    for ((di, &dy), &xi) in dr.iter_mut().zip(&dyhat).zip(xh) {
                        *di += rstd[r] * (dy - m1 - xi * m2);
                    }
                }
            });
            acc(nodes, adj, *gain, |dg| {
                for (gr, xh) in gd.chunks(d).zip(xhat.chunks(d)) {
                    for ((o, &gi), &xi) in dg.iter_mut().zip(gr).zip(xh) {
                        *o += gi * xi;
                    }
                }
            });
            acc(nodes, adj, *bias, |db| {
                for gr in gd.chunks(d) {
                    axpy(F::one(), gr, db);
                }
            });
        }
        Op::Attention { q, k, v, probs } => {
            attention_backward(nodes, adj, gd, (*q, *k, *v), probs);
        }
        Op::SwapAxes12 { x } => {
            let s = node.value.shape();
            let (a, b, c, d) = (s[0], s[1], s[2], s[3]);
            // node is a×b×c×d, input is a×c×b×d
            acc(nodes, adj, *x, |dx| {
                for i in 0..a {
                    for j in 0..b {
                        for l in 0..c {
                            let src = ((i * b + j) * c + l) * d;
                            let dst = ((i * c + l) * b + j) * d;
                            axpy(F::one(), &gd[src..src + d], &mut dx[dst..dst + d]);
                        }
                    }
                }
            });
        }
        Op::Reshape { x } => acc(nodes, adj, *x, |d| axpy(F::one(), gd, d)),
        Op::Narrow { x } => acc(nodes, adj, *x, |d| axpy(F::one(), gd, &mut d[..gd.len()])),
        Op::Stack { xs, axis } => {
            let shape = nodes[xs[0]].value.shape();
            let inner: usize = shape[*axis..].iter().product();
            let n = xs.len();
            for (i, &xi) in xs.iter().enumerate() {
                acc(nodes, adj, xi, |dx| {
                    for (o, dr) in dx.chunks_mut(inner).enumerate() {
                        let src = (o * n + i) * inner;
                        axpy(F::one(), &gd[src..src + inner], dr);
                    }
                });
            }
        }
        Op::Combine { routes, weights } => {
            let rv = &nodes[*routes].value;
            let wv = &nodes[*weights].value;
            let nf = wv.last_dim();
            let e = rv.last_dim();
            acc(nodes, adj, *routes, |dr| {
                for (r, gr) in gd.chunks(e).enumerate() {
                    for f in 0..nf {
                        let base = (r * nf + f) * e;
                        axpy(wv.data()[r * nf + f], gr, &mut dr[base..base + e]);
                    }
                }
            });
            acc(nodes, adj, *weights, |dw| {
                for (r, gr) in gd.chunks(e).enumerate() {
                    for f in 0..nf {
                        let base = (r * nf + f) * e;
                        dw[r * nf + f] += dot(&rv.data()[base..base + e], gr);
                    }
                }
            });
        }
        Op::Dropout { x, mask } => {
            acc(nodes, adj, *x, |dx| {
                for ((d, &m), &gi) in dx.iter_mut().zip(mask).zip(gd) {
                    *d += gi * m;
                }
            });
        }
        Op::Huber { pred, target, delta } => {
            let p = nodes[*pred].value.data();
            let t = nodes[*target].value.data();
            let scale = gd[0] / F::lit(p.len() as f64);
            let slope = |e: F| {
                if e.abs() <= *delta {
                    e
                } else {
                    *delta * e.signum()
                }
            };
            acc(nodes, adj, *pred, |dp| {
                for ((d, &pi), &ti) in dp.iter_mut().zip(p).zip(t) {
                    *d += scale * slope(pi - ti);
                }
            });
            acc(nodes, adj, *target, |dt| {
                for ((d, &pi), &ti) in dt.iter_mut().zip(p).zip(t) {
                    *d -= scale * slope(pi - ti);
                }
            });
        }
        Op::Sum { x } => acc(nodes, adj, *x, |d| {
            for v in d.iter_mut() {
                *v += gd[0];
            }
        }),
    }
}

fn attention_backward<F: Real>(
    nodes: &[Node<F>],
    adj: &mut [Option<Tensor<F>>],
    gd: &[F],
    (q, k, v): (usize, usize, usize),
    probs: &[F],
) {
    let qv = &nodes[q].value;
    let kv = &nodes[k].value;
    let vv = &nodes[v].value;
    let s = qv.shape();
    let (heads, t, d) = (s[0] * s[1], s[2], s[3]);
    let sk = kv.shape()[2];
    let scale = F::one() / F::lit(d as f64).sqrt();

    // dS = P ∘ (dP - rowsum(dP ∘ P)), with dP = dO · Vᵀ
    let mut ds = vec![F::zero(); heads * t * sk];
    for h in 0..heads {
        for i in 0..t {
            let go = &gd[(h * t + i) * d..(h * t + i + 1) * d];
            let prow = &probs[(h * t + i) * sk..(h * t + i + 1) * sk];
            let dsrow = &mut ds[(h * t + i) * sk..(h * t + i + 1) * sk];
            for j in 0..sk {
                dsrow[j] = dot(go, &vv.data()[(h * sk + j) * d..(h * sk + j + 1) * d]);
            }
            let s = dot(dsrow, prow);
            for (x, &p) in dsrow.iter_mut().zip(prow) {
                *x = p * (*x - s);
            }
        }
    }
    acc(nodes, adj, v, |dv| {
        for h in 0..heads {
            for i in 0..t {
                let go = &gd[(h * t + i) * d..(h * t + i + 1) * d];
                for j in 0..sk {
                    let p = probs[(h * t + i) * sk + j];
                    axpy(p, go, &mut dv[(h * sk + j) * d..(h * sk + j + 1) * d]);
                }
            }
        }
    });
    acc(nodes, adj, q, |dq| {
        for h in 0..heads {
            for i in 0..t {
                let dqrow = &mut dq[(h * t + i) * d..(h * t + i + 1) * d];
                for j in 0..sk {
                    let c = ds[(h * t + i) * sk + j] * scale;
                    axpy(c, &kv.data()[(h * sk + j) * d..(h * sk + j + 1) * d], dqrow);
                }
            }
        }
    });
    acc(nodes, adj, k, |dk| {
        for h in 0..heads {
            for i in 0..t {
                let qrow = &qv.data()[(h * t + i) * d..(h * t + i + 1) * d];
                for j in 0..sk {
                    let c = ds[(h * t + i) * sk + j] * scale;
                    axpy(c, qrow, &mut dk[(h * sk + j) * d..(h * sk + j + 1) * d]);
                }
            }
        }
    });
}

fn softmax_rows<F: Real>(x: &[F], d: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
        let m = xr.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - m).exp();
            z += *o;
        }
        for o in or.iter_mut() {
            *o /= z;
        }
    }
    out
}

impl<'g, F: Real> Var<'g, F> {
    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn value(&self) -> Ref<'g, Tensor<F>> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn same_graph(&self, other: &Var<'g, F>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::Contract("variables belong to different graphs".into()))
        }
    }

    /// `x · w + b` over the last axis of `x`; `w` is `in×out`.
    pub fn linear(self, w: Var<'g, F>, b: Option<Var<'g, F>>) -> Result<Var<'g, F>> {
        self.same_graph(&w)?;
        let out = {
            let xv = self.value();
            let wv = w.value();
            let ws = wv.shape();
            if ws.len() != 2 || xv.rank() == 0 || xv.last_dim() != ws[0] {
                return Err(Error::shape("linear", xv.shape(), ws));
            }
            let (inner, cols) = (ws[0], ws[1]);
            let rows = xv.numel() / inner;
            let mut data = vec![F::zero(); rows * cols];
            if let Some(b) = &b {
                self.same_graph(b)?;
                let bv = b.value();
                if bv.shape() != [cols] {
                    return Err(Error::shape("linear bias", bv.shape(), &[cols]));
                }
                for row in data.chunks_mut(cols) {
                    row.copy_from_slice(bv.data());
                }
            }
            kernels::matmul(xv.data(), wv.data(), &mut data, inner, cols);
            let mut shape = xv.shape().to_vec();
            *shape.last_mut().unwrap() = cols;
            Tensor::new(&shape, data)?
        };
        Ok(self.graph.push(
            out,
            Op::Linear {
                x: self.id,
                w: w.id,
                b: b.map(|b| b.id),
            },
        ))
    }

    /// Same-length cross-correlation. `self` is `B×1×L` (or `B×L`), `w` is
    /// `F×K`, `b` is `F`; the result is `B×F×L`. Padding puts `K/2` zeros on
    /// the left and `K-1-K/2` on the right.
    pub fn conv1d_same(self, w: Var<'g, F>, b: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_graph(&w)?;
        self.same_graph(&b)?;
        let out = {
            let xv = self.value();
            let wv = w.value();
            let bv = b.value();
            let xs = xv.shape();
            let ws = wv.shape();
            let channels_ok = match xs.len() {
                3 => xs[1] == 1,
                2 => true,
                _ => false,
            };
            if !channels_ok || ws.len() != 2 || ws[1] == 0 || xv.last_dim() == 0 {
                return Err(Error::shape("conv1d_same", xs, ws));
            }
            if bv.shape() != [ws[0]] {
                return Err(Error::shape("conv1d_same bias", bv.shape(), &[ws[0]]));
            }
            let (filters, k) = (ws[0], ws[1]);
            let len = xv.last_dim();
            let batch = xs[0];
            let (left, _) = kernels::same_padding(k);
            let mut buf = vec![F::zero(); len + k - 1];
            let mut data = vec![F::zero(); batch * filters * len];
            for (n, orows) in data.chunks_mut(filters * len).enumerate() {
                kernels::pad_into(&xv.data()[n * len..(n + 1) * len], left, &mut buf);
                kernels::conv_same_row(&buf, wv.data(), bv.data(), k, len, orows);
            }
            Tensor::new(&[batch, filters, len], data)?
        };
        Ok(self.graph.push(
            out,
            Op::Conv1d {
                x: self.id,
                w: w.id,
                b: b.id,
            },
        ))
    }

    pub fn relu(self) -> Var<'g, F> {
        let out = self.value().map(|v| v.max(F::zero()));
        self.graph.push(out, Op::Relu { x: self.id })
    }

    pub fn sigmoid(self) -> Var<'g, F> {
        let out = self.value().map(|v| F::one() / (F::one() + (-v).exp()));
        self.graph.push(out, Op::Sigmoid { x: self.id })
    }

    /// Maximum over the last axis. The gradient goes to the first maximal
    /// position of each row.
    pub fn max_over_last(self) -> Result<Var<'g, F>> {
        let (out, argmax) = {
            let xv = self.value();
            let len = xv.last_dim();
            if xv.rank() == 0 || len == 0 {
                return Err(Error::shape("max_over_last", xv.shape(), &[1]));
            }
            let mut vals = Vec::with_capacity(xv.numel() / len);
            let mut idx = Vec::with_capacity(xv.numel() / len);
            for row in xv.rows() {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                vals.push(row[best]);
                idx.push(best);
            }
            let shape = reduced_shape(xv.shape(), xv.rank() - 1);
            (Tensor::new(&shape, vals)?, idx)
        };
        Ok(self.graph.push(out, Op::MaxLast { x: self.id, argmax }))
    }

    pub fn mean_over_last(self) -> Result<Var<'g, F>> {
        let rank = self.value().rank();
        if rank == 0 {
            return Err(Error::shape("mean_over_last", &[], &[1]));
        }
        self.mean_axis(rank - 1)
    }

    /// Arithmetic mean along `axis`, which is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'g, F>> {
        let (out, len, inner) = {
            let xv = self.value();
            let s = xv.shape();
            if axis >= s.len() || s[axis] == 0 {
                return Err(Error::shape("mean_axis", s, &[axis]));
            }
            let len = s[axis];
            let inner: usize = s[axis + 1..].iter().product();
            let outer: usize = s[..axis].iter().product();
            let scale = F::one() / F::lit(len as f64);
            let mut data = vec![F::zero(); outer * inner];
            for o in 0..outer {
                let orow = &mut data[o * inner..(o + 1) * inner];
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    axpy(F::one(), &xv.data()[base..base + inner], orow);
                }
                for v in orow.iter_mut() {
                    *v *= scale;
                }
            }
            (Tensor::new(&reduced_shape(s, axis), data)?, len, inner)
        };
        Ok(self.graph.push(out, Op::MeanAxis { x: self.id, len, inner }))
    }

    /// Max-subtracted softmax along the last axis.
    pub fn softmax_last(self) -> Result<Var<'g, F>> {
        let out = {
            let xv = self.value();
            let d = xv.last_dim();
            if xv.rank() == 0 || d == 0 {
                return Err(Error::shape("softmax_last", xv.shape(), &[1]));
            }
            Tensor::new(xv.shape(), softmax_rows(xv.data(), d))?
        };
        Ok(self.graph.push(out, Op::Softmax { x: self.id }))
    }

    pub fn scale(self, c: F) -> Var<'g, F> {
        let out = self.value().map(|v| v * c);
        self.graph.push(out, Op::Scale { x: self.id, c })
    }

    pub fn add(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_graph(&other)?;
        let out = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(Error::shape("add", a.shape(), b.shape()));
            }
            let mut out = a.clone();
            out.add_assign(&b)?;
            out
        };
        Ok(self.graph.push(
            out,
            Op::Add {
                a: self.id,
                b: other.id,
            },
        ))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_graph(&other)?;
        let out = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(Error::shape("mul", a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
            Tensor::new(a.shape(), data)?
        };
        Ok(self.graph.push(
            out,
            Op::Mul {
                a: self.id,
                b: other.id,
            },
        ))
    }

    /// `self + y` where `y`'s shape is a suffix of `self`'s shape.
    pub fn add_broadcast(self, y: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_graph(&y)?;
        let out = {
            let xv = self.value();
            let yv = y.value();
            let (xs, ys) = (xv.shape(), yv.shape());
            if ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
                return Err(Error::shape("add_broadcast", xs, ys));
            }
            let mut out = xv.clone();
            for row in out.data_mut().chunks_mut(yv.numel().max(1)) {
                axpy(F::one(), yv.data(), row);
            }
            out
        };
        Ok(self.graph.push(out, Op::AddBroadcast { x: self.id, y: y.id }))
    }

    /// Normalize the last axis to zero mean and unit variance, then apply
    /// `gain` and `bias`.
    pub fn layer_norm(self, gain: Var<'g, F>, bias: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_graph(&gain)?;
        self.same_graph(&bias)?;
        let (out, xhat, rstd) = {
            let xv = self.value();
            let gv = gain.value();
            let bv = bias.value();
            let d = xv.last_dim();
            if xv.rank() == 0 || d == 0 || gv.shape() != [d] || bv.shape() != [d] {
                return Err(Error::shape("layer_norm", xv.shape(), gv.shape()));
            }
            let eps = F::lit(LAYER_NORM_EPS);
            let inv_d = F::one() / F::lit(d as f64);
            let mut xhat = vec![F::zero(); xv.numel()];
            let mut rstd = Vec::with_capacity(xv.numel() / d);
            let mut data = vec![F::zero(); xv.numel()];
            for (r, row) in xv.rows().enumerate() {
                let mean = row.iter().copied().sum::<F>() * inv_d;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
                let rs = F::one() / (var + eps).sqrt();
                rstd.push(rs);
                for i in 0..d {
                    let h = (row[i] - mean) * rs;
                    xhat[r * d + i] = h;
                    data[r * d + i] = h * gv.data()[i] + bv.data()[i];
                }
            }
            (Tensor::new(xv.shape(), data)?, xhat, rstd)
        };
        Ok(self.graph.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
        ))
    }

    /// Exchange axes 1 and 2 of a rank-4 tensor.
    pub fn swap_axes12(self) -> Result<Var<'g, F>> {
        let out = {
            let xv = self.value();
            let s = xv.shape();
            if s.len() != 4 {
                return Err(Error::shape("swap_axes12", s, &[0, 0, 0, 0]));
            }
            let (a, b, c, d) = (s[0], s[1], s[2], s[3]);
            let mut data = vec![F::zero(); xv.numel()];
            for i in 0..a {
                for j in 0..b {
                    for l in 0..c {
                        let src = ((i * b + j) * c + l) * d;
                        let dst = ((i * c + l) * b + j) * d;
                        data[dst..dst + d].copy_from_slice(&xv.data()[src..src + d]);
                    }
                }
            }
            Tensor::new(&[a, c, b, d], data)?
        };
        Ok(self.graph.push(out, Op::SwapAxes12 { x: self.id }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, F>> {
        let out = self.value().clone().reshape(shape)?;
        Ok(self.graph.push(out, Op::Reshape { x: self.id }))
    }

    /// First `len` entries along the leading axis.
    pub fn narrow(self, len: usize) -> Result<Var<'g, F>> {
        let out = {
            let xv = self.value();
            let s = xv.shape();
            if s.is_empty() || len > s[0] {
                return Err(Error::shape("narrow", s, &[len]));
            }
            let inner: usize = s[1..].iter().product();
            let mut shape = s.to_vec();
            shape[0] = len;
            Tensor::new(&shape, xv.data()[..len * inner].to_vec())?
        };
        Ok(self.graph.push(out, Op::Narrow { x: self.id }))
    }

    /// Inverted dropout. Identity when `train` is false or `p` is zero.
    pub fn dropout(self, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var<'g, F>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::validation("dropout", format!("p = {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self);
        }
        let keep = F::lit(1.0 / (1.0 - p));
        let (out, mask) = {
            let xv = self.value();
            let mask: Vec<F> = (0..xv.numel())
                .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
                .collect();
            let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Tensor::new(xv.shape(), data)?, mask)
        };
        Ok(self.graph.push(out, Op::Dropout { x: self.id, mask }))
    }

    pub fn sum(self) -> Var<'g, F> {
        let s = self.value().data().iter().copied().sum::<F>();
        self.graph.push(Tensor::scalar(s), Op::Sum { x: self.id })
    }
}

/// Stack equally shaped tensors along a new axis inserted at `axis`.
pub fn stack<'g, F: Real>(xs: &[Var<'g, F>], axis: usize) -> Result<Var<'g, F>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Contract("stack of zero tensors".into()))?;
    let graph = first.graph;
    let out = {
        let shape = first.shape();
        if axis > shape.len() {
            return Err(Error::shape("stack", &shape, &[axis]));
        }
        let inner: usize = shape[axis..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = vec![F::zero(); outer * xs.len() * inner];
        for (i, x) in xs.iter().enumerate() {
            first.same_graph(x)?;
            let xv = x.value();
            if xv.shape() != shape.as_slice() {
                return Err(Error::shape("stack", &shape, xv.shape()));
            }
            for o in 0..outer {
                let dst = (o * xs.len() + i) * inner;
                data[dst..dst + inner].copy_from_slice(&xv.data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape[..axis].to_vec();
        out_shape.push(xs.len());
        out_shape.extend_from_slice(&shape[axis..]);
        Tensor::new(&out_shape, data)?
    };
    Ok(graph.push(
        out,
        Op::Stack {
            xs: xs.iter().map(|x| x.id).collect(),
            axis,
        },
    ))
}

/// `softmax(q·kᵀ/√d)·v` over `B×H×T×d` inputs (keys/values may have a
/// different sequence length than queries).
pub fn scaled_dot_attention<'g, F: Real>(q: Var<'g, F>, k: Var<'g, F>, v: Var<'g, F>) -> Result<Var<'g, F>> {
    q.same_graph(&k)?;
    q.same_graph(&v)?;
    let (out, probs) = {
        let qv = q.value();
        let kv = k.value();
        let vv = v.value();
        let (qs, ks, vs) = (qv.shape(), kv.shape(), vv.shape());
        if qs.len() != 4 || ks.len() != 4 || ks != vs || qs[..2] != ks[..2] || qs[3] != ks[3] {
            return Err(Error::shape("attention", qs, ks));
        }
        let (heads, t, d) = (qs[0] * qs[1], qs[2], qs[3]);
        let sk = ks[2];
        let scale = F::one() / F::lit(d as f64).sqrt();
        let mut scores = vec![F::zero(); heads * t * sk];
        for h in 0..heads {
            for i in 0..t {
                let qrow = &qv.data()[(h * t + i) * d..(h * t + i + 1) * d];
                for j in 0..sk {
                    let krow = &kv.data()[(h * sk + j) * d..(h * sk + j + 1) * d];
                    scores[(h * t + i) * sk + j] = dot(qrow, krow) * scale;
                }
            }
        }
        let probs = softmax_rows(&scores, sk.max(1));
        let mut data = vec![F::zero(); heads * t * d];
        for h in 0..heads {
            for i in 0..t {
                let orow = &mut data[(h * t + i) * d..(h * t + i + 1) * d];
                for j in 0..sk {
                    let p = probs[(h * t + i) * sk + j];
                    axpy(p, &vv.data()[(h * sk + j) * d..(h * sk + j + 1) * d], orow);
                }
            }
        }
        (Tensor::new(qs, data)?, probs)
    };
    Ok(q.graph.push(
        out,
        Op::Attention {
            q: q.id,
            k: k.id,
            v: v.id,
            probs,
        },
    ))
}

/// Weighted sum over routes: `routes` is `…×N×E`, `weights` is `…×N`,
/// the result is `…×E`.
pub fn combine<'g, F: Real>(routes: Var<'g, F>, weights: Var<'g, F>) -> Result<Var<'g, F>> {
    routes.same_graph(&weights)?;
    let out = {
        let rv = routes.value();
        let wv = weights.value();
        let (rs, ws) = (rv.shape(), wv.shape());
        if rs.len() < 2 || rs[..rs.len() - 1] != *ws {
            return Err(Error::shape("combine", rs, ws));
        }
        let e = rv.last_dim();
        let nf = wv.last_dim();
        let rows = wv.numel() / nf.max(1);
        let mut data = vec![F::zero(); rows * e];
        for r in 0..rows {
            let orow = &mut data[r * e..(r + 1) * e];
            for f in 0..nf {
                let base = (r * nf + f) * e;
                axpy(wv.data()[r * nf + f], &rv.data()[base..base + e], orow);
            }
        }
        let mut shape = ws.to_vec();
        *shape.last_mut().unwrap() = e;
        Tensor::new(&shape, data)?
    };
    Ok(routes.graph.push(
        out,
        Op::Combine {
            routes: routes.id,
            weights: weights.id,
        },
    ))
}

/// Mean elementwise Huber loss with threshold `delta`.
pub fn huber_loss<'g, F: Real>(pred: Var<'g, F>, target: Var<'g, F>, delta: F) -> Result<Var<'g, F>> {
    pred.same_graph(&target)?;
    if delta <= F::zero() {
        return Err(Error::validation("huber_delta", "must be positive"));
    }
    let out = {
        let p = pred.value();
        let t = target.value();
        if p.shape() != t.shape() || p.numel() == 0 {
            return Err(Error::shape("huber_loss", p.shape(), t.shape()));
        }
        let half = F::lit(0.5);
        let total: F = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| {
                let e = (a - b).abs();
                if e <= delta {
                    half * e * e
                } else {
                    delta * (e - half * delta)
                }
            })
            .sum();
        Tensor::scalar(total / F::lit(p.numel() as f64))
    };
    Ok(pred.graph.push(
        out,
        Op::Huber {
            pred: pred.id,
            target: target.id,
            delta,
        },
    ))
}

#[cfg(test)]
mod tests;
