//! A reverse-mode tape over a fixed set of layer operations.
//!
//! Forward values are computed eagerly when a node is recorded; `backward`
//! walks the tape once in reverse and accumulates parameter gradients into
//! the [`ParamStore`]. All reductions run in index order, so results do not
//! depend on scheduling.

use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{self, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Marks an absent tap in a sparse convolution neighbor table.
pub const NO_TAP: u32 = u32::MAX;
pub const KERNEL_TAPS: usize = 27;

const LN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Tensor>,
    },
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        seg: Vec<usize>,
        counts: Vec<usize>,
    },
    SparseConv {
        x: Var,
        kernel: Var,
        taps: Vec<[u32; KERNEL_TAPS]>,
    },
    ConcatCols(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    Reparam {
        mu: Var,
        logvar: Var,
        eps: Tensor,
    },
    BceLogits {
        logits: Var,
        targets: Vec<f64>,
    },
    Asymmetric {
        logits: Var,
        targets: Vec<f64>,
        gamma_pos: f64,
        gamma_neg: f64,
    },
    Kl {
        mu: Var,
        logvar: Var,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: BTreeMap<ParamId, Var>,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// Records a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id), &[]);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = tensor::matmul(self.value(a), self.value(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Adds a `1×m` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(b));
        assert_eq!(bv.rows(), 1, "bias must be a single row");
        assert_eq!(
            xv.cols(),
            bv.cols(),
            "bias width {} vs input width {}",
            bv.cols(),
            xv.cols()
        );
        let mut out = xv.clone();
        let brow = bv.row(0).to_vec();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(&brow) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, b), &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let (g, b) = (
            self.value(gamma).row(0).to_vec(),
            self.value(beta).row(0).to_vec(),
        );
        assert_eq!(g.len(), d, "layer norm width");
        let mut xhat = Tensor::zeros(n, d);
        let mut out = Tensor::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(s);
            for c in 0..d {
                let h = (row[c] - mean) * s;
                xhat.set(r, c, h);
                out.set(r, c, h * g[c] + b[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Multi-head `softmax(Q Kᵀ / √d_h) V`, heads split across columns.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert!(kv.rows() > 0, "attention over an empty key set");
        assert_eq!(qv.cols(), kv.cols(), "query/key width");
        assert_eq!(kv.rows(), vv.rows(), "key/value count");
        assert!(
            heads > 0 && qv.cols() % heads == 0 && vv.cols() % heads == 0,
            "head split"
        );
        let dh = qv.cols() / heads;
        let dv = vv.cols() / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Tensor::zeros(qv.rows(), vv.cols());
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = qv.slice_cols(h * dh, (h + 1) * dh);
            let kh = kv.slice_cols(h * dh, (h + 1) * dh);
            let vh = vv.slice_cols(h * dv, (h + 1) * dv);
            let mut p = tensor::matmul_bt(&qh, &kh);
            for r in 0..p.rows() {
                let row = p.row_mut(r);
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
                let mut total = 0.0;
                for s in row.iter_mut() {
                    *s = (*s * scale - max).exp();
                    total += *s;
                }
                for s in row.iter_mut() {
                    *s /= total;
                }
            }
            let oh = tensor::matmul(&p, &vh);
            for r in 0..out.rows() {
                out.row_mut(r)[h * dv..(h + 1) * dv].copy_from_slice(oh.row(r));
            }
            probs.push(p);
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        )
    }

    /// Attention probabilities of head `h` recorded at node `v`.
    pub fn attention_probs(&self, v: Var, h: usize) -> Option<&Tensor> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => probs.get(h),
            _ => None,
        }
    }

    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let out = self.value(x).gather_rows(idx);
        self.push(
            out,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            &[x],
        )
    }

    /// Mean of the rows assigned to each of `groups` segments. Every segment must be non-empty.
    pub fn segment_mean(&mut self, x: Var, seg: &[usize], groups: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(seg.len(), xv.rows(), "one segment id per row");
        let mut out = Tensor::zeros(groups, xv.cols());
        let mut counts = vec![0usize; groups];
        for (r, &s) in seg.iter().enumerate() {
            counts[s] += 1;
            for (o, v) in out.row_mut(s).iter_mut().zip(xv.row(r)) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            assert!(c > 0, "segment {s} is empty");
            let inv = 1.0 / c as f64;
            out.row_mut(s).iter_mut().for_each(|v| *v *= inv);
        }
        self.push(
            out,
            Op::SegmentMean {
                x,
                seg: seg.to_vec(),
                counts,
            },
            &[x],
        )
    }

    /// Sparse 3×3×3 convolution. `taps[r][t]` is the input row at offset `t`
    /// from output row `r`, or [`NO_TAP`]. The kernel is `(27·d_in)×d_out`.
    pub fn sparse_conv(&mut self, x: Var, kernel: Var, taps: &[[u32; KERNEL_TAPS]]) -> Var {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let din = xv.cols();
        assert_eq!(kv.rows(), KERNEL_TAPS * din, "kernel rows");
        let dout = kv.cols();
        let mut out = Tensor::zeros(taps.len(), dout);
        for (r, row_taps) in taps.iter().enumerate() {
            let orow = out.row_mut(r);
            for (t, &src) in row_taps.iter().enumerate() {
                if src == NO_TAP {
                    continue;
                }
                let xs = xv.row(src as usize);
                for (a, &xa) in xs.iter().enumerate() {
                    if xa == 0.0 {
                        continue;
                    }
                    for (o, w) in orow.iter_mut().zip(kv.row(t * din + a)) {
                        *o += xa * w;
                    }
                }
            }
        }
        self.push(
            out,
            Op::SparseConv {
                x,
                kernel,
                taps: taps.to_vec(),
            },
            &[x, kernel],
        )
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat row count");
        let mut out = Tensor::zeros(av.rows(), av.cols() + bv.cols());
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let out = self.value(x).slice_cols(start, end);
        self.push(out, Op::SliceCols { x, start }, &[x])
    }

    /// `μ + exp(½·logσ²) ⊙ ε` with `ε` fixed.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Tensor) -> Var {
        let (m, lv) = (self.value(mu), self.value(logvar));
        assert_eq!(m.shape(), lv.shape());
        assert_eq!(m.shape(), eps.shape());
        let data = m
            .data()
            .iter()
            .zip(lv.data())
            .zip(eps.data())
            .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
            .collect();
        let out = Tensor::from_vec(m.rows(), m.cols(), data);
        self.push(out, Op::Reparam { mu, logvar, eps }, &[mu, logvar])
    }

    /// Mean binary cross-entropy of sigmoid(logits) against targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len(), "one target per logit");
        let n = targets.len().max(1) as f64;
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| bce_logit(x, t))
            .sum();
        self.push(
            Tensor::scalar(total / n),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    /// Mean asymmetric focal loss over logits.
    pub fn asymmetric(
        &mut self,
        logits: Var,
        targets: &[f64],
        gamma_pos: f64,
        gamma_neg: f64,
    ) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len(), "one target per logit");
        let n = targets.len().max(1) as f64;
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| asymmetric_logit(x, t, gamma_pos, gamma_neg).0)
            .sum();
        self.push(
            Tensor::scalar(total / n),
            Op::Asymmetric {
                logits,
                targets: targets.to_vec(),
                gamma_pos,
                gamma_neg,
            },
            &[logits],
        )
    }

    /// KL to the standard normal, summed over channels and averaged over rows.
    pub fn kl_standard_normal(&mut self, mu: Var, logvar: Var) -> Var {
        let (m, lv) = (self.value(mu), self.value(logvar));
        assert_eq!(m.shape(), lv.shape());
        let rows = m.rows().max(1) as f64;
        let total: f64 = m
            .data()
            .iter()
            .zip(lv.data())
            .map(|(&m, &l)| kl_term(m, l))
            .sum();
        self.push(
            Tensor::scalar(total / rows),
            Op::Kl { mu, logvar },
            &[mu, logvar],
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "mse shapes");
        let n = pv.len().max(1) as f64;
        let total: f64 = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        self.push(Tensor::scalar(total / n), Op::Mse { pred, target }, &[pred])
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let mut total = 0.0;
        for &(v, w) in terms {
            total += w * self.value(v).item();
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(
            Tensor::scalar(total),
            Op::WeightedSum(terms.to_vec()),
            &inputs,
        )
    }

    /// Back-propagates from the scalar `root`, adding into `store` gradients.
    pub fn backward(&self, root: Var, store: &mut ParamStore) {
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &dy, &mut grads, store);
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(
        &self,
        node: &Node,
        dy: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) {
        let mut acc = |v: Var, g: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(dy),
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    acc(*a, tensor::matmul_bt(dy, self.value(*b)));
                }
                if self.wants(*b) {
                    acc(*b, tensor::matmul_at(self.value(*a), dy));
                }
            }
            Op::AddBias(x, b) => {
                acc(*x, dy.clone());
                if self.wants(*b) {
                    let mut db = Tensor::zeros(1, dy.cols());
                    for r in 0..dy.rows() {
                        for (o, g) in db.row_mut(0).iter_mut().zip(dy.row(r)) {
                            *o += g;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, dy.clone());
                acc(*b, dy.clone());
            }
            Op::Scale(a, s) => acc(*a, dy.map(|g| g * s)),
            Op::Silu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                acc(*x, Tensor::from_vec(xv.rows(), xv.cols(), data));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, d) = xhat.shape();
                let g = self.value(*gamma).row(0);
                let mut dgamma = Tensor::zeros(1, d);
                let mut dbeta = Tensor::zeros(1, d);
                let mut dx = Tensor::zeros(n, d);
                for r in 0..n {
                    let (hrow, grow) = (xhat.row(r), dy.row(r));
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..d {
                        let dh = grow[c] * g[c];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[c];
                        dgamma.row_mut(0)[c] += grow[c] * hrow[c];
                        dbeta.row_mut(0)[c] += grow[c];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    let out = dx.row_mut(r);
                    for c in 0..d {
                        let dh = grow[c] * g[c];
                        out[c] = inv_std[r] * (dh - mean_dh - hrow[c] * mean_dh_h);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let dh = qv.cols() / heads;
                let dvw = vv.cols() / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut dq = Tensor::zeros(qv.rows(), qv.cols());
                let mut dk = Tensor::zeros(kv.rows(), kv.cols());
                let mut dv = Tensor::zeros(vv.rows(), vv.cols());
                for (h, p) in probs.iter().enumerate() {
                    let qh = qv.slice_cols(h * dh, (h + 1) * dh);
                    let kh = kv.slice_cols(h * dh, (h + 1) * dh);
                    let vh = vv.slice_cols(h * dvw, (h + 1) * dvw);
                    let doh = dy.slice_cols(h * dvw, (h + 1) * dvw);
                    let dvh = tensor::matmul_at(p, &doh);
                    let mut ds = tensor::matmul_bt(&doh, &vh);
                    for r in 0..ds.rows() {
                        let prow = p.row(r);
                        let drow = ds.row_mut(r);
                        let inner = tensor::dot(prow, drow);
                        for (dsv, &pv) in drow.iter_mut().zip(prow) {
                            *dsv = pv * (*dsv - inner) * scale;
                        }
                    }
                    let dqh = tensor::matmul(&ds, &kh);
                    let dkh = tensor::matmul_at(&ds, &qh);
                    for r in 0..dq.rows() {
                        dq.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(dqh.row(r));
                    }
                    for r in 0..dk.rows() {
                        dk.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(dkh.row(r));
                        dv.row_mut(r)[h * dvw..(h + 1) * dvw].copy_from_slice(dvh.row(r));
                    }
                }
                // q, k and v may alias (self-attention on one projection).
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Gather { x, idx } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for (o, &i) in idx.iter().enumerate() {
                    for (d, g) in dx.row_mut(i).iter_mut().zip(dy.row(o)) {
                        *d += g;
                    }
                }
                acc(*x, dx);
            }
            Op::SegmentMean { x, seg, counts } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for (r, &s) in seg.iter().enumerate() {
                    let inv = 1.0 / counts[s] as f64;
                    for (d, g) in dx.row_mut(r).iter_mut().zip(dy.row(s)) {
                        *d = g * inv;
                    }
                }
                acc(*x, dx);
            }
            Op::SparseConv { x, kernel, taps } => {
                let (xv, kv) = (self.value(*x), self.value(*kernel));
                let din = xv.cols();
                let want_x = self.wants(*x);
                let want_k = self.wants(*kernel);
                let mut dx = Tensor::zeros(xv.rows(), din);
                let mut dk = Tensor::zeros(kv.rows(), kv.cols());
                for (r, row_taps) in taps.iter().enumerate() {
                    let grow = dy.row(r);
                    for (t, &src) in row_taps.iter().enumerate() {
                        if src == NO_TAP {
                            continue;
                        }
                        let src = src as usize;
                        for a in 0..din {
                            let wrow = kv.row(t * din + a);
                            if want_x {
                                let v = tensor::dot(wrow, grow);
                                dx.row_mut(src)[a] += v;
                            }
                            if want_k {
                                let xa = xv.get(src, a);
                                if xa != 0.0 {
                                    for (o, g) in dk.row_mut(t * din + a).iter_mut().zip(grow) {
                                        *o += xa * g;
                                    }
                                }
                            }
                        }
                    }
                }
                acc(*x, dx);
                acc(*kernel, dk);
            }
            Op::ConcatCols(a, b) => {
                let ac = self.value(*a).cols();
                acc(*a, dy.slice_cols(0, ac));
                acc(*b, dy.slice_cols(ac, dy.cols()));
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..dy.rows() {
                    dx.row_mut(r)[*start..*start + dy.cols()].copy_from_slice(dy.row(r));
                }
                acc(*x, dx);
            }
            Op::Reparam { mu, logvar, eps } => {
                acc(*mu, dy.clone());
                let lv = self.value(*logvar);
                let data = lv
                    .data()
                    .iter()
                    .zip(eps.data())
                    .zip(dy.data())
                    .map(|((&l, &e), &g)| g * e * 0.5 * (0.5 * l).exp())
                    .collect();
                acc(*logvar, Tensor::from_vec(lv.rows(), lv.cols(), data));
            }
            Op::BceLogits { logits, targets } => {
                let g = dy.item() / targets.len().max(1) as f64;
                let lv = self.value(*logits);
                let data = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &t)| g * (sigmoid(x) - t))
                    .collect();
                acc(*logits, Tensor::from_vec(lv.rows(), lv.cols(), data));
            }
            Op::Asymmetric {
                logits,
                targets,
                gamma_pos,
                gamma_neg,
            } => {
                let g = dy.item() / targets.len().max(1) as f64;
                let lv = self.value(*logits);
                let data = lv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &t)| g * asymmetric_logit(x, t, *gamma_pos, *gamma_neg).1)
                    .collect();
                acc(*logits, Tensor::from_vec(lv.rows(), lv.cols(), data));
            }
            Op::Kl { mu, logvar } => {
                let (m, lv) = (self.value(*mu), self.value(*logvar));
                let g = dy.item() / m.rows().max(1) as f64;
                acc(*mu, m.map(|v| g * v));
                acc(*logvar, lv.map(|l| g * 0.5 * (l.exp() - 1.0)));
            }
            Op::Mse { pred, target } => {
                let pv = self.value(*pred);
                let g = dy.item() * 2.0 / pv.len().max(1) as f64;
                let data = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| g * (p - t))
                    .collect();
                acc(*pred, Tensor::from_vec(pv.rows(), pv.cols(), data));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(v, Tensor::scalar(w * dy.item()));
                }
            }
        }
    }
}

/// BCE of `sigmoid(x)` against `t`, in log-sum-exp form.
#[inline]
pub fn bce_logit(x: f64, t: f64) -> f64 {
    softplus(x) - t * x
}

/// Asymmetric loss and its derivative with respect to the logit `x`.
///
/// Positive term `-(1-p)^γ₊ log p`, negative term `-p^γ₋ log(1-p)`.
pub fn asymmetric_logit(x: f64, t: f64, gamma_pos: f64, gamma_neg: f64) -> (f64, f64) {
    let p = sigmoid(x);
    let q = sigmoid(-x);
    let log_p = -softplus(-x);
    let log_q = -softplus(x);
    let wp = q.powf(gamma_pos);
    let wn = p.powf(gamma_neg);
    let loss = -(t * wp * log_p + (1.0 - t) * wn * log_q);
    let dpos = gamma_pos * p * wp * log_p - q * wp;
    let dneg = -gamma_neg * q * wn * log_q + p * wn;
    (loss, t * dpos + (1.0 - t) * dneg)
}

#[inline]
pub fn kl_term(mu: f64, logvar: f64) -> f64 {
    0.5 * (mu * mu + logvar.exp() - 1.0 - logvar)
}
