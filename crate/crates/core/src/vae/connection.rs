use crate::config::RunConfig;
use crate::nn::graph::sigmoid;
use crate::nn::layers::{CrossBlock, Linear};
use crate::nn::{Graph, ParamId, ParamStore, Tensor, Var};

/// Pairwise edge classifier over decoded vertex features.
///
/// The first MLP layer on `h_i ⊕ h_j` is split as `h_i·W_a + h_j·W_b + b₁`,
/// so the per-vertex projections are computed once and shared by all pairs.
#[derive(Debug, Clone)]
pub struct ConnectionHead {
    cross: CrossBlock,
    left: Linear,
    right: Linear,
    bias: ParamId,
    out: Linear,
}

impl ConnectionHead {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, seed: u64) -> Self {
        let d = cfg.width;
        Self {
            cross: CrossBlock::new(store, "conn.cross", cfg.block(), seed),
            left: Linear::no_bias(store, "conn.left", d, d, seed),
            right: Linear::no_bias(store, "conn.right", d, d, seed),
            bias: store.add_full("conn.bias", 1, d, 0.0),
            out: Linear::new(store, "conn.out", d, 1, seed),
        }
    }

    /// Cross-attends vertices to the latent context and returns `(A, B)` projections.
    pub fn project(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        vertices: Var,
        context: Var,
    ) -> (Var, Var) {
        let h = self.cross.forward(g, store, vertices, context);
        (
            self.left.forward(g, store, h),
            self.right.forward(g, store, h),
        )
    }

    fn one_order(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        a: Var,
        b: Var,
        first: &[usize],
        second: &[usize],
    ) -> Var {
        let ai = g.gather(a, first);
        let bj = g.gather(b, second);
        let s = g.add(ai, bj);
        let b1 = g.param(store, self.bias);
        let s = g.add_bias(s, b1);
        let s = g.silu(s);
        self.out.forward(g, store, s)
    }

    /// Symmetrized logits, one row per pair.
    pub fn pair_logits(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        a: Var,
        b: Var,
        pairs: &[(usize, usize)],
    ) -> Var {
        let is: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let js: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let forward = self.one_order(g, store, a, b, &is, &js);
        let backward = self.one_order(g, store, a, b, &js, &is);
        let both = g.add(forward, backward);
        g.scale(both, 0.5)
    }

    /// Frozen weights for scoring many pairs outside a graph.
    pub fn scorer(&self, store: &ParamStore, a: Tensor, b: Tensor) -> PairLogits {
        PairLogits {
            a,
            b,
            bias: store.get(self.bias).value.row(0).to_vec(),
            w2: store.get(self.out.w).value.data().to_vec(),
            b2: self
                .out
                .b
                .map(|id| store.get(id).value.item())
                .unwrap_or(0.0),
        }
    }
}

/// Graph-free evaluation of [`ConnectionHead::pair_logits`].
#[derive(Debug, Clone)]
pub struct PairLogits {
    a: Tensor,
    b: Tensor,
    bias: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl PairLogits {
    pub fn vertex_count(&self) -> usize {
        self.a.rows()
    }

    fn ordered(&self, i: usize, j: usize) -> f64 {
        let (ai, bj) = (self.a.row(i), self.b.row(j));
        let mut acc = 0.0;
        for k in 0..self.bias.len() {
            let s = ai[k] + bj[k] + self.bias[k];
            acc += s * sigmoid(s) * self.w2[k];
        }
        acc + self.b2
    }

    pub fn logit(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.ordered(i, j) + self.ordered(j, i))
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        sigmoid(self.logit(i, j))
    }
}
