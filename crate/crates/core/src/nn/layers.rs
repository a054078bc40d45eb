//! Parameterized building blocks recorded onto a [`Graph`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var, KERNEL_TAPS, NO_TAP};
use super::params::{ParamId, ParamStore};
use super::tensor::{self, Tensor};
use super::NnError;
use crate::geom::Point3;
use crate::sparse_grid::{pack, Coord};

/// Checked `y = xW + b`.
pub fn affine_map(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    if x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols() {
        return Err(NnError::Shape(format!(
            "affine map of {}x{} by {}x{} + {}x{}",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut y = tensor::matmul(x, w);
    for r in 0..y.rows() {
        for (o, bv) in y.row_mut(r).iter_mut().zip(b.row(0)) {
            *o += bv;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        seed: u64,
    ) -> Self {
        Self::with_gain(store, name, fan_in, fan_out, 1.0, seed)
    }

    pub fn with_gain(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        seed: u64,
    ) -> Self {
        let w = store.add_normal(
            &format!("{name}.w"),
            fan_in,
            fan_out,
            gain / (fan_in as f64).sqrt(),
            seed,
        );
        let b = store.add_full(&format!("{name}.b"), 1, fan_out, 0.0);
        Self {
            w,
            b: Some(b),
            fan_in,
            fan_out,
        }
    }

    pub fn no_bias(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        seed: u64,
    ) -> Self {
        let w = store.add_normal(
            &format!("{name}.w"),
            fan_in,
            fan_out,
            1.0 / (fan_in as f64).sqrt(),
            seed,
        );
        Self {
            w,
            b: None,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_bias(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add_full(&format!("{name}.gamma"), 1, width, 1.0),
            beta: store.add_full(&format!("{name}.beta"), 1, width, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Pre-norm residual wiring; when false the blocks skip normalization.
    pub prenorm: bool,
}

#[derive(Debug, Clone)]
struct Mlp {
    up: Linear,
    down: Linear,
}

impl Mlp {
    fn new(store: &mut ParamStore, name: &str, cfg: BlockConfig, seed: u64) -> Self {
        let hidden = cfg.width * cfg.mlp_ratio;
        Self {
            up: Linear::new(store, &format!("{name}.up"), cfg.width, hidden, seed),
            down: Linear::with_gain(store, &format!("{name}.down"), hidden, cfg.width, 0.5, seed),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.up.forward(g, store, x);
        let h = g.silu(h);
        self.down.forward(g, store, h)
    }
}

fn maybe_norm(norm: &Option<LayerNorm>, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
    match norm {
        Some(n) => n.forward(g, store, x),
        None => x,
    }
}

/// Self-attention transformer block: `x += Attn(N(x))`, `x += MLP(N(x))`.
#[derive(Debug, Clone)]
pub struct SelfBlock {
    cfg: BlockConfig,
    norm1: Option<LayerNorm>,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm2: Option<LayerNorm>,
    mlp: Mlp,
}

impl SelfBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: BlockConfig, seed: u64) -> Self {
        let d = cfg.width;
        Self {
            cfg,
            norm1: cfg
                .prenorm
                .then(|| LayerNorm::new(store, &format!("{name}.norm1"), d)),
            q: Linear::new(store, &format!("{name}.q"), d, d, seed),
            k: Linear::new(store, &format!("{name}.k"), d, d, seed),
            v: Linear::new(store, &format!("{name}.v"), d, d, seed),
            out: Linear::with_gain(store, &format!("{name}.out"), d, d, 0.5, seed),
            norm2: cfg
                .prenorm
                .then(|| LayerNorm::new(store, &format!("{name}.norm2"), d)),
            mlp: Mlp::new(store, &format!("{name}.mlp"), cfg, seed),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = maybe_norm(&self.norm1, g, store, x);
        let q = self.q.forward(g, store, h);
        let k = self.k.forward(g, store, h);
        let v = self.v.forward(g, store, h);
        let a = g.attention(q, k, v, self.cfg.heads);
        let a = self.out.forward(g, store, a);
        let x = g.add(x, a);
        let h = maybe_norm(&self.norm2, g, store, x);
        let m = self.mlp.forward(g, store, h);
        g.add(x, m)
    }
}

/// Cross-attention block: queries from `x`, keys and values from `context`.
#[derive(Debug, Clone)]
pub struct CrossBlock {
    cfg: BlockConfig,
    norm_q: Option<LayerNorm>,
    norm_kv: Option<LayerNorm>,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    norm2: Option<LayerNorm>,
    mlp: Mlp,
}

impl CrossBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: BlockConfig, seed: u64) -> Self {
        let d = cfg.width;
        Self {
            cfg,
            norm_q: cfg
                .prenorm
                .then(|| LayerNorm::new(store, &format!("{name}.norm_q"), d)),
            norm_kv: cfg
                .prenorm
                .then(|| LayerNorm::new(store, &format!("{name}.norm_kv"), d)),
            q: Linear::new(store, &format!("{name}.q"), d, d, seed),
            k: Linear::new(store, &format!("{name}.k"), d, d, seed),
            v: Linear::new(store, &format!("{name}.v"), d, d, seed),
            out: Linear::with_gain(store, &format!("{name}.out"), d, d, 0.5, seed),
            norm2: cfg
                .prenorm
                .then(|| LayerNorm::new(store, &format!("{name}.norm2"), d)),
            mlp: Mlp::new(store, &format!("{name}.mlp"), cfg, seed),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, context: Var) -> Var {
        let hq = maybe_norm(&self.norm_q, g, store, x);
        let hc = maybe_norm(&self.norm_kv, g, store, context);
        let q = self.q.forward(g, store, hq);
        let k = self.k.forward(g, store, hc);
        let v = self.v.forward(g, store, hc);
        let a = g.attention(q, k, v, self.cfg.heads);
        let a = self.out.forward(g, store, a);
        let x = g.add(x, a);
        let h = maybe_norm(&self.norm2, g, store, x);
        let m = self.mlp.forward(g, store, h);
        g.add(x, m)
    }
}

/// Sparse 3×3×3 convolution with bias.
#[derive(Debug, Clone)]
pub struct SparseConv3 {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl SparseConv3 {
    pub fn new(store: &mut ParamStore, name: &str, din: usize, dout: usize, seed: u64) -> Self {
        let std = 0.5 / ((KERNEL_TAPS * din) as f64).sqrt();
        Self {
            kernel: store.add_normal(
                &format!("{name}.kernel"),
                KERNEL_TAPS * din,
                dout,
                std,
                seed,
            ),
            bias: store.add_full(&format!("{name}.bias"), 1, dout, 0.0),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        taps: &[[u32; KERNEL_TAPS]],
    ) -> Var {
        let k = g.param(store, self.kernel);
        let y = g.sparse_conv(x, k, taps);
        let b = g.param(store, self.bias);
        g.add_bias(y, b)
    }
}

/// Index of offset `d ∈ {-1,0,1}³` in the kernel, lexicographic in `(dx, dy, dz)`.
pub fn tap_index(d: [i32; 3]) -> usize {
    ((d[0] + 1) * 9 + (d[1] + 1) * 3 + (d[2] + 1)) as usize
}

/// Neighbor table for [`Graph::sparse_conv`] over the voxels `coords`.
pub fn conv_taps(coords: &[Coord]) -> Vec<[u32; KERNEL_TAPS]> {
    let index: HashMap<u64, u32> = coords
        .iter()
        .enumerate()
        .map(|(i, &c)| (pack(c), i as u32))
        .collect();
    coords
        .iter()
        .map(|&c| {
            let mut taps = [NO_TAP; KERNEL_TAPS];
            for dx in -1..=1i32 {
                for dy in -1..=1i32 {
                    for dz in -1..=1i32 {
                        let n = [
                            c[0] as i64 + dx as i64,
                            c[1] as i64 + dy as i64,
                            c[2] as i64 + dz as i64,
                        ];
                        if n.iter().any(|&v| v < 0) {
                            continue;
                        }
                        let key = pack([n[0] as u32, n[1] as u32, n[2] as u32]);
                        if let Some(&row) = index.get(&key) {
                            taps[tap_index([dx, dy, dz])] = row;
                        }
                    }
                }
            }
            taps
        })
        .collect()
}

/// Fixed sinusoidal features of positions in the unit cube.
pub fn fourier_features(points: &[Point3], frequencies: usize) -> Tensor {
    let width = 6 * frequencies;
    let mut out = Tensor::zeros(points.len(), width);
    for (r, p) in points.iter().enumerate() {
        let row = out.row_mut(r);
        for f in 0..frequencies {
            let w = std::f64::consts::PI * (1u64 << f) as f64;
            for (k, &v) in p.iter().enumerate() {
                row[6 * f + 2 * k] = (w * v).sin();
                row[6 * f + 2 * k + 1] = (w * v).cos();
            }
        }
    }
    out
}
