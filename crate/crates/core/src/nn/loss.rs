//! Scalar loss terms and the reparameterization trick.

use super::graph::{asymmetric_logit, bce_logit, kl_term, sigmoid};
use super::tensor::Tensor;
use crate::rng;
use crate::sparse_grid::{pack, Coord};

/// Binary cross-entropy of `sigmoid(logit)` and its gradient `σ(logit) − target`.
pub fn sigmoid_bce(logit: f64, target: f64) -> (f64, f64) {
    (bce_logit(logit, target), sigmoid(logit) - target)
}

/// Asymmetric loss on `p̂ = sigmoid(logit)` and its gradient with respect to the logit.
pub fn asymmetric_loss(logit: f64, target: f64, gamma_pos: f64, gamma_neg: f64) -> (f64, f64) {
    asymmetric_logit(logit, target, gamma_pos, gamma_neg)
}

/// KL divergence of `N(μ, σ²)` from the unit normal, summed over columns and averaged over rows.
pub fn kl_diag_gaussian(mu: &Tensor, logvar: &Tensor) -> f64 {
    assert_eq!(mu.shape(), logvar.shape());
    let total: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(&m, &l)| kl_term(m, l))
        .sum();
    total / mu.rows().max(1) as f64
}

/// Standard-normal draws addressed by `(seed, stream, voxel, channel)`.
pub fn voxel_noise(coords: &[Coord], channels: usize, seed: u64, stream_id: u64) -> Tensor {
    let mut out = Tensor::zeros(coords.len(), channels);
    for (r, &c) in coords.iter().enumerate() {
        let mut g = rng::stream(seed, stream_id, pack(c));
        for v in out.row_mut(r) {
            *v = rng::normal(&mut g);
        }
    }
    out
}

/// `μ + exp(½·logσ²)·ε` with per-voxel counter-based noise.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, coords: &[Coord], seed: u64) -> Tensor {
    let eps = voxel_noise(coords, mu.cols(), seed, rng::streams::REPARAM);
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
        .collect();
    Tensor::from_vec(mu.rows(), mu.cols(), data)
}

/// The four VAE terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBundle {
    pub prune: f64,
    pub vtx: f64,
    pub conn: f64,
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn new(prune: f64, vtx: f64, conn: f64, kl: f64, beta: f64) -> Self {
        Self {
            prune,
            vtx,
            conn,
            kl,
            beta,
            total: prune + vtx + conn + beta * kl,
        }
    }
}
