use crate::config::RunConfig;
use crate::nn::layers::{fourier_features, LayerNorm, Linear, SelfBlock};
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::sampling::FeatureSet;
use crate::sparse_grid::{centroid, voxelize, Coord};

use super::VaeError;

/// Per-point shared MLP, per-voxel mean pooling, then a sparse transformer.
#[derive(Debug, Clone)]
pub struct Encoder {
    point1: Linear,
    point2: Linear,
    lift: Linear,
    pos: Linear,
    blocks: Vec<SelfBlock>,
    norm: LayerNorm,
    head: Linear,
    channels: usize,
    frequencies: usize,
    resolution: u32,
}

/// Graph handles produced by one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub coords: Vec<Coord>,
    /// Mean-pooled point features before any cross-voxel mixing.
    pub pooled: Var,
    pub mu: Var,
    pub logvar: Var,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, seed: u64) -> Self {
        let fw = cfg.variant.width();
        let pw = cfg.pointnet_width;
        let d = cfg.width;
        Self {
            point1: Linear::new(store, "enc.point1", fw, pw, seed),
            point2: Linear::new(store, "enc.point2", pw, pw, seed),
            lift: Linear::new(store, "enc.lift", pw, d, seed),
            pos: Linear::no_bias(store, "enc.pos", 6 * cfg.frequencies, d, seed),
            blocks: (0..cfg.encoder_blocks)
                .map(|i| SelfBlock::new(store, &format!("enc.block{i}"), cfg.block(), seed))
                .collect(),
            norm: LayerNorm::new(store, "enc.norm", d),
            head: Linear::with_gain(store, "enc.head", d, 2 * cfg.channels, 0.5, seed),
            channels: cfg.channels,
            frequencies: cfg.frequencies,
            resolution: cfg.base_resolution,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        features: &FeatureSet,
    ) -> Result<EncoderOutput, VaeError> {
        if features.coords.is_empty() {
            return Err(VaeError::EmptyInput);
        }
        if features
            .coords
            .iter()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(VaeError::OutOfUnitCube);
        }
        let grid = voxelize(&features.coords, self.resolution);
        let coords = grid.coords();
        let mut seg = vec![0usize; features.coords.len()];
        for (v, (_, members)) in grid.iter().enumerate() {
            for &k in members {
                seg[k] = v;
            }
        }
        let x = g.input(Tensor::from_vec(
            features.coords.len(),
            features.width(),
            features.features.clone(),
        ));
        let h = self.point1.forward(g, store, x);
        let h = g.silu(h);
        let h = self.point2.forward(g, store, h);
        let pooled = g.segment_mean(h, &seg, coords.len());

        let h = self.lift.forward(g, store, pooled);
        let centers: Vec<_> = coords
            .iter()
            .map(|&c| centroid(c, self.resolution))
            .collect();
        let pe = g.input(fourier_features(&centers, self.frequencies));
        let pe = self.pos.forward(g, store, pe);
        let mut h = g.add(h, pe);
        for block in &self.blocks {
            h = block.forward(g, store, h);
        }
        let h = self.norm.forward(g, store, h);
        let out = self.head.forward(g, store, h);
        let mu = g.slice_cols(out, 0, self.channels);
        let logvar = g.slice_cols(out, self.channels, 2 * self.channels);
        Ok(EncoderOutput {
            coords,
            pooled,
            mu,
            logvar,
        })
    }
}
