//! Rectified-flow generation: dense structure occupancy, then sparse latent features.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::config::RunConfig;
use crate::geom::Point3;
use crate::graph_recovery::RecoveryError;
use crate::mesh_io::Mesh;
use crate::nn::layers::{fourier_features, BlockConfig, LayerNorm, Linear, SelfBlock};
use crate::nn::loss::voxel_noise;
use crate::nn::optim::{clip_grad_norm, cosine_lr, AdamW};
use crate::nn::{checkpoint, Graph, NnError, ParamStore, Tensor, Var};
use crate::rng;
use crate::sampling::sample_surface;
use crate::sparse_grid::{centroid, voxelize, Coord};
use crate::vae::{Reconstruction, TVoxels, Vae, VaeError};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("sampling needs at least one Euler step")]
    ZeroSteps,
    #[error("no training examples")]
    NoExamples,
    #[error("generation produced nothing at the {0} stage")]
    Empty(&'static str),
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("flow training diverged at step {step}; last finite loss {last_finite:?}")]
    Diverged {
        step: usize,
        last_finite: Option<f64>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Structure,
    Topology,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Structure => "structure",
            Stage::Topology => "topology",
        }
    }
}

/// `z_t = (1 − t)·z₀ + t·ε`.
pub fn interpolate(z0: &Tensor, eps: &Tensor, t: f64) -> Tensor {
    assert_eq!(z0.shape(), eps.shape());
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&a, &e)| (1.0 - t) * a + t * e)
        .collect();
    Tensor::from_vec(z0.rows(), z0.cols(), data)
}

/// Token transformer predicting velocities, conditioned on `(t, c_v)` through
/// a learned affine embedding added to every token before each block.
#[derive(Debug, Clone)]
pub struct VelocityNet {
    input: Linear,
    pos: Linear,
    cond: Linear,
    blocks: Vec<SelfBlock>,
    norm: LayerNorm,
    output: Linear,
    channels: usize,
    frequencies: usize,
}

impl VelocityNet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        block: BlockConfig,
        depth: usize,
        frequencies: usize,
        seed: u64,
    ) -> Self {
        let w = block.width;
        Self {
            input: Linear::new(store, &format!("{prefix}.input"), channels, w, seed),
            pos: Linear::no_bias(store, &format!("{prefix}.pos"), 6 * frequencies, w, seed),
            cond: Linear::new(store, &format!("{prefix}.cond"), 2, w, seed),
            blocks: (0..depth)
                .map(|i| SelfBlock::new(store, &format!("{prefix}.block{i}"), block, seed))
                .collect(),
            norm: LayerNorm::new(store, &format!("{prefix}.norm"), w),
            output: Linear::with_gain(store, &format!("{prefix}.output"), w, channels, 0.5, seed),
            channels,
            frequencies,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        positions: &[Point3],
        t: f64,
        cv: f64,
    ) -> Var {
        let h = self.input.forward(g, store, x);
        let pe = g.input(fourier_features(positions, self.frequencies));
        let pe = self.pos.forward(g, store, pe);
        let mut h = g.add(h, pe);
        let c = g.input(Tensor::from_rows(&[vec![t, cv]]));
        let c = self.cond.forward(g, store, c);
        for block in &self.blocks {
            h = g.add_bias(h, c);
            h = block.forward(g, store, h);
        }
        let h = self.norm.forward(g, store, h);
        self.output.forward(g, store, h)
    }
}

/// One clean training target: token coordinates, their positions, `z₀` and the condition.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowExample {
    pub coords: Vec<Coord>,
    pub positions: Vec<Point3>,
    pub z0: Tensor,
    pub cv: f64,
}

/// `‖v_θ(z_t, t, c_v) − (ε − z₀)‖²` averaged over tokens and channels.
pub fn tflow_loss(
    g: &mut Graph,
    net: &VelocityNet,
    store: &ParamStore,
    ex: &FlowExample,
    eps: &Tensor,
    t: f64,
) -> Var {
    let zt = g.input(interpolate(&ex.z0, eps, t));
    let pred = net.forward(g, store, zt, &ex.positions, t, ex.cv);
    let mut target = eps.clone();
    target.add_scaled(&ex.z0, -1.0);
    g.mse(pred, target)
}

/// A velocity field over a fixed token set.
pub trait VelocityField {
    fn velocity(&self, z: &Tensor, t: f64) -> Tensor;
}

/// Euler integration from `t = 1` (noise) down to `t = 0`.
pub fn euler_sample(
    field: &dyn VelocityField,
    noise: Tensor,
    steps: usize,
) -> Result<Tensor, FlowError> {
    if steps == 0 {
        return Err(FlowError::ZeroSteps);
    }
    let dt = 1.0 / steps as f64;
    let mut z = noise;
    for i in 0..steps {
        let t = (steps - i) as f64 / steps as f64;
        let v = field.velocity(&z, t);
        z.add_scaled(&v, -dt);
    }
    Ok(z)
}

/// Trained network bound to a token set and condition.
pub struct NetField<'a> {
    pub net: &'a VelocityNet,
    pub store: &'a ParamStore,
    pub positions: &'a [Point3],
    pub cv: f64,
}

impl VelocityField for NetField<'_> {
    fn velocity(&self, z: &Tensor, t: f64) -> Tensor {
        let mut g = Graph::new();
        let x = g.input(z.clone());
        let v = self
            .net
            .forward(&mut g, self.store, x, self.positions, t, self.cv);
        g.value(v).clone()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FlowReport {
    pub trace: Vec<f64>,
    pub steps_run: usize,
}

/// A velocity network with its parameters and stage.
#[derive(Debug, Clone)]
pub struct FlowModel {
    pub stage: Stage,
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub net: VelocityNet,
}

impl FlowModel {
    pub fn new(stage: Stage, cfg: &RunConfig) -> Self {
        let mut store = ParamStore::new();
        let (channels, width) = match stage {
            Stage::Structure => ((cfg.structure_patch as usize).pow(3), cfg.structure_width),
            Stage::Topology => (cfg.channels, cfg.flow_width),
        };
        let block = BlockConfig {
            width,
            heads: cfg.flow_heads,
            mlp_ratio: cfg.mlp_ratio,
            prenorm: true,
        };
        let net = VelocityNet::new(
            &mut store,
            stage.name(),
            channels,
            block,
            cfg.flow_blocks,
            cfg.frequencies,
            cfg.seed,
        );
        Self {
            stage,
            cfg: cfg.clone(),
            store,
            net,
        }
    }

    pub fn load(stage: Stage, cfg: &RunConfig, bytes: &[u8]) -> Result<Self, FlowError> {
        let mut m = Self::new(stage, cfg);
        checkpoint::load_into(&mut m.store, bytes)?;
        Ok(m)
    }

    pub fn save(&self) -> Vec<u8> {
        checkpoint::encode(&self.store)
    }

    /// Mean loss over `flow_batch` draws; accumulates gradients into the store.
    pub fn loss_step(&mut self, examples: &[FlowExample], step: usize) -> f64 {
        let b = self.cfg.flow_batch;
        let seed = self.cfg.seed;
        self.store.zero_grad();
        let mut total = 0.0;
        for k in 0..b {
            let draw = (step * b + k) as u64;
            let ex = &examples[draw as usize % examples.len()];
            let t = rng::uniform(&mut rng::stream(seed, rng::streams::FLOW_TIME, draw));
            let eps = voxel_noise(
                &ex.coords,
                ex.z0.cols(),
                rng::mix(seed, draw),
                rng::streams::FLOW_NOISE,
            );
            let mut g = Graph::new();
            let l = tflow_loss(&mut g, &self.net, &self.store, ex, &eps, t);
            let l = g.weighted_sum(&[(l, 1.0 / b as f64)]);
            total += g.value(l).item();
            if total.is_finite() {
                g.backward(l, &mut self.store);
            }
        }
        total
    }

    /// AdamW over `cfg.flow_steps`; `monitor` may stop early by returning `true`.
    pub fn train(
        &mut self,
        examples: &[FlowExample],
        mut monitor: impl FnMut(usize, &FlowModel, f64) -> bool,
    ) -> Result<FlowReport, FlowError> {
        if examples.is_empty() {
            return Err(FlowError::NoExamples);
        }
        let steps = self.cfg.flow_steps;
        let mut opt = AdamW::new(&self.store, 0.9, 0.999, self.cfg.weight_decay);
        let mut report = FlowReport::default();
        for step in 0..steps {
            let loss = self.loss_step(examples, step);
            if !loss.is_finite() || !self.store.grad_norm().is_finite() {
                return Err(FlowError::Diverged {
                    step,
                    last_finite: report.trace.last().copied(),
                });
            }
            clip_grad_norm(&mut self.store, self.cfg.grad_clip);
            opt.step(
                &mut self.store,
                cosine_lr(step, steps, self.cfg.flow_lr_max, self.cfg.flow_lr_min),
            );
            report.trace.push(loss);
            report.steps_run = step + 1;
            if monitor(step, self, loss) {
                break;
            }
        }
        Ok(report)
    }

    /// Euler-samples features for `coords` from voxel-addressed noise.
    pub fn sample(
        &self,
        coords: &[Coord],
        positions: &[Point3],
        cv: f64,
        steps: usize,
        seed: u64,
    ) -> Result<Tensor, FlowError> {
        let noise = voxel_noise(
            coords,
            self.net.channels(),
            seed,
            rng::streams::SAMPLE_NOISE,
        );
        let field = NetField {
            net: &self.net,
            store: &self.store,
            positions,
            cv,
        };
        euler_sample(&field, noise, steps)
    }
}

/// Patch layout of the dense structure grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patchify {
    pub resolution: u32,
    pub patch: u32,
}

impl Patchify {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            resolution: cfg.base_resolution,
            patch: cfg.structure_patch,
        }
    }

    pub fn per_axis(&self) -> u32 {
        self.resolution / self.patch
    }

    pub fn token_coords(&self) -> Vec<Coord> {
        let n = self.per_axis();
        let mut out = Vec::with_capacity((n * n * n) as usize);
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    pub fn token_positions(&self) -> Vec<Point3> {
        self.token_coords()
            .into_iter()
            .map(|c| centroid(c, self.per_axis()))
            .collect()
    }

    fn cell(&self, token: Coord, k: usize) -> Coord {
        let p = self.patch;
        let k = k as u32;
        [
            token[0] * p + k / (p * p),
            token[1] * p + (k / p) % p,
            token[2] * p + k % p,
        ]
    }

    /// Dense `±1` tokens for the occupied voxel set.
    pub fn encode(&self, occupied: &BTreeSet<Coord>) -> Tensor {
        let tokens = self.token_coords();
        let width = (self.patch as usize).pow(3);
        let mut out = Tensor::full(tokens.len(), width, -1.0);
        for (r, &t) in tokens.iter().enumerate() {
            for k in 0..width {
                if occupied.contains(&self.cell(t, k)) {
                    out.set(r, k, 1.0);
                }
            }
        }
        out
    }

    /// Cells whose value is strictly positive.
    pub fn decode(&self, values: &Tensor) -> BTreeSet<Coord> {
        let mut out = BTreeSet::new();
        for (r, t) in self.token_coords().into_iter().enumerate() {
            for (k, &v) in values.row(r).iter().enumerate() {
                if v > 0.0 {
                    out.insert(self.cell(t, k));
                }
            }
        }
        out
    }
}

/// Base-resolution voxels touched by `cfg.samples` surface points.
pub fn surface_occupancy(
    mesh: &Mesh,
    cfg: &RunConfig,
    seed: u64,
) -> Result<BTreeSet<Coord>, FlowError> {
    let samples = sample_surface(mesh, cfg.samples, seed).map_err(VaeError::from)?;
    Ok(voxelize(&samples.points, cfg.base_resolution)
        .coords()
        .into_iter()
        .collect())
}

pub fn structure_example(occupied: &BTreeSet<Coord>, layout: Patchify) -> FlowExample {
    FlowExample {
        coords: layout.token_coords(),
        positions: layout.token_positions(),
        z0: layout.encode(occupied),
        cv: 0.0,
    }
}

pub fn sample_structure(
    model: &FlowModel,
    steps: usize,
    seed: u64,
) -> Result<BTreeSet<Coord>, FlowError> {
    let layout = Patchify::from_config(&model.cfg);
    let z = model.sample(
        &layout.token_coords(),
        &layout.token_positions(),
        0.0,
        steps,
        seed,
    )?;
    Ok(layout.decode(&z))
}

/// Intersection over union of two voxel sets; two empty sets score 1.
pub fn iou(a: &BTreeSet<Coord>, b: &BTreeSet<Coord>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Vertex-count condition `c_v = ln N_v`.
pub fn vertex_condition(vertices: usize) -> f64 {
    (vertices.max(1) as f64).ln()
}

/// Topology-flow example from a mesh's posterior mean.
pub fn topology_example(vae: &Vae, mesh: &Mesh, seed: u64) -> Result<FlowExample, FlowError> {
    let post = vae.encode_mesh(mesh, seed)?;
    let positions = post
        .coords
        .iter()
        .map(|&c| centroid(c, post.resolution))
        .collect();
    Ok(FlowExample {
        coords: post.coords,
        positions,
        z0: post.mu,
        cv: vertex_condition(mesh.vertices.len()),
    })
}

pub fn sample_topology(
    model: &FlowModel,
    coords: &[Coord],
    vertices: usize,
    steps: usize,
    seed: u64,
) -> Result<TVoxels, FlowError> {
    let resolution = model.cfg.base_resolution;
    let positions: Vec<Point3> = coords.iter().map(|&c| centroid(c, resolution)).collect();
    let z = model.sample(coords, &positions, vertex_condition(vertices), steps, seed)?;
    Ok(TVoxels {
        resolution,
        coords: coords.to_vec(),
        z,
    })
}

pub fn check_compatible(
    structure: &FlowModel,
    topology: &FlowModel,
    vae: &Vae,
) -> Result<(), FlowError> {
    if structure.stage != Stage::Structure || topology.stage != Stage::Topology {
        return Err(FlowError::Incompatible("stage order".into()));
    }
    if structure.cfg.base_resolution != vae.cfg.base_resolution {
        return Err(FlowError::Incompatible(format!(
            "structure resolution {} vs decoder resolution {}",
            structure.cfg.base_resolution, vae.cfg.base_resolution
        )));
    }
    if topology.net.channels() != vae.cfg.channels {
        return Err(FlowError::Incompatible(format!(
            "topology flow has {} channels, decoder expects {}",
            topology.net.channels(),
            vae.cfg.channels
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub occupied: BTreeSet<Coord>,
    pub latent: TVoxels,
    pub reconstruction: Reconstruction,
}

/// Structure sample → topology sample → decode → edges → faces.
pub fn generate_mesh(
    structure: &FlowModel,
    topology: &FlowModel,
    vae: &Vae,
    vertices: usize,
    steps: usize,
    seed: u64,
    edge_threshold: f64,
) -> Result<Generated, FlowError> {
    if steps == 0 {
        return Err(FlowError::ZeroSteps);
    }
    check_compatible(structure, topology, vae)?;
    let occupied = sample_structure(structure, steps, rng::mix(seed, 1))?;
    if occupied.is_empty() {
        return Err(FlowError::Empty("structure"));
    }
    let coords: Vec<Coord> = occupied.iter().copied().collect();
    let latent = sample_topology(topology, &coords, vertices, steps, rng::mix(seed, 2))?;
    let reconstruction = vae.reconstruct(&latent, edge_threshold)?;
    if reconstruction.decoded.is_empty() {
        return Err(FlowError::Empty("decode"));
    }
    Ok(Generated {
        occupied,
        latent,
        reconstruction,
    })
}
