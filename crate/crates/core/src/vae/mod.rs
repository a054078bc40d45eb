//! Sparse-voxel variational autoencoder over vertex displacement features.

mod connection;
mod decoder;
mod encoder;
pub mod latent;
pub mod pairs;
mod train;

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

pub use connection::{ConnectionHead, PairLogits};
pub use decoder::{level_targets, Decoder, DecoderState, LevelState, PruneMode};
pub use encoder::{Encoder, EncoderOutput};
pub use train::{
    assemble_losses, teacher_pairs, train_vae, vae_objective, vae_step, TrainReport, TrainingMesh,
};

use crate::config::RunConfig;
use crate::graph_recovery::{self, PairScorer, RecoveryError};
use crate::mesh_io::Mesh;
use crate::nn::{checkpoint, Graph, NnError, ParamStore, Tensor};
use crate::sampling::{assemble_features, sample_surface, FeatureSet, SamplingError};
use crate::sparse_grid::{voxel_of, Coord};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("empty input: no points or voxels to encode")]
    EmptyInput,
    #[error("input coordinates must lie in the unit cube")]
    OutOfUnitCube,
    #[error("decoder has {expected} stages but the ladder has {found}")]
    LevelMismatch { expected: usize, found: usize },
    #[error("level {level} would hold {active} voxels, over the limit of {limit}")]
    Budget {
        level: usize,
        active: usize,
        limit: usize,
    },
    #[error("latent has {found} channels but the model expects {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("training diverged at step {step}; last finite loss {last_finite:?}")]
    Diverged {
        step: usize,
        last_finite: Option<f64>,
    },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-voxel posterior parameters at the base resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub resolution: u32,
    pub coords: Vec<Coord>,
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl Posterior {
    /// Reparameterized draw with voxel-addressed noise.
    pub fn sample(&self, seed: u64) -> TVoxels {
        TVoxels {
            resolution: self.resolution,
            coords: self.coords.clone(),
            z: crate::nn::loss::reparameterize(&self.mu, &self.logvar, &self.coords, seed),
        }
    }

    pub fn mean(&self) -> TVoxels {
        TVoxels {
            resolution: self.resolution,
            coords: self.coords.clone(),
            z: self.mu.clone(),
        }
    }
}

/// Sparse latent grid: one `c`-vector per active base voxel, in sorted voxel order.
#[derive(Debug, Clone, PartialEq)]
pub struct TVoxels {
    pub resolution: u32,
    pub coords: Vec<Coord>,
    pub z: Tensor,
}

impl TVoxels {
    pub fn channels(&self) -> usize {
        self.z.cols()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Plain-value summary of one decode.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub candidates_per_level: Vec<usize>,
    pub survivors_per_level: Vec<usize>,
    pub empty_at: Option<usize>,
    pub vertex_coords: Vec<Coord>,
    pub vertices: Vec<[f64; 3]>,
    pub scorer: Option<PairLogits>,
}

impl Decoded {
    pub fn is_empty(&self) -> bool {
        self.empty_at.is_some()
    }
}

impl PairScorer for PairLogits {
    fn vertex_count(&self) -> usize {
        PairLogits::vertex_count(self)
    }

    fn probability(&self, i: usize, j: usize) -> f64 {
        PairLogits::probability(self, i, j)
    }
}

/// Recovered mesh plus the intermediate counts.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub decoded: Decoded,
    pub edges: Vec<(usize, usize)>,
    pub mesh: Mesh,
    pub stats: graph_recovery::TopologyStats,
}

#[derive(Debug, Clone)]
pub struct Vae {
    pub cfg: RunConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub connection: ConnectionHead,
}

impl Vae {
    pub fn new(cfg: &RunConfig) -> Self {
        let mut store = ParamStore::new();
        let seed = cfg.seed;
        let encoder = Encoder::new(&mut store, cfg, seed);
        let decoder = Decoder::new(&mut store, cfg, seed);
        let connection = ConnectionHead::new(&mut store, cfg, seed);
        Self {
            cfg: cfg.clone(),
            store,
            encoder,
            decoder,
            connection,
        }
    }

    pub fn load(cfg: &RunConfig, bytes: &[u8]) -> Result<Self, VaeError> {
        let mut vae = Self::new(cfg);
        checkpoint::load_into(&mut vae.store, bytes)?;
        Ok(vae)
    }

    pub fn save(&self) -> Vec<u8> {
        checkpoint::encode(&self.store)
    }

    /// Surface samples and features of a normalized mesh.
    pub fn features(&self, mesh: &Mesh, seed: u64) -> Result<FeatureSet, VaeError> {
        let samples = sample_surface(mesh, self.cfg.samples, seed)?;
        Ok(assemble_features(&samples, self.cfg.variant, self.cfg.tau)?)
    }

    pub fn encode(&self, features: &FeatureSet) -> Result<Posterior, VaeError> {
        let mut g = Graph::new();
        let out = self.encoder.forward(&mut g, &self.store, features)?;
        Ok(Posterior {
            resolution: self.cfg.base_resolution,
            coords: out.coords,
            mu: g.value(out.mu).clone(),
            logvar: g.value(out.logvar).clone(),
        })
    }

    /// Mesh → posterior with surface sampling seeded by `seed`.
    pub fn encode_mesh(&self, mesh: &Mesh, seed: u64) -> Result<Posterior, VaeError> {
        self.encode(&self.features(mesh, seed)?)
    }

    pub fn check_latent(&self, latent: &TVoxels) -> Result<(), VaeError> {
        if latent.channels() != self.cfg.channels {
            return Err(VaeError::ChannelMismatch {
                expected: self.cfg.channels,
                found: latent.channels(),
            });
        }
        if latent.resolution != self.cfg.base_resolution {
            return Err(VaeError::LevelMismatch {
                expected: self.cfg.base_resolution as usize,
                found: latent.resolution as usize,
            });
        }
        Ok(())
    }

    pub fn decode(&self, latent: &TVoxels, mode: PruneMode<'_>) -> Result<Decoded, VaeError> {
        self.check_latent(latent)?;
        let mut g = Graph::new();
        let z = g.input(latent.z.clone());
        let state = self.decoder.forward(
            &mut g,
            &self.store,
            &latent.coords,
            z,
            mode,
            self.cfg.max_active,
        )?;
        let scorer = match state.vertex_features {
            Some(h) if state.vertex_coords.len() >= 2 => {
                let (a, b) = self
                    .connection
                    .project(&mut g, &self.store, h, state.context);
                Some(
                    self.connection
                        .scorer(&self.store, g.value(a).clone(), g.value(b).clone()),
                )
            }
            _ => None,
        };
        Ok(Decoded {
            candidates_per_level: state.levels.iter().map(|l| l.candidates.len()).collect(),
            survivors_per_level: state
                .levels
                .iter()
                .map(|l| l.keep.iter().filter(|&&k| k).count())
                .collect(),
            empty_at: state.empty_at,
            vertices: state.vertices(),
            vertex_coords: state.vertex_coords,
            scorer,
        })
    }

    /// Decode with predicted pruning, exhaustive edge inference and 3-cycle faces.
    pub fn reconstruct(
        &self,
        latent: &TVoxels,
        threshold: f64,
    ) -> Result<Reconstruction, VaeError> {
        let decoded = self.decode(latent, PruneMode::Predicted)?;
        let edges = match &decoded.scorer {
            Some(s) => {
                graph_recovery::infer_edges(s, threshold, self.cfg.pair_batch, self.cfg.max_pairs)?
                    .edges
            }
            None => Vec::new(),
        };
        let graph = graph_recovery::MeshGraph::from_edges(decoded.vertices.clone(), &edges);
        let (mesh, stats) = graph_recovery::assemble_mesh(&graph);
        Ok(Reconstruction {
            decoded,
            edges: graph.edges,
            mesh,
            stats,
        })
    }
}

/// Voxel-level agreement between a reconstruction and its source mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconScores {
    pub vertex_recall: f64,
    pub vertex_precision: f64,
    pub edge_precision: f64,
    pub edge_recall: f64,
    pub edge_f1: f64,
    pub predicted_vertices: usize,
}

/// Compares decoded vertices and edges to `mesh` through finest-voxel identity.
pub fn score_reconstruction(rec: &Reconstruction, mesh: &Mesh, finest: u32) -> ReconScores {
    let gt_voxels: Vec<Coord> = mesh.vertices.iter().map(|&v| voxel_of(v, finest)).collect();
    let gt_set: BTreeSet<Coord> = gt_voxels.iter().copied().collect();
    let pred_set: BTreeSet<Coord> = rec.decoded.vertex_coords.iter().copied().collect();
    let hit = gt_set.intersection(&pred_set).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };

    let key = |a: Coord, b: Coord| if a <= b { (a, b) } else { (b, a) };
    let gt_edges: BTreeSet<(Coord, Coord)> = mesh
        .edges()
        .into_iter()
        .filter(|&(a, b)| gt_voxels[a] != gt_voxels[b])
        .map(|(a, b)| key(gt_voxels[a], gt_voxels[b]))
        .collect();
    let vc = &rec.decoded.vertex_coords;
    let pred_edges: BTreeSet<(Coord, Coord)> =
        rec.edges.iter().map(|&(a, b)| key(vc[a], vc[b])).collect();
    let tp = gt_edges.intersection(&pred_edges).count();
    let precision = ratio(tp, pred_edges.len());
    let recall = ratio(tp, gt_edges.len());
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ReconScores {
        vertex_recall: ratio(hit, gt_set.len()),
        vertex_precision: ratio(hit, pred_set.len()),
        edge_precision: precision,
        edge_recall: recall,
        edge_f1: f1,
        predicted_vertices: vc.len(),
    }
}

/// Maps each vertex to its finest voxel's row in `coords`, if present.
pub fn vertex_rows(vertices: &[[f64; 3]], coords: &[Coord], finest: u32) -> Vec<Option<usize>> {
    let index: HashMap<Coord, usize> = coords.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    vertices
        .iter()
        .map(|&v| index.get(&voxel_of(v, finest)).copied())
        .collect()
}
