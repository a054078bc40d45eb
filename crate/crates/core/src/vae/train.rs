use std::collections::BTreeMap;

use crate::config::RunConfig;
use crate::mesh_io::Mesh;
use crate::nn::loss::{voxel_noise, LossBundle};
use crate::nn::optim::{clip_grad_norm, cosine_lr, AdamW};
use crate::nn::{Graph, ParamStore, Var};
use crate::rng;
use crate::sampling::FeatureSet;
use crate::sparse_grid::OccupancyLadder;

use super::decoder::{level_targets, PruneMode};
use super::pairs::{sample_training_pairs, PairBatch};
use super::{vertex_rows, Vae, VaeError};

/// A normalized mesh with its precomputed supervision.
#[derive(Debug, Clone)]
pub struct TrainingMesh {
    pub mesh: Mesh,
    pub ladder: OccupancyLadder,
    pub edges: Vec<(usize, usize)>,
}

impl TrainingMesh {
    pub fn new(mesh: Mesh, cfg: &RunConfig) -> Self {
        let ladder = OccupancyLadder::build(&mesh.vertices, cfg.base_resolution, cfg.stages);
        let edges = mesh.edges();
        Self {
            mesh,
            ladder,
            edges,
        }
    }
}

/// Maps GT-vertex pairs onto decoded vertex rows. Pairs with an endpoint
/// missing from the decode, or whose endpoints share a voxel, are dropped;
/// pairs that collapse onto the same rows keep the positive label.
pub fn teacher_pairs(batch: &PairBatch, rows: &[Option<usize>]) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut merged: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    for p in &batch.pairs {
        if let (Some(a), Some(b)) = (rows[p.i], rows[p.j]) {
            if a != b {
                *merged.entry((a.min(b), a.max(b))).or_insert(false) |= p.label;
            }
        }
    }
    merged
        .into_iter()
        .map(|(k, l)| (k, if l { 1.0 } else { 0.0 }))
        .unzip()
}

/// Builds the total objective from per-level pruning logits (levels `0..=L`),
/// optional connection logits, and the posterior.
///
/// Pruning loss averages the per-level mean BCE over levels `0..L`; the
/// finest level uses the asymmetric loss; KL is averaged over voxels and channels.
pub fn assemble_losses(
    g: &mut Graph,
    level_logits: &[Var],
    targets: &[Vec<f64>],
    conn: Option<(Var, &[f64])>,
    mu: Var,
    logvar: Var,
    cfg: &RunConfig,
) -> (Var, LossBundle) {
    let finest = level_logits.len() - 1;
    let mut terms = Vec::new();
    let mut prune = 0.0;
    for l in 0..finest {
        let v = g.bce_with_logits(level_logits[l], &targets[l]);
        prune += g.value(v).item() / finest as f64;
        terms.push((v, 1.0 / finest as f64));
    }
    let vtx = g.asymmetric(
        level_logits[finest],
        &targets[finest],
        cfg.gamma_pos,
        cfg.gamma_neg,
    );
    terms.push((vtx, 1.0));
    let mut conn_value = 0.0;
    if let Some((logits, labels)) = conn {
        let c = g.bce_with_logits(logits, labels);
        conn_value = g.value(c).item();
        terms.push((c, 1.0));
    }
    let channels = g.value(mu).cols().max(1) as f64;
    let kl = g.kl_standard_normal(mu, logvar);
    let kl_value = g.value(kl).item() / channels;
    terms.push((kl, cfg.beta / channels));
    let total = g.weighted_sum(&terms);
    let vtx_value = g.value(vtx).item();
    let mut bundle = LossBundle::new(prune, vtx_value, conn_value, kl_value, cfg.beta);
    bundle.total = g.value(total).item();
    (total, bundle)
}

/// Records the full teacher-forced objective for one mesh on `g`, reading
/// weights from `store` (which must share `vae`'s layout).
pub fn vae_objective(
    vae: &Vae,
    store: &ParamStore,
    g: &mut Graph,
    features: &FeatureSet,
    sample: &TrainingMesh,
    seed: u64,
) -> Result<(Var, LossBundle), VaeError> {
    let cfg = &vae.cfg;
    let enc = vae.encoder.forward(g, store, features)?;
    let eps = voxel_noise(&enc.coords, cfg.channels, seed, rng::streams::REPARAM);
    let z = g.reparameterize(enc.mu, enc.logvar, eps);
    let state = vae.decoder.forward(
        g,
        store,
        &enc.coords,
        z,
        PruneMode::Teacher(&sample.ladder),
        cfg.max_active,
    )?;
    if state.levels.len() != cfg.stages + 1 {
        return Err(VaeError::LevelMismatch {
            expected: cfg.stages + 1,
            found: state.levels.len(),
        });
    }
    let targets = level_targets(&state, &sample.ladder);
    let logits: Vec<Var> = state.levels.iter().map(|l| l.logits).collect();

    let mut conn = None;
    let labels;
    if let Some(h) = state.vertex_features {
        let batch = sample_training_pairs(
            &sample.edges,
            &sample.mesh.vertices,
            cfg.neighbors,
            cfg.random_pairs,
            seed,
        );
        let rows = vertex_rows(
            &sample.mesh.vertices,
            &state.vertex_coords,
            state.finest_resolution,
        );
        let (pairs, l) = teacher_pairs(&batch, &rows);
        labels = l;
        if !pairs.is_empty() {
            let (a, b) = vae.connection.project(g, store, h, state.context);
            conn = Some((
                vae.connection.pair_logits(g, store, a, b, &pairs),
                labels.as_slice(),
            ));
        }
    }
    Ok(assemble_losses(
        g, &logits, &targets, conn, enc.mu, enc.logvar, cfg,
    ))
}

/// One forward/backward pass; gradients are left in `vae.store`.
pub fn vae_step(vae: &mut Vae, sample: &TrainingMesh, seed: u64) -> Result<LossBundle, VaeError> {
    let features = vae.features(&sample.mesh, seed)?;
    vae.store.zero_grad();
    let mut g = Graph::new();
    let (total, bundle) = vae_objective(vae, &vae.store, &mut g, &features, sample, seed)?;
    if bundle.total.is_finite() {
        g.backward(total, &mut vae.store);
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub trace: Vec<LossBundle>,
    pub steps_run: usize,
    pub stopped_early: bool,
}

/// AdamW with cosine decay over `cfg.steps`, cycling through `meshes`.
/// `monitor` runs after every step and may stop training by returning `true`.
pub fn train_vae(
    vae: &mut Vae,
    meshes: &[TrainingMesh],
    mut monitor: impl FnMut(usize, &Vae, &LossBundle) -> bool,
) -> Result<TrainReport, VaeError> {
    if meshes.is_empty() {
        return Err(VaeError::EmptyInput);
    }
    let cfg = vae.cfg.clone();
    let mut opt = AdamW::new(&vae.store, 0.9, 0.999, cfg.weight_decay);
    let mut report = TrainReport::default();
    for step in 0..cfg.steps {
        let seed = rng::mix(cfg.seed, step as u64);
        let bundle = vae_step(vae, &meshes[step % meshes.len()], seed)?;
        if !bundle.total.is_finite() || !vae.store.grad_norm().is_finite() {
            let last_finite = report.trace.last().map(|b| b.total);
            return Err(VaeError::Diverged { step, last_finite });
        }
        clip_grad_norm(&mut vae.store, cfg.grad_clip);
        opt.step(
            &mut vae.store,
            cosine_lr(step, cfg.steps, cfg.lr_max, cfg.lr_min),
        );
        report.trace.push(bundle);
        report.steps_run = step + 1;
        if monitor(step, vae, &bundle) {
            report.stopped_early = step + 1 < cfg.steps;
            break;
        }
    }
    Ok(report)
}
