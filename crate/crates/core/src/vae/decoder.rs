use crate::config::RunConfig;
use crate::nn::graph::sigmoid;
use crate::nn::layers::{
    conv_taps, fourier_features, CrossBlock, LayerNorm, Linear, SelfBlock, SparseConv3,
};
use crate::nn::{Graph, ParamId, ParamStore, Var};
use crate::sparse_grid::{centroid, subdivide, Coord, OccupancyLadder};

use super::VaeError;

/// How the decoder decides which voxels survive each level.
#[derive(Debug, Clone, Copy)]
pub enum PruneMode<'a> {
    /// Keep voxels whose predicted occupancy is at least 0.5.
    Predicted,
    /// Keep exactly the voxels of a ground-truth occupancy ladder.
    Teacher(&'a OccupancyLadder),
    /// Pretend every voxel has occupancy `p`.
    Forced(f64),
}

#[derive(Debug, Clone)]
pub struct LevelState {
    pub resolution: u32,
    pub candidates: Vec<Coord>,
    /// `candidates.len() × 1` pruning logits.
    pub logits: Var,
    pub probs: Vec<f64>,
    pub keep: Vec<bool>,
}

impl LevelState {
    pub fn survivors(&self) -> Vec<Coord> {
        self.candidates
            .iter()
            .zip(&self.keep)
            .filter(|(_, &k)| k)
            .map(|(&c, _)| c)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DecoderState {
    pub levels: Vec<LevelState>,
    /// Embedded latent tokens; keys and values for cross-attention.
    pub context: Var,
    /// Set when every voxel was pruned at this level.
    pub empty_at: Option<usize>,
    /// Finest-level surviving voxels, one per decoded vertex.
    pub vertex_coords: Vec<Coord>,
    pub vertex_features: Option<Var>,
    pub finest_resolution: u32,
}

impl DecoderState {
    pub fn is_empty(&self) -> bool {
        self.empty_at.is_some()
    }

    pub fn vertices(&self) -> Vec<[f64; 3]> {
        self.vertex_coords
            .iter()
            .map(|&c| centroid(c, self.finest_resolution))
            .collect()
    }
}

/// Hierarchical subdivide-and-prune decoder.
#[derive(Debug, Clone)]
pub struct Decoder {
    embed: Linear,
    pos: Linear,
    base_block: SelfBlock,
    heads: Vec<Linear>,
    octant_embed: Vec<ParamId>,
    conv_norms: Vec<LayerNorm>,
    convs: Vec<SparseConv3>,
    self_blocks: Vec<SelfBlock>,
    cross_blocks: Vec<CrossBlock>,
    resolution: u32,
    stages: usize,
    frequencies: usize,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, seed: u64) -> Self {
        let d = cfg.width;
        let stages = cfg.stages;
        Self {
            embed: Linear::new(store, "dec.embed", cfg.channels, d, seed),
            pos: Linear::no_bias(store, "dec.pos", 6 * cfg.frequencies, d, seed),
            base_block: SelfBlock::new(store, "dec.base", cfg.block(), seed),
            heads: (0..=stages)
                .map(|l| Linear::new(store, &format!("dec.prune{l}"), d, 1, seed))
                .collect(),
            octant_embed: (1..=stages)
                .map(|l| store.add_normal(&format!("dec.octant{l}"), 8, d, 0.5, seed))
                .collect(),
            conv_norms: (1..=stages)
                .map(|l| LayerNorm::new(store, &format!("dec.conv_norm{l}"), d))
                .collect(),
            convs: (1..=stages)
                .map(|l| SparseConv3::new(store, &format!("dec.conv{l}"), d, d, seed))
                .collect(),
            self_blocks: (1..=stages)
                .map(|l| SelfBlock::new(store, &format!("dec.self{l}"), cfg.block(), seed))
                .collect(),
            cross_blocks: (1..=stages)
                .map(|l| CrossBlock::new(store, &format!("dec.cross{l}"), cfg.block(), seed))
                .collect(),
            resolution: cfg.base_resolution,
            stages,
            frequencies: cfg.frequencies,
        }
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    fn decide(
        &self,
        mode: PruneMode<'_>,
        level: usize,
        coords: &[Coord],
        probs: &[f64],
    ) -> Vec<bool> {
        match mode {
            PruneMode::Predicted => probs.iter().map(|&p| p >= 0.5).collect(),
            PruneMode::Teacher(ladder) => coords
                .iter()
                .map(|&c| ladder.level(level).contains(c))
                .collect(),
            PruneMode::Forced(p) => vec![p >= 0.5; coords.len()],
        }
    }

    fn level_state(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        level: usize,
        candidates: Vec<Coord>,
        h: Var,
        mode: PruneMode<'_>,
    ) -> LevelState {
        let logits = self.heads[level].forward(g, store, h);
        let mut probs: Vec<f64> = g.value(logits).data().iter().map(|&x| sigmoid(x)).collect();
        if let PruneMode::Forced(p) = mode {
            probs.iter_mut().for_each(|v| *v = p);
        }
        let keep = self.decide(mode, level, &candidates, &probs);
        LevelState {
            resolution: self.resolution << level,
            candidates,
            logits,
            probs,
            keep,
        }
    }

    /// Decodes latents `z` (`coords.len() × c`) at the base resolution.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        coords: &[Coord],
        z: Var,
        mode: PruneMode<'_>,
        max_active: usize,
    ) -> Result<DecoderState, VaeError> {
        if coords.is_empty() {
            return Err(VaeError::EmptyInput);
        }
        if let PruneMode::Teacher(ladder) = mode {
            if ladder.stages() != self.stages || ladder.level(0).resolution() != self.resolution {
                return Err(VaeError::LevelMismatch {
                    expected: self.stages,
                    found: ladder.stages(),
                });
            }
        }
        if coords.len() > max_active {
            return Err(VaeError::Budget {
                level: 0,
                active: coords.len(),
                limit: max_active,
            });
        }
        let finest_resolution = self.resolution << self.stages;
        let e = self.embed.forward(g, store, z);
        let centers: Vec<_> = coords
            .iter()
            .map(|&c| centroid(c, self.resolution))
            .collect();
        let pe = g.input(fourier_features(&centers, self.frequencies));
        let pe = self.pos.forward(g, store, pe);
        let context = g.add(e, pe);
        let h = self.base_block.forward(g, store, context);

        let mut state = DecoderState {
            levels: Vec::with_capacity(self.stages + 1),
            context,
            empty_at: None,
            vertex_coords: Vec::new(),
            vertex_features: None,
            finest_resolution,
        };
        let level0 = self.level_state(g, store, 0, coords.to_vec(), h, mode);
        let keep: Vec<usize> = (0..coords.len()).filter(|&i| level0.keep[i]).collect();
        let mut parents: Vec<Coord> = keep.iter().map(|&i| coords[i]).collect();
        let mut h = g.gather(h, &keep);
        state.levels.push(level0);
        if parents.is_empty() {
            state.empty_at = Some(0);
            return Ok(state);
        }

        for l in 1..=self.stages {
            let n = parents.len() * 8;
            if n > max_active {
                return Err(VaeError::Budget {
                    level: l,
                    active: n,
                    limit: max_active,
                });
            }
            let mut children = Vec::with_capacity(n);
            let mut parent_rows = Vec::with_capacity(n);
            let mut octants = Vec::with_capacity(n);
            for (p, &c) in parents.iter().enumerate() {
                for (o, child) in subdivide(c).into_iter().enumerate() {
                    children.push(child);
                    parent_rows.push(p);
                    octants.push(o);
                }
            }
            let hp = g.gather(h, &parent_rows);
            let table = g.param(store, self.octant_embed[l - 1]);
            let delta = g.gather(table, &octants);
            let hc = g.add(hp, delta);
            let taps = conv_taps(&children);
            let normed = self.conv_norms[l - 1].forward(g, store, hc);
            let conv = self.convs[l - 1].forward(g, store, normed, &taps);
            let hc = g.add(hc, conv);

            let level = self.level_state(g, store, l, children, hc, mode);
            let keep: Vec<usize> = (0..level.candidates.len())
                .filter(|&i| level.keep[i])
                .collect();
            parents = keep.iter().map(|&i| level.candidates[i]).collect();
            state.levels.push(level);
            if keep.is_empty() {
                state.empty_at = Some(l);
                return Ok(state);
            }
            let hs = g.gather(hc, &keep);
            let hs = self.self_blocks[l - 1].forward(g, store, hs);
            h = self.cross_blocks[l - 1].forward(g, store, hs, context);
        }
        state.vertex_coords = parents;
        state.vertex_features = Some(h);
        Ok(state)
    }
}

/// Per-level BCE targets for the candidates of `state` under `ladder`.
pub fn level_targets(state: &DecoderState, ladder: &OccupancyLadder) -> Vec<Vec<f64>> {
    state
        .levels
        .iter()
        .enumerate()
        .map(|(l, s)| {
            s.candidates
                .iter()
                .map(|&c| {
                    if ladder.level(l).contains(c) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}
