use std::collections::{BTreeMap, BTreeSet};

use crate::geom::{self, Point3};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    GtEdge,
    Neighbor,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub label: bool,
    pub provenance: Provenance,
}

/// Supervision pairs with `i < j`, sorted, no duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairBatch {
    pub pairs: Vec<Pair>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label).count()
    }
}

/// Indices of the `k` nearest other vertices, closer first, ties to the lower index.
pub fn nearest(vertices: &[Point3], i: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..vertices.len())
        .filter(|&j| j != i)
        .map(|j| (geom::dist(vertices[i], vertices[j]), j))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, j)| j).collect()
}

/// Every GT edge as a positive, plus for each vertex its `n_near` nearest
/// and `n_rand` uniformly drawn partners, labeled by edge membership.
pub fn sample_training_pairs(
    edges: &[(usize, usize)],
    vertices: &[Point3],
    n_near: usize,
    n_rand: usize,
    seed: u64,
) -> PairBatch {
    let edge_set: BTreeSet<(usize, usize)> =
        edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut found: BTreeMap<(usize, usize), Provenance> = BTreeMap::new();
    let mut offer = |a: usize, b: usize, p: Provenance| {
        if a != b {
            let key = (a.min(b), a.max(b));
            let slot = found.entry(key).or_insert(p);
            *slot = (*slot).min(p);
        }
    };
    for &(a, b) in &edge_set {
        offer(a, b, Provenance::GtEdge);
    }
    let n = vertices.len();
    if n >= 2 {
        for i in 0..n {
            for j in nearest(vertices, i, n_near) {
                offer(i, j, Provenance::Neighbor);
            }
            let mut r = rng::stream(seed, rng::streams::PAIRS, i as u64);
            for _ in 0..n_rand {
                let mut j = ((rng::uniform(&mut r) * (n - 1) as f64) as usize).min(n - 2);
                if j >= i {
                    j += 1;
                }
                offer(i, j, Provenance::Random);
            }
        }
    }
    let pairs = found
        .into_iter()
        .map(|((i, j), provenance)| Pair {
            i,
            j,
            label: edge_set.contains(&(i, j)),
            provenance,
        })
        .collect();
    PairBatch { pairs }
}
