//! Chamfer, Hausdorff and normal-consistency between sampled surfaces.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::{self, Point3};
use crate::mesh_io::Mesh;
use crate::rng;
use crate::sampling::{sample_surface, SamplingError};

/// Below this many points, nearest-neighbor queries scan every point.
pub const BRUTE_FORCE_BELOW: usize = 512;
pub const DEFAULT_EVAL_SAMPLES: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metric needs non-empty point sets")]
    Empty,
    #[error("point and normal counts differ")]
    Mismatch,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    fn dist(self, a: Point3, b: Point3) -> f64 {
        match self {
            Norm::L1 => geom::dist_l1(a, b),
            Norm::L2 => geom::dist(a, b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSurface {
    pub points: Vec<Point3>,
    pub normals: Vec<Point3>,
}

impl SampledSurface {
    pub fn new(points: Vec<Point3>, normals: Vec<Point3>) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::Empty);
        }
        if points.len() != normals.len() {
            return Err(MetricsError::Mismatch);
        }
        Ok(Self { points, normals })
    }
}

/// Nearest point by `(distance, index)`, so equal distances resolve to the lowest index.
pub fn nearest_brute(points: &[Point3], q: Point3, norm: Norm) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, &p) in points.iter().enumerate() {
        let d = norm.dist(q, p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Uniform-grid bucketing for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct PointGrid<'a> {
    points: &'a [Point3],
    origin: Point3,
    cell: f64,
    lo: [i64; 3],
    hi: [i64; 3],
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> PointGrid<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        let extent = (0..3).map(|k| max[k] - min[k]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let mut grid = Self {
            points,
            origin: if points.is_empty() { [0.0; 3] } else { min },
            cell,
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
            buckets: HashMap::new(),
        };
        for (i, &p) in points.iter().enumerate() {
            let c = grid.cell_of(p);
            for k in 0..3 {
                grid.lo[k] = grid.lo[k].min(c[k]);
                grid.hi[k] = grid.hi[k].max(c[k]);
            }
            grid.buckets.entry(c).or_default().push(i);
        }
        grid
    }

    fn cell_of(&self, p: Point3) -> [i64; 3] {
        std::array::from_fn(|k| ((p[k] - self.origin[k]) / self.cell).floor() as i64)
    }

    fn visit(&self, c: [i64; 3], q: Point3, norm: Norm, best: &mut (usize, f64)) {
        if let Some(members) = self.buckets.get(&c) {
            for &i in members {
                let d = norm.dist(q, self.points[i]);
                if d < best.1 || (d == best.1 && i < best.0) {
                    *best = (i, d);
                }
            }
        }
    }

    /// Exact nearest neighbor with the same tie rule as [`nearest_brute`].
    pub fn nearest(&self, q: Point3, norm: Norm) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        if self.points.is_empty() {
            return best;
        }
        let qc = self.cell_of(q);
        let reach = (0..3)
            .map(|k| (qc[k] - self.lo[k]).abs().max((qc[k] - self.hi[k]).abs()))
            .max()
            .unwrap();
        for r in 0..=reach {
            for dx in -r..=r {
                for dy in -r..=r {
                    let edge = dx.abs() == r || dy.abs() == r;
                    let dzs: Vec<i64> = if edge {
                        (-r..=r).collect()
                    } else {
                        vec![-r, r]
                    };
                    for dz in dzs {
                        self.visit([qc[0] + dx, qc[1] + dy, qc[2] + dz], q, norm, &mut best);
                    }
                }
            }
            // Every point in ring r + 1 or beyond is at least r cells away along some axis.
            if best.1 < (r as f64 - 1e-6) * self.cell {
                break;
            }
        }
        best
    }
}

enum Search<'a> {
    Brute(&'a [Point3]),
    Grid(PointGrid<'a>),
}

impl<'a> Search<'a> {
    fn new(points: &'a [Point3], accelerated: bool) -> Self {
        if accelerated {
            Search::Grid(PointGrid::new(points))
        } else {
            Search::Brute(points)
        }
    }

    fn auto(points: &'a [Point3]) -> Self {
        Self::new(points, points.len() >= BRUTE_FORCE_BELOW)
    }

    fn nearest(&self, q: Point3, norm: Norm) -> (usize, f64) {
        match self {
            Search::Brute(p) => nearest_brute(p, q, norm),
            Search::Grid(g) => g.nearest(q, norm),
        }
    }
}

fn one_sided(a: &[Point3], b: &Search<'_>, norm: Norm) -> Vec<(usize, f64)> {
    a.iter().map(|&q| b.nearest(q, norm)).collect()
}

fn mean(v: &[(usize, f64)]) -> f64 {
    v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64
}

/// Selects the nearest-neighbor strategy explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Auto,
    BruteForce,
    Grid,
}

fn searches<'a>(a: &'a [Point3], b: &'a [Point3], s: Strategy) -> (Search<'a>, Search<'a>) {
    match s {
        Strategy::Auto => (Search::auto(a), Search::auto(b)),
        Strategy::BruteForce => (Search::new(a, false), Search::new(b, false)),
        Strategy::Grid => (Search::new(a, true), Search::new(b, true)),
    }
}

pub fn chamfer_with(
    a: &[Point3],
    b: &[Point3],
    norm: Norm,
    strategy: Strategy,
) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (sa, sb) = searches(a, b, strategy);
    Ok(0.5 * (mean(&one_sided(a, &sb, norm)) + mean(&one_sided(b, &sa, norm))))
}

/// Symmetric mean of non-squared nearest distances.
pub fn chamfer(a: &[Point3], b: &[Point3], norm: Norm) -> Result<f64, MetricsError> {
    chamfer_with(a, b, norm, Strategy::Auto)
}

pub fn hausdorff_with(a: &[Point3], b: &[Point3], strategy: Strategy) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (sa, sb) = searches(a, b, strategy);
    let worst = |v: Vec<(usize, f64)>| v.into_iter().map(|x| x.1).fold(0.0, f64::max);
    Ok(worst(one_sided(a, &sb, Norm::L2)).max(worst(one_sided(b, &sa, Norm::L2))))
}

pub fn hausdorff(a: &[Point3], b: &[Point3]) -> Result<f64, MetricsError> {
    hausdorff_with(a, b, Strategy::Auto)
}

pub fn normal_consistency_with(
    a: &SampledSurface,
    b: &SampledSurface,
    strategy: Strategy,
) -> Result<f64, MetricsError> {
    let (sa, sb) = searches(&a.points, &b.points, strategy);
    let side = |from: &SampledSurface, to: &SampledSurface, s: &Search<'_>| {
        let total: f64 = from
            .points
            .iter()
            .zip(&from.normals)
            .map(|(&p, &n)| geom::dot(n, to.normals[s.nearest(p, Norm::L2).0]).abs())
            .sum();
        total / from.points.len() as f64
    };
    Ok(0.5 * (side(a, b, &sb) + side(b, a, &sa)))
}

/// Mean absolute cosine between each point's normal and its nearest neighbor's.
pub fn normal_consistency(a: &SampledSurface, b: &SampledSurface) -> Result<f64, MetricsError> {
    normal_consistency_with(a, b, Strategy::Auto)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub hd: f64,
    pub nc: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Heuristic sampling-noise scale `2/√n`.
    pub noise_floor: f64,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "cd_l1 = {:e}", self.cd_l1);
        let _ = writeln!(s, "cd_l2 = {:e}", self.cd_l2);
        let _ = writeln!(s, "hd = {:e}", self.hd);
        let _ = writeln!(s, "nc = {:e}", self.nc);
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "noise_floor = {:e}", self.noise_floor);
        s
    }
}

pub fn surface_of(mesh: &Mesh, n: usize, seed: u64) -> Result<SampledSurface, MetricsError> {
    let s = sample_surface(mesh, n, seed)?;
    SampledSurface::new(s.points, s.normals)
}

/// Samples both meshes with seeds derived from `seed` and computes every metric.
pub fn evaluate_pair(
    pred: &Mesh,
    gt: &Mesh,
    n_samples: usize,
    seed: u64,
) -> Result<MetricReport, MetricsError> {
    let a = surface_of(pred, n_samples, rng::mix(seed, rng::streams::EVAL))?;
    let b = surface_of(gt, n_samples, rng::mix(seed, rng::streams::EVAL + 1))?;
    Ok(MetricReport {
        cd_l1: chamfer(&a.points, &b.points, Norm::L1)?,
        cd_l2: chamfer(&a.points, &b.points, Norm::L2)?,
        hd: hausdorff(&a.points, &b.points)?,
        nc: normal_consistency(&a, &b)?,
        n_samples,
        seed,
        noise_floor: 2.0 / (n_samples as f64).sqrt(),
    })
}
