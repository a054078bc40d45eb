//! From decoded vertices and pairwise edge probabilities to a triangle mesh.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::config::RunConfig;
use crate::geom::{self, Point3};
use crate::mesh_io::Mesh;
use crate::sparse_grid::{centroid, subdivide, voxel_of, Coord, OccupancyLadder, SparseGrid};

#[derive(Debug, Error, PartialEq)]
pub enum RecoveryError {
    #[error("{pairs} vertex pairs exceed the budget of {limit}")]
    Budget { pairs: u128, limit: usize },
    #[error("edge threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("edge inference needs at least two vertices, got {0}")]
    TooFewVertices(usize),
}

/// Edge probabilities for vertex pairs.
pub trait PairScorer {
    fn vertex_count(&self) -> usize;
    fn probability(&self, i: usize, j: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeInference {
    pub edges: Vec<(usize, usize)>,
    pub pairs_evaluated: usize,
}

/// Scores every unordered pair in batches and keeps those with probability ≥ `threshold`.
pub fn infer_edges(
    scorer: &dyn PairScorer,
    threshold: f64,
    batch: usize,
    max_pairs: usize,
) -> Result<EdgeInference, RecoveryError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(RecoveryError::BadThreshold(threshold));
    }
    let n = scorer.vertex_count();
    if n < 2 {
        return Err(RecoveryError::TooFewVertices(n));
    }
    let total = n as u128 * (n as u128 - 1) / 2;
    if total > max_pairs as u128 {
        return Err(RecoveryError::Budget {
            pairs: total,
            limit: max_pairs,
        });
    }
    let batch = batch.max(1);
    let mut edges = Vec::new();
    let mut pending = Vec::with_capacity(batch.min(total as usize));
    let mut evaluated = 0;
    let mut flush = |pending: &mut Vec<(usize, usize)>, edges: &mut Vec<(usize, usize)>| {
        for &(i, j) in pending.iter() {
            if scorer.probability(i, j) >= threshold {
                edges.push((i, j));
            }
        }
        evaluated += pending.len();
        pending.clear();
    };
    for i in 0..n {
        for j in i + 1..n {
            pending.push((i, j));
            if pending.len() == batch {
                flush(&mut pending, &mut edges);
            }
        }
    }
    flush(&mut pending, &mut edges);
    Ok(EdgeInference {
        edges,
        pairs_evaluated: evaluated,
    })
}

fn upper_adjacency(edges: &[(usize, usize)], n: usize) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a != b {
            adj[a.min(b)].push(a.max(b));
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// All 3-cycles `i < j < k`, lexicographically sorted.
pub fn extract_triangles(edges: &[(usize, usize)], n: usize) -> Vec<[usize; 3]> {
    let adj = upper_adjacency(edges, n);
    let mut faces = Vec::new();
    for i in 0..n {
        for &j in &adj[i] {
            let (a, b) = (&adj[i], &adj[j]);
            let (mut x, mut y) = (0, 0);
            while x < a.len() && y < b.len() {
                match a[x].cmp(&b[y]) {
                    std::cmp::Ordering::Less => x += 1,
                    std::cmp::Ordering::Greater => y += 1,
                    std::cmp::Ordering::Equal => {
                        faces.push([i, j, a[x]]);
                        x += 1;
                        y += 1;
                    }
                }
            }
        }
    }
    faces
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    pub vertices: Vec<Point3>,
    pub edges: Vec<(usize, usize)>,
    pub faces: Vec<[usize; 3]>,
}

impl MeshGraph {
    pub fn from_edges(vertices: Vec<Point3>, edges: &[(usize, usize)]) -> Self {
        let n = vertices.len();
        let adj = upper_adjacency(edges, n);
        let edges = adj
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&j| (i, j)))
            .collect::<Vec<_>>();
        let faces = extract_triangles(&edges, n);
        Self {
            vertices,
            edges,
            faces,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TopologyStats {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub boundary_edges: usize,
    pub non_manifold_edges: usize,
    pub components: usize,
    pub euler: i64,
}

impl TopologyStats {
    pub fn to_report(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("vertices", self.vertices as i64),
            ("edges", self.edges as i64),
            ("faces", self.faces as i64),
            ("boundary_edges", self.boundary_edges as i64),
            ("non_manifold_edges", self.non_manifold_edges as i64),
            ("components", self.components as i64),
            ("euler", self.euler),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn summary_line(&self) -> String {
        format!(
            "V={} E={} F={} boundary={} non_manifold={} components={} chi={}",
            self.vertices,
            self.edges,
            self.faces,
            self.boundary_edges,
            self.non_manifold_edges,
            self.components,
            self.euler
        )
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub fn assemble_mesh(graph: &MeshGraph) -> (Mesh, TopologyStats) {
    let n = graph.vertices.len();
    let mut uses = std::collections::BTreeMap::<(usize, usize), usize>::new();
    for &(a, b) in &graph.edges {
        uses.insert((a.min(b), a.max(b)), 0);
    }
    for f in &graph.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
            *uses.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for &(a, b) in uses.keys() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let components = (0..n).filter(|&v| find(&mut parent, v) == v).count();
    let stats = TopologyStats {
        vertices: n,
        edges: uses.len(),
        faces: graph.faces.len(),
        boundary_edges: uses.values().filter(|&&c| c == 1).count(),
        non_manifold_edges: uses.values().filter(|&&c| c >= 3).count(),
        components,
        euler: n as i64 - uses.len() as i64 + graph.faces.len() as i64,
    };
    (
        Mesh::new(graph.vertices.clone(), graph.faces.clone()),
        stats,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub mesh: Mesh,
    pub max_vertex_error: f64,
    pub error_bound: f64,
    /// GT vertices that shared a finest voxel with an earlier vertex.
    pub collisions: usize,
    /// GT faces (in GT indices) whose three voxels do not form an extracted 3-cycle.
    pub missing_faces: Vec<[usize; 3]>,
    /// Extracted 3-cycles that are not the image of any GT face.
    pub extra_faces: usize,
    pub stats: TopologyStats,
}

impl OracleReport {
    pub fn face_sets_equal(&self) -> bool {
        self.missing_faces.is_empty() && self.extra_faces == 0
    }

    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "max_vertex_error = {:e}", self.max_vertex_error);
        let _ = writeln!(s, "error_bound = {:e}", self.error_bound);
        let _ = writeln!(s, "collisions = {}", self.collisions);
        let _ = writeln!(s, "missing_faces = {}", self.missing_faces.len());
        let _ = writeln!(s, "extra_faces = {}", self.extra_faces);
        let _ = writeln!(s, "face_sets_equal = {}", self.face_sets_equal());
        s.push_str(&self.stats.to_report());
        s
    }
}

/// Learning-free codec check: walks the ground-truth ladder down from the
/// base level, takes finest centroids as vertices, maps GT edges through the
/// vertex→voxel assignment and recovers faces as 3-cycles.
pub fn oracle_roundtrip(mesh: &Mesh, cfg: &RunConfig) -> OracleReport {
    let ladder = OccupancyLadder::build(&mesh.vertices, cfg.base_resolution, cfg.stages);
    let mut active: Vec<Coord> = ladder.level(0).coords();
    for l in 1..=cfg.stages {
        active = active
            .iter()
            .flat_map(|&c| subdivide(c))
            .filter(|&c| ladder.level(l).contains(c))
            .collect();
    }
    let finest = cfg.finest_resolution();
    let index = SparseGrid::from_entries(finest, active.iter().enumerate().map(|(i, &c)| (c, i)));
    let decoded: Vec<Point3> = active.iter().map(|&c| centroid(c, finest)).collect();

    let assign: Vec<usize> = mesh
        .vertices
        .iter()
        .map(|&v| *index.get(voxel_of(v, finest)).unwrap())
        .collect();
    let collisions = mesh.vertices.len() - assign.iter().collect::<BTreeSet<_>>().len();
    let max_vertex_error = mesh
        .vertices
        .iter()
        .zip(&assign)
        .map(|(&v, &a)| geom::dist(v, decoded[a]))
        .fold(0.0, f64::max);

    let edges: Vec<(usize, usize)> = mesh
        .edges()
        .into_iter()
        .map(|(a, b)| (assign[a], assign[b]))
        .filter(|(a, b)| a != b)
        .collect();
    let graph = MeshGraph::from_edges(decoded, &edges);
    let found: BTreeSet<[usize; 3]> = graph.faces.iter().copied().collect();
    let mut images = BTreeSet::new();
    let mut missing_faces = Vec::new();
    for f in &mesh.faces {
        let mut t = f.map(|v| assign[v]);
        t.sort_unstable();
        if t[0] == t[1] || t[1] == t[2] {
            missing_faces.push(*f);
            continue;
        }
        images.insert(t);
        if !found.contains(&t) {
            missing_faces.push(*f);
        }
    }
    let extra_faces = found.difference(&images).count();
    let (out, stats) = assemble_mesh(&graph);
    OracleReport {
        mesh: out,
        max_vertex_error,
        error_bound: 3f64.sqrt() / (2.0 * finest as f64),
        collisions,
        missing_faces,
        extra_faces,
        stats,
    }
}
