//! Triangle mesh ingestion, validation, normalization and OBJ output.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geom::{self, Point3};

/// Longest bounding-box edge after normalization.
pub const UNIT_CUBE_EXTENT: f64 = 0.96;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: face references vertex {index} but only {count} vertices are defined")]
    Index {
        line: usize,
        index: i64,
        count: usize,
    },
    #[error("mesh has no vertices")]
    Empty,
    #[error("mesh bounding box has zero extent")]
    DegenerateExtent,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Self {
        Self { vertices, faces }
    }

    /// Unique undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .filter(|(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.faces[face];
        0.5 * geom::double_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Some((lo, hi))
    }
}

fn resolve_index(token: &str, count: usize, line: usize) -> Result<usize, MeshError> {
    let head = token.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|_| MeshError::Parse {
        line,
        message: format!("invalid face index `{token}`"),
    })?;
    let resolved = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return Err(MeshError::Index {
            line,
            index: raw,
            count,
        });
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(MeshError::Index {
            line,
            index: raw,
            count,
        });
    }
    Ok(resolved as usize)
}

/// Parses the `v`/`f` subset of Wavefront OBJ. Polygons are fan-triangulated.
pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut mesh = Mesh::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for slot in p.iter_mut() {
                    let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                        line,
                        message: "vertex needs three coordinates".into(),
                    })?;
                    *slot = tok.parse().map_err(|_| MeshError::Parse {
                        line,
                        message: format!("invalid number `{tok}`"),
                    })?;
                    if !slot.is_finite() {
                        return Err(MeshError::Parse {
                            line,
                            message: format!("non-finite coordinate `{tok}`"),
                        });
                    }
                }
                mesh.vertices.push(p);
            }
            Some("f") => {
                let count = mesh.vertices.len();
                let corners = tokens
                    .map(|t| resolve_index(t, count, line))
                    .collect::<Result<Vec<_>, _>>()?;
                if corners.len() < 3 {
                    return Err(MeshError::Parse {
                        line,
                        message: "face needs at least three vertices".into(),
                    });
                }
                for i in 1..corners.len() - 1 {
                    mesh.faces.push([corners[0], corners[i], corners[i + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Formats with nine significant digits, without trailing zeros.
fn format_coord(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{x:.8e}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(
            out,
            "v {} {} {}",
            format_coord(v[0]),
            format_coord(v[1]),
            format_coord(v[2])
        );
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Affine map `p -> p * scale + translation` applied by [`normalize_unit_cube`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeTransform {
    pub scale: f64,
    pub translation: Point3,
}

impl NormalizeTransform {
    pub fn apply(&self, p: Point3) -> Point3 {
        geom::add(geom::scale(p, self.scale), self.translation)
    }

    pub fn invert(&self, q: Point3) -> Point3 {
        geom::scale(geom::sub(q, self.translation), 1.0 / self.scale)
    }
}

/// Scales the longest bounding-box edge to 0.96 and centers the box at 0.5.
pub fn normalize_unit_cube(mesh: &Mesh) -> Result<(Mesh, NormalizeTransform), MeshError> {
    let (lo, hi) = mesh.bounds().ok_or(MeshError::Empty)?;
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    if extent <= 0.0 {
        return Err(MeshError::DegenerateExtent);
    }
    let scale = UNIT_CUBE_EXTENT / extent;
    let mid = geom::scale(geom::add(lo, hi), 0.5);
    let translation = geom::sub([0.5; 3], geom::scale(mid, scale));
    let transform = NormalizeTransform { scale, translation };
    let vertices = mesh
        .vertices
        .iter()
        .map(|&p| {
            let mut q = transform.apply(p);
            for c in q.iter_mut() {
                *c = c.clamp(0.0, 1.0);
            }
            q
        })
        .collect();
    Ok((Mesh::new(vertices, mesh.faces.clone()), transform))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub degenerate_face_count: usize,
    pub out_of_range_index_count: usize,
    pub duplicate_vertex_count: usize,
    pub component_count: usize,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

pub fn validate_mesh(mesh: &Mesh) -> ValidationReport {
    let n = mesh.vertices.len();
    let mut report = ValidationReport::default();
    let mut parent: Vec<usize> = (0..n).collect();
    for f in &mesh.faces {
        let bad = f.iter().filter(|&&i| i >= n).count();
        report.out_of_range_index_count += bad;
        if bad > 0 {
            continue;
        }
        let [a, b, c] = *f;
        if a == b
            || b == c
            || a == c
            || geom::double_area(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]) <= 1e-12
        {
            report.degenerate_face_count += 1;
        }
        for (x, y) in [(a, b), (b, c)] {
            let (rx, ry) = (find(&mut parent, x), find(&mut parent, y));
            if rx != ry {
                parent[rx.max(ry)] = rx.min(ry);
            }
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    for v in &mesh.vertices {
        let key = v.map(f64::to_bits);
        if !seen.insert(key) {
            report.duplicate_vertex_count += 1;
        }
    }
    report.component_count = (0..n).filter(|&i| find(&mut parent, i) == i).count();
    report
}
