//! Small procedural meshes, normalized into the unit cube.

use crate::mesh_io::{normalize_unit_cube, Mesh};

fn normalized(m: Mesh) -> Mesh {
    normalize_unit_cube(&m)
        .expect("procedural shapes have extent")
        .0
}

/// Axis-aligned box with side lengths `size`, 8 vertices and 12 triangles.
pub fn cuboid(size: [f64; 3]) -> Mesh {
    let v = (0..8)
        .map(|i| {
            [
                size[0] * ((i >> 2) & 1) as f64,
                size[1] * ((i >> 1) & 1) as f64,
                size[2] * (i & 1) as f64,
            ]
        })
        .collect();
    let f = vec![
        [0, 1, 3],
        [0, 3, 2],
        [4, 6, 7],
        [4, 7, 5],
        [0, 4, 5],
        [0, 5, 1],
        [2, 3, 7],
        [2, 7, 6],
        [0, 2, 6],
        [0, 6, 4],
        [1, 5, 7],
        [1, 7, 3],
    ];
    normalized(Mesh::new(v, f))
}

pub fn cube() -> Mesh {
    cuboid([1.0, 1.0, 1.0])
}

pub fn tetrahedron() -> Mesh {
    let v = vec![
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    normalized(Mesh::new(
        v,
        vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
    ))
}

pub fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    normalized(Mesh::new(v, f))
}

/// Flat `n × n` vertex grid in the `z = 0` plane, two triangles per cell.
pub fn plane_grid(n: usize) -> Mesh {
    assert!(n >= 2);
    let mut v = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push([i as f64, j as f64, 0.0]);
        }
    }
    let mut f = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let a = i * n + j;
            f.push([a, a + n, a + n + 1]);
            f.push([a, a + n + 1, a + 1]);
        }
    }
    normalized(Mesh::new(v, f))
}

/// Unit square split by one diagonal: 4 vertices, 5 edges.
pub fn square() -> Mesh {
    normalized(Mesh::new(
        vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh_io::validate_mesh;

    #[test]
    fn shapes_are_clean() {
        for (m, v, f) in [
            (cube(), 8, 12),
            (tetrahedron(), 4, 4),
            (icosahedron(), 12, 20),
            (plane_grid(7), 49, 72),
            (square(), 4, 2),
        ] {
            assert_eq!((m.vertices.len(), m.faces.len()), (v, f));
            let r = validate_mesh(&m);
            assert_eq!(r.degenerate_face_count, 0);
            assert_eq!(r.duplicate_vertex_count, 0);
            assert_eq!(r.component_count, 1);
            assert!(m.vertices.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
        }
        assert_eq!(cube().edges().len(), 18);
    }
}
