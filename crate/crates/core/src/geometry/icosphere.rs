//! Subdivided icosahedron: quasi-uniform direction sets on the sphere
//! with the adjacency and local stencils the bundle machinery needs.

use nalgebra::Vector3;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

#[derive(Debug, Clone)]
pub struct IcoMesh {
    /// Unit direction per vertex.
    pub vertices: Vec<Vector3<f64>>,
    /// Triangles as vertex index triples, outward orientation.
    pub faces: Vec<[usize; 3]>,
    /// One-ring neighbor lists.
    pub neighbors: Vec<Vec<usize>>,
    /// Stencil (vertices within graph distance 3, excluding the center).
    pub stencils: Vec<Vec<usize>>,
    /// Orthonormal tangent basis per vertex.
    pub tangents: Vec<[Vector3<f64>; 2]>,
    pub level: u32,
}

/// Vertex counts of the subdivision family: 12, 42, 162, 642, 2562, ...
pub fn vertex_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

/// Snaps a requested direction count to the nearest icosahedral count.
/// Returns (level, count, snapped?).
pub fn snap_direction_count(requested: usize) -> (u32, usize, bool) {
    let mut best = (0u32, vertex_count(0));
    for level in 0..=6u32 {
        let c = vertex_count(level);
        if (c as i64 - requested as i64).abs() < (best.1 as i64 - requested as i64).abs() {
            best = (level, c);
        }
    }
    (best.0, best.1, best.1 != requested)
}

fn base_icosahedron() -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let vertices: Vec<Vector3<f64>> = raw
        .iter()
        .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
        .collect();
    let faces = vec![
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
    (vertices, faces)
}

impl IcoMesh {
    pub fn new(level: u32) -> Self {
        let (mut vertices, mut faces) = base_icosahedron();
        for _ in 0..level {
            let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
            let mut new_faces = Vec::with_capacity(faces.len() * 4);
            let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[a] + vertices[b]).normalize();
                    vertices.push(m);
                    vertices.len() - 1
                })
            };
            for &[a, b, c] in &faces {
                let ab = mid(a, b, &mut vertices);
                let bc = mid(b, c, &mut vertices);
                let ca = mid(c, a, &mut vertices);
                new_faces.push([a, ab, ca]);
                new_faces.push([b, bc, ab]);
                new_faces.push([c, ca, bc]);
                new_faces.push([ab, bc, ca]);
            }
            faces = new_faces;
        }
        let nv = vertices.len();
        let mut neighbor_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); nv];
        for &[a, b, c] in &faces {
            neighbor_sets[a].insert(b);
            neighbor_sets[a].insert(c);
            neighbor_sets[b].insert(a);
            neighbor_sets[b].insert(c);
            neighbor_sets[c].insert(a);
            neighbor_sets[c].insert(b);
        }
        let neighbors: Vec<Vec<usize>> = neighbor_sets
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        // Graph-distance-3 stencils for the least-squares fits.
        let stencils: Vec<Vec<usize>> = (0..nv)
            .map(|v| {
                let mut seen = BTreeSet::new();
                seen.insert(v);
                let mut out = Vec::new();
                let mut queue = VecDeque::new();
                queue.push_back((v, 0u32));
                while let Some((w, d)) = queue.pop_front() {
                    if d >= 3 {
                        continue;
                    }
                    for &u in &neighbors[w] {
                        if seen.insert(u) {
                            out.push(u);
                            queue.push_back((u, d + 1));
                        }
                    }
                }
                out
            })
            .collect();
        let tangents = vertices
            .iter()
            .map(|w| {
                let trial = if w.x.abs() < 0.9 {
                    Vector3::x()
                } else {
                    Vector3::y()
                };
                let t1 = (trial - w * trial.dot(w)).normalize();
                let t2 = w.cross(&t1);
                [t1, t2]
            })
            .collect();
        IcoMesh {
            vertices,
            faces,
            neighbors,
            stencils,
            tangents,
            level,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Gnomonic coordinates of vertex `j` in the tangent plane at `v`.
    pub fn gnomonic(&self, v: usize, j: usize) -> [f64; 2] {
        let w = &self.vertices[v];
        let p = &self.vertices[j];
        let s = p.dot(w);
        let proj = p / s - w;
        [proj.dot(&self.tangents[v][0]), proj.dot(&self.tangents[v][1])]
    }
}
