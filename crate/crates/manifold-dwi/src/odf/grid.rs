//! Discretized unit sphere: direction set, quadrature weights and a symmetric
//! neighbor graph.
//!
//! The default grid is a 3x subdivided icosahedron (642 vertices) whose
//! quadrature weights come from the spherical areas of incident triangles, so
//! they sum to 4 pi exactly. An optional repulsion-refined grid with an
//! arbitrary even vertex count (e.g. 724) is available; it uses equal weights
//! and a nearest-neighbor graph. Both constructions are antipodally
//! symmetric.

use crate::spd::{cross3, dot3, normalize3};
#[cfg(test)]
use crate::spd::norm3;

#[derive(Debug, Clone)]
pub struct SphereGrid {
    dirs: Vec<[f64; 3]>,
    weights: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl SphereGrid {
    /// Icosahedron subdivided `subdivisions` times: 12, 42, 162, 642, ...
    /// vertices.
    pub fn icosphere(subdivisions: usize) -> SphereGrid {
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        let mut verts: Vec<[f64; 3]> = vec![
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ]
        .into_iter()
        .map(normalize3)
        .collect();
        let mut faces: Vec<[usize; 3]> = vec![
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

        for _ in 0..subdivisions {
            let mut midpoint = std::collections::HashMap::new();
            let mut new_faces = Vec::with_capacity(faces.len() * 4);
            let mut mid = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    let va = verts[a];
                    let vb = verts[b];
                    verts.push(normalize3([
                        va[0] + vb[0],
                        va[1] + vb[1],
                        va[2] + vb[2],
                    ]));
                    verts.len() - 1
                })
            };
            for &[a, b, c] in &faces {
                let ab = mid(a, b, &mut verts);
                let bc = mid(b, c, &mut verts);
                let ca = mid(c, a, &mut verts);
                new_faces.push([a, ab, ca]);
                new_faces.push([b, bc, ab]);
                new_faces.push([c, ca, bc]);
                new_faces.push([ab, bc, ca]);
            }
            faces = new_faces;
        }

        // Vertex weight = one third of each incident triangle's solid angle
        // (Van Oosterom-Strackee); the triangles partition the sphere, so the
        // weights sum to 4 pi.
        let mut weights = vec![0.0f64; verts.len()];
        for &[a, b, c] in &faces {
            let omega = triangle_solid_angle(verts[a], verts[b], verts[c]);
            weights[a] += omega / 3.0;
            weights[b] += omega / 3.0;
            weights[c] += omega / 3.0;
        }

        let mut neighbors = vec![Vec::new(); verts.len()];
        for &[a, b, c] in &faces {
            for (p, q) in [(a, b), (b, c), (c, a)] {
                if !neighbors[p].contains(&q) {
                    neighbors[p].push(q);
                }
                if !neighbors[q].contains(&p) {
                    neighbors[q].push(p);
                }
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }

        SphereGrid {
            dirs: verts,
            weights,
            neighbors,
        }
    }

    /// Antipodally symmetric grid with `n` (even) vertices: a Fibonacci
    /// hemisphere mirrored through the origin, relaxed by tangential
    /// electrostatic repulsion. Equal quadrature weights 4 pi / n; neighbor
    /// graph from the 6 nearest directions. Deterministic.
    pub fn repulsion(n: usize, iterations: usize) -> SphereGrid {
        assert!(n >= 12 && n % 2 == 0, "repulsion grid needs an even n >= 12");
        let half = n / 2;
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        // Fibonacci spiral over the upper hemisphere.
        let mut free: Vec<[f64; 3]> = (0..half)
            .map(|i| {
                let z = (i as f64 + 0.5) / half as f64; // (0, 1)
                let r = (1.0 - z * z).max(0.0).sqrt();
                let a = golden * i as f64;
                [r * a.cos(), r * a.sin(), z]
            })
            .collect();

        let step = 0.5 / n as f64;
        for _ in 0..iterations {
            let all: Vec<[f64; 3]> = free
                .iter()
                .copied()
                .chain(free.iter().map(|d| [-d[0], -d[1], -d[2]]))
                .collect();
            let mut next = Vec::with_capacity(half);
            for &p in &free {
                let mut f = [0.0f64; 3];
                for &q in &all {
                    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                    let r2 = dot3(d, d);
                    if r2 < 1e-12 {
                        continue;
                    }
                    let inv = 1.0 / (r2 * r2.sqrt());
                    f[0] += d[0] * inv;
                    f[1] += d[1] * inv;
                    f[2] += d[2] * inv;
                }
                // Tangential component only.
                let fn_ = dot3(f, p);
                let t = [f[0] - fn_ * p[0], f[1] - fn_ * p[1], f[2] - fn_ * p[2]];
                next.push(normalize3([
                    p[0] + step * t[0],
                    p[1] + step * t[1],
                    p[2] + step * t[2],
                ]));
            }
            free = next;
        }

        let dirs: Vec<[f64; 3]> = free
            .iter()
            .copied()
            .chain(free.iter().map(|d| [-d[0], -d[1], -d[2]]))
            .collect();
        let weights = vec![4.0 * std::f64::consts::PI / n as f64; n];
        let neighbors = knn_graph(&dirs, 6);
        SphereGrid {
            dirs,
            weights,
            neighbors,
        }
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.dirs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Index of the direction closest to `d` (largest signed dot product).
    pub fn nearest(&self, d: [f64; 3]) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, &g) in self.dirs.iter().enumerate() {
            let dot = dot3(g, d);
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        best
    }
}

/// Solid angle of the spherical triangle (a, b, c) on the unit sphere.
fn triangle_solid_angle(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let num = dot3(a, cross3(b, c)).abs();
    let den = 1.0 + dot3(a, b) + dot3(b, c) + dot3(c, a);
    2.0 * num.atan2(den).abs()
}

fn knn_graph(dirs: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let n = dirs.len();
    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| {
            dot3(dirs[i], dirs[b])
                .partial_cmp(&dot3(dirs[i], dirs[a]))
                .unwrap()
        });
        for &j in order.iter().take(k) {
            if !neighbors[i].contains(&j) {
                neighbors[i].push(j);
            }
            if !neighbors[j].contains(&i) {
                neighbors[j].push(i);
            }
        }
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
    }
    neighbors
}
