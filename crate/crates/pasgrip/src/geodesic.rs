//! Approximate surface geodesics: shortest paths on the vertex-edge graph of
//! an isotropically remeshed copy of the object, with an all-pairs table
//! precomputed by repeated single-source Dijkstra runs.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::Point3;
use ordered_float_cmp::OrdF64;

use crate::mesh::{MeshError, TriMesh};
use crate::remesh::isotropic_remesh;

// tiny total-order wrapper so f64 keys can live in a BinaryHeap
mod ordered_float_cmp {
    #[derive(PartialEq)]
    pub struct OrdF64(pub f64);
    impl Eq for OrdF64 {}
    impl PartialOrd for OrdF64 {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for OrdF64 {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }
}

/// Remeshed surface plus the all-pairs vertex distance table.
pub struct GeodesicField {
    pub surface: TriMesh,
    n: usize,
    dist: Vec<f64>,
}

impl GeodesicField {
    /// Remesh at `target_edge_length` (meters) and precompute all vertex
    /// pair distances.
    pub fn build(mesh: &TriMesh, target_edge_length: f64) -> Result<Self, MeshError> {
        let surface = isotropic_remesh(mesh, target_edge_length, 5)?;
        let n = surface.vertices.len();
        // adjacency
        let mut adj: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let mut seen = std::collections::HashSet::new();
        for f in &surface.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                if seen.insert(key) {
                    let w = (surface.vertices[a] - surface.vertices[b]).norm();
                    adj[a].push((b as u32, w));
                    adj[b].push((a as u32, w));
                }
            }
        }
        let mut dist = vec![f64::INFINITY; n * n];
        let mut heap: BinaryHeap<Reverse<(OrdF64, u32)>> = BinaryHeap::new();
        for src in 0..n {
            let row = &mut dist[src * n..(src + 1) * n];
            row[src] = 0.0;
            heap.clear();
            heap.push(Reverse((OrdF64(0.0), src as u32)));
            while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
                let u = u as usize;
                if d > row[u] {
                    continue;
                }
                for &(v, w) in &adj[u] {
                    let nd = d + w;
                    if nd < row[v as usize] {
                        row[v as usize] = nd;
                        heap.push(Reverse((OrdF64(nd), v)));
                    }
                }
            }
        }
        // per-source runs can differ in the last ulp; enforce exact symmetry
        for i in 0..n {
            for j in (i + 1)..n {
                let d = dist[i * n + j].min(dist[j * n + i]);
                dist[i * n + j] = d;
                dist[j * n + i] = d;
            }
        }
        Ok(Self { surface, n, dist })
    }

    /// Default remeshing target: 2% of the bounding-box diagonal.
    pub fn build_default(mesh: &TriMesh) -> Result<Self, MeshError> {
        Self::build(mesh, 0.02 * mesh.bbox_diagonal())
    }

    fn nearest_vertex(&self, p: &Point3<f64>) -> (usize, f64) {
        let (cp, fi) = self.surface.closest_point(p);
        let f = &self.surface.faces[fi];
        let vi = f
            .iter()
            .copied()
            .min_by(|&a, &b| {
                (self.surface.vertices[a] - cp)
                    .norm()
                    .total_cmp(&(self.surface.vertices[b] - cp).norm())
            })
            .unwrap();
        (vi, (self.surface.vertices[vi] - p).norm())
    }

    /// Surface distance between two (near-)surface points: snap to nearest
    /// vertices, add the table entry. +infinity across disconnected
    /// components.
    pub fn between(&self, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
        let (va, da) = self.nearest_vertex(a);
        let (vb, db) = self.nearest_vertex(b);
        let table = self.dist[va * self.n + vb];
        if table.is_infinite() {
            return f64::INFINITY;
        }
        // commutative grouping keeps between(a, b) == between(b, a) exactly
        (da + db) + table
    }

    /// Half the mean edge length; useful as the snapping slack scale.
    pub fn snap_tolerance(&self) -> f64 {
        let (mean, _) = crate::remesh::edge_length_stats(&self.surface);
        mean / 2.0
    }
}
