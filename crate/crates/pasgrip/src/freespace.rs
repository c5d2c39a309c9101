//! Free-space shortest paths around the object on a voxel grid: a single
//! Dijkstra pass from a source point gives collision-free path lengths to any
//! query point, used for the finger-length grasp metric.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::Point3;

use crate::math::RigidTransform;
use crate::mesh::TriMesh;
use crate::voxel::{voxelize_in_bounds, VoxelGrid};

/// Precomputed geodesic-in-free-space distances from one source point, on a
/// voxel grid with one cell of clearance dilation around the object.
pub struct FreeSpaceField {
    occ: VoxelGrid,
    /// Dijkstra distance (meters) from the source to each free cell center.
    dist: Vec<f64>,
    /// Predecessor cell index per cell (u32::MAX where unreached).
    prev: Vec<u32>,
    source: Point3<f64>,
}

const NEIGHBORS: usize = 26;

fn neighbor_offsets() -> [(i64, i64, i64); NEIGHBORS] {
    let mut out = [(0, 0, 0); NEIGHBORS];
    let mut k = 0;
    for dx in -1..=1i64 {
        for dy in -1..=1i64 {
            for dz in -1..=1i64 {
                if (dx, dy, dz) != (0, 0, 0) {
                    out[k] = (dx, dy, dz);
                    k += 1;
                }
            }
        }
    }
    out
}

mod heapkey {
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
use heapkey::OrdF64;

impl FreeSpaceField {
    /// Occupancy = mesh cells dilated by one cell of clearance. Bounds cover
    /// the mesh, the source, and any `extras` query points, with margin.
    pub fn build(
        mesh: &TriMesh,
        source: &Point3<f64>,
        grid_res: f64,
        extras: &[Point3<f64>],
    ) -> Self {
        let margin = 4.0 * grid_res;
        let mut lo = mesh.bbox_min;
        let mut hi = mesh.bbox_max;
        for p in std::iter::once(source).chain(extras) {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..3 {
            lo[a] -= margin;
            hi[a] += margin;
        }
        let occ = voxelize_in_bounds(mesh, &RigidTransform::identity(), grid_res, &lo, &hi)
            .dilated();
        let mut field = Self {
            occ,
            dist: Vec::new(),
            prev: Vec::new(),
            source: *source,
        };
        field.run_dijkstra();
        field
    }

    fn is_free(&self, c: [usize; 3]) -> bool {
        self.occ.get(c[0], c[1], c[2]) < 0.5
    }

    fn run_dijkstra(&mut self) {
        let [nx, ny, nz] = self.occ.dims;
        let n = nx * ny * nz;
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![u32::MAX; n];
        let Some(src) = self.occ.cell_of(&self.source) else {
            self.dist = dist;
            self.prev = prev;
            return;
        };
        let offs = neighbor_offsets();
        let h = self.occ.voxel_size;
        let step_len: Vec<f64> = offs
            .iter()
            .map(|&(a, b, c)| h * (((a * a + b * b + c * c) as f64).sqrt()))
            .collect();
        let idx = |c: [usize; 3]| self.occ.index(c[0], c[1], c[2]);
        let src_i = idx(src);
        dist[src_i] = 0.0;
        let mut heap: BinaryHeap<Reverse<(OrdF64, u32)>> = BinaryHeap::new();
        heap.push(Reverse((OrdF64(0.0), src_i as u32)));
        while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
            let u = u as usize;
            if d > dist[u] {
                continue;
            }
            // index() layout is (i*ny + j)*nz + k
            let cell = [u / (nz * ny), (u / nz) % ny, u % nz];
            for (o, &sl) in offs.iter().zip(&step_len) {
                let (x, y, z) = (
                    cell[0] as i64 + o.0,
                    cell[1] as i64 + o.1,
                    cell[2] as i64 + o.2,
                );
                if x < 0 || y < 0 || z < 0 {
                    continue;
                }
                let c = [x as usize, y as usize, z as usize];
                if c[0] >= nx || c[1] >= ny || c[2] >= nz || !self.is_free(c) {
                    continue;
                }
                let v = idx(c);
                let nd = d + sl;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u as u32;
                    heap.push(Reverse((OrdF64(nd), v as u32)));
                }
            }
        }
        self.dist = dist;
        self.prev = prev;
    }

    /// Best free cell within a 2-cell neighborhood of `cell` (the clearance
    /// dilation can occupy the entire 1-ring around a surface cell), scored by
    /// Dijkstra distance plus the straight hop to `cell`'s center.
    fn best_free_near(&self, cell: [usize; 3]) -> Option<(usize, f64)> {
        let [nx, ny, nz] = self.occ.dims;
        let h = self.occ.voxel_size;
        let mut best: Option<(usize, f64)> = None;
        for a in -2..=2i64 {
            for b in -2..=2i64 {
                for c in -2..=2i64 {
                    if (a, b, c) == (0, 0, 0) {
                        continue;
                    }
                    let (x, y, z) = (
                        cell[0] as i64 + a,
                        cell[1] as i64 + b,
                        cell[2] as i64 + c,
                    );
                    if x < 0 || y < 0 || z < 0 {
                        continue;
                    }
                    let nb = [x as usize, y as usize, z as usize];
                    if nb[0] >= nx || nb[1] >= ny || nb[2] >= nz {
                        continue;
                    }
                    let j = self.occ.index(nb[0], nb[1], nb[2]);
                    if self.dist[j].is_finite() {
                        let step = h * (((a * a + b * b + c * c) as f64).sqrt());
                        let total = self.dist[j] + step;
                        if best.map_or(true, |(_, bt)| total < bt) {
                            best = Some((j, total));
                        }
                    }
                }
            }
        }
        best
    }

    /// Shortest free-space path length from the source to `p`, including the
    /// off-grid legs at both ends. The query cell is treated as free even when
    /// occupied (surface contacts live in occupied cells): paths may enter it
    /// from any free neighbor on the last step. Returns +infinity when no
    /// collision-free path exists.
    pub fn path_length_to(&self, p: &Point3<f64>) -> f64 {
        let Some(cell) = self.occ.cell_of(p) else {
            return f64::INFINITY;
        };
        let i = self.occ.index(cell[0], cell[1], cell[2]);
        let center = self.occ.cell_center(cell[0], cell[1], cell[2]);
        let source_leg = {
            let src = self.occ.cell_of(&self.source);
            match src {
                Some(s) => (self.source - self.occ.cell_center(s[0], s[1], s[2])).norm(),
                None => return f64::INFINITY,
            }
        };
        let end_leg = (p - center).norm();
        let grid_dist = if self.dist[i].is_finite() {
            self.dist[i]
        } else {
            // forced-free endpoint: best nearby free cell plus the final hop
            match self.best_free_near(cell) {
                Some((_, total)) => total,
                None => return f64::INFINITY,
            }
        };
        source_leg + grid_dist + end_leg
    }

    /// Explicit shortest path from the source to `p`: source point, then the
    /// chain of free cell centers, then `p` itself. None when unreachable.
    pub fn path_to(&self, p: &Point3<f64>) -> Option<Vec<Point3<f64>>> {
        let cell = self.occ.cell_of(p)?;
        let i = self.occ.index(cell[0], cell[1], cell[2]);
        // the landing cell: the query cell itself, or (forced-free endpoint)
        // its best free neighbor
        let landing = if self.dist[i].is_finite() {
            i
        } else {
            self.best_free_near(cell)?.0
        };
        let [_, ny, nz] = self.occ.dims;
        let mut chain = Vec::new();
        let mut cur = landing;
        loop {
            let c = [cur / (nz * ny), (cur / nz) % ny, cur % nz];
            chain.push(self.occ.cell_center(c[0], c[1], c[2]));
            let pr = self.prev[cur];
            if pr == u32::MAX {
                break;
            }
            cur = pr as usize;
        }
        chain.reverse();
        let mut out = Vec::with_capacity(chain.len() + 2);
        out.push(self.source);
        out.extend(chain);
        out.push(*p);
        Some(out)
    }
}
