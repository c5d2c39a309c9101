//! Gripper topology optimization: collision-free design volume from the
//! reversed object motion, SIMP compliance minimization on a regular hex
//! grid, and extraction of the printable gripper mesh.

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::energy::adaptive_time_samples;
use crate::marching::marching_cubes;
use crate::mesh::{MeshError, TriMesh};
use crate::robot::{RobotModel, Trajectory};
use crate::skeleton::Skeleton;
use crate::voxel::{swept_volume_grid, VoxelError, VoxelGrid};

/// Production voxel size (meters).
pub const DEFAULT_VOXEL_SIZE: f64 = 2e-3;
/// Faster desk-scale voxel size.
pub const DESK_VOXEL_SIZE: f64 = 5e-3;
/// Target material fraction of the design domain.
pub const DEFAULT_VOLUME_FRACTION: f64 = 0.1;
/// SIMP penalization exponent.
pub const DEFAULT_PENALIZATION: f64 = 3.0;
/// Optimality-criteria iterations.
pub const DEFAULT_ITERS: usize = 60;
/// Contact sphere radius (2 voxels at production resolution).
pub const DEFAULT_SPHERE_R: f64 = 4e-3;
/// Radius of the fixed mount region around the FFO (meters).
pub const FIXED_REGION_RADIUS: f64 = 0.03;
/// Minimum relative stiffness of void material.
const E_MIN: f64 = 1e-9;
const NU: f64 = 0.3;
/// Density filter radius in cells.
const FILTER_RADIUS: f64 = 1.5;

#[derive(Debug, Error)]
pub enum TopoptError {
    #[error("skeleton joint {joint} of finger {finger} lies in the swept volume")]
    SkeletonBlocked { finger: usize, joint: usize },
    #[error("boundary condition cell {0:?} is outside the design domain")]
    BcOutsideDomain([usize; 3]),
    #[error("load cells are not connected to the fixed region through free cells")]
    Disconnected,
    #[error("no fixed cells or no loads")]
    EmptyBc,
    #[error("isosurface is empty; volume fraction too low")]
    EmptyIsosurface,
    #[error("voxel error: {0}")]
    Voxel(#[from] VoxelError),
    #[error("mesh error: {0}")]
    Mesh(#[from] MeshError),
}

/// Swept-object occupancy and its free complement over the design box.
pub struct FreeVolume {
    /// 1 = cell available for gripper material.
    pub free: VoxelGrid,
    /// Dilated swept occupancy of the object along the reversed trajectory;
    /// its complement defines `free`.
    pub swept: VoxelGrid,
    /// Undilated swept occupancy: the actual voxel union the object passes
    /// through. Material extraction subtracts this one, so contact spheres
    /// can keep material right up to the object surface.
    pub swept_raw: VoxelGrid,
}

/// Object poses relative to the gripper along the trajectory, in the world
/// frame of the grasp keyframe: M(t) = F(1)·F(t)⁻¹ applied to the object.
fn relative_object_poses(
    mesh: &TriMesh,
    traj: &Trajectory,
    robot: &RobotModel,
    step: f64,
) -> Vec<crate::math::RigidTransform> {
    let grasp = robot.forward_kinematics(traj.keyframes.last().unwrap());
    let ffo = Point3::from(grasp.translation);
    // conservative moment arm: farthest object bbox corner from the flange
    let mut radius = 0.0f64;
    for cx in 0..8 {
        let corner = Point3::new(
            if cx & 1 == 0 { mesh.bbox_min.x } else { mesh.bbox_max.x },
            if cx & 2 == 0 { mesh.bbox_min.y } else { mesh.bbox_max.y },
            if cx & 4 == 0 { mesh.bbox_min.z } else { mesh.bbox_max.z },
        );
        radius = radius.max((corner - ffo).norm());
    }
    let times = adaptive_time_samples(robot, traj, radius, step);
    times
        .iter()
        .map(|&t| {
            grasp.compose(&robot.forward_kinematics(&traj.interpolate(t)).inverse())
        })
        .collect()
}

/// Free design volume: the complement of the dilated swept object occupancy,
/// restricted to the `[lo, hi]` design box (plus a one-cell empty border so
/// extracted surfaces close). Skeleton joints other than the contact tips
/// must land in free cells; the tips always touch the object and are covered
/// by the contact spheres at extraction.
pub fn collision_free_volume(
    mesh: &TriMesh,
    traj: &Trajectory,
    robot: &RobotModel,
    voxel_size: f64,
    lo: &Point3<f64>,
    hi: &Point3<f64>,
    skeleton: &Skeleton,
) -> Result<FreeVolume, TopoptError> {
    let poses = relative_object_poses(mesh, traj, robot, voxel_size);
    let swept_raw = swept_volume_grid(mesh, &poses, voxel_size)?;
    let swept = swept_raw.dilated();

    let mut dims = [0usize; 3];
    let mut origin = Point3::origin();
    for a in 0..3 {
        let n = ((hi[a] - lo[a]) / voxel_size).ceil().max(1.0) as usize;
        dims[a] = n + 2;
        origin[a] = lo[a] - voxel_size;
    }
    let mut free = VoxelGrid::zeros(origin, voxel_size, dims);
    for i in 1..dims[0] - 1 {
        for j in 1..dims[1] - 1 {
            for k in 1..dims[2] - 1 {
                let c = free.cell_center(i, j, k);
                let occupied = swept
                    .cell_of(&c)
                    .map(|ci| swept.get(ci[0], ci[1], ci[2]) > 0.5)
                    .unwrap_or(false);
                if !occupied {
                    free.set(i, j, k, 1.0);
                }
            }
        }
    }
    let m = skeleton.joints_per_finger();
    for (f, finger) in skeleton.fingers.iter().enumerate() {
        for (j, p) in finger.iter().enumerate().take(m - 1) {
            let ok = free
                .cell_of(p)
                .map(|c| free.get(c[0], c[1], c[2]) > 0.5)
                .unwrap_or(false);
            if !ok {
                return Err(TopoptError::SkeletonBlocked { finger: f, joint: j });
            }
        }
    }
    Ok(FreeVolume {
        free,
        swept,
        swept_raw,
    })
}

/// Supports and loads on the design grid.
#[derive(Debug, Clone)]
pub struct BoundaryConditions {
    pub fixed_cells: Vec<[usize; 3]>,
    /// (cell, force vector); the force is spread over the cell's 8 nodes.
    pub loads: Vec<([usize; 3], Vector3<f64>)>,
}

impl BoundaryConditions {
    /// Fix every free cell whose center lies within `radius` of `ffo`; one
    /// load per contact along the negative contact normal.
    pub fn for_gripper(
        free: &VoxelGrid,
        ffo: &Point3<f64>,
        radius: f64,
        contacts: &[(Point3<f64>, Vector3<f64>)],
        load_scales: &[f64],
    ) -> Self {
        let [nx, ny, nz] = free.dims;
        let mut fixed_cells = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if free.get(i, j, k) > 0.5
                        && (free.cell_center(i, j, k) - ffo).norm() <= radius
                    {
                        fixed_cells.push([i, j, k]);
                    }
                }
            }
        }
        let mut loads = Vec::new();
        for (idx, (p, n)) in contacts.iter().enumerate() {
            // nearest free cell to the contact point (its own cell borders
            // the dilated swept volume)
            let mut best: Option<([usize; 3], f64)> = None;
            for i in 0..nx {
                for j in 0..ny {
                    for k in 0..nz {
                        if free.get(i, j, k) > 0.5 {
                            let d = (free.cell_center(i, j, k) - p).norm();
                            if best.map_or(true, |(_, bd)| d < bd) {
                                best = Some(([i, j, k], d));
                            }
                        }
                    }
                }
            }
            if let Some((cell, _)) = best {
                let scale = load_scales.get(idx).copied().unwrap_or(1.0);
                loads.push((cell, -n.normalize() * scale));
            }
        }
        Self { fixed_cells, loads }
    }
}

/// Converged SIMP densities on the design grid.
pub struct DensityField {
    /// Physical (filtered) densities in [0,1]; 0 outside the mask.
    pub grid: VoxelGrid,
    /// Design-domain mask (free cells).
    pub mask: Vec<bool>,
    pub volume_fraction: f64,
    pub p: f64,
}

/// 24x24 stiffness of a unit 8-node hexahedron, E = 1, computed with 2x2x2
/// Gauss quadrature. Node a sits at offsets (a&1, (a>>1)&1, (a>>2)&1).
fn hex_stiffness() -> [[f64; 24]; 24] {
    let lambda = NU / ((1.0 + NU) * (1.0 - 2.0 * NU));
    let mu = 1.0 / (2.0 * (1.0 + NU));
    // C as 6x6 in Voigt order (xx, yy, zz, xy, yz, zx)
    let mut c = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = lambda;
        }
        c[i][i] = lambda + 2.0 * mu;
        c[i + 3][i + 3] = mu;
    }
    let g = 1.0 / 3.0f64.sqrt();
    let mut ke = [[0.0; 24]; 24];
    for gp in 0..8 {
        let xi = if gp & 1 == 0 { -g } else { g };
        let eta = if gp & 2 == 0 { -g } else { g };
        let zeta = if gp & 4 == 0 { -g } else { g };
        // dN/dx for the unit cube: dN/dxi * 2 (x = (xi+1)/2), detJ = 1/8
        let mut dn = [[0.0; 3]; 8];
        for a in 0..8 {
            let sx = if a & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if a & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if a & 4 == 0 { -1.0 } else { 1.0 };
            dn[a][0] = 0.25 * sx * (1.0 + sy * eta) * (1.0 + sz * zeta);
            dn[a][1] = 0.25 * sy * (1.0 + sx * xi) * (1.0 + sz * zeta);
            dn[a][2] = 0.25 * sz * (1.0 + sx * xi) * (1.0 + sy * eta);
        }
        // B: 6 x 24
        let mut b = [[0.0; 24]; 6];
        for a in 0..8 {
            b[0][3 * a] = dn[a][0];
            b[1][3 * a + 1] = dn[a][1];
            b[2][3 * a + 2] = dn[a][2];
            b[3][3 * a] = dn[a][1];
            b[3][3 * a + 1] = dn[a][0];
            b[4][3 * a + 1] = dn[a][2];
            b[4][3 * a + 2] = dn[a][1];
            b[5][3 * a] = dn[a][2];
            b[5][3 * a + 2] = dn[a][0];
        }
        // ke += B' C B * detJ (unit Gauss weights)
        let det_j = 0.125;
        for r in 0..24 {
            let mut cb = [0.0; 6];
            for i in 0..6 {
                let mut s = 0.0;
                for j in 0..6 {
                    s += c[i][j] * b[j][r];
                }
                cb[i] = s;
            }
            for s_idx in 0..24 {
                let mut v = 0.0;
                for i in 0..6 {
                    v += b[i][s_idx] * cb[i];
                }
                ke[r][s_idx] += det_j * v;
            }
        }
    }
    ke
}

struct FeModel {
    ndof: usize,
    /// Flat cell index of each design element.
    elems: Vec<usize>,
    /// Global dof indices of each element's 24 dofs.
    edof: Vec<[u32; 24]>,
    fixed: Vec<bool>,
    f: Vec<f64>,
    ke: [[f64; 24]; 24],
}

impl FeModel {
    fn build(free: &VoxelGrid, bc: &BoundaryConditions) -> Result<Self, TopoptError> {
        if bc.fixed_cells.is_empty() || bc.loads.is_empty() {
            return Err(TopoptError::EmptyBc);
        }
        let [nx, ny, nz] = free.dims;
        let node = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
        let ndof = 3 * (nx + 1) * (ny + 1) * (nz + 1);
        let mut elems = Vec::new();
        let mut edof = Vec::new();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if free.get(i, j, k) > 0.5 {
                        elems.push(free.index(i, j, k));
                        let mut dofs = [0u32; 24];
                        for a in 0..8 {
                            let n = node(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
                            for ax in 0..3 {
                                dofs[3 * a + ax] = (3 * n + ax) as u32;
                            }
                        }
                        edof.push(dofs);
                    }
                }
            }
        }
        let in_domain = |c: &[usize; 3]| {
            c[0] < nx && c[1] < ny && c[2] < nz && free.get(c[0], c[1], c[2]) > 0.5
        };
        let mut fixed = vec![false; ndof];
        for c in &bc.fixed_cells {
            if !in_domain(c) {
                return Err(TopoptError::BcOutsideDomain(*c));
            }
            for a in 0..8 {
                let n = node(c[0] + (a & 1), c[1] + ((a >> 1) & 1), c[2] + ((a >> 2) & 1));
                for ax in 0..3 {
                    fixed[3 * n + ax] = true;
                }
            }
        }
        let mut f = vec![0.0; ndof];
        for (c, force) in &bc.loads {
            if !in_domain(c) {
                return Err(TopoptError::BcOutsideDomain(*c));
            }
            for a in 0..8 {
                let n = node(c[0] + (a & 1), c[1] + ((a >> 1) & 1), c[2] + ((a >> 2) & 1));
                for ax in 0..3 {
                    f[3 * n + ax] += force[ax] / 8.0;
                }
            }
        }
        // every load cell must reach a fixed cell through free cells
        Self::check_connected(free, bc)?;
        Ok(Self {
            ndof,
            elems,
            edof,
            fixed,
            f,
            ke: hex_stiffness(),
        })
    }

    fn check_connected(free: &VoxelGrid, bc: &BoundaryConditions) -> Result<(), TopoptError> {
        let [nx, ny, nz] = free.dims;
        let mut seen = vec![false; nx * ny * nz];
        let mut queue = std::collections::VecDeque::new();
        for c in &bc.fixed_cells {
            let idx = free.index(c[0], c[1], c[2]);
            if !seen[idx] {
                seen[idx] = true;
                queue.push_back(*c);
            }
        }
        while let Some([i, j, k]) = queue.pop_front() {
            let mut push = |c: [usize; 3]| {
                if c[0] < nx && c[1] < ny && c[2] < nz && free.get(c[0], c[1], c[2]) > 0.5 {
                    let idx = free.index(c[0], c[1], c[2]);
                    if !seen[idx] {
                        seen[idx] = true;
                        queue.push_back(c);
                    }
                }
            };
            if i > 0 {
                push([i - 1, j, k]);
            }
            if j > 0 {
                push([i, j - 1, k]);
            }
            if k > 0 {
                push([i, j, k - 1]);
            }
            push([i + 1, j, k]);
            push([i, j + 1, k]);
            push([i, j, k + 1]);
        }
        for (c, _) in &bc.loads {
            if !seen[free.index(c[0], c[1], c[2])] {
                return Err(TopoptError::Disconnected);
            }
        }
        Ok(())
    }

    /// y = K(E) x with fixed dofs pinned (identity rows).
    fn matvec(&self, e_mod: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (ei, dofs) in self.edof.iter().enumerate() {
            let e = e_mod[ei];
            let mut xe = [0.0; 24];
            for (a, &d) in dofs.iter().enumerate() {
                let d = d as usize;
                xe[a] = if self.fixed[d] { 0.0 } else { x[d] };
            }
            for r in 0..24 {
                let dr = dofs[r] as usize;
                if self.fixed[dr] {
                    continue;
                }
                let row = &self.ke[r];
                let mut s = 0.0;
                for a in 0..24 {
                    s += row[a] * xe[a];
                }
                y[dr] += e * s;
            }
        }
        for d in 0..self.ndof {
            if self.fixed[d] {
                y[d] = x[d];
            }
        }
    }

    /// Jacobi-preconditioned CG; returns (compliance, per-element strain
    /// energies u_e' KE u_e). `u` is the warm-started solution.
    fn solve(&self, e_mod: &[f64], u: &mut [f64]) -> (f64, Vec<f64>) {
        let n = self.ndof;
        let mut diag = vec![0.0; n];
        for (ei, dofs) in self.edof.iter().enumerate() {
            for (a, &d) in dofs.iter().enumerate() {
                diag[d as usize] += e_mod[ei] * self.ke[a][a];
            }
        }
        for d in 0..n {
            if self.fixed[d] || diag[d] <= 0.0 {
                diag[d] = 1.0;
            }
        }
        let mut b = self.f.clone();
        for d in 0..n {
            if self.fixed[d] {
                b[d] = 0.0;
                u[d] = 0.0;
            }
        }
        let bnorm: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = vec![0.0; n];
        self.matvec(e_mod, u, &mut r);
        for d in 0..n {
            r[d] = b[d] - r[d];
        }
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; n];
        let tol = 1e-8 * bnorm.max(1e-30);
        for _ in 0..10_000 {
            let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= tol {
                break;
            }
            self.matvec(e_mod, &p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for d in 0..n {
                u[d] += alpha * p[d];
                r[d] -= alpha * ap[d];
            }
            for d in 0..n {
                z[d] = r[d] / diag[d];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for d in 0..n {
                p[d] = z[d] + beta * p[d];
            }
        }
        let mut energies = vec![0.0; self.elems.len()];
        let mut compliance = 0.0;
        for (ei, dofs) in self.edof.iter().enumerate() {
            let mut ue = [0.0; 24];
            for (a, &d) in dofs.iter().enumerate() {
                ue[a] = u[d as usize];
            }
            let mut e_energy = 0.0;
            for r_idx in 0..24 {
                let mut s = 0.0;
                for a in 0..24 {
                    s += self.ke[r_idx][a] * ue[a];
                }
                e_energy += ue[r_idx] * s;
            }
            energies[ei] = e_energy;
            compliance += e_mod[ei] * e_energy;
        }
        (compliance, energies)
    }
}

/// Normalized cone-weight density filter over the design elements.
struct DensityFilter {
    /// Per element: (neighbor element index, weight).
    neighbors: Vec<Vec<(u32, f64)>>,
    /// Per element: sum of neighbor weights.
    wsum: Vec<f64>,
}

impl DensityFilter {
    fn build(free: &VoxelGrid, elems: &[usize]) -> Self {
        let [nx, ny, nz] = free.dims;
        let mut elem_at = vec![u32::MAX; nx * ny * nz];
        for (ei, &flat) in elems.iter().enumerate() {
            elem_at[flat] = ei as u32;
        }
        let r = FILTER_RADIUS;
        let reach = r.floor() as i64;
        let mut offsets = Vec::new();
        for a in -reach..=reach {
            for b in -reach..=reach {
                for c in -reach..=reach {
                    let d = ((a * a + b * b + c * c) as f64).sqrt();
                    if d < r {
                        offsets.push((a, b, c, r - d));
                    }
                }
            }
        }
        let mut neighbors = Vec::with_capacity(elems.len());
        let mut wsum = Vec::with_capacity(elems.len());
        for &flat in elems {
            let (i, j, k) = (flat / (nz * ny), (flat / nz) % ny, flat % nz);
            let mut nb = Vec::new();
            let mut s = 0.0;
            for &(a, b, c, w) in &offsets {
                let (x, y, z) = (i as i64 + a, j as i64 + b, k as i64 + c);
                if x < 0 || y < 0 || z < 0 {
                    continue;
                }
                let (x, y, z) = (x as usize, y as usize, z as usize);
                if x >= nx || y >= ny || z >= nz {
                    continue;
                }
                let ej = elem_at[free.index(x, y, z)];
                if ej != u32::MAX {
                    nb.push((ej, w));
                    s += w;
                }
            }
            neighbors.push(nb);
            wsum.push(s);
        }
        Self { neighbors, wsum }
    }

    fn apply(&self, rho: &[f64], out: &mut [f64]) {
        for (e, nb) in self.neighbors.iter().enumerate() {
            let mut s = 0.0;
            for &(j, w) in nb {
                s += w * rho[j as usize];
            }
            out[e] = s / self.wsum[e];
        }
    }

    /// Chain rule of the filter: spread physical-density sensitivities back
    /// to the raw densities.
    fn back(&self, d_phys: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (e, nb) in self.neighbors.iter().enumerate() {
            let g = d_phys[e] / self.wsum[e];
            for &(j, w) in nb {
                out[j as usize] += w * g;
            }
        }
    }
}

/// SIMP with optimality-criteria updates. Returns the converged physical
/// density field and the compliance history (one entry per iteration).
pub fn simp_optimize(
    free: &VoxelGrid,
    bc: &BoundaryConditions,
    volume_fraction: f64,
    p: f64,
    iters: usize,
) -> Result<(DensityField, Vec<f64>), TopoptError> {
    let fe = FeModel::build(free, bc)?;
    let filter = DensityFilter::build(free, &fe.elems);
    let ne = fe.elems.len();
    let mut rho = vec![volume_fraction; ne];
    let mut rho_phys = vec![0.0; ne];
    let mut u = vec![0.0; fe.ndof];
    let mut history = Vec::with_capacity(iters);
    let mut e_mod = vec![0.0; ne];
    let mut dc_phys = vec![0.0; ne];
    let mut dc = vec![0.0; ne];
    let mut trial_phys = vec![0.0; ne];
    for it in 0..iters {
        filter.apply(&rho, &mut rho_phys);
        for e in 0..ne {
            e_mod[e] = E_MIN + rho_phys[e].powf(p) * (1.0 - E_MIN);
        }
        let (compliance, energies) = fe.solve(&e_mod, &mut u);
        history.push(compliance);
        for e in 0..ne {
            dc_phys[e] = -p * rho_phys[e].powf(p - 1.0) * (1.0 - E_MIN) * energies[e];
        }
        filter.back(&dc_phys, &mut dc);
        // OC bisection on the volume multiplier; volume measured on the
        // physical (filtered) densities
        let (mut lo, mut hi) = (1e-10f64, 1e10f64);
        let move_limit = 0.2;
        let mut trial = vec![0.0; ne];
        for _ in 0..60 {
            let lambda = (lo * hi).sqrt();
            for e in 0..ne {
                let be = (-dc[e]).max(0.0) / lambda;
                let v = rho[e] * be.sqrt();
                trial[e] = v
                    .min(rho[e] + move_limit)
                    .max(rho[e] - move_limit)
                    .clamp(0.0, 1.0);
            }
            filter.apply(&trial, &mut trial_phys);
            let mean: f64 = trial_phys.iter().sum::<f64>() / ne as f64;
            if mean > volume_fraction {
                lo = lambda;
            } else {
                hi = lambda;
            }
            if hi / lo < 1.0 + 1e-9 {
                break;
            }
        }
        rho.copy_from_slice(&trial);
        let _ = it;
    }
    filter.apply(&rho, &mut rho_phys);
    let mut grid = VoxelGrid::zeros(free.origin, free.voxel_size, free.dims);
    let mut mask = vec![false; grid.values.len()];
    for (e, &flat) in fe.elems.iter().enumerate() {
        grid.values[flat] = rho_phys[e] as f32;
        mask[flat] = true;
    }
    Ok((
        DensityField {
            grid,
            mask,
            volume_fraction,
            p,
        },
        history,
    ))
}

/// Compliance of an arbitrary physical density field under the same FE model
/// (for comparisons in tests and reports).
pub fn compliance_of(
    free: &VoxelGrid,
    bc: &BoundaryConditions,
    rho_phys_uniform: f64,
    p: f64,
) -> Result<f64, TopoptError> {
    let fe = FeModel::build(free, bc)?;
    let e = E_MIN + rho_phys_uniform.powf(p) * (1.0 - E_MIN);
    let e_mod = vec![e; fe.elems.len()];
    let mut u = vec![0.0; fe.ndof];
    Ok(fe.solve(&e_mod, &mut u).0)
}

/// Gaussian smoothing (sigma = 1 cell) of the density grid, zero outside.
fn smooth(grid: &VoxelGrid) -> VoxelGrid {
    let mut weights = Vec::new();
    for d in -2i64..=2 {
        weights.push((d, (-((d * d) as f64) / 2.0).exp()));
    }
    let mut out = grid.clone();
    let mut tmp = grid.clone();
    let [nx, ny, nz] = grid.dims;
    // separable passes along each axis
    for axis in 0..3 {
        let src = if axis % 2 == 0 { &out } else { &tmp };
        let mut dst = src.clone();
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    let mut s = 0.0;
                    let mut wt = 0.0;
                    for &(d, w) in &weights {
                        let mut c = [i as i64, j as i64, k as i64];
                        c[axis] += d;
                        if c[0] < 0 || c[1] < 0 || c[2] < 0 {
                            continue;
                        }
                        let (x, y, z) = (c[0] as usize, c[1] as usize, c[2] as usize);
                        if x >= nx || y >= ny || z >= nz {
                            continue;
                        }
                        s += w * src.get(x, y, z) as f64;
                        wt += w;
                    }
                    dst.set(i, j, k, (s / wt) as f32);
                }
            }
        }
        if axis % 2 == 0 {
            tmp = dst;
        } else {
            out = dst;
        }
    }
    tmp
}

/// Final gripper surface: smoothed densities thresholded at `iso`, unioned
/// with spheres at the contact points, re-subtracted against the swept
/// occupancy, and meshed with marching cubes.
pub fn extract_gripper(
    density: &DensityField,
    swept: &VoxelGrid,
    contacts: &[Point3<f64>],
    sphere_r: f64,
    iso: f64,
) -> Result<TriMesh, TopoptError> {
    let smoothed = smooth(&density.grid);
    let [nx, ny, nz] = smoothed.dims;
    let mut solid = VoxelGrid::zeros(smoothed.origin, smoothed.voxel_size, smoothed.dims);
    let mut any = false;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                let idx = solid.index(i, j, k);
                let c = solid.cell_center(i, j, k);
                let in_sphere = contacts.iter().any(|p| (c - p).norm() <= sphere_r);
                let dense = density.mask[idx] && smoothed.get(i, j, k) as f64 >= iso;
                if dense || in_sphere {
                    solid.values[idx] = 1.0;
                    any = true;
                }
            }
        }
    }
    if !any {
        return Err(TopoptError::EmptyIsosurface);
    }
    // subtraction contract: no material inside the swept volume
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if solid.get(i, j, k) > 0.5 {
                    let c = solid.cell_center(i, j, k);
                    let occ = swept
                        .cell_of(&c)
                        .map(|ci| swept.get(ci[0], ci[1], ci[2]) > 0.5)
                        .unwrap_or(false);
                    if occ {
                        solid.set(i, j, k, 0.0);
                    }
                }
            }
        }
    }
    // clear the pad ring so the surface closes
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1 {
                    solid.set(i, j, k, 0.0);
                }
            }
        }
    }
    match marching_cubes(&solid, 0.5)? {
        Some(mesh) => Ok(mesh),
        None => Err(TopoptError::EmptyIsosurface),
    }
}

/// True when no occupied cell of the extracted gripper (re-voxelized on the
/// swept grid) overlaps the swept volume.
pub fn gripper_clear_of_swept(gripper: &TriMesh, swept: &VoxelGrid) -> bool {
    let [nx, ny, nz] = swept.dims;
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if swept.get(i, j, k) > 0.5 && gripper.point_inside(&swept.cell_center(i, j, k))
                {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::math::RigidTransform;
    use approx::assert_relative_eq;

    #[test]
    fn hex_stiffness_symmetric_with_rigid_modes() {
        let ke = hex_stiffness();
        for r in 0..24 {
            for c in 0..24 {
                assert_relative_eq!(ke[r][c], ke[c][r], epsilon = 1e-12);
            }
            assert!(ke[r][r] > 0.0);
        }
        // rigid translation along each axis produces zero force
        for ax in 0..3 {
            let mut x = [0.0; 24];
            for a in 0..8 {
                x[3 * a + ax] = 1.0;
            }
            for r in 0..24 {
                let s: f64 = (0..24).map(|c| ke[r][c] * x[c]).sum();
                assert!(s.abs() < 1e-12, "rigid mode leaks force {s}");
            }
        }
    }

    fn cantilever() -> (VoxelGrid, BoundaryConditions) {
        let free = {
            let mut g = VoxelGrid::zeros(Point3::origin(), 1.0, [16, 8, 8]);
            g.values.iter_mut().for_each(|v| *v = 1.0);
            g
        };
        let mut fixed = Vec::new();
        for j in 0..8 {
            for k in 0..8 {
                fixed.push([0, j, k]);
            }
        }
        let loads = vec![([15, 3, 0], Vector3::new(0.0, 0.0, -1.0))];
        (
            free,
            BoundaryConditions {
                fixed_cells: fixed,
                loads,
            },
        )
    }

    #[test]
    fn cantilever_simp_beats_uniform_density() {
        let (free, bc) = cantilever();
        let vf = 0.3;
        let (field, history) = simp_optimize(&free, &bc, vf, 3.0, 40).unwrap();
        // volume constraint met on the physical densities
        let masked: Vec<f64> = field
            .grid
            .values
            .iter()
            .zip(&field.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v as f64)
            .collect();
        let mean = masked.iter().sum::<f64>() / masked.len() as f64;
        assert!((mean - vf).abs() <= 1e-3, "mean density {mean}");
        assert!(masked.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // optimized layout is stiffer than spreading the same material evenly
        let uniform = compliance_of(&free, &bc, vf, 3.0).unwrap();
        let optimized = *history.last().unwrap();
        assert!(
            optimized < uniform,
            "optimized {optimized} vs uniform {uniform}"
        );
        // settles monotonically after the first few iterations
        for w in history[5..].windows(2) {
            assert!(w[1] <= w[0] * 1.01, "compliance rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn masked_out_cells_stay_zero() {
        let (mut free, bc) = cantilever();
        // carve a void block out of the domain
        for i in 6..10 {
            for j in 0..3 {
                for k in 0..8 {
                    free.set(i, j, k, 0.0);
                }
            }
        }
        let (field, _) = simp_optimize(&free, &bc, 0.3, 3.0, 10).unwrap();
        let [nx, ny, nz] = free.dims;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if free.get(i, j, k) < 0.5 {
                        assert_eq!(field.grid.get(i, j, k), 0.0);
                        assert!(!field.mask[field.grid.index(i, j, k)]);
                    }
                }
            }
        }
    }

    #[test]
    fn disconnected_load_errors() {
        let mut free = VoxelGrid::zeros(Point3::origin(), 1.0, [9, 4, 4]);
        free.values.iter_mut().for_each(|v| *v = 1.0);
        // sever the beam in the middle
        for j in 0..4 {
            for k in 0..4 {
                free.set(4, j, k, 0.0);
            }
        }
        let bc = BoundaryConditions {
            fixed_cells: vec![[0, 0, 0], [0, 1, 0]],
            loads: vec![([8, 2, 2], Vector3::new(0.0, 0.0, -1.0))],
        };
        assert!(matches!(
            simp_optimize(&free, &bc, 0.3, 3.0, 5),
            Err(TopoptError::Disconnected)
        ));
    }

    #[test]
    fn bc_outside_domain_errors() {
        let (free, mut bc) = cantilever();
        bc.loads[0].0 = [99, 0, 0];
        assert!(matches!(
            simp_optimize(&free, &bc, 0.3, 3.0, 5),
            Err(TopoptError::BcOutsideDomain(_))
        ));
    }

    /// Object held still: free volume must equal the complement of its
    /// dilated voxelization within the design box.
    #[test]
    fn constant_trajectory_free_complement()
    {
        let robot = RobotModel::default_ur5();
        let q = vec![0.0, -1.2, 1.0, 0.2, 0.5, 0.0];
        let ffo = Point3::from(robot.forward_kinematics(&q).translation);
        let center = ffo + Vector3::new(0.08, 0.0, 0.0);
        let mesh = fixtures::cuboid(0.04, 0.04, 0.04)
            .transformed(&RigidTransform::from_translation(center.coords));
        let traj = Trajectory::new(vec![q.clone(), q.clone()]);
        let skeleton = Skeleton {
            fingers: [
                vec![ffo, ffo + Vector3::new(0.01, 0.0, 0.0)],
                vec![ffo, ffo + Vector3::new(0.01, 0.005, 0.0)],
                vec![ffo, ffo + Vector3::new(0.01, -0.005, 0.0)],
            ],
        };
        let lo = ffo + Vector3::new(-0.02, -0.05, -0.05);
        let hi = ffo + Vector3::new(0.10, 0.05, 0.05);
        let fv = collision_free_volume(&mesh, &traj, &robot, 0.005, &lo, &hi, &skeleton)
            .unwrap();
        let [nx, ny, nz] = fv.free.dims;
        let mut free_cells = 0;
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                for k in 1..nz - 1 {
                    let c = fv.free.cell_center(i, j, k);
                    let in_swept = fv
                        .swept
                        .cell_of(&c)
                        .map(|ci| fv.swept.get(ci[0], ci[1], ci[2]) > 0.5)
                        .unwrap_or(false);
                    assert_eq!(fv.free.get(i, j, k) > 0.5, !in_swept);
                    if !in_swept {
                        free_cells += 1;
                    }
                }
            }
        }
        assert!(free_cells > 0);
    }

    #[test]
    fn truncated_trajectory_grows_free_volume() {
        let robot = RobotModel::default_ur5();
        let grasp_q = vec![0.0, -1.2, 1.0, 0.2, 0.5, 0.0];
        let mut start_q = grasp_q.clone();
        start_q[1] -= 0.1;
        let ffo = Point3::from(robot.forward_kinematics(&grasp_q).translation);
        let center = ffo + Vector3::new(0.08, 0.0, 0.0);
        let mesh = fixtures::cuboid(0.04, 0.04, 0.04)
            .transformed(&RigidTransform::from_translation(center.coords));
        let skeleton = Skeleton {
            fingers: [
                vec![ffo, ffo + Vector3::new(0.005, 0.0, 0.0)],
                vec![ffo, ffo + Vector3::new(0.005, 0.005, 0.0)],
                vec![ffo, ffo + Vector3::new(0.005, -0.005, 0.0)],
            ],
        };
        let lo = ffo + Vector3::new(-0.02, -0.06, -0.06);
        let hi = ffo + Vector3::new(0.12, 0.06, 0.06);
        let full = Trajectory::new(vec![start_q, grasp_q.clone()]);
        let held = Trajectory::new(vec![grasp_q.clone(), grasp_q.clone()]);
        let fv_full =
            collision_free_volume(&mesh, &full, &robot, 0.005, &lo, &hi, &skeleton).unwrap();
        let fv_held =
            collision_free_volume(&mesh, &held, &robot, 0.005, &lo, &hi, &skeleton).unwrap();
        // every cell free under the full motion stays free when poses are
        // removed, and the held case has at least as many free cells
        let [nx, ny, nz] = fv_full.free.dims;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if fv_full.free.get(i, j, k) > 0.5 {
                        assert!(fv_held.free.get(i, j, k) > 0.5);
                    }
                }
            }
        }
        assert!(fv_held.free.occupied_count() >= fv_full.free.occupied_count());
    }

    #[test]
    fn extract_gripper_clear_of_swept_and_reaches_contacts() {
        // synthetic slab density next to a swept cube
        let object = fixtures::cuboid(0.04, 0.04, 0.04)
            .transformed(&RigidTransform::from_translation(Vector3::new(0.06, 0.0, 0.0)));
        let swept = crate::voxel::swept_volume_grid(
            &object,
            &[RigidTransform::identity()],
            0.005,
        )
        .unwrap();
        let lo: Point3<f64> = Point3::new(-0.05, -0.04, -0.04);
        let hi: Point3<f64> = Point3::new(0.08, 0.04, 0.04);
        let mut dims = [0usize; 3];
        let mut origin = Point3::origin();
        for a in 0..3 {
            let n = ((hi[a] - lo[a]) / 0.005).ceil() as usize;
            dims[a] = n + 2;
            origin[a] = lo[a] - 0.005;
        }
        let mut grid = VoxelGrid::zeros(origin, 0.005, dims);
        let mut mask = vec![false; grid.values.len()];
        let [nx, ny, nz] = dims;
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                for k in 1..nz - 1 {
                    let c = grid.cell_center(i, j, k);
                    let in_swept = swept
                        .cell_of(&c)
                        .map(|ci| swept.get(ci[0], ci[1], ci[2]) > 0.5)
                        .unwrap_or(false);
                    if !in_swept {
                        let idx = grid.index(i, j, k);
                        mask[idx] = true;
                        // a solid bar along x at |y|,|z| < 1 cm
                        if c.y.abs() < 0.01 && c.z.abs() < 0.01 {
                            grid.values[idx] = 1.0;
                        }
                    }
                }
            }
        }
        let field = DensityField {
            grid,
            mask,
            volume_fraction: 0.1,
            p: 3.0,
        };
        // contact on the object's near face
        let contacts = vec![Point3::new(0.04, 0.0, 0.0)];
        let gripper = extract_gripper(&field, &swept, &contacts, 0.01, 0.5).unwrap();
        assert!(gripper.check_watertight().is_ok());
        assert!(gripper_clear_of_swept(&gripper, &swept));
        let (nearest, _) = gripper.closest_point(&contacts[0]);
        let dist = (nearest - contacts[0]).norm();
        assert!(dist <= 0.01 + 1e-9, "contact {dist} from the surface");
    }

    #[test]
    fn empty_density_errors() {
        let grid = VoxelGrid::zeros(Point3::origin(), 0.005, [8, 8, 8]);
        let mask = vec![true; 512];
        let field = DensityField {
            grid: grid.clone(),
            mask,
            volume_fraction: 0.1,
            p: 3.0,
        };
        let swept = VoxelGrid::zeros(Point3::new(1.0, 1.0, 1.0), 0.005, [4, 4, 4]);
        assert!(matches!(
            extract_gripper(&field, &swept, &[], 0.004, 0.5),
            Err(TopoptError::EmptyIsosurface)
        ));
    }
}
