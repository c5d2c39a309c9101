//! Voxel grids: center-containment voxelization, swept-volume union, binary
//! persistence (header + row-major f32 values).

use std::io::{BufWriter, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Point3;
use thiserror::Error;

use crate::math::RigidTransform;
use crate::mesh::TriMesh;

#[derive(Debug, Error)]
pub enum VoxelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid voxel file: {0}")]
    Format(String),
    #[error("empty pose list")]
    EmptyPoses,
}

/// Regular scalar grid; values are occupancy in {0,1} or density in [0,1].
/// World <-> index mapping is exact on cell centers:
/// center(i,j,k) = origin + (i+0.5, j+0.5, k+0.5) * voxel_size.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Point3<f64>,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub values: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(origin: Point3<f64>, voxel_size: f64, dims: [usize; 3]) -> Self {
        assert!(dims[0] > 0 && dims[1] > 0 && dims[2] > 0);
        assert!(voxel_size > 0.0);
        Self {
            origin,
            voxel_size,
            dims,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.index(i, j, k);
        self.values[idx] = v;
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        Point3::new(
            self.origin.x + (i as f64 + 0.5) * self.voxel_size,
            self.origin.y + (j as f64 + 0.5) * self.voxel_size,
            self.origin.z + (k as f64 + 0.5) * self.voxel_size,
        )
    }

    /// Cell containing a world point, if within bounds.
    pub fn cell_of(&self, p: &Point3<f64>) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - self.origin[a]) / self.voxel_size;
            if f < 0.0 {
                return None;
            }
            let i = f.floor() as usize;
            if i >= self.dims[a] {
                return None;
            }
            idx[a] = i;
        }
        Some(idx)
    }

    pub fn occupied_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn occupied_volume(&self) -> f64 {
        self.occupied_count() as f64 * self.voxel_size.powi(3)
    }

    /// Binary dilation of occupancy (>0.5) by one cell, 26-connected.
    pub fn dilated(&self) -> VoxelGrid {
        let mut out = self.clone();
        let [nx, ny, nz] = self.dims;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if self.get(i, j, k) > 0.5 {
                        for di in -1i64..=1 {
                            for dj in -1i64..=1 {
                                for dk in -1i64..=1 {
                                    let (a, b, c) =
                                        (i as i64 + di, j as i64 + dj, k as i64 + dk);
                                    if a >= 0
                                        && b >= 0
                                        && c >= 0
                                        && (a as usize) < nx
                                        && (b as usize) < ny
                                        && (c as usize) < nz
                                    {
                                        out.set(a as usize, b as usize, c as usize, 1.0);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Persist as: origin 3xf64, voxel_size f64, dims 3xu32, values row-major
    /// f32, all little-endian.
    pub fn save(&self, path: &Path) -> Result<(), VoxelError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for a in 0..3 {
            w.write_f64::<LittleEndian>(self.origin[a])?;
        }
        w.write_f64::<LittleEndian>(self.voxel_size)?;
        for a in 0..3 {
            w.write_u32::<LittleEndian>(self.dims[a] as u32)?;
        }
        for &v in &self.values {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VoxelError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut origin = Point3::origin();
        for a in 0..3 {
            origin[a] = r.read_f64::<LittleEndian>()?;
        }
        let voxel_size = r.read_f64::<LittleEndian>()?;
        if !(voxel_size > 0.0) {
            return Err(VoxelError::Format("non-positive voxel size".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        let mut values = vec![0.0f32; n];
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            values[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(Self {
            origin,
            voxel_size,
            dims,
            values,
        })
    }
}

/// Occupancy by cell-center containment, padded by one empty cell on all
/// sides of the mesh bounding box.
pub fn voxelize(mesh: &TriMesh, voxel_size: f64) -> VoxelGrid {
    assert!(voxel_size > 0.0);
    voxelize_in_bounds(
        mesh,
        &RigidTransform::identity(),
        voxel_size,
        &mesh.bbox_min,
        &mesh.bbox_max,
    )
}

/// Voxelize a transformed mesh into a grid covering [lo, hi] padded by one
/// cell. The grid origin is aligned so `lo` falls on the boundary of cell 1.
pub fn voxelize_in_bounds(
    mesh: &TriMesh,
    pose: &RigidTransform,
    voxel_size: f64,
    lo: &Point3<f64>,
    hi: &Point3<f64>,
) -> VoxelGrid {
    let mut dims = [0usize; 3];
    let mut origin = Point3::origin();
    for a in 0..3 {
        let n = ((hi[a] - lo[a]) / voxel_size).ceil().max(1.0) as usize;
        dims[a] = n + 2; // one empty pad cell each side
        origin[a] = lo[a] - voxel_size;
    }
    let mut grid = VoxelGrid::zeros(origin, voxel_size, dims);
    stamp_mesh(&mut grid, mesh, pose);
    grid
}

/// Mark cells of `grid` whose centers fall inside `pose * mesh`.
pub fn stamp_mesh(grid: &mut VoxelGrid, mesh: &TriMesh, pose: &RigidTransform) {
    let inv = pose.inverse();
    // restrict scan to the transformed bbox
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for cx in 0..8 {
        let corner = Point3::new(
            if cx & 1 == 0 { mesh.bbox_min.x } else { mesh.bbox_max.x },
            if cx & 2 == 0 { mesh.bbox_min.y } else { mesh.bbox_max.y },
            if cx & 4 == 0 { mesh.bbox_min.z } else { mesh.bbox_max.z },
        );
        let w = pose.apply(&corner);
        for a in 0..3 {
            lo[a] = lo[a].min(w[a]);
            hi[a] = hi[a].max(w[a]);
        }
    }
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    for a in 0..3 {
        let f0 = ((lo[a] - grid.origin[a]) / grid.voxel_size).floor();
        let f1 = ((hi[a] - grid.origin[a]) / grid.voxel_size).ceil();
        i0[a] = f0.max(0.0) as usize;
        i1[a] = (f1.max(0.0) as usize).min(grid.dims[a]);
    }
    for i in i0[0]..i1[0] {
        for j in i0[1]..i1[1] {
            for k in i0[2]..i1[2] {
                if grid.get(i, j, k) > 0.5 {
                    continue;
                }
                let c = grid.cell_center(i, j, k);
                let local = inv.apply(&c);
                if mesh.point_inside(&local) {
                    grid.set(i, j, k, 1.0);
                }
            }
        }
    }
}

/// Union of per-pose voxelizations. The grid covers the union of transformed
/// bounding boxes with a one-cell pad ring so callers can dilate in place;
/// the caller pre-densifies poses.
pub fn swept_volume_grid(
    mesh: &TriMesh,
    poses: &[RigidTransform],
    voxel_size: f64,
) -> Result<VoxelGrid, VoxelError> {
    if poses.is_empty() {
        return Err(VoxelError::EmptyPoses);
    }
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for pose in poses {
        for cx in 0..8 {
            let corner = Point3::new(
                if cx & 1 == 0 { mesh.bbox_min.x } else { mesh.bbox_max.x },
                if cx & 2 == 0 { mesh.bbox_min.y } else { mesh.bbox_max.y },
                if cx & 4 == 0 { mesh.bbox_min.z } else { mesh.bbox_max.z },
            );
            let w = pose.apply(&corner);
            for a in 0..3 {
                lo[a] = lo[a].min(w[a]);
                hi[a] = hi[a].max(w[a]);
            }
        }
    }
    // extra pad cell so a later 1-cell dilation stays inside the grid
    for a in 0..3 {
        lo[a] -= voxel_size;
        hi[a] += voxel_size;
    }
    let mut dims = [0usize; 3];
    let mut origin = Point3::origin();
    for a in 0..3 {
        let n = ((hi[a] - lo[a]) / voxel_size).ceil().max(1.0) as usize;
        dims[a] = n + 2;
        origin[a] = lo[a] - voxel_size;
    }
    let mut grid = VoxelGrid::zeros(origin, voxel_size, dims);
    for pose in poses {
        stamp_mesh(&mut grid, mesh, pose);
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use nalgebra::Vector3;

    #[test]
    fn cube_voxel_volume() {
        let cube = fixtures::unit_cube();
        let grid = voxelize(&cube, 0.1);
        let vol = grid.occupied_volume();
        assert!((vol - 1.0).abs() < 0.05, "vol = {vol}");
    }

    #[test]
    fn sphere_voxel_volume() {
        let sphere = fixtures::icosphere(3);
        let grid = voxelize(&sphere, 0.05 * 2.0); // unit radius ~ diameter 2
        let analytic = 4.0 / 3.0 * std::f64::consts::PI;
        let vol = grid.occupied_volume();
        assert!((vol - analytic).abs() / analytic < 0.05, "vol = {vol}");
    }

    #[test]
    fn occupied_centers_are_inside() {
        let mesh = fixtures::icosphere(2);
        let grid = voxelize(&mesh, 0.1);
        let [nx, ny, nz] = grid.dims;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if grid.get(i, j, k) > 0.5 {
                        assert!(mesh.point_inside(&grid.cell_center(i, j, k)));
                    }
                }
            }
        }
    }

    #[test]
    fn voxelize_volume_converges() {
        let cube = fixtures::unit_cube();
        let sphere = fixtures::icosphere(3);
        for (mesh, analytic) in [(&cube, 1.0), (&sphere, 4.0 / 3.0 * std::f64::consts::PI)] {
            let coarse = (voxelize(mesh, 0.2).occupied_volume() - analytic).abs();
            let fine = (voxelize(mesh, 0.1).occupied_volume() - analytic).abs();
            assert!(fine <= coarse, "coarse err {coarse}, fine err {fine}");
        }
    }

    #[test]
    fn swept_identity_superset_of_voxelize() {
        let cube = fixtures::unit_cube();
        let swept = swept_volume_grid(&cube, &[RigidTransform::identity()], 0.1).unwrap();
        let plain = voxelize(&cube, 0.1);
        // every occupied plain cell center must be occupied in the swept grid
        let [nx, ny, nz] = plain.dims;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if plain.get(i, j, k) > 0.5 {
                        let c = plain.cell_center(i, j, k);
                        let ci = swept.cell_of(&c).expect("inside swept grid");
                        assert!(swept.get(ci[0], ci[1], ci[2]) > 0.5);
                    }
                }
            }
        }
    }

    #[test]
    fn swept_translation_volume() {
        let cube = fixtures::unit_cube();
        let poses: Vec<RigidTransform> = (0..=20)
            .map(|i| RigidTransform::from_translation(Vector3::new(i as f64 / 20.0, 0.0, 0.0)))
            .collect();
        let grid = swept_volume_grid(&cube, &poses, 0.05).unwrap();
        // swept box is 2 x 1 x 1
        let vol = grid.occupied_volume();
        let expected = 2.0 * 1.0 * 1.0;
        assert!(
            (vol - expected).abs() / expected < 0.1,
            "vol = {vol}, expected about {expected}"
        );
    }

    #[test]
    fn swept_monotone_in_poses() {
        let cube = fixtures::unit_cube();
        let p1 = vec![RigidTransform::identity()];
        let p2 = vec![
            RigidTransform::identity(),
            RigidTransform::from_translation(Vector3::new(0.3, 0.0, 0.0)),
        ];
        let g1 = swept_volume_grid(&cube, &p1, 0.1).unwrap();
        let g2 = swept_volume_grid(&cube, &p2, 0.1).unwrap();
        let [nx, ny, nz] = g1.dims;
        for i in 0..nx {
            for j in 0..ny {
                for k in 0..nz {
                    if g1.get(i, j, k) > 0.5 {
                        let c = g1.cell_center(i, j, k);
                        let ci = g2.cell_of(&c).expect("covered");
                        assert!(g2.get(ci[0], ci[1], ci[2]) > 0.5);
                    }
                }
            }
        }
    }

    #[test]
    fn empty_pose_list_errors() {
        let cube = fixtures::unit_cube();
        assert!(matches!(
            swept_volume_grid(&cube, &[], 0.1),
            Err(VoxelError::EmptyPoses)
        ));
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.vox");
        let grid = voxelize(&fixtures::unit_cube(), 0.25);
        grid.save(&path).unwrap();
        let back = VoxelGrid::load(&path).unwrap();
        assert_eq!(grid, back);
    }
}
