//! Watertight triangle meshes with an AABB tree for ray, segment, and
//! closest-point queries, plus area-weighted surface sampling and OBJ/STL io.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("degenerate mesh: {0}")]
    Degenerate(String),
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
}

/// One segment/mesh crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentHit {
    /// Parameter along the segment in [0, 1].
    pub t: f64,
    /// True when the segment goes outside -> inside at this crossing.
    pub entering: bool,
    pub point: Point3<f64>,
}

const GRAZE_EPS: f64 = 1e-12;
const MERGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Point3<f64>) {
        for k in 0..3 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
    }

    /// Slab test against the segment o + t*d, t in [t0, t1].
    fn hit_segment(&self, o: &Point3<f64>, d: &Vector3<f64>, t0: f64, t1: f64) -> bool {
        let (mut lo, mut hi) = (t0, t1);
        for k in 0..3 {
            if d[k].abs() < 1e-300 {
                if o[k] < self.min[k] || o[k] > self.max[k] {
                    return false;
                }
            } else {
                let inv = 1.0 / d[k];
                let mut a = (self.min[k] - o[k]) * inv;
                let mut b = (self.max[k] - o[k]) * inv;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                lo = lo.max(a);
                hi = hi.min(b);
                if lo > hi {
                    return false;
                }
            }
        }
        true
    }

    fn dist2_to_point(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.min[k] {
                self.min[k] - p[k]
            } else if p[k] > self.max[k] {
                p[k] - self.max[k]
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2
    }
}

struct BvhNode {
    aabb: Aabb,
    // leaf: range into tri_indices; inner: child indices
    left: u32,
    right: u32,
    first: u32,
    count: u32,
}

struct Bvh {
    nodes: Vec<BvhNode>,
    tri_indices: Vec<u32>,
}

impl Bvh {
    fn build(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> Self {
        let centroids: Vec<Point3<f64>> = faces
            .iter()
            .map(|f| {
                Point3::from(
                    (vertices[f[0]].coords + vertices[f[1]].coords + vertices[f[2]].coords) / 3.0,
                )
            })
            .collect();
        let mut tri_indices: Vec<u32> = (0..faces.len() as u32).collect();
        let mut nodes = Vec::new();
        nodes.push(BvhNode {
            aabb: Aabb::empty(),
            left: 0,
            right: 0,
            first: 0,
            count: faces.len() as u32,
        });
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (first, count) = (nodes[ni].first as usize, nodes[ni].count as usize);
            let mut aabb = Aabb::empty();
            for &ti in &tri_indices[first..first + count] {
                for &vi in &faces[ti as usize] {
                    aabb.grow(&vertices[vi]);
                }
            }
            nodes[ni].aabb = aabb;
            if count <= 4 {
                continue;
            }
            // longest-axis split at centroid median
            let mut ext = [0.0; 3];
            let mut cmin = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
            let mut cmax = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &ti in &tri_indices[first..first + count] {
                let c = centroids[ti as usize];
                for k in 0..3 {
                    cmin[k] = cmin[k].min(c[k]);
                    cmax[k] = cmax[k].max(c[k]);
                }
            }
            for k in 0..3 {
                ext[k] = cmax[k] - cmin[k];
            }
            let axis = (0..3).max_by(|&a, &b| ext[a].total_cmp(&ext[b])).unwrap();
            if ext[axis] <= 0.0 {
                continue;
            }
            let slice = &mut tri_indices[first..first + count];
            let mid = count / 2;
            slice.select_nth_unstable_by(mid, |&a, &b| {
                centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
            });
            let left = nodes.len();
            nodes.push(BvhNode {
                aabb: Aabb::empty(),
                left: 0,
                right: 0,
                first: first as u32,
                count: mid as u32,
            });
            let right = nodes.len();
            nodes.push(BvhNode {
                aabb: Aabb::empty(),
                left: 0,
                right: 0,
                first: (first + mid) as u32,
                count: (count - mid) as u32,
            });
            nodes[ni].left = left as u32;
            nodes[ni].right = right as u32;
            nodes[ni].count = 0;
            stack.push(left);
            stack.push(right);
        }
        Self { nodes, tri_indices }
    }
}

/// Watertight, consistently oriented triangle mesh (meters) with derived
/// normals, bounding box, center of mass, and an AABB tree.
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    pub face_normals: Vec<Vector3<f64>>,
    pub bbox_min: Point3<f64>,
    pub bbox_max: Point3<f64>,
    pub center_of_mass: Point3<f64>,
    pub volume: f64,
    bvh: Bvh,
}

impl Clone for TriMesh {
    fn clone(&self) -> Self {
        TriMesh::new(self.vertices.clone(), self.faces.clone()).expect("clone of valid mesh")
    }
}

impl std::fmt::Debug for TriMesh {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TriMesh")
            .field("vertices", &self.vertices.len())
            .field("faces", &self.faces.len())
            .finish()
    }
}

impl TriMesh {
    /// Build the mesh and its acceleration structure. Fails on an empty mesh;
    /// watertightness is checked separately via [`TriMesh::check_watertight`].
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(MeshError::Degenerate("empty mesh".into()));
        }
        for f in &faces {
            for &vi in f {
                if vi >= vertices.len() {
                    return Err(MeshError::Parse(format!("face index {vi} out of range")));
                }
            }
        }
        let face_normals: Vec<Vector3<f64>> = faces
            .iter()
            .map(|f| {
                let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vector3::zeros()
                }
            })
            .collect();
        let mut bbox_min = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut bbox_max = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &vertices {
            for k in 0..3 {
                bbox_min[k] = bbox_min[k].min(v[k]);
                bbox_max[k] = bbox_max[k].max(v[k]);
            }
        }
        // signed tetra decomposition about the origin
        let mut vol = 0.0;
        let mut com = Vector3::zeros();
        for f in &faces {
            let (a, b, c) = (
                vertices[f[0]].coords,
                vertices[f[1]].coords,
                vertices[f[2]].coords,
            );
            let v6 = a.dot(&b.cross(&c));
            vol += v6 / 6.0;
            com += v6 / 6.0 * (a + b + c) / 4.0;
        }
        let center_of_mass = if vol.abs() > 1e-18 {
            Point3::from(com / vol)
        } else {
            Point3::from((bbox_min.coords + bbox_max.coords) / 2.0)
        };
        let bvh = Bvh::build(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            face_normals,
            bbox_min,
            bbox_max,
            center_of_mass,
            volume: vol,
            bvh,
        })
    }

    pub fn bbox_diagonal(&self) -> f64 {
        (self.bbox_max - self.bbox_min).norm()
    }

    /// Radius of the bounding sphere centered at the center of mass.
    pub fn bounding_sphere_radius(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v - self.center_of_mass).norm())
            .fold(0.0, f64::max)
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                (self.vertices[f[1]] - self.vertices[f[0]])
                    .cross(&(self.vertices[f[2]] - self.vertices[f[0]]))
                    .norm()
                    / 2.0
            })
            .sum()
    }

    /// Every edge shared by exactly two faces with opposite winding.
    pub fn check_watertight(&self) -> Result<(), MeshError> {
        use std::collections::HashMap;
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let e = (f[k], f[(k + 1) % 3]);
                if e.0 == e.1 {
                    return Err(MeshError::NotWatertight(format!("degenerate edge {e:?}")));
                }
                *directed.entry(e).or_insert(0) += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            if n != 1 {
                return Err(MeshError::NotWatertight(format!(
                    "directed edge ({a},{b}) used {n} times"
                )));
            }
            if directed.get(&(b, a)) != Some(&1) {
                return Err(MeshError::NotWatertight(format!(
                    "edge ({a},{b}) has no opposite twin"
                )));
            }
        }
        Ok(())
    }

    fn raw_triangle_hits(
        &self,
        o: &Point3<f64>,
        d: &Vector3<f64>,
        t0: f64,
        t1: f64,
        out: &mut Vec<(f64, f64)>, // (t, dir·normal)
    ) {
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.bvh.nodes[ni];
            if !node.aabb.hit_segment(o, d, t0, t1) {
                continue;
            }
            if node.count > 0 {
                let first = node.first as usize;
                for &ti in &self.bvh.tri_indices[first..first + node.count as usize] {
                    let f = &self.faces[ti as usize];
                    let (v0, v1, v2) = (self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]);
                    // Moller-Trumbore
                    let e1 = v1 - v0;
                    let e2 = v2 - v0;
                    let pv = d.cross(&e2);
                    let det = e1.dot(&pv);
                    if det.abs() < 1e-300 {
                        continue;
                    }
                    let inv = 1.0 / det;
                    let tv = o - v0;
                    let u = tv.dot(&pv) * inv;
                    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
                        continue;
                    }
                    let qv = tv.cross(&e1);
                    let v = d.dot(&qv) * inv;
                    if v < -1e-12 || u + v > 1.0 + 1e-12 {
                        continue;
                    }
                    let t = e2.dot(&qv) * inv;
                    if t < t0 - 1e-12 || t > t1 + 1e-12 {
                        continue;
                    }
                    let dn = d.dot(&self.face_normals[ti as usize]);
                    out.push((t, dn));
                }
            } else {
                stack.push(node.left as usize);
                stack.push(node.right as usize);
            }
        }
    }

    /// True iff `p` is strictly interior. Parity ray cast; directions with
    /// grazing hits are rejected and retried.
    pub fn point_inside(&self, p: &Point3<f64>) -> bool {
        // quick bbox reject
        for k in 0..3 {
            if p[k] < self.bbox_min[k] || p[k] > self.bbox_max[k] {
                return false;
            }
        }
        let dirs = [
            Vector3::new(0.577_215_66, 0.618_033_99, 0.532_958_31),
            Vector3::new(-0.707_963_27, 0.301_029_99, 0.639_792_11),
            Vector3::new(0.123_456_78, -0.918_273_64, 0.377_964_47),
            Vector3::new(0.866_025_40, 0.111_111_11, -0.487_213_59),
            Vector3::new(-0.333_333_33, -0.577_350_27, -0.745_355_99),
            Vector3::new(0.951_056_52, -0.309_016_99, 0.041_211_45),
            Vector3::new(-0.142_857_14, 0.989_821_44, -0.013_717_42),
            Vector3::new(0.561_231_02, 0.415_926_53, 0.715_542_75),
        ];
        let diag = self.bbox_diagonal();
        'dir: for d0 in dirs {
            let d = d0.normalize() * (2.0 * diag + 1.0);
            let mut hits = Vec::new();
            self.raw_triangle_hits(p, &d, 0.0, 1.0, &mut hits);
            let mut count = 0usize;
            let mut prev_t = f64::NEG_INFINITY;
            hits.sort_by(|a, b| a.0.total_cmp(&b.0));
            for &(t, dn) in &hits {
                let scale = d.norm();
                if dn.abs() / scale < 1e-9 {
                    continue 'dir; // grazing, retry another direction
                }
                if t - prev_t < MERGE_EPS / (2.0 * diag + 1.0) {
                    continue 'dir; // hit cluster (edge/vertex), retry
                }
                if t < 1e-12 {
                    continue 'dir; // origin on surface relative to this ray
                }
                prev_t = t;
                count += 1;
            }
            return count % 2 == 1;
        }
        // all directions degenerate: fall back to nearest-face side
        let (cp, fi) = self.closest_point(p);
        (p - cp).dot(&self.face_normals[fi]) < 0.0
    }

    /// All crossings of the segment a->b, sorted by t, with entry/exit flags
    /// derived from containment so alternation is always consistent.
    /// Grazing touches that do not flip containment are dropped.
    pub fn segment_intersections(&self, a: &Point3<f64>, b: &Point3<f64>) -> Vec<SegmentHit> {
        let d = b - a;
        let len = d.norm();
        if len <= 0.0 {
            return Vec::new();
        }
        let mut raw = Vec::new();
        self.raw_triangle_hits(a, &d, 0.0, 1.0, &mut raw);
        if raw.is_empty() {
            return Vec::new();
        }
        raw.retain(|&(_, dn)| dn.abs() / len > GRAZE_EPS);
        raw.sort_by(|x, y| x.0.total_cmp(&y.0));
        // merge clusters within MERGE_EPS of parameter
        let mut clusters: Vec<f64> = Vec::new();
        for &(t, _) in &raw {
            match clusters.last() {
                Some(&last) if (t - last).abs() <= MERGE_EPS => {}
                _ => clusters.push(t),
            }
        }
        // containment states between clusters decide the flags
        let mut states = Vec::with_capacity(clusters.len() + 1);
        let mut prev = 0.0;
        for (i, &t) in clusters.iter().enumerate() {
            let mid = (prev + t) / 2.0;
            states.push(self.point_inside(&Point3::from(a.coords + d * mid)));
            prev = t;
            if i == clusters.len() - 1 {
                let mid = (t + 1.0) / 2.0;
                states.push(self.point_inside(&Point3::from(a.coords + d * mid)));
            }
        }
        let mut out = Vec::new();
        for (i, &t) in clusters.iter().enumerate() {
            let (before, after) = (states[i], states[i + 1]);
            if before != after {
                out.push(SegmentHit {
                    t,
                    entering: !before,
                    point: Point3::from(a.coords + d * t),
                });
            }
        }
        out
    }

    /// Closest surface point and its face index.
    pub fn closest_point(&self, p: &Point3<f64>) -> (Point3<f64>, usize) {
        let mut best_d2 = f64::INFINITY;
        let mut best = (self.vertices[self.faces[0][0]], 0usize);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.bvh.nodes[ni];
            if node.aabb.dist2_to_point(p) >= best_d2 {
                continue;
            }
            if node.count > 0 {
                let first = node.first as usize;
                for &ti in &self.bvh.tri_indices[first..first + node.count as usize] {
                    let f = &self.faces[ti as usize];
                    let cp = closest_point_on_triangle(
                        p,
                        &self.vertices[f[0]],
                        &self.vertices[f[1]],
                        &self.vertices[f[2]],
                    );
                    let d2 = (p - cp).norm_squared();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best = (cp, ti as usize);
                    }
                }
            } else {
                // visit the nearer child first
                let (l, r) = (node.left as usize, node.right as usize);
                let dl = self.bvh.nodes[l].aabb.dist2_to_point(p);
                let dr = self.bvh.nodes[r].aabb.dist2_to_point(p);
                if dl < dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }

    /// Area-weighted uniform surface samples, deterministic per seed.
    pub fn sample_surface_points(
        &self,
        count: usize,
        seed: u64,
    ) -> Result<Vec<(Point3<f64>, Vector3<f64>)>, MeshError> {
        assert!(count >= 1);
        let areas: Vec<f64> = self
            .faces
            .iter()
            .map(|f| {
                (self.vertices[f[1]] - self.vertices[f[0]])
                    .cross(&(self.vertices[f[2]] - self.vertices[f[0]]))
                    .norm()
                    / 2.0
            })
            .collect();
        let total: f64 = areas.iter().sum();
        if total <= 0.0 {
            return Err(MeshError::Degenerate("zero total surface area".into()));
        }
        let mut cum = Vec::with_capacity(areas.len());
        let mut acc = 0.0;
        for a in &areas {
            acc += a;
            cum.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let r = rng.gen::<f64>() * total;
            let fi = cum.partition_point(|&c| c < r).min(self.faces.len() - 1);
            let f = &self.faces[fi];
            let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let p = Point3::from(
                self.vertices[f[0]].coords
                    + u * (self.vertices[f[1]] - self.vertices[f[0]])
                    + v * (self.vertices[f[2]] - self.vertices[f[0]]),
            );
            out.push((p, self.face_normals[fi]));
        }
        Ok(out)
    }

    pub fn transformed(&self, t: &crate::math::RigidTransform) -> TriMesh {
        TriMesh::new(
            self.vertices.iter().map(|v| t.apply(v)).collect(),
            self.faces.clone(),
        )
        .expect("transform of valid mesh")
    }

    // ---- io ----

    pub fn load(path: &Path, scale: f64) -> Result<Self, MeshError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        match ext.as_str() {
            "obj" => Self::load_obj(path, scale),
            "stl" => Self::load_stl_binary(path, scale),
            other => Err(MeshError::UnsupportedFormat(other.into())),
        }
    }

    pub fn load_obj(path: &Path, scale: f64) -> Result<Self, MeshError> {
        let file = std::fs::File::open(path)?;
        let reader = std::io::BufReader::new(file);
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut c = [0.0; 3];
                    for v in &mut c {
                        *v = it
                            .next()
                            .ok_or_else(|| MeshError::Parse("short v line".into()))?
                            .parse::<f64>()
                            .map_err(|e| MeshError::Parse(e.to_string()))?
                            * scale;
                    }
                    vertices.push(Point3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Result<Vec<usize>, MeshError> = it
                        .map(|tok| {
                            tok.split('/')
                                .next()
                                .unwrap()
                                .parse::<isize>()
                                .map_err(|e| MeshError::Parse(e.to_string()))
                                .map(|i| {
                                    if i < 0 {
                                        (vertices.len() as isize + i) as usize
                                    } else {
                                        (i - 1) as usize
                                    }
                                })
                        })
                        .collect();
                    let idx = idx?;
                    if idx.len() < 3 {
                        return Err(MeshError::Parse("face with <3 vertices".into()));
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Self::new(vertices, faces)
    }

    pub fn load_stl_binary(path: &Path, scale: f64) -> Result<Self, MeshError> {
        use byteorder::{LittleEndian, ReadBytesExt};
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut header = [0u8; 80];
        file.read_exact(&mut header)?;
        let n_tris = file.read_u32::<LittleEndian>()? as usize;
        let mut vertices: Vec<Point3<f64>> = Vec::new();
        let mut faces = Vec::new();
        // weld identical coordinates so the result can be watertight
        let mut index: std::collections::HashMap<[u64; 3], usize> = std::collections::HashMap::new();
        for _ in 0..n_tris {
            for _ in 0..3 {
                file.read_f32::<LittleEndian>()?; // stored normal, recomputed
            }
            let mut tri = [0usize; 3];
            for t in &mut tri {
                let x = file.read_f32::<LittleEndian>()? as f64 * scale;
                let y = file.read_f32::<LittleEndian>()? as f64 * scale;
                let z = file.read_f32::<LittleEndian>()? as f64 * scale;
                let key = [x.to_bits(), y.to_bits(), z.to_bits()];
                let vi = *index.entry(key).or_insert_with(|| {
                    vertices.push(Point3::new(x, y, z));
                    vertices.len() - 1
                });
                *t = vi;
            }
            file.read_u16::<LittleEndian>()?; // attribute byte count
            faces.push(tri);
        }
        Self::new(vertices, faces)
    }

    pub fn save_obj(&self, path: &Path) -> Result<(), MeshError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }
}

/// Closest point on triangle (a, b, c) to p (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return Point3::from(a.coords + ab * v);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return Point3::from(a.coords + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return Point3::from(b.coords + (c - b) * w);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    Point3::from(a.coords + ab * v + ac * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_relative_eq;

    #[test]
    fn cube_chord_hits() {
        let cube = fixtures::unit_cube();
        let hits = cube.segment_intersections(
            &Point3::new(-1.0, 0.0, 0.0),
            &Point3::new(1.0, 0.0, 0.0),
        );
        assert_eq!(hits.len(), 2);
        assert_relative_eq!(hits[0].t, 0.25, epsilon = 1e-9);
        assert!(hits[0].entering);
        assert_relative_eq!(hits[1].t, 0.75, epsilon = 1e-9);
        assert!(!hits[1].entering);
    }

    #[test]
    fn segment_outside_cube_empty() {
        let cube = fixtures::unit_cube();
        let hits = cube.segment_intersections(
            &Point3::new(-1.0, 2.0, 0.0),
            &Point3::new(1.0, 2.0, 0.0),
        );
        assert!(hits.is_empty());
    }

    #[test]
    fn zero_length_segment_empty() {
        let cube = fixtures::unit_cube();
        let p = Point3::new(0.0, 0.0, 0.0);
        assert!(cube.segment_intersections(&p, &p).is_empty());
    }

    #[test]
    fn point_inside_cube() {
        let cube = fixtures::unit_cube();
        assert!(cube.point_inside(&Point3::origin()));
        assert!(!cube.point_inside(&Point3::new(2.0, 0.0, 0.0)));
    }

    #[test]
    fn point_inside_matches_winding_number_oracle() {
        use rand::Rng;
        let mesh = fixtures::icosphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..10_000 {
            let p = Point3::new(
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            );
            // skip points hugging the surface where both answers are arbitrary
            let (cp, _) = mesh.closest_point(&p);
            if (p - cp).norm() < 1e-6 {
                continue;
            }
            assert_eq!(
                mesh.point_inside(&p),
                winding_number_inside(&mesh, &p),
                "disagreement at {p:?}"
            );
            checked += 1;
        }
        assert!(checked > 9000);
    }

    /// Solid-angle winding number; independent of the ray-cast path.
    fn winding_number_inside(mesh: &TriMesh, p: &Point3<f64>) -> bool {
        let mut w = 0.0;
        for f in &mesh.faces {
            let a = mesh.vertices[f[0]] - p;
            let b = mesh.vertices[f[1]] - p;
            let c = mesh.vertices[f[2]] - p;
            let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
            let num = a.dot(&b.cross(&c));
            let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
            w += 2.0 * num.atan2(den);
        }
        w / (4.0 * std::f64::consts::PI) > 0.5
    }

    #[test]
    fn random_segments_match_bruteforce_oracle() {
        use rand::Rng;
        let mesh = fixtures::icosphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let b = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let hits = mesh.segment_intersections(&a, &b);
            let oracle = brute_force_hits(&mesh, &a, &b);
            assert_eq!(hits.len(), oracle.len(), "count mismatch {a:?}->{b:?}");
            for (h, t) in hits.iter().zip(&oracle) {
                assert!((h.t - t).abs() < 1e-9, "t mismatch {} vs {}", h.t, t);
            }
        }
    }

    /// Exhaustive per-triangle intersection, no BVH.
    fn brute_force_hits(mesh: &TriMesh, a: &Point3<f64>, b: &Point3<f64>) -> Vec<f64> {
        let d = b - a;
        let mut ts = Vec::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            let (v0, v1, v2) = (mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
            let e1 = v1 - v0;
            let e2 = v2 - v0;
            let pv = d.cross(&e2);
            let det = e1.dot(&pv);
            if det.abs() < 1e-300 {
                continue;
            }
            let inv = 1.0 / det;
            let tv = a - v0;
            let u = tv.dot(&pv) * inv;
            if !(-1e-12..=1.0 + 1e-12).contains(&u) {
                continue;
            }
            let qv = tv.cross(&e1);
            let v = d.dot(&qv) * inv;
            if v < -1e-12 || u + v > 1.0 + 1e-12 {
                continue;
            }
            let t = e2.dot(&qv) * inv;
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            if d.dot(&mesh.face_normals[fi]).abs() / d.norm() <= GRAZE_EPS {
                continue;
            }
            ts.push(t);
        }
        ts.sort_by(|x, y| x.total_cmp(y));
        ts.dedup_by(|x, y| (*x - *y).abs() <= MERGE_EPS);
        ts
    }

    #[test]
    fn alternation_consistent_with_containment() {
        use rand::Rng;
        let mesh = fixtures::icosphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let b = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let hits = mesh.segment_intersections(&a, &b);
            let mut inside = mesh.point_inside(&a);
            for h in &hits {
                assert_eq!(h.entering, !inside, "flag does not alternate");
                inside = !inside;
            }
        }
    }

    #[test]
    fn sampling_area_weighted_chi_square() {
        // cuboid with very unequal face areas
        let mesh = fixtures::cuboid(2.0, 0.5, 0.25);
        let samples = mesh.sample_surface_points(20_000, 42).unwrap();
        assert_eq!(samples.len(), 20_000);
        // chi-square over faces
        let areas: Vec<f64> = mesh
            .faces
            .iter()
            .map(|f| {
                (mesh.vertices[f[1]] - mesh.vertices[f[0]])
                    .cross(&(mesh.vertices[f[2]] - mesh.vertices[f[0]]))
                    .norm()
                    / 2.0
            })
            .collect();
        let total: f64 = areas.iter().sum();
        let mut counts = vec![0usize; mesh.faces.len()];
        for (p, _) in &samples {
            // attribute by closest face
            let (_, fi) = mesh.closest_point(p);
            counts[fi] += 1;
        }
        let mut chi2 = 0.0;
        for (fi, &c) in counts.iter().enumerate() {
            let expected = 20_000.0 * areas[fi] / total;
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // 12 faces -> 11 dof; chi2 critical at 0.01 is 24.7
        assert!(chi2 < 24.7, "chi2 = {chi2}");
    }

    #[test]
    fn sampling_sphere_mean_near_origin() {
        let mesh = fixtures::icosphere(3);
        let samples = mesh.sample_surface_points(10_000, 1).unwrap();
        let mean: Vector3<f64> =
            samples.iter().map(|(p, _)| p.coords).sum::<Vector3<f64>>() / 10_000.0;
        assert!(mean.norm() < 0.05, "mean = {mean:?}");
    }

    #[test]
    fn sampling_deterministic_per_seed() {
        let mesh = fixtures::unit_cube();
        let a = mesh.sample_surface_points(100, 5).unwrap();
        let b = mesh.sample_surface_points(100, 5).unwrap();
        assert_eq!(a.len(), b.len());
        for ((pa, na), (pb, nb)) in a.iter().zip(&b) {
            assert_eq!(pa, pb);
            assert_eq!(na, nb);
        }
    }

    #[test]
    fn cube_volume_and_com() {
        let cube = fixtures::unit_cube();
        assert_relative_eq!(cube.volume, 1.0, epsilon = 1e-12);
        assert!(cube.center_of_mass.coords.norm() < 1e-12);
        cube.check_watertight().unwrap();
    }

    #[test]
    fn obj_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        let mesh = fixtures::icosphere(1);
        mesh.save_obj(&path).unwrap();
        let back = TriMesh::load(&path, 1.0).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.faces.len(), mesh.faces.len());
        back.check_watertight().unwrap();
    }
}
