//! Synthetic watertight fixture meshes: primitives plus the three grasp
//! benchmark objects (notched box, L-slot key, handle cup). All of the grasp
//! fixtures are extrusions of simple (hole-free) profiles so the generators
//! stay small and provably watertight.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::math::RigidTransform;
use crate::mesh::TriMesh;

/// Axis-aligned cuboid centered at the origin.
pub fn cuboid(sx: f64, sy: f64, sz: f64) -> TriMesh {
    let (hx, hy, hz) = (sx / 2.0, sy / 2.0, sz / 2.0);
    let v = |x: f64, y: f64, z: f64| Point3::new(x * hx, y * hy, z * hz);
    let vertices = vec![
        v(-1.0, -1.0, -1.0),
        v(1.0, -1.0, -1.0),
        v(1.0, 1.0, -1.0),
        v(-1.0, 1.0, -1.0),
        v(-1.0, -1.0, 1.0),
        v(1.0, -1.0, 1.0),
        v(1.0, 1.0, 1.0),
        v(-1.0, 1.0, 1.0),
    ];
    let faces = vec![
        [0, 2, 1],
        [0, 3, 2], // bottom (-z)
        [4, 5, 6],
        [4, 6, 7], // top (+z)
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 3, 7],
        [2, 7, 6], // +y
        [0, 4, 7],
        [0, 7, 3], // -x
        [1, 2, 6],
        [1, 6, 5], // +x
    ];
    TriMesh::new(vertices, faces).unwrap()
}

pub fn unit_cube() -> TriMesh {
    cuboid(1.0, 1.0, 1.0)
}

/// Unit-radius icosphere from `subdiv` loop subdivisions of an icosahedron.
pub fn icosphere(subdiv: usize) -> TriMesh {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
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
    ]
    .iter()
    .map(|&(x, y, z)| Point3::from(Vector3::new(x, y, z).normalize()))
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
    for _ in 0..subdiv {
        let mut midpoint: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[a].coords + vertices[b].coords) / 2.0;
                    vertices.push(Point3::from(m.normalize()));
                    vertices.len() - 1
                });
            }
            new_faces.push([f[0], mid[0], mid[2]]);
            new_faces.push([f[1], mid[1], mid[0]]);
            new_faces.push([f[2], mid[2], mid[1]]);
            new_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = new_faces;
    }
    TriMesh::new(vertices, faces).unwrap()
}

/// Signed area of a 2D polygon (positive = CCW).
fn signed_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        a += x0 * y1 - x1 * y0;
    }
    a / 2.0
}

/// Ear-clipping triangulation of a simple CCW polygon. Returns index triples.
fn triangulate(poly: &[(f64, f64)]) -> Vec<[usize; 3]> {
    assert!(poly.len() >= 3);
    assert!(signed_area(poly) > 0.0, "polygon must be CCW and non-degenerate");
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    // inclusive: a vertex on the ear boundary blocks the ear, which keeps
    // diagonals off other vertices and the cap triangulation free of
    // T-junctions
    let point_in_tri = |p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
        let d1 = cross(a, b, p);
        let d2 = cross(b, c, p);
        let d3 = cross(c, a, p);
        d1 >= -1e-15 && d2 >= -1e-15 && d3 >= -1e-15
    };
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut tris = Vec::new();
    let mut guard = 0;
    while idx.len() > 3 {
        let n = idx.len();
        let mut clipped = false;
        for i in 0..n {
            let (ip, ic, inx) = (idx[(i + n - 1) % n], idx[i], idx[(i + 1) % n]);
            let (a, b, c) = (poly[ip], poly[ic], poly[inx]);
            if cross(a, b, c) <= 1e-15 {
                continue; // reflex or collinear
            }
            let mut ear = true;
            for &j in &idx {
                if j == ip || j == ic || j == inx {
                    continue;
                }
                if point_in_tri(poly[j], a, b, c) {
                    ear = false;
                    break;
                }
            }
            if ear {
                tris.push([ip, ic, inx]);
                idx.remove(i);
                clipped = true;
                break;
            }
        }
        guard += 1;
        if !clipped || guard > 10 * poly.len() {
            panic!("ear clipping failed; polygon not simple?");
        }
    }
    tris.push([idx[0], idx[1], idx[2]]);
    tris
}

/// Prism from a simple CCW profile in the XY plane, extruded along +Z over
/// [0, depth], then rigidly transformed.
pub fn extruded_prism(profile: &[(f64, f64)], depth: f64, pose: &RigidTransform) -> TriMesh {
    let n = profile.len();
    let mut vertices: Vec<Point3<f64>> = Vec::with_capacity(2 * n);
    for &(x, y) in profile {
        vertices.push(Point3::new(x, y, 0.0));
    }
    for &(x, y) in profile {
        vertices.push(Point3::new(x, y, depth));
    }
    let caps = triangulate(profile);
    let mut faces = Vec::new();
    for t in &caps {
        faces.push([t[0], t[2], t[1]]); // bottom faces -Z
        faces.push([t[0] + n, t[1] + n, t[2] + n]); // top faces +Z
    }
    for i in 0..n {
        let j = (i + 1) % n;
        // CCW profile -> outward side quads
        faces.push([i, j, j + n]);
        faces.push([i, j + n, i + n]);
    }
    let vertices = vertices.iter().map(|p| pose.apply(p)).collect();
    TriMesh::new(vertices, faces).unwrap()
}

/// Pose that maps the profile plane (X,Y) to the world (x,z) vertical plane
/// with extrusion spanning y in [-depth/2, depth/2].
fn vertical_profile_pose(depth: f64) -> RigidTransform {
    // columns: X -> +x, Y -> +z, Z -> -y (proper rotation, det = +1)
    let rot = Matrix3::new(
        1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, //
        0.0, 1.0, 0.0,
    );
    RigidTransform::new(rot, Vector3::new(0.0, depth / 2.0, 0.0))
}

/// Box resting on z = 0 with a full-width horizontal slot opening toward -x.
/// The slot ceiling (downward-facing, z = 0.095) is the graspable overhang;
/// it extends past the center of mass so ceiling contacts can balance gravity.
pub fn notched_box() -> TriMesh {
    let profile = [
        (-0.04, 0.0),
        (0.04, 0.0),
        (0.04, 0.12),
        (-0.04, 0.12),
        (-0.04, 0.095),
        (0.02, 0.095),
        (0.02, 0.055),
        (-0.04, 0.055),
    ];
    extruded_prism(&profile, 0.08, &vertical_profile_pose(0.08))
}

/// Plate with an L-shaped slot entering from -x then turning upward; the
/// ceiling at the top of the vertical arm is the graspable overhang.
pub fn l_key() -> TriMesh {
    extruded_prism(&l_key_profile(), 0.05, &vertical_profile_pose(0.05))
}

fn l_key_profile() -> Vec<(f64, f64)> {
    // Outer rectangle x in [-0.04, 0.04], z in [0, 0.12].
    // Slot: horizontal arm from the -x edge, z in [0.05, 0.08], reaching
    // x = 0.02; vertical arm up to z = 0.095 over x in [0.0, 0.02].
    // Walk the boundary CCW starting at the bottom-left outer corner.
    vec![
        (-0.04, 0.0),
        (0.04, 0.0),
        (0.04, 0.12),
        (-0.04, 0.12),
        (-0.04, 0.08), // down the left edge to the slot mouth top
        (0.0, 0.08),
        (0.0, 0.095),
        (0.02, 0.095),
        (0.02, 0.05),
        (-0.04, 0.05), // slot mouth bottom
    ]
}

/// Cup body with a T-shaped handle on top; the underside of the top bar is a
/// graspable overhang straddling the center of mass (side insert along y).
pub fn handle_cup() -> TriMesh {
    let profile = [
        (-0.03, 0.0),
        (0.03, 0.0),
        (0.03, 0.08),
        (0.005, 0.08),
        (0.005, 0.095),
        (0.025, 0.095),
        (0.025, 0.11),
        (-0.025, 0.11),
        (-0.025, 0.095),
        (-0.005, 0.095),
        (-0.005, 0.08),
        (-0.03, 0.08),
    ];
    extruded_prism(&profile, 0.06, &vertical_profile_pose(0.06))
}
