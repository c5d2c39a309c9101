//! Collision cost of a polyline against the object: the length of the path
//! inside the mesh plus the wrap-around (geodesic) distance needed to slide
//! the interior portions onto the surface.

use nalgebra::Point3;

use crate::geodesic::GeodesicField;
use crate::math::Polyline;
use crate::mesh::TriMesh;

/// One surface crossing along a polyline, in traversal order.
#[derive(Debug, Clone)]
struct Crossing {
    entering: bool,
    point: Point3<f64>,
}

/// Interior intervals (and geodesic hops) below this length are tangential
/// grazes, not penetrations: they count as exactly zero so that a touching
/// contact keeps the cost at 0.
const GRAZE_EPS: f64 = 1e-9;

/// Sum of sub-segment lengths inside the mesh plus all crossings in order.
fn scan(path: &Polyline, mesh: &TriMesh) -> (f64, Vec<Crossing>) {
    let mut inside_len = 0.0;
    let mut crossings = Vec::new();
    for (a, b) in path.segments() {
        let seg_len = (b - a).norm();
        if seg_len <= 0.0 {
            continue;
        }
        let hits = mesh.segment_intersections(&a, &b);
        if hits.is_empty() {
            let mid = Point3::from((a.coords + b.coords) / 2.0);
            if mesh.point_inside(&mid) {
                inside_len += seg_len;
            }
            continue;
        }
        // first hit's flag tells the containment before it
        let mut inside = hits[0].entering == false;
        let mut prev_t = 0.0;
        for h in &hits {
            if inside {
                let d = (h.t - prev_t) * seg_len;
                if d > GRAZE_EPS {
                    inside_len += d;
                }
            }
            inside = h.entering;
            prev_t = h.t;
            crossings.push(Crossing {
                entering: h.entering,
                point: h.point,
            });
        }
        if inside {
            let d = (1.0 - prev_t) * seg_len;
            if d > GRAZE_EPS {
                inside_len += d;
            }
        }
    }
    (inside_len, crossings)
}

/// Total length of the path interior to the mesh.
pub fn inside_distance(path: &Polyline, mesh: &TriMesh) -> f64 {
    scan(path, mesh).0
}

/// Sum of surface geodesic distances between each entering crossing and the
/// next exiting crossing. Crossings without a partner (path starting or
/// ending inside the object) contribute nothing.
pub fn wraparound_distance(path: &Polyline, mesh: &TriMesh, geo: &GeodesicField) -> f64 {
    let (_, crossings) = scan(path, mesh);
    let mut total = 0.0;
    let mut pending_entry: Option<&Crossing> = None;
    for c in &crossings {
        if c.entering {
            pending_entry = Some(c);
        } else if let Some(e) = pending_entry.take() {
            if (e.point - c.point).norm() > GRAZE_EPS {
                total += geo.between(&e.point, &c.point);
            }
        }
    }
    total
}

/// Context bundling the mesh with its geodesic table for repeated costing.
pub struct PathCostContext<'a> {
    pub mesh: &'a TriMesh,
    pub geo: &'a GeodesicField,
}

impl PathCostContext<'_> {
    /// inside_distance + wraparound_distance; 0 iff the path never enters
    /// the interior.
    pub fn path_cost(&self, path: &Polyline) -> f64 {
        let (inside, crossings) = scan(path, self.mesh);
        let mut wrap = 0.0;
        let mut pending: Option<&Crossing> = None;
        for c in &crossings {
            if c.entering {
                pending = Some(c);
            } else if let Some(e) = pending.take() {
                if (e.point - c.point).norm() > GRAZE_EPS {
                    wrap += self.geo.between(&e.point, &c.point);
                }
            }
        }
        inside + wrap
    }
}

pub fn path_cost(path: &Polyline, mesh: &TriMesh, geo: &GeodesicField) -> f64 {
    PathCostContext { mesh, geo }.path_cost(path)
}
