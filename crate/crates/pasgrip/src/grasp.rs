//! Grasp configuration (GC) synthesis: friction-cone wrench bases, partial
//! force closure under gravity, a reachability heuristic over instantaneous
//! motions, the partial minimum-wrench metric, finger-length estimates, and
//! Pareto ranking of surviving candidates.

use nalgebra::{DMatrix, DVector, Point3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::freespace::FreeSpaceField;
use crate::lp::{self, LpOutcome};
use crate::mesh::TriMesh;

/// Unit gravity direction.
pub const GRAVITY_DIR: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

/// Base coefficient of friction.
pub const DEFAULT_MU: f64 = 0.5;
/// Polyhedral friction-cone side count.
pub const DEFAULT_CONE_SIDES: usize = 8;
/// Total normal-force budget for the minimum-wrench metric, in units of
/// object weight.
pub const DEFAULT_F_MAX: f64 = 4.0;
/// Number of 6D disturbance directions for the minimum-wrench metric.
pub const DEFAULT_DISTURBANCE_DIRS: usize = 64;
/// Contact-velocity half-angle bound for the reachability heuristic.
pub const DEFAULT_THETA_MAX: f64 = 80.0 * std::f64::consts::PI / 180.0;
/// Reachability optimizer restarts.
pub const DEFAULT_REACH_RESTARTS: usize = 16;
/// Candidate surface points sampled per object.
pub const DEFAULT_CANDIDATE_COUNT: usize = 1000;
/// GC triples drawn from the candidate set.
pub const DEFAULT_GC_COUNT: usize = 3000;
/// Minimum height above the resting plane for candidate contacts.
pub const DEFAULT_FLOOR_EPS: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("no candidate contact points survive filtering; reposition the object or first finger origin")]
    NoCandidates,
    #[error("need at least 3 candidate points, got {0}")]
    TooFewCandidates(usize),
    #[error("lp failure: {0}")]
    Lp(#[from] lp::LpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPoint {
    pub position: Point3<f64>,
    pub outward_normal: Vector3<f64>,
    pub mu: f64,
}

impl ContactPoint {
    /// Contact with gravity-weighted effective friction applied.
    pub fn new(position: Point3<f64>, outward_normal: Vector3<f64>, base_mu: f64) -> Self {
        let n = outward_normal.normalize();
        Self {
            position,
            outward_normal: n,
            mu: effective_friction(&n, base_mu),
        }
    }
}

/// max(0, n·ĝ)·mu: top-facing contacts generate no friction.
pub fn effective_friction(outward_normal: &Vector3<f64>, mu: f64) -> f64 {
    (outward_normal.dot(&GRAVITY_DIR)).max(0.0) * mu
}

/// Edges of the polyhedral friction cone about −n, as 6D wrenches about
/// `com` with torques normalized by `torque_scale`. A frictionless contact
/// collapses to the single wrench along −n.
pub fn wrench_basis(
    contact: &ContactPoint,
    com: &Point3<f64>,
    q: usize,
    torque_scale: f64,
) -> Vec<Vector6<f64>> {
    assert!(q >= 3, "cone needs at least 3 sides");
    assert!(torque_scale > 0.0);
    let n = contact.outward_normal;
    let r = contact.position - com;
    let wrench = |force: Vector3<f64>| {
        let torque = r.cross(&force) / torque_scale;
        Vector6::new(force.x, force.y, force.z, torque.x, torque.y, torque.z)
    };
    if contact.mu <= 0.0 {
        return vec![wrench(-n)];
    }
    // any orthonormal tangent pair
    let t1 = if n.x.abs() < 0.9 {
        n.cross(&Vector3::x()).normalize()
    } else {
        n.cross(&Vector3::y()).normalize()
    };
    let t2 = n.cross(&t1);
    (0..q)
        .map(|j| {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / q as f64;
            let f = (-n + contact.mu * (phi.cos() * t1 + phi.sin() * t2)).normalize();
            wrench(f)
        })
        .collect()
}

fn gc_wrench_matrix(
    contacts: &[ContactPoint],
    com: &Point3<f64>,
    q: usize,
    torque_scale: f64,
) -> DMatrix<f64> {
    let cols: Vec<Vector6<f64>> = contacts
        .iter()
        .flat_map(|c| wrench_basis(c, com, q, torque_scale))
        .collect();
    let mut a = DMatrix::zeros(6, cols.len());
    for (j, w) in cols.iter().enumerate() {
        for i in 0..6 {
            a[(i, j)] = w[i];
        }
    }
    a
}

/// Wrench the contacts must jointly produce to balance unit gravity:
/// −[ĝ; 0].
fn gravity_balance_rhs() -> DVector<f64> {
    let mut b = DVector::zeros(6);
    b[0] = -GRAVITY_DIR.x;
    b[1] = -GRAVITY_DIR.y;
    b[2] = -GRAVITY_DIR.z;
    b
}

/// True iff nonnegative cone coefficients exist with
/// Σ k_ij·w_ij + [ĝ; 0] = 0, decided by LP feasibility (tolerance 1e-8).
/// Coincident contact positions are reported unstable.
pub fn partial_force_closure(
    contacts: &[ContactPoint],
    com: &Point3<f64>,
    q: usize,
    torque_scale: f64,
) -> Result<bool, GraspError> {
    for i in 0..contacts.len() {
        for j in (i + 1)..contacts.len() {
            if (contacts[i].position - contacts[j].position).norm() < 1e-9 {
                return Ok(false);
            }
        }
    }
    let a = gc_wrench_matrix(contacts, com, q, torque_scale);
    Ok(lp::feasible(&a, &gravity_balance_rhs())?)
}

/// Fixed quasi-uniform unit directions in R^6; the first is the pure
/// downward force [ĝ; 0] so the most natural disturbance is always probed.
pub fn disturbance_directions(count: usize) -> Vec<Vector6<f64>> {
    let mut dirs = Vec::with_capacity(count);
    dirs.push(Vector6::new(0.0, 0.0, -1.0, 0.0, 0.0, 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(0x6D1F);
    while dirs.len() < count {
        // Box-Muller normal samples -> uniform direction on S^5
        let mut v = Vector6::zeros();
        for i in 0..3 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (-2.0 * u1.ln()).sqrt();
            v[2 * i] = r * u2.cos();
            v[2 * i + 1] = r * u2.sin();
        }
        let norm = v.norm();
        if norm > 1e-6 {
            dirs.push(v / norm);
        }
    }
    dirs
}

/// Max α ≥ 0 such that the contacts can balance [ĝ;0] + α·û under the
/// total normal-force budget; 0 when even gravity alone is infeasible.
pub fn min_wrench_along(
    contacts: &[ContactPoint],
    com: &Point3<f64>,
    q: usize,
    torque_scale: f64,
    f_max: f64,
    dir: &Vector6<f64>,
) -> Result<f64, GraspError> {
    let w = gc_wrench_matrix(contacts, com, q, torque_scale);
    let ncone = w.ncols();
    // variables: k (ncone), alpha, slack; rows: 6 balance + 1 budget
    let mut a = DMatrix::zeros(7, ncone + 2);
    a.view_mut((0, 0), (6, ncone)).copy_from(&w);
    for i in 0..6 {
        a[(i, ncone)] = dir[i]; // Σ k w + α û = −[ĝ;0]
    }
    for j in 0..ncone {
        a[(6, j)] = 1.0;
    }
    a[(6, ncone + 1)] = 1.0;
    let mut b = DVector::zeros(7);
    b.rows_mut(0, 6).copy_from(&gravity_balance_rhs());
    b[6] = f_max;
    let mut c = DVector::zeros(ncone + 2);
    c[ncone] = 1.0;
    match lp::solve(&a, &b, &c)? {
        LpOutcome::Optimal { objective, .. } => Ok(objective.max(0.0)),
        LpOutcome::Infeasible { .. } => Ok(0.0),
    }
}

/// Minimum over sampled disturbance directions of the largest survivable
/// extra wrench magnitude.
pub fn partial_min_wrench(
    contacts: &[ContactPoint],
    com: &Point3<f64>,
    q: usize,
    torque_scale: f64,
    f_max: f64,
) -> Result<f64, GraspError> {
    let mut worst = f64::INFINITY;
    for dir in disturbance_directions(DEFAULT_DISTURBANCE_DIRS) {
        let alpha = min_wrench_along(contacts, com, q, torque_scale, f_max, &dir)?;
        worst = worst.min(alpha);
        if worst == 0.0 {
            break;
        }
    }
    Ok(worst)
}

/// Area-uniform surface contacts that sit above the floor and are visible
/// from the first finger origin (the straight segment from the FFO to a
/// point slightly outside the surface must miss the mesh, and must not dip
/// to the resting plane).
pub fn sample_candidate_points(
    mesh: &TriMesh,
    ffo: &Point3<f64>,
    count: usize,
    seed: u64,
    floor_eps: f64,
    base_mu: f64,
) -> Result<Vec<ContactPoint>, GraspError> {
    let samples = mesh
        .sample_surface_points(count, seed)
        .map_err(|_| GraspError::NoCandidates)?;
    let mut out = Vec::new();
    for (p, n) in samples {
        if p.z <= floor_eps || ffo.z <= floor_eps {
            continue;
        }
        let outside = Point3::from(p.coords + 1e-4 * n);
        if !mesh.segment_intersections(ffo, &outside).is_empty() {
            continue;
        }
        out.push(ContactPoint::new(p, n, base_mu));
    }
    if out.is_empty() {
        return Err(GraspError::NoCandidates);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GraspConfiguration {
    /// Indices into the candidate list, sorted ascending.
    pub candidate_indices: [usize; 3],
    pub contacts: [ContactPoint; 3],
    pub stable: bool,
    pub reachable: bool,
    pub partial_min_wrench: Option<f64>,
    pub finger_length: Option<f64>,
    pub pareto_rank: Option<usize>,
}

impl GraspConfiguration {
    pub fn from_candidates(candidates: &[ContactPoint], idx: [usize; 3]) -> Self {
        Self {
            candidate_indices: idx,
            contacts: [candidates[idx[0]], candidates[idx[1]], candidates[idx[2]]],
            stable: false,
            reachable: false,
            partial_min_wrench: None,
            finger_length: None,
            pareto_rank: None,
        }
    }
}

/// Distinct unordered candidate triples, uniform and deterministic per seed.
/// Capped at the number of possible triples.
pub fn generate_gcs(
    candidates: &[ContactPoint],
    count: usize,
    seed: u64,
) -> Result<Vec<GraspConfiguration>, GraspError> {
    let n = candidates.len();
    if n < 3 {
        return Err(GraspError::TooFewCandidates(n));
    }
    let total = n * (n - 1) * (n - 2) / 6;
    let target = count.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        let mut idx = [0usize; 3];
        loop {
            for v in idx.iter_mut() {
                *v = rng.gen_range(0..n);
            }
            idx.sort_unstable();
            if idx[0] != idx[1] && idx[1] != idx[2] {
                break;
            }
        }
        if seen.insert(idx) {
            out.push(GraspConfiguration::from_candidates(candidates, idx));
        }
    }
    Ok(out)
}

/// Loss for one instantaneous motion (v, ω, c) against the contacts:
/// Σ_i [cos θ_max − v_i·n_i]_+ + [‖v_i‖ − 1]_+ with v_i = v + ω×(c_i − c).
fn reach_loss_grad(
    positions: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    cos_tmax: f64,
    x: &[f64; 9],
) -> (f64, [f64; 9]) {
    let v = Vector3::new(x[0], x[1], x[2]);
    let omega = Vector3::new(x[3], x[4], x[5]);
    let c = Vector3::new(x[6], x[7], x[8]);
    let mut loss = 0.0;
    let mut grad = [0.0f64; 9];
    for (p, n) in positions.iter().zip(normals) {
        let r = p - c;
        let vi = v + omega.cross(&r);
        let mut g = Vector3::zeros(); // dloss/dvi
        let align = cos_tmax - vi.dot(n);
        if align > 0.0 {
            loss += align;
            g -= n;
        }
        let speed = vi.norm();
        if speed > 1.0 {
            loss += speed - 1.0;
            g += vi / speed;
        }
        if g != Vector3::zeros() {
            // chain rule: dvi/dv = I, dvi/dω = −[r]×, dvi/dc = −[ω]×
            for k in 0..3 {
                grad[k] += g[k];
            }
            let gw = r.cross(&g);
            let gc = omega.cross(&g);
            for k in 0..3 {
                grad[3 + k] += gw[k];
                grad[6 + k] += gc[k];
            }
        }
    }
    (loss, grad)
}

/// Whether some instantaneous rigid motion moves every contact point away
/// from the surface within `theta_max` of its outward normal. Decided by
/// projected gradient descent with random restarts; the geometry is
/// normalized about the contact centroid, so the verdict is invariant to
/// uniform scaling.
pub fn reachability_check(contacts: &[ContactPoint], theta_max: f64, restarts: usize) -> bool {
    const STEPS: usize = 500;
    const STEP: f64 = 1e-2;
    const TOL: f64 = 1e-6;
    assert!(!contacts.is_empty());
    let centroid = contacts
        .iter()
        .fold(Vector3::zeros(), |s, c| s + c.position.coords)
        / contacts.len() as f64;
    let scale = contacts
        .iter()
        .map(|c| (c.position.coords - centroid).norm())
        .fold(0.0, f64::max)
        .max(1e-12);
    let positions: Vec<Vector3<f64>> = contacts
        .iter()
        .map(|c| (c.position.coords - centroid) / scale)
        .collect();
    let normals: Vec<Vector3<f64>> = contacts.iter().map(|c| c.outward_normal).collect();
    let cos_tmax = theta_max.cos();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EAC);
    for restart in 0..restarts.max(1) {
        let mut x = if restart == 0 {
            // deterministic warm start: translate along the mean normal
            let mean: Vector3<f64> = normals.iter().sum();
            let v = if mean.norm() > 1e-9 {
                mean.normalize()
            } else {
                Vector3::z()
            };
            [v.x, v.y, v.z, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        } else {
            let mut x = [0.0; 9];
            for v in x.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            x
        };
        for _ in 0..STEPS {
            let (loss, grad) = reach_loss_grad(&positions, &normals, cos_tmax, &x);
            if loss < TOL {
                return true;
            }
            for k in 0..9 {
                x[k] -= STEP * grad[k];
            }
            // projection: keep the iterate in a bounded box
            for v in x.iter_mut() {
                *v = v.clamp(-4.0, 4.0);
            }
        }
        let (loss, _) = reach_loss_grad(&positions, &normals, cos_tmax, &x);
        if loss < TOL {
            return true;
        }
    }
    false
}

/// Max over the three contacts of the shortest collision-free path length
/// from the FFO, on the shared free-space grid. +infinity when some contact
/// is unreachable around the object.
pub fn finger_length_with_field(gc: &GraspConfiguration, field: &FreeSpaceField) -> f64 {
    gc.contacts
        .iter()
        .map(|c| field.path_length_to(&c.position))
        .fold(0.0, f64::max)
}

pub fn finger_length(
    gc: &GraspConfiguration,
    ffo: &Point3<f64>,
    mesh: &TriMesh,
    grid_res: f64,
) -> f64 {
    let extras: Vec<Point3<f64>> = gc.contacts.iter().map(|c| c.position).collect();
    let field = FreeSpaceField::build(mesh, ffo, grid_res, &extras);
    finger_length_with_field(gc, &field)
}

/// `a` dominates `b`: at least as good on both metrics (maximize
/// partial_min_wrench, minimize finger_length), strictly better on one.
fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 <= b.1 && (a.0 > b.0 || a.1 < b.1)
}

/// Non-dominated sorting into Pareto frontiers (rank 1 first); within a
/// frontier ascending finger_length, ties broken by candidate indices.
/// All inputs must carry both metrics.
pub fn rank_gcs(mut gcs: Vec<GraspConfiguration>) -> Vec<GraspConfiguration> {
    let metrics: Vec<(f64, f64)> = gcs
        .iter()
        .map(|g| {
            (
                g.partial_min_wrench.expect("metric present"),
                g.finger_length.expect("metric present"),
            )
        })
        .collect();
    let n = gcs.len();
    let mut rank = vec![0usize; n];
    let mut assigned = 0;
    let mut frontier = 0;
    while assigned < n {
        frontier += 1;
        let mut current = Vec::new();
        for i in 0..n {
            if rank[i] != 0 {
                continue;
            }
            let dominated = (0..n)
                .any(|j| j != i && rank[j] == 0 && dominates(metrics[j], metrics[i]));
            if !dominated {
                current.push(i);
            }
        }
        for &i in &current {
            rank[i] = frontier;
        }
        assigned += current.len();
    }
    for (g, r) in gcs.iter_mut().zip(&rank) {
        g.pareto_rank = Some(*r);
    }
    gcs.sort_by(|a, b| {
        a.pareto_rank
            .cmp(&b.pareto_rank)
            .then(a.finger_length.unwrap().total_cmp(&b.finger_length.unwrap()))
            .then(a.candidate_indices.cmp(&b.candidate_indices))
    });
    gcs
}

// --- serialization -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContactRecord {
    pub position: [f64; 3],
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcRecord {
    pub contacts: Vec<ContactRecord>,
    pub stable: bool,
    pub reachable: bool,
    pub partial_min_wrench: Option<f64>,
    pub finger_length: Option<f64>,
    pub pareto_rank: Option<usize>,
}

impl GcRecord {
    pub fn from_gc(gc: &GraspConfiguration) -> Self {
        Self {
            contacts: gc
                .contacts
                .iter()
                .map(|c| ContactRecord {
                    position: [c.position.x, c.position.y, c.position.z],
                    normal: [c.outward_normal.x, c.outward_normal.y, c.outward_normal.z],
                })
                .collect(),
            stable: gc.stable,
            reachable: gc.reachable,
            partial_min_wrench: gc.partial_min_wrench,
            finger_length: gc.finger_length.filter(|l| l.is_finite()),
            pareto_rank: gc.pareto_rank,
        }
    }

    pub fn to_contacts(&self, base_mu: f64) -> Vec<ContactPoint> {
        self.contacts
            .iter()
            .map(|c| {
                ContactPoint::new(
                    Point3::new(c.position[0], c.position[1], c.position[2]),
                    Vector3::new(c.normal[0], c.normal[1], c.normal[2]),
                    base_mu,
                )
            })
            .collect()
    }
}
