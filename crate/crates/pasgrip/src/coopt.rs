//! Per-GC co-optimization driver: trajectory initialization, CRS search over
//! the joint skeleton/trajectory design vector, dense verification, and the
//! solution artifacts.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::crs::{crs_optimize, CrsOptions};
use crate::energy::{
    DesignVariables, EnergyBreakdown, EnergyContext, adaptive_time_samples,
    DEFAULT_D_LIN, DEFAULT_D_SUB, DEFAULT_FLOOR_CLEARANCE, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2,
};
use crate::freespace::FreeSpaceField;
use crate::geodesic::GeodesicField;
use crate::grasp::GraspConfiguration;
use crate::math::RigidTransform;
use crate::mesh::TriMesh;
use crate::robot::{RobotError, RobotModel, Trajectory};
use crate::skeleton::{init_skeleton, skeleton_motion, Skeleton, DEFAULT_JOINTS_PER_FINGER};

/// Keyframes per trajectory.
pub const DEFAULT_KEYFRAMES: usize = 4;
/// Oversampling factor for the verification pass.
pub const DEFAULT_DENSE_FACTOR: usize = 4;
/// Objective-evaluation budget per GC.
pub const DEFAULT_BUDGET: usize = 300_000;
/// CRS population size.
pub const DEFAULT_POPULATION: usize = 10_000;
/// CRS relative tolerance.
pub const DEFAULT_REL_TOL: f64 = 1e-6;
/// Verified solutions to collect before stopping the GC loop.
pub const DEFAULT_TOP_K: usize = 1;

/// Retreat distance: far enough to clear the object's proximity.
pub fn default_retreat_dist(mesh: &TriMesh) -> f64 {
    (4.0 * mesh.bounding_sphere_radius()).max(0.3)
}

#[derive(Debug, Clone)]
pub struct CooptOptions {
    /// Skeleton joints per finger.
    pub m: usize,
    /// Trajectory keyframes.
    pub n: usize,
    pub population: usize,
    pub rel_tol: f64,
    pub budget: usize,
    pub seed: u64,
    pub top_k: usize,
    /// None → default_retreat_dist(mesh).
    pub retreat_dist: Option<f64>,
    pub d_sub: f64,
    pub d_lin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub floor_clearance: f64,
    /// Voxel resolution for skeleton initialization.
    pub grid_res: f64,
    pub dense_factor: usize,
}

impl Default for CooptOptions {
    fn default() -> Self {
        Self {
            m: DEFAULT_JOINTS_PER_FINGER,
            n: DEFAULT_KEYFRAMES,
            population: DEFAULT_POPULATION,
            rel_tol: DEFAULT_REL_TOL,
            budget: DEFAULT_BUDGET,
            seed: 0,
            top_k: DEFAULT_TOP_K,
            retreat_dist: None,
            d_sub: DEFAULT_D_SUB,
            d_lin: DEFAULT_D_LIN,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            floor_clearance: DEFAULT_FLOOR_CLEARANCE,
            grid_res: 0.01,
            dense_factor: DEFAULT_DENSE_FACTOR,
        }
    }
}

#[derive(Debug)]
pub enum CooptError {
    Ik(RobotError),
    SkeletonInit(crate::skeleton::SkeletonError),
    NoVerifiedSolution,
}

impl std::fmt::Display for CooptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CooptError::Ik(e) => write!(f, "trajectory initialization IK failed: {e}"),
            CooptError::SkeletonInit(e) => write!(f, "skeleton initialization failed: {e}"),
            CooptError::NoVerifiedSolution => {
                write!(f, "no GC produced a verified collision-free trajectory")
            }
        }
    }
}

impl std::error::Error for CooptError {}

/// Straight-line insert trajectory: last keyframe is the grasp configuration,
/// the first is the IK solution for the grasp flange pose translated back by
/// `retreat_dist` along `approach_axis` (unit vector pointing toward the
/// object), with joint-space linear keyframes in between.
pub fn init_trajectory(
    robot: &RobotModel,
    grasp_q: &[f64],
    approach_axis: &Vector3<f64>,
    retreat_dist: f64,
    n: usize,
) -> Result<Trajectory, RobotError> {
    assert!(n >= 2);
    let grasp = robot.forward_kinematics(grasp_q);
    let start_pose = RigidTransform::new(
        grasp.rotation,
        grasp.translation - approach_axis * retreat_dist,
    );
    let start_q = robot.inverse_kinematics(&start_pose, grasp_q)?;
    let mut keyframes = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / (n - 1) as f64;
        keyframes.push(
            start_q
                .iter()
                .zip(grasp_q)
                .map(|(a, b)| a + (b - a) * t)
                .collect(),
        );
    }
    Ok(Trajectory::new(keyframes))
}

/// Independent dense re-check of a candidate: E_g and E_t at `dense_factor`×
/// finer sampling plus a direct point-containment sweep and the floor
/// clearance at every sample. True only when no collision is detected at all.
pub fn verify_collision_free(
    ctx: &EnergyContext<'_>,
    skeleton: &Skeleton,
    traj: &Trajectory,
    dense_factor: usize,
) -> bool {
    let f = dense_factor.max(1) as f64;
    let dense = EnergyContext {
        robot: ctx.robot,
        mesh: ctx.mesh,
        geo: ctx.geo,
        base_skeleton: ctx.base_skeleton,
        base_trajectory: ctx.base_trajectory,
        vars: ctx.vars,
        lambda1: ctx.lambda1,
        lambda2: ctx.lambda2,
        floor_clearance: ctx.floor_clearance,
        d_sub: ctx.d_sub / f,
        d_lin: ctx.d_lin / f,
    };
    if dense.gripper_collision_energy(skeleton, traj) != 0.0 {
        return false;
    }
    if dense.trajectory_collision_energy(skeleton, traj) != 0.0 {
        return false;
    }
    // direct containment sweep, independent of the segment-intersection path
    let times = adaptive_time_samples(ctx.robot, traj, skeleton.radius(), dense.d_sub);
    for &t in &times {
        let q = traj.interpolate(t);
        if ctx.robot.floor_penetration(&q, ctx.floor_clearance) > 0.0 {
            return false;
        }
        let motion = skeleton_motion(ctx.robot, traj, t);
        for finger in &skeleton.fingers {
            for w in finger.windows(2) {
                let len = (w[1] - w[0]).norm();
                let steps = (len / dense.d_sub).ceil().max(1.0) as usize;
                for s in 0..=steps {
                    let frac = s as f64 / steps as f64;
                    let p = motion.apply(&Point3::from(w[0].coords + (w[1] - w[0]) * frac));
                    // contact tips sit exactly on the surface; only depth
                    // beyond float noise is a real penetration
                    if ctx.mesh.point_inside(&p)
                        && (ctx.mesh.closest_point(&p).0 - p).norm() > 1e-9
                    {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// One co-optimized GC: the design vector, the resulting geometry, and the
/// verification verdict.
#[derive(Debug, Clone)]
pub struct GcSolution {
    pub gc_index: usize,
    pub x: Vec<f64>,
    pub skeleton: Skeleton,
    pub trajectory: Trajectory,
    pub energies: EnergyBreakdown,
    pub verified: bool,
    pub eval_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnergyRecord {
    pub e_g: f64,
    pub e_t: f64,
    pub e_r: f64,
    pub l: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolutionRecord {
    pub gc_index: usize,
    pub x: Vec<f64>,
    /// 3 fingers × m joints × xyz, world frame at the grasp keyframe.
    pub skeleton: Vec<Vec<[f64; 3]>>,
    /// n keyframes × d joint angles.
    pub keyframes_rad: Vec<Vec<f64>>,
    pub energies: EnergyRecord,
    pub verified: bool,
    pub eval_count: usize,
}

impl SolutionRecord {
    pub fn from_solution(s: &GcSolution) -> Self {
        Self {
            gc_index: s.gc_index,
            x: s.x.clone(),
            skeleton: s
                .skeleton
                .fingers
                .iter()
                .map(|f| f.iter().map(|p| [p.x, p.y, p.z]).collect())
                .collect(),
            keyframes_rad: s.trajectory.keyframes.clone(),
            energies: EnergyRecord {
                e_g: s.energies.e_g,
                e_t: s.energies.e_t,
                e_r: s.energies.e_r,
                l: s.energies.l,
                total: s.energies.total(),
            },
            verified: s.verified,
            eval_count: s.eval_count,
        }
    }
}

/// Write the skeleton as OBJ polylines (one `l` element per finger).
pub fn export_skeleton_obj(skeleton: &Skeleton, path: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = String::new();
    for finger in &skeleton.fingers {
        for p in finger {
            out.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
        }
    }
    let m = skeleton.joints_per_finger();
    for f in 0..3 {
        out.push_str("l");
        for j in 0..m {
            out.push_str(&format!(" {}", f * m + j + 1));
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())
}

/// Co-optimize a single GC: initialize skeleton and trajectory, run CRS over
/// the bounded design vector, then verify the best candidate densely.
pub fn co_optimize_gc(
    robot: &RobotModel,
    mesh: &TriMesh,
    geo: &GeodesicField,
    gc: &GraspConfiguration,
    gc_index: usize,
    grasp_q: &[f64],
    opts: &CooptOptions,
) -> Result<GcSolution, CooptError> {
    let grasp = robot.forward_kinematics(grasp_q);
    let ffo = Point3::from(grasp.translation);
    let center = Point3::from((mesh.bbox_min.coords + mesh.bbox_max.coords) / 2.0);
    let approach = {
        let v = center - ffo;
        if v.norm() < 1e-9 {
            grasp.rotation.column(2).into_owned()
        } else {
            v.normalize()
        }
    };
    let retreat = opts.retreat_dist.unwrap_or_else(|| default_retreat_dist(mesh));
    let traj = init_trajectory(robot, grasp_q, &approach, retreat, opts.n)
        .map_err(CooptError::Ik)?;
    let start_ffo = Point3::from(robot.forward_kinematics(&traj.keyframes[0]).translation);
    let extras: Vec<Point3<f64>> = gc
        .contacts
        .iter()
        .map(|c| c.position)
        .chain(std::iter::once(start_ffo))
        .collect();
    let field = FreeSpaceField::build(mesh, &ffo, opts.grid_res, &extras);
    let skeleton = init_skeleton(gc, &ffo, mesh, geo, &field, opts.m)
        .map_err(CooptError::SkeletonInit)?;

    let vars = DesignVariables::new(opts.m, opts.n, robot.dof());
    let ctx = EnergyContext {
        robot,
        mesh,
        geo,
        base_skeleton: &skeleton,
        base_trajectory: &traj,
        vars: &vars,
        lambda1: opts.lambda1,
        lambda2: opts.lambda2,
        floor_clearance: opts.floor_clearance,
        d_sub: opts.d_sub,
        d_lin: opts.d_lin,
    };
    let bounds: Vec<(f64, f64)> = vars.sigma.iter().map(|&s| (-s, s)).collect();
    let mut crs_opts = CrsOptions::new(
        opts.population.max(vars.len() + 1),
        opts.rel_tol,
        opts.budget,
        opts.seed,
    );
    crs_opts.seeds = vec![vec![0.0; vars.len()]];
    // a zero objective means collision-free with zero trajectory offsets:
    // nothing left to improve
    crs_opts.stop_value = Some(0.0);
    let res = crs_optimize(|x| ctx.total_objective(x).total(), &bounds, &crs_opts);

    let best_skeleton = vars.apply_to_skeleton(&skeleton, &res.x_best);
    let best_traj = vars.apply_to_trajectory(&traj, &res.x_best);
    let energies = ctx.total_objective(&res.x_best);
    let verified = energies.feasible()
        && verify_collision_free(&ctx, &best_skeleton, &best_traj, opts.dense_factor);
    Ok(GcSolution {
        gc_index,
        x: res.x_best,
        skeleton: best_skeleton,
        trajectory: best_traj,
        energies,
        verified,
        eval_count: res.eval_count,
    })
}

/// Try ranked GCs in order, keeping every attempted solution; stop once
/// `top_k` verified solutions have been found.
pub fn co_optimize_ranked(
    robot: &RobotModel,
    mesh: &TriMesh,
    geo: &GeodesicField,
    ranked: &[GraspConfiguration],
    grasp_q: &[f64],
    opts: &CooptOptions,
) -> Vec<GcSolution> {
    let mut out = Vec::new();
    let mut verified = 0;
    for (i, gc) in ranked.iter().enumerate() {
        // seed each GC attempt distinctly but deterministically
        let mut gc_opts = opts.clone();
        gc_opts.seed = opts.seed.wrapping_add(i as u64);
        match co_optimize_gc(robot, mesh, geo, gc, i, grasp_q, &gc_opts) {
            Ok(sol) => {
                if sol.verified {
                    verified += 1;
                }
                out.push(sol);
                if verified >= opts.top_k {
                    break;
                }
            }
            Err(e) => {
                log::info!("GC {i} skipped: {e}");
            }
        }
    }
    out
}
