//! Co-optimization objective: design-variable encoding (skeleton offsets +
//! trajectory keyframe offsets), collision energies E_g and E_t, robot floor
//! energy E_r, and the trajectory regularizer L.

use nalgebra::{Point3, Vector3};

use crate::geodesic::GeodesicField;
use crate::math::Polyline;
use crate::mesh::TriMesh;
use crate::pathcost::PathCostContext;
use crate::robot::{RobotModel, Trajectory};
use crate::skeleton::{skeleton_motion, Skeleton};

/// Weight of the robot floor-collision energy.
pub const DEFAULT_LAMBDA1: f64 = 1000.0;
/// Weight of the trajectory regularizer.
pub const DEFAULT_LAMBDA2: f64 = 1e-6;
/// FFO clearance height above the floor (meters).
pub const DEFAULT_FLOOR_CLEARANCE: f64 = 0.05;
/// Max skeleton-point displacement between trajectory samples (meters).
pub const DEFAULT_D_SUB: f64 = 1e-3;
/// Trace linearization tolerance (meters).
pub const DEFAULT_D_LIN: f64 = 1e-3;
/// Skeleton interior-joint offset bound (meters).
pub const SKELETON_OFFSET_BOUND: f64 = 0.01;

/// Per-joint keyframe deviation bounds (radians).
pub fn joint_deviation_bounds() -> [f64; 6] {
    let d = std::f64::consts::PI / 180.0;
    [5.0 * d, 5.0 * d, 5.0 * d, 45.0 * d, 25.0 * d, 90.0 * d]
}

/// Layout of the flat design vector: first the skeleton interior-joint
/// offsets (3 fingers × (m−2) joints × xyz, meters), then the interior
/// keyframe offsets ((n−2) keyframes × d joints, radians).
#[derive(Debug, Clone)]
pub struct DesignVariables {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub sigma: Vec<f64>,
}

impl DesignVariables {
    pub fn new(m: usize, n: usize, d: usize) -> Self {
        let bounds = joint_deviation_bounds();
        let mut sigma = Vec::new();
        for _ in 0..3 * (m - 2) * 3 {
            sigma.push(SKELETON_OFFSET_BOUND);
        }
        for _ in 0..n - 2 {
            for j in 0..d {
                sigma.push(bounds[j.min(5)]);
            }
        }
        Self { m, n, d, sigma }
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn skeleton_len(&self) -> usize {
        3 * (self.m - 2) * 3
    }

    pub fn within_bounds(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x.iter()
                .zip(&self.sigma)
                .all(|(&v, &s)| v >= -s - 1e-12 && v <= s + 1e-12)
    }

    /// Skeleton with interior joints displaced by the design vector.
    pub fn apply_to_skeleton(&self, base: &Skeleton, x: &[f64]) -> Skeleton {
        let mut sk = base.clone();
        let mut idx = 0;
        for f in 0..3 {
            for j in 1..self.m - 1 {
                let off = Vector3::new(x[idx], x[idx + 1], x[idx + 2]);
                sk.fingers[f][j] += off;
                idx += 3;
            }
        }
        sk
    }

    /// Trajectory with interior keyframes offset by the design vector.
    pub fn apply_to_trajectory(&self, base: &Trajectory, x: &[f64]) -> Trajectory {
        let mut keyframes = base.keyframes.clone();
        let mut idx = self.skeleton_len();
        for k in 1..self.n - 1 {
            for j in 0..self.d {
                keyframes[k][j] += x[idx];
                idx += 1;
            }
        }
        Trajectory::new(keyframes)
    }

    /// L2 norm of the trajectory components of x.
    pub fn trajectory_norm(&self, x: &[f64]) -> f64 {
        x[self.skeleton_len()..]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub e_g: f64,
    pub e_t: f64,
    pub e_r: f64,
    pub l: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.e_g + self.e_t + self.lambda1 * self.e_r + self.lambda2 * self.l
    }

    /// Collision-free and clearance-respecting at this resolution.
    pub fn feasible(&self) -> bool {
        self.e_g == 0.0 && self.e_t == 0.0 && self.e_r == 0.0
    }
}

/// Trajectory sample times such that no skeleton point moves more than
/// `d_sub` between consecutive samples, from a conservative rigid-motion
/// displacement bound (translation + rotation angle × skeleton radius).
pub fn adaptive_time_samples(
    robot: &RobotModel,
    traj: &Trajectory,
    radius: f64,
    d_sub: f64,
) -> Vec<f64> {
    fn bound(
        robot: &RobotModel,
        traj: &Trajectory,
        radius: f64,
        t0: f64,
        t1: f64,
    ) -> f64 {
        let a = robot.forward_kinematics(&traj.interpolate(t0));
        let b = robot.forward_kinematics(&traj.interpolate(t1));
        (a.translation - b.translation).norm() + a.rotation_angle_to(&b) * radius
    }
    let mut times = vec![0.0];
    let mut stack = vec![(0.0, 1.0)];
    let mut intervals = Vec::new();
    while let Some((t0, t1)) = stack.pop() {
        if bound(robot, traj, radius, t0, t1) <= d_sub || t1 - t0 < 1e-7 {
            intervals.push((t0, t1));
        } else {
            let mid = (t0 + t1) / 2.0;
            stack.push((mid, t1));
            stack.push((t0, mid));
        }
    }
    intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (_, t1) in intervals {
        times.push(t1);
    }
    times
}

/// Everything fixed during one GC's co-optimization.
pub struct EnergyContext<'a> {
    pub robot: &'a RobotModel,
    pub mesh: &'a TriMesh,
    pub geo: &'a GeodesicField,
    pub base_skeleton: &'a Skeleton,
    pub base_trajectory: &'a Trajectory,
    pub vars: &'a DesignVariables,
    pub lambda1: f64,
    pub lambda2: f64,
    pub floor_clearance: f64,
    pub d_sub: f64,
    pub d_lin: f64,
}

impl EnergyContext<'_> {
    fn ctx(&self) -> PathCostContext<'_> {
        PathCostContext {
            mesh: self.mesh,
            geo: self.geo,
        }
    }

    /// Max over trajectory samples of the summed finger path costs.
    pub fn gripper_collision_energy(&self, skeleton: &Skeleton, traj: &Trajectory) -> f64 {
        let ctx = self.ctx();
        let times = adaptive_time_samples(self.robot, traj, skeleton.radius(), self.d_sub);
        let mut worst = 0.0f64;
        for &t in &times {
            let posed = skeleton.transformed(&skeleton_motion(self.robot, traj, t));
            let mut total = 0.0;
            for f in 0..3 {
                total += ctx.path_cost(&posed.finger_polyline(f));
            }
            worst = worst.max(total);
        }
        worst
    }

    /// Skeleton sample points at spacing ≤ d_sub along each finger.
    fn skeleton_samples(&self, skeleton: &Skeleton) -> Vec<Point3<f64>> {
        let mut out = Vec::new();
        for f in 0..3 {
            let pts = &skeleton.fingers[f];
            out.push(pts[0]);
            for w in pts.windows(2) {
                let len = (w[1] - w[0]).norm();
                let steps = (len / self.d_sub).ceil().max(1.0) as usize;
                for s in 1..=steps {
                    let frac = s as f64 / steps as f64;
                    out.push(Point3::from(w[0].coords + (w[1] - w[0]) * frac));
                }
            }
        }
        out
    }

    /// Trace of one grasp-frame point over t ∈ [0,1], adaptively linearized
    /// to within `d_lin`.
    fn trace(&self, traj: &Trajectory, p: &Point3<f64>) -> Vec<Point3<f64>> {
        let at = |t: f64| skeleton_motion(self.robot, traj, t).apply(p);
        let mut pts = vec![(0.0, at(0.0))];
        let mut stack = vec![(0.0, at(0.0), 1.0, at(1.0))];
        let mut segs: Vec<(f64, Point3<f64>)> = Vec::new();
        while let Some((t0, p0, t1, p1)) = stack.pop() {
            let tm = (t0 + t1) / 2.0;
            let pm = at(tm);
            let chord_mid = Point3::from((p0.coords + p1.coords) / 2.0);
            if (pm - chord_mid).norm() <= self.d_lin || t1 - t0 < 1e-7 {
                segs.push((t1, p1));
            } else {
                stack.push((tm, pm, t1, p1));
                stack.push((t0, p0, tm, pm));
            }
        }
        segs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.extend(segs.into_iter().map(|(t, p)| (t, p)));
        pts.into_iter().map(|(_, p)| p).collect()
    }

    /// Max over skeleton sample points of the traced path's cost.
    pub fn trajectory_collision_energy(&self, skeleton: &Skeleton, traj: &Trajectory) -> f64 {
        let ctx = self.ctx();
        let mut worst = 0.0f64;
        for p in self.skeleton_samples(skeleton) {
            let trace = self.trace(traj, &p);
            if trace.len() < 2 {
                continue;
            }
            worst = worst.max(ctx.path_cost(&Polyline::new(trace)));
        }
        worst
    }

    /// Max floor penetration of the FFO over the trajectory samples.
    pub fn robot_floor_energy(&self, skeleton: &Skeleton, traj: &Trajectory) -> f64 {
        let times = adaptive_time_samples(self.robot, traj, skeleton.radius(), self.d_sub);
        times
            .iter()
            .map(|&t| self.robot.floor_penetration(&traj.interpolate(t), self.floor_clearance))
            .fold(0.0, f64::max)
    }

    /// Full objective at a design vector.
    pub fn total_objective(&self, x: &[f64]) -> EnergyBreakdown {
        debug_assert!(self.vars.within_bounds(x), "x out of bounds");
        let skeleton = self.vars.apply_to_skeleton(self.base_skeleton, x);
        let traj = self.vars.apply_to_trajectory(self.base_trajectory, x);
        EnergyBreakdown {
            e_g: self.gripper_collision_energy(&skeleton, &traj),
            e_t: self.trajectory_collision_energy(&skeleton, &traj),
            e_r: self.robot_floor_energy(&skeleton, &traj),
            l: self.vars.trajectory_norm(x),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }
}
