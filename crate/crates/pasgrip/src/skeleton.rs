//! Gripper skeleton: three fingers of m joints each, stored in world
//! coordinates at the grasp keyframe, plus collision-free initialization from
//! the free-space shortest paths and rigid motion along the trajectory.

use nalgebra::Point3;
use thiserror::Error;

use crate::freespace::FreeSpaceField;
use crate::grasp::GraspConfiguration;
use crate::math::{Polyline, RigidTransform};
use crate::mesh::TriMesh;
use crate::pathcost::PathCostContext;
use crate::robot::{RobotModel, Trajectory};

/// Default joints per finger.
pub const DEFAULT_JOINTS_PER_FINGER: usize = 4;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("finger {0} has no collision-free path from the FFO to its contact")]
    NoFreePath(usize),
    #[error("finger {0} could not be simplified to {1} joints without collision")]
    SimplifyFailed(usize, usize),
}

/// Three fingers, each running from the FFO (joint 0) to a contact point
/// (joint m−1), in world coordinates at the grasp keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub fingers: [Vec<Point3<f64>>; 3],
}

impl Skeleton {
    pub fn joints_per_finger(&self) -> usize {
        self.fingers[0].len()
    }

    pub fn ffo(&self) -> Point3<f64> {
        self.fingers[0][0]
    }

    pub fn finger_polyline(&self, f: usize) -> Polyline {
        Polyline::new(self.fingers[f].clone())
    }

    /// Largest joint distance from the FFO; bounds any joint's displacement
    /// under a rotation of the rigid body about the FFO.
    pub fn radius(&self) -> f64 {
        let ffo = self.ffo();
        self.fingers
            .iter()
            .flatten()
            .map(|p| (p - ffo).norm())
            .fold(0.0, f64::max)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Skeleton {
        Skeleton {
            fingers: [
                self.fingers[0].iter().map(|p| t.apply(p)).collect(),
                self.fingers[1].iter().map(|p| t.apply(p)).collect(),
                self.fingers[2].iter().map(|p| t.apply(p)).collect(),
            ],
        }
    }
}

/// Rigid motion carrying the grasp-pose skeleton to trajectory time `t`:
/// F(t)·F(1)⁻¹ with F = forward kinematics of the interpolated joints.
/// Identity at t = 1.
pub fn skeleton_motion(robot: &RobotModel, traj: &Trajectory, t: f64) -> RigidTransform {
    let grasp = robot.forward_kinematics(&traj.interpolate(1.0));
    let now = robot.forward_kinematics(&traj.interpolate(t));
    now.compose(&grasp.inverse())
}

/// Skeleton pose at trajectory time `t` (world coordinates).
pub fn skeleton_world_path(
    skeleton: &Skeleton,
    traj: &Trajectory,
    robot: &RobotModel,
    t: f64,
) -> Skeleton {
    skeleton.transformed(&skeleton_motion(robot, traj, t))
}

fn resample_to(points: &[Point3<f64>], m: usize) -> Vec<Point3<f64>> {
    assert!(points.len() >= 2 && m >= 2);
    let cum: Vec<f64> = points
        .windows(2)
        .scan(0.0, |acc, w| {
            *acc += (w[1] - w[0]).norm();
            Some(*acc)
        })
        .collect();
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(m);
    out.push(points[0]);
    for j in 1..m - 1 {
        let s = total * j as f64 / (m - 1) as f64;
        let seg = cum.partition_point(|&c| c < s);
        let prev_cum = if seg == 0 { 0.0 } else { cum[seg - 1] };
        let seg_len = cum[seg] - prev_cum;
        let frac = if seg_len > 0.0 {
            (s - prev_cum) / seg_len
        } else {
            0.0
        };
        let a = points[seg];
        let b = points[seg + 1];
        out.push(Point3::from(a.coords + (b.coords - a.coords) * frac));
    }
    out.push(*points.last().unwrap());
    out
}

/// One finger: a collision-free m-joint polyline from the FFO to the contact.
fn init_finger(
    finger_index: usize,
    ffo: &Point3<f64>,
    contact: &Point3<f64>,
    ctx: &PathCostContext,
    field: &FreeSpaceField,
    m: usize,
) -> Result<Vec<Point3<f64>>, SkeletonError> {
    let free = |pts: &[Point3<f64>]| ctx.path_cost(&Polyline::new(pts.to_vec())) == 0.0;

    // straight shot first
    let straight = resample_to(&[*ffo, *contact], m);
    if free(&straight) {
        return Ok(straight);
    }

    let mut path = field
        .path_to(contact)
        .ok_or(SkeletonError::NoFreePath(finger_index))?;
    // greedy vertex removal while the path stays collision-free
    loop {
        if path.len() <= m {
            break;
        }
        let mut removed = false;
        let mut best: Option<(f64, usize)> = None;
        for i in 1..path.len() - 1 {
            let mut cand = path.clone();
            cand.remove(i);
            if free(&cand) {
                let shortcut =
                    (path[i + 1] - path[i - 1]).norm();
                if best.map_or(true, |(b, _)| shortcut < b) {
                    best = Some((shortcut, i));
                }
            }
        }
        if let Some((_, i)) = best {
            path.remove(i);
            removed = true;
        }
        if !removed {
            break;
        }
    }
    if path.len() > m {
        // force the joint count by arc-length resampling, then verify
        let resampled = resample_to(&path, m);
        if free(&resampled) {
            return Ok(resampled);
        }
        return Err(SkeletonError::SimplifyFailed(finger_index, m));
    }
    while path.len() < m {
        // split the longest segment; geometry (and cost) unchanged
        let (i, _) = path
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, (w[1] - w[0]).norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let mid = Point3::from((path[i].coords + path[i + 1].coords) / 2.0);
        path.insert(i + 1, mid);
    }
    Ok(path)
}

/// Collision-free m-joint skeleton for a grasp configuration: per finger the
/// free-space shortest path simplified to m joints with exact endpoints.
pub fn init_skeleton(
    gc: &GraspConfiguration,
    ffo: &Point3<f64>,
    mesh: &TriMesh,
    geo: &crate::geodesic::GeodesicField,
    field: &FreeSpaceField,
    m: usize,
) -> Result<Skeleton, SkeletonError> {
    assert!(m >= 2);
    let ctx = PathCostContext { mesh, geo };
    let f0 = init_finger(0, ffo, &gc.contacts[0].position, &ctx, field, m)?;
    let f1 = init_finger(1, ffo, &gc.contacts[1].position, &ctx, field, m)?;
    let f2 = init_finger(2, ffo, &gc.contacts[2].position, &ctx, field, m)?;
    Ok(Skeleton {
        fingers: [f0, f1, f2],
    })
}
