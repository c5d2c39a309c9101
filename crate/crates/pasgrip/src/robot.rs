//! Serial-arm kinematics: DH-parameter forward kinematics, damped
//! least-squares inverse kinematics, and joint-space keyframe trajectories.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::math::{RigidTransform, RigidTransformConfig};

#[derive(Debug, Error)]
pub enum RobotError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("inverse kinematics failed: position residual {pos_residual:.3e} m, orientation residual {rot_residual:.3e} rad")]
    IkFailed { pos_residual: f64, rot_residual: f64 },
}

/// One DH row: rotation about z by (theta + offset), translation d along z,
/// translation a along x, rotation alpha about x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub dh_rows: Vec<DhRow>,
    pub joint_limits: Vec<(f64, f64)>,
    pub base_pose: RigidTransform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotConfig {
    pub dh: Vec<[f64; 4]>,
    pub joint_limits_rad: Vec<[f64; 2]>,
    pub base_pose: RigidTransformConfig,
}

pub type JointVector = Vec<f64>;

impl RobotModel {
    pub fn dof(&self) -> usize {
        self.dh_rows.len()
    }

    pub fn from_config(cfg: &RobotConfig) -> Result<Self, RobotError> {
        if cfg.dh.len() != cfg.joint_limits_rad.len() {
            return Err(RobotError::Config(
                "dh and joint_limits_rad length mismatch".into(),
            ));
        }
        for lim in &cfg.joint_limits_rad {
            if lim[0] >= lim[1] {
                return Err(RobotError::Config("joint limit lower >= upper".into()));
            }
        }
        Ok(Self {
            dh_rows: cfg
                .dh
                .iter()
                .map(|r| DhRow {
                    a: r[0],
                    alpha: r[1],
                    d: r[2],
                    theta_offset: r[3],
                })
                .collect(),
            joint_limits: cfg.joint_limits_rad.iter().map(|l| (l[0], l[1])).collect(),
            base_pose: (&cfg.base_pose).into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RobotError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RobotConfig =
            serde_json::from_str(&text).map_err(|e| RobotError::Config(e.to_string()))?;
        Self::from_config(&cfg)
    }

    /// UR5-class default model (manufacturer kinematics, standard DH).
    pub fn default_ur5() -> Self {
        let pi = std::f64::consts::PI;
        let mk = |a, alpha, d| DhRow {
            a,
            alpha,
            d,
            theta_offset: 0.0,
        };
        Self {
            dh_rows: vec![
                mk(0.0, pi / 2.0, 0.089159),
                mk(-0.425, 0.0, 0.0),
                mk(-0.39225, 0.0, 0.0),
                mk(0.0, pi / 2.0, 0.10915),
                mk(0.0, -pi / 2.0, 0.09465),
                mk(0.0, 0.0, 0.0823),
            ],
            joint_limits: vec![(-2.0 * pi, 2.0 * pi); 6],
            base_pose: RigidTransform::identity(),
        }
    }

    pub fn default_config() -> RobotConfig {
        let model = Self::default_ur5();
        RobotConfig {
            dh: model
                .dh_rows
                .iter()
                .map(|r| [r.a, r.alpha, r.d, r.theta_offset])
                .collect(),
            joint_limits_rad: model.joint_limits.iter().map(|&(l, u)| [l, u]).collect(),
            base_pose: (&model.base_pose).into(),
        }
    }

    fn dh_transform(row: &DhRow, theta: f64) -> RigidTransform {
        let th = theta + row.theta_offset;
        let (st, ct) = th.sin_cos();
        let (sa, ca) = row.alpha.sin_cos();
        let rotation = Matrix3::new(
            ct,
            -st * ca,
            st * sa,
            st,
            ct * ca,
            -ct * sa,
            0.0,
            sa,
            ca,
        );
        let translation = Vector3::new(row.a * ct, row.a * st, row.d);
        RigidTransform::new(rotation, translation)
    }

    /// Pose of the flange frame origin for joint angles `q`.
    pub fn forward_kinematics(&self, q: &[f64]) -> RigidTransform {
        assert_eq!(q.len(), self.dof(), "joint vector length mismatch");
        let mut t = self.base_pose;
        for (row, &theta) in self.dh_rows.iter().zip(q) {
            t = t.compose(&Self::dh_transform(row, theta));
        }
        t
    }

    /// Frames after each joint (base pose first, flange last).
    fn chain_frames(&self, q: &[f64]) -> Vec<RigidTransform> {
        let mut frames = Vec::with_capacity(self.dof() + 1);
        let mut t = self.base_pose;
        frames.push(t);
        for (row, &theta) in self.dh_rows.iter().zip(q) {
            t = t.compose(&Self::dh_transform(row, theta));
            frames.push(t);
        }
        frames
    }

    /// Geometric Jacobian of the flange pose (linear over angular rows).
    fn jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let frames = self.chain_frames(q);
        let pe = frames.last().unwrap().translation;
        let d = self.dof();
        let mut jac = DMatrix::zeros(6, d);
        for i in 0..d {
            let zi = frames[i].rotation.column(2).into_owned();
            let pi = frames[i].translation;
            let lin = zi.cross(&(pe - pi));
            for r in 0..3 {
                jac[(r, i)] = lin[r];
                jac[(r + 3, i)] = zi[r];
            }
        }
        jac
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(&a, &(lo, hi))| a >= lo - 1e-12 && a <= hi + 1e-12)
    }

    fn clamp_to_limits(&self, q: &mut [f64]) {
        for (a, &(lo, hi)) in q.iter_mut().zip(&self.joint_limits) {
            *a = a.clamp(lo, hi);
        }
    }

    /// Damped least-squares IK on the 6D pose error twist. Succeeds when the
    /// residual drops under 1e-4 m / 1e-3 rad within the iteration budget.
    pub fn inverse_kinematics(
        &self,
        target: &RigidTransform,
        q_init: &[f64],
    ) -> Result<JointVector, RobotError> {
        const DAMPING: f64 = 1e-3;
        const MAX_ITERS: usize = 500;
        const POS_TOL: f64 = 1e-4;
        const ROT_TOL: f64 = 1e-3;
        let mut q: Vec<f64> = q_init.to_vec();
        self.clamp_to_limits(&mut q);
        let mut best = (f64::INFINITY, f64::INFINITY);
        for _ in 0..MAX_ITERS {
            let fk = self.forward_kinematics(&q);
            let pos_err = target.translation - fk.translation;
            let rot_err = rotation_log(&(target.rotation * fk.rotation.transpose()));
            let (pr, rr) = (pos_err.norm(), rot_err.norm());
            if pr < best.0 {
                best = (pr, rr);
            }
            if pr < POS_TOL && rr < ROT_TOL {
                return Ok(q);
            }
            let twist = Vector6::new(
                pos_err.x, pos_err.y, pos_err.z, rot_err.x, rot_err.y, rot_err.z,
            );
            let jac = self.jacobian(&q);
            let jjt = &jac * jac.transpose() + DMatrix::identity(6, 6) * DAMPING * DAMPING;
            let y = jjt
                .lu()
                .solve(&DVector::from_column_slice(twist.as_slice()))
                .ok_or(RobotError::IkFailed {
                    pos_residual: pr,
                    rot_residual: rr,
                })?;
            let dq = jac.transpose() * y;
            // limit the step to keep the linearization honest
            let scale = (0.5 / dq.amax()).min(1.0);
            for i in 0..q.len() {
                q[i] += scale * dq[i];
            }
            self.clamp_to_limits(&mut q);
        }
        Err(RobotError::IkFailed {
            pos_residual: best.0,
            rot_residual: best.1,
        })
    }

    /// max(0, h - z_FFO(q)): how far the flange dips below clearance height.
    pub fn floor_penetration(&self, q: &[f64], h: f64) -> f64 {
        (h - self.forward_kinematics(q).translation.z).max(0.0)
    }
}

/// Rotation-matrix logarithm as a rotation vector.
pub fn rotation_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let angle = c.acos();
    if angle < 1e-12 {
        return Vector3::zeros();
    }
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if axis.norm() < 1e-12 {
        // angle near pi: extract the axis from R + I
        let m = r + Matrix3::identity();
        let col = (0..3)
            .max_by(|&a, &b| m.column(a).norm().total_cmp(&m.column(b).norm()))
            .unwrap();
        return m.column(col).normalize() * angle;
    }
    axis.normalize() * angle
}

/// Joint-space keyframe trajectory, evaluated by exact linear interpolation
/// over uniformly spaced keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub keyframes: Vec<JointVector>,
}

impl Trajectory {
    pub fn new(keyframes: Vec<JointVector>) -> Self {
        assert!(keyframes.len() >= 2, "need at least 2 keyframes");
        let d = keyframes[0].len();
        assert!(keyframes.iter().all(|k| k.len() == d));
        Self { keyframes }
    }

    pub fn interpolate(&self, t: f64) -> JointVector {
        assert!((0.0..=1.0).contains(&t), "t out of [0,1]");
        let n = self.keyframes.len();
        let s = t * (n - 1) as f64;
        let seg = (s.floor() as usize).min(n - 2);
        let frac = s - seg as f64;
        self.keyframes[seg]
            .iter()
            .zip(&self.keyframes[seg + 1])
            .map(|(&a, &b)| a + (b - a) * frac)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent FK oracle: explicit 4x4 homogeneous matrix chain.
    fn fk_oracle(model: &RobotModel, q: &[f64]) -> nalgebra::Matrix4<f64> {
        let mut t = nalgebra::Matrix4::identity();
        {
            let mut b = nalgebra::Matrix4::identity();
            b.fixed_view_mut::<3, 3>(0, 0).copy_from(&model.base_pose.rotation);
            b.fixed_view_mut::<3, 1>(0, 3)
                .copy_from(&model.base_pose.translation);
            t *= b;
        }
        for (row, &theta) in model.dh_rows.iter().zip(q) {
            let th = theta + row.theta_offset;
            let rot_z = nalgebra::Matrix4::new(
                th.cos(), -th.sin(), 0.0, 0.0, //
                th.sin(), th.cos(), 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0,
            );
            let trans_z = nalgebra::Matrix4::new(
                1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, row.d, 0.0, 0.0, 0.0, 1.0,
            );
            let trans_x = nalgebra::Matrix4::new(
                1.0, 0.0, 0.0, row.a, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0,
            );
            let rot_x = nalgebra::Matrix4::new(
                1.0, 0.0, 0.0, 0.0, //
                0.0, row.alpha.cos(), -row.alpha.sin(), 0.0, //
                0.0, row.alpha.sin(), row.alpha.cos(), 0.0, //
                0.0, 0.0, 0.0, 1.0,
            );
            t *= rot_z * trans_z * trans_x * rot_x;
        }
        t
    }

    fn assert_fk_matches_oracle(model: &RobotModel, q: &[f64]) {
        let fk = model.forward_kinematics(q);
        let oracle = fk_oracle(model, q);
        for r in 0..3 {
            for c in 0..3 {
                assert_relative_eq!(fk.rotation[(r, c)], oracle[(r, c)], epsilon = 1e-9);
            }
            assert_relative_eq!(fk.translation[r], oracle[(r, 3)], epsilon = 1e-9);
        }
    }

    #[test]
    fn fk_zero_matches_oracle() {
        let model = RobotModel::default_ur5();
        assert_fk_matches_oracle(&model, &[0.0; 6]);
    }

    #[test]
    fn fk_random_matches_oracle() {
        let model = RobotModel::default_ur5();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            assert_fk_matches_oracle(&model, &q);
        }
    }

    #[test]
    fn base_joint_pi_negates_xy() {
        let model = RobotModel::default_ur5();
        let q0 = [0.3, -0.8, 0.5, 0.2, 0.4, -0.1];
        let mut q1 = q0;
        q1[0] += std::f64::consts::PI;
        let (a, b) = (
            model.forward_kinematics(&q0).translation,
            model.forward_kinematics(&q1).translation,
        );
        assert_relative_eq!(a.x, -b.x, epsilon = 1e-9);
        assert_relative_eq!(a.y, -b.y, epsilon = 1e-9);
        assert_relative_eq!(a.z, b.z, epsilon = 1e-9);
    }

    #[test]
    fn fk_is_rigid() {
        let model = RobotModel::default_ur5();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p1 = Point3::new(0.01, 0.02, 0.03);
        let p2 = Point3::new(-0.02, 0.05, 0.01);
        let ref_dist = (p1 - p2).norm();
        for _ in 0..50 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let fk = model.forward_kinematics(&q);
            let d = (fk.apply(&p1) - fk.apply(&p2)).norm();
            assert_relative_eq!(d, ref_dist, epsilon = 1e-9);
            assert!(fk.is_proper(1e-9));
        }
    }

    #[test]
    fn ik_round_trip_from_perturbed_init() {
        let model = RobotModel::default_ur5();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let target = model.forward_kinematics(&q);
            let q_init: Vec<f64> = q.iter().map(|&a| a + rng.gen_range(-0.05..0.05)).collect();
            let sol = model.inverse_kinematics(&target, &q_init).expect("ik");
            let fk = model.forward_kinematics(&sol);
            let pr = (fk.translation - target.translation).norm();
            let rr = rotation_log(&(target.rotation * fk.rotation.transpose())).norm();
            assert!(pr < 1e-4 && rr < 1e-3, "residuals {pr} {rr}");
            assert!(model.within_limits(&sol));
        }
    }

    #[test]
    fn ik_unreachable_reports_failure() {
        let model = RobotModel::default_ur5();
        let target = RigidTransform::from_translation(Vector3::new(10.0, 0.0, 0.0));
        match model.inverse_kinematics(&target, &[0.0; 6]) {
            Err(RobotError::IkFailed { pos_residual, .. }) => assert!(pos_residual > 1.0),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn ik_success_rate_from_zero_init() {
        let model = RobotModel::default_ur5();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut ok = 0;
        for _ in 0..100 {
            let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.2..1.2)).collect();
            let target = model.forward_kinematics(&q);
            if model.inverse_kinematics(&target, &[0.0; 6]).is_ok() {
                ok += 1;
            }
        }
        assert!(ok >= 90, "success {ok}/100");
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let traj = Trajectory::new(vec![vec![0.0, 1.0], vec![2.0, -1.0]]);
        assert_eq!(traj.interpolate(0.0), vec![0.0, 1.0]);
        assert_eq!(traj.interpolate(1.0), vec![2.0, -1.0]);
        assert_eq!(traj.interpolate(0.5), vec![1.0, 0.0]);
    }

    #[test]
    fn interpolate_lipschitz_continuous() {
        let traj = Trajectory::new(vec![
            vec![0.0, 0.0],
            vec![1.0, -2.0],
            vec![0.5, 3.0],
            vec![2.0, 1.0],
        ]);
        let max_span: f64 = 5.0; // max per-joint keyframe-to-keyframe span
        let n = traj.keyframes.len() as f64;
        for i in 0..1000 {
            let t = i as f64 / 1000.0;
            let a = traj.interpolate(t);
            let b = traj.interpolate((t + 1e-6).min(1.0));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= max_span * 1e-6 * (n - 1.0) + 1e-12);
            }
        }
    }

    #[test]
    fn floor_penetration_cases() {
        let model = RobotModel::default_ur5();
        let q = [0.0; 6];
        let z = model.forward_kinematics(&q).translation.z;
        assert_eq!(model.floor_penetration(&q, z - 0.1), 0.0);
        assert_relative_eq!(model.floor_penetration(&q, z + 0.02), 0.02, epsilon = 1e-12);
    }

    #[test]
    fn config_round_trip() {
        let cfg = RobotModel::default_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RobotConfig = serde_json::from_str(&text).unwrap();
        let model = RobotModel::from_config(&back).unwrap();
        assert_eq!(model.dof(), 6);
    }
}
