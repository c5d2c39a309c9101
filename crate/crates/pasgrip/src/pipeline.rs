//! Pipeline orchestration: configuration, staged execution (gcgen → trajopt
//! → topopt) with hashed-input resume, deterministic per-stage seeding, and
//! the artifact set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coopt::{
    co_optimize_ranked, export_skeleton_obj, CooptOptions, SolutionRecord, DEFAULT_BUDGET,
    DEFAULT_DENSE_FACTOR, DEFAULT_KEYFRAMES, DEFAULT_POPULATION, DEFAULT_REL_TOL,
    DEFAULT_TOP_K,
};
use crate::energy::{
    DEFAULT_D_LIN, DEFAULT_D_SUB, DEFAULT_FLOOR_CLEARANCE, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2,
};
use crate::freespace::FreeSpaceField;
use crate::geodesic::GeodesicField;
use crate::grasp::{
    finger_length_with_field, generate_gcs, partial_force_closure, partial_min_wrench,
    rank_gcs, reachability_check, sample_candidate_points, wrench_basis, ContactPoint,
    GcRecord, GraspConfiguration, GraspError, DEFAULT_CANDIDATE_COUNT, DEFAULT_CONE_SIDES,
    DEFAULT_F_MAX, DEFAULT_FLOOR_EPS, DEFAULT_GC_COUNT, DEFAULT_MU, DEFAULT_REACH_RESTARTS,
};
use crate::lp;
use crate::math::{RigidTransform, RigidTransformConfig};
use crate::mesh::{MeshError, TriMesh};
use crate::robot::{RobotError, RobotModel, Trajectory};
use crate::skeleton::{Skeleton, DEFAULT_JOINTS_PER_FINGER};
use crate::topopt::{
    collision_free_volume, extract_gripper, simp_optimize, BoundaryConditions, TopoptError,
    DEFAULT_ITERS, DEFAULT_PENALIZATION, DEFAULT_SPHERE_R, DEFAULT_VOLUME_FRACTION,
    DEFAULT_VOXEL_SIZE, FIXED_REGION_RADIUS,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no stable and reachable grasp configuration was found")]
    NoStableReachableGc,
    #[error("no grasp configuration produced a verified collision-free trajectory")]
    NoVerifiedTrajectory,
    #[error("topology optimization failed: {0}")]
    Topopt(#[from] TopoptError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing artifact: {0} (run the previous stage first)")]
    MissingArtifact(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("mesh error: {0}")]
    Mesh(#[from] MeshError),
    #[error("robot error: {0}")]
    Robot(#[from] RobotError),
    #[error("grasp error: {0}")]
    Grasp(GraspError),
}

impl PipelineError {
    /// Process exit code: 2 = no usable GC, 3 = no verified trajectory,
    /// 4 = topology optimization failure, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::NoStableReachableGc => 2,
            PipelineError::NoVerifiedTrajectory => 3,
            PipelineError::Topopt(_) => 4,
            _ => 1,
        }
    }
}

impl From<GraspError> for PipelineError {
    fn from(e: GraspError) -> Self {
        match e {
            // the object placement leaves nothing to grasp
            GraspError::NoCandidates | GraspError::TooFewCandidates(_) => {
                PipelineError::NoStableReachableGc
            }
            other => PipelineError::Grasp(other),
        }
    }
}

// --- configuration -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraspKeyframe {
    /// The string "auto-forward": derive the grasp pose from the object.
    Auto(String),
    /// Explicit joint angles in radians.
    Joints(Vec<f64>),
}

impl Default for GraspKeyframe {
    fn default() -> Self {
        GraspKeyframe::Auto("auto-forward".into())
    }
}

fn d_candidate_count() -> usize { DEFAULT_CANDIDATE_COUNT }
fn d_gc_count() -> usize { DEFAULT_GC_COUNT }
fn d_floor_eps() -> f64 { DEFAULT_FLOOR_EPS }
fn d_mu() -> f64 { DEFAULT_MU }
fn d_cone_sides() -> usize { DEFAULT_CONE_SIDES }
fn d_f_max() -> f64 { DEFAULT_F_MAX }
fn d_theta_max_deg() -> f64 { 80.0 }
fn d_restarts() -> usize { DEFAULT_REACH_RESTARTS }
fn d_grid_res() -> f64 { 0.01 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcgenParams {
    #[serde(default = "d_candidate_count")]
    pub candidate_count: usize,
    #[serde(default = "d_gc_count")]
    pub gc_count: usize,
    #[serde(default = "d_floor_eps")]
    pub floor_eps: f64,
    #[serde(default = "d_mu")]
    pub mu: f64,
    #[serde(default = "d_cone_sides")]
    pub cone_sides: usize,
    #[serde(default = "d_f_max")]
    pub f_max: f64,
    #[serde(default = "d_theta_max_deg")]
    pub theta_max_deg: f64,
    #[serde(default = "d_restarts")]
    pub restarts: usize,
    #[serde(default = "d_grid_res")]
    pub grid_res: f64,
}

impl Default for GcgenParams {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

fn d_population() -> usize { DEFAULT_POPULATION }
fn d_budget() -> usize { DEFAULT_BUDGET }
fn d_rel_tol() -> f64 { DEFAULT_REL_TOL }
fn d_m() -> usize { DEFAULT_JOINTS_PER_FINGER }
fn d_n() -> usize { DEFAULT_KEYFRAMES }
fn d_d_sub() -> f64 { DEFAULT_D_SUB }
fn d_d_lin() -> f64 { DEFAULT_D_LIN }
fn d_lambda1() -> f64 { DEFAULT_LAMBDA1 }
fn d_lambda2() -> f64 { DEFAULT_LAMBDA2 }
fn d_floor_clearance() -> f64 { DEFAULT_FLOOR_CLEARANCE }
fn d_dense_factor() -> usize { DEFAULT_DENSE_FACTOR }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajoptParams {
    #[serde(default = "d_population")]
    pub population: usize,
    #[serde(default = "d_budget")]
    pub budget: usize,
    #[serde(default = "d_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "d_m")]
    pub m: usize,
    #[serde(default = "d_n")]
    pub n: usize,
    #[serde(default = "d_d_sub")]
    pub d_sub: f64,
    #[serde(default = "d_d_lin")]
    pub d_lin: f64,
    #[serde(default = "d_lambda1")]
    pub lambda1: f64,
    #[serde(default = "d_lambda2")]
    pub lambda2: f64,
    #[serde(default = "d_floor_clearance")]
    pub floor_clearance: f64,
    #[serde(default)]
    pub retreat_dist: Option<f64>,
    #[serde(default = "d_dense_factor")]
    pub dense_factor: usize,
    #[serde(default = "d_grid_res")]
    pub grid_res: f64,
    /// Target edge length for the geodesic table; None picks a default from
    /// the mesh scale.
    #[serde(default)]
    pub geodesic_edge_length: Option<f64>,
}

impl Default for TrajoptParams {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

fn d_voxel_size() -> f64 { DEFAULT_VOXEL_SIZE }
fn d_volume_fraction() -> f64 { DEFAULT_VOLUME_FRACTION }
fn d_penalization() -> f64 { DEFAULT_PENALIZATION }
fn d_iters() -> usize { DEFAULT_ITERS }
fn d_sphere_r() -> f64 { DEFAULT_SPHERE_R }
fn d_fixed_radius() -> f64 { FIXED_REGION_RADIUS }
fn d_design_margin() -> f64 { 0.03 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopoptParams {
    #[serde(default = "d_voxel_size")]
    pub voxel_size: f64,
    #[serde(default = "d_volume_fraction")]
    pub volume_fraction: f64,
    #[serde(default = "d_penalization")]
    pub penalization: f64,
    #[serde(default = "d_iters")]
    pub iters: usize,
    #[serde(default = "d_sphere_r")]
    pub sphere_r: f64,
    #[serde(default = "d_fixed_radius")]
    pub fixed_radius: f64,
    /// Padding of the design box around the skeleton and contacts.
    #[serde(default = "d_design_margin")]
    pub design_margin: f64,
}

impl Default for TopoptParams {
    fn default() -> Self {
        serde_json::from_str("{}").unwrap()
    }
}

fn d_scale() -> f64 { 1.0 }
fn d_top_k() -> usize { DEFAULT_TOP_K }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub object_mesh_path: PathBuf,
    /// Unit conversion applied at load (e.g. 0.001 for millimeter files).
    #[serde(default = "d_scale")]
    pub object_scale: f64,
    #[serde(default)]
    pub object_pose: Option<RigidTransformConfig>,
    /// None uses the built-in UR5-class table.
    #[serde(default)]
    pub robot_config_path: Option<PathBuf>,
    #[serde(default)]
    pub grasp_keyframe: GraspKeyframe,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "d_top_k")]
    pub top_k: usize,
    #[serde(default)]
    pub gcgen: GcgenParams,
    #[serde(default)]
    pub trajopt: TrajoptParams,
    #[serde(default)]
    pub topopt: TopoptParams,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !self.object_mesh_path.exists() {
            return Err(PipelineError::Config(format!(
                "object mesh not found: {}",
                self.object_mesh_path.display()
            )));
        }
        if let Some(p) = &self.robot_config_path {
            if !p.exists() {
                return Err(PipelineError::Config(format!(
                    "robot config not found: {}",
                    p.display()
                )));
            }
        }
        if let GraspKeyframe::Auto(s) = &self.grasp_keyframe {
            if s != "auto-forward" {
                return Err(PipelineError::Config(format!(
                    "unknown grasp_keyframe mode {s:?}; use \"auto-forward\" or joint angles"
                )));
            }
        }
        if !(self.object_scale > 0.0) {
            return Err(PipelineError::Config("object_scale must be positive".into()));
        }
        if self.top_k == 0 {
            return Err(PipelineError::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

// --- deterministic seeding ---------------------------------------------------

/// Independent substream seed for a named stage, derived from the run seed.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

// --- scene loading -----------------------------------------------------------

pub struct Scene {
    pub mesh: TriMesh,
    pub robot: RobotModel,
    pub grasp_q: Vec<f64>,
    pub ffo: Point3<f64>,
}

/// Grasp pose for "auto-forward": flange 0.5 m in front of the base at the
/// object's height, tool axis pointing forward (+x).
fn auto_forward_pose(robot: &RobotModel, mesh: &TriMesh) -> RigidTransform {
    let base = robot.base_pose.apply(&Point3::origin());
    let z = mesh.center_of_mass.z;
    // columns: tool x -> +y, tool y -> +z, tool z -> +x
    let rot = Matrix3::new(
        0.0, 0.0, 1.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0,
    );
    RigidTransform::new(rot, Vector3::new(base.x + 0.5, base.y, z))
}

fn solve_auto_forward(robot: &RobotModel, mesh: &TriMesh) -> Result<Vec<f64>, PipelineError> {
    let target = auto_forward_pose(robot, mesh);
    let dof = robot.dof();
    let inits = [
        vec![0.0; dof],
        vec![0.0, -1.2, 1.6, -0.4, 1.57, 0.0],
        vec![0.0, -0.8, 1.2, -0.4, 1.57, 0.0],
        vec![0.5, -1.0, 1.4, -0.4, 1.57, 0.0],
    ];
    let mut last = None;
    for init in &inits {
        if init.len() != dof {
            continue;
        }
        match robot.inverse_kinematics(&target, init) {
            Ok(q) => return Ok(q),
            Err(e) => last = Some(e),
        }
    }
    Err(PipelineError::Robot(last.expect("at least one IK attempt")))
}

pub fn load_scene(cfg: &PipelineConfig) -> Result<Scene, PipelineError> {
    let mut mesh = TriMesh::load(&cfg.object_mesh_path, cfg.object_scale)?;
    if let Some(pose) = &cfg.object_pose {
        mesh = mesh.transformed(&RigidTransform::from(pose));
    }
    let robot = match &cfg.robot_config_path {
        Some(p) => RobotModel::load(p)?,
        None => RobotModel::default_ur5(),
    };
    let grasp_q = match &cfg.grasp_keyframe {
        GraspKeyframe::Joints(q) => {
            if q.len() != robot.dof() {
                return Err(PipelineError::Config(format!(
                    "grasp_keyframe has {} joints, robot has {}",
                    q.len(),
                    robot.dof()
                )));
            }
            q.clone()
        }
        GraspKeyframe::Auto(_) => solve_auto_forward(&robot, &mesh)?,
    };
    let ffo = Point3::from(robot.forward_kinematics(&grasp_q).translation);
    Ok(Scene {
        mesh,
        robot,
        grasp_q,
        ffo,
    })
}

// --- stage manifest ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct Manifest {
    stages: BTreeMap<String, StageEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageEntry {
    input_hash: String,
    outputs: Vec<String>,
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

fn load_manifest(dir: &Path) -> Manifest {
    std::fs::read_to_string(manifest_path(dir))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default()
}

fn save_manifest(dir: &Path, m: &Manifest) -> Result<(), PipelineError> {
    std::fs::write(manifest_path(dir), serde_json::to_string_pretty(m)?)?;
    Ok(())
}

fn file_hash(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_descriptor(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex(&h.finalize())
}

/// Whether a completed stage with this input hash can be skipped.
fn stage_done(dir: &Path, m: &Manifest, stage: &str, input_hash: &str) -> bool {
    m.stages.get(stage).is_some_and(|e| {
        e.input_hash == input_hash && e.outputs.iter().all(|o| dir.join(o).exists())
    })
}

fn record_stage(
    dir: &Path,
    m: &mut Manifest,
    stage: &str,
    input_hash: &str,
    outputs: &[&str],
) -> Result<(), PipelineError> {
    m.stages.insert(
        stage.to_string(),
        StageEntry {
            input_hash: input_hash.to_string(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        },
    );
    save_manifest(dir, m)
}

fn gcgen_input_hash(cfg: &PipelineConfig) -> Result<String, PipelineError> {
    let robot_part = match &cfg.robot_config_path {
        Some(p) => file_hash(p)?,
        None => "builtin-ur5".to_string(),
    };
    Ok(hash_descriptor(&[
        "gcgen",
        &file_hash(&cfg.object_mesh_path)?,
        &serde_json::to_string(&cfg.object_scale)?,
        &serde_json::to_string(&cfg.object_pose)?,
        &robot_part,
        &serde_json::to_string(&cfg.grasp_keyframe)?,
        &serde_json::to_string(&cfg.seed)?,
        &serde_json::to_string(&cfg.gcgen)?,
    ]))
}

fn trajopt_input_hash(cfg: &PipelineConfig) -> Result<String, PipelineError> {
    let gcs = cfg.output_dir.join("gcs.json");
    if !gcs.exists() {
        return Err(PipelineError::MissingArtifact(gcs.display().to_string()));
    }
    Ok(hash_descriptor(&[
        "trajopt",
        &file_hash(&gcs)?,
        &serde_json::to_string(&cfg.trajopt)?,
        &serde_json::to_string(&cfg.top_k)?,
        &serde_json::to_string(&cfg.seed)?,
    ]))
}

fn topopt_input_hash(cfg: &PipelineConfig) -> Result<String, PipelineError> {
    let sol = cfg.output_dir.join("solution.json");
    if !sol.exists() {
        return Err(PipelineError::MissingArtifact(sol.display().to_string()));
    }
    Ok(hash_descriptor(&[
        "topopt",
        &file_hash(&sol)?,
        &serde_json::to_string(&cfg.topopt)?,
    ]))
}

// --- gcgen stage -------------------------------------------------------------

/// Generate, evaluate, and rank grasp configurations; writes gcs.json with
/// the ranked GCs first (pareto_rank set) followed by the rejected ones.
pub fn run_gcgen(cfg: &PipelineConfig) -> Result<PathBuf, PipelineError> {
    let scene = load_scene(cfg)?;
    let p = &cfg.gcgen;
    let seed = stage_seed(cfg.seed, "gcgen");
    let candidates = sample_candidate_points(
        &scene.mesh,
        &scene.ffo,
        p.candidate_count,
        seed,
        p.floor_eps,
        p.mu,
    )?;
    log::info!(
        "stage=gcgen candidates={} of {}",
        candidates.len(),
        p.candidate_count
    );
    let mut gcs = generate_gcs(&candidates, p.gc_count, stage_seed(cfg.seed, "gcgen-triples"))?;

    let com = scene.mesh.center_of_mass;
    let torque_scale = scene.mesh.bounding_sphere_radius();
    let theta_max = p.theta_max_deg.to_radians();
    let extras: Vec<Point3<f64>> = candidates.iter().map(|c| c.position).collect();
    let field = FreeSpaceField::build(&scene.mesh, &scene.ffo, p.grid_res, &extras);

    for gc in gcs.iter_mut() {
        gc.stable = partial_force_closure(&gc.contacts, &com, p.cone_sides, torque_scale)
            .map_err(PipelineError::from)?;
        if !gc.stable {
            continue;
        }
        gc.reachable = reachability_check(&gc.contacts, theta_max, p.restarts);
        if !gc.reachable {
            continue;
        }
        gc.partial_min_wrench = Some(
            partial_min_wrench(&gc.contacts, &com, p.cone_sides, torque_scale, p.f_max)
                .map_err(PipelineError::from)?,
        );
        gc.finger_length = Some(finger_length_with_field(gc, &field));
    }
    let (qualified, rest): (Vec<_>, Vec<_>) = gcs.into_iter().partition(|g| {
        g.stable && g.reachable && g.finger_length.is_some_and(|l| l.is_finite())
    });
    let ranked = rank_gcs(qualified);
    log::info!(
        "stage=gcgen ranked={} rejected={}",
        ranked.len(),
        rest.len()
    );
    let records: Vec<GcRecord> = ranked
        .iter()
        .chain(rest.iter())
        .map(GcRecord::from_gc)
        .collect();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("gcs.json");
    std::fs::write(&path, serde_json::to_string_pretty(&records)?)?;
    Ok(path)
}

// --- trajopt stage -----------------------------------------------------------

fn read_ranked_gcs(path: &Path, mu: f64) -> Result<Vec<GraspConfiguration>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.display().to_string()));
    }
    let records: Vec<GcRecord> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.pareto_rank.is_some()) {
        let contacts = r.to_contacts(mu);
        if contacts.len() != 3 {
            return Err(PipelineError::Config(format!(
                "GC in {} has {} contacts, expected 3",
                path.display(),
                contacts.len()
            )));
        }
        let mut gc =
            GraspConfiguration::from_candidates(&contacts, [0, 1, 2]);
        gc.stable = r.stable;
        gc.reachable = r.reachable;
        gc.partial_min_wrench = r.partial_min_wrench;
        gc.finger_length = r.finger_length;
        gc.pareto_rank = r.pareto_rank;
        out.push(gc);
    }
    Ok(out)
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), PipelineError> {
    let dof = traj.keyframes.first().map_or(0, |k| k.len());
    let mut text = (1..=dof)
        .map(|i| format!("q{i}"))
        .collect::<Vec<_>>()
        .join(",");
    text.push('\n');
    for k in &traj.keyframes {
        text.push_str(
            &k.iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Co-optimize ranked GCs until `top_k` verified solutions; writes one
/// solution_<gc>.json per attempt plus solution.json / skeleton.obj /
/// trajectory.csv for the first verified candidate.
pub fn run_trajopt(
    cfg: &PipelineConfig,
    gc_file: Option<&Path>,
) -> Result<PathBuf, PipelineError> {
    let scene = load_scene(cfg)?;
    let p = &cfg.trajopt;
    let gcs_path = gc_file
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join("gcs.json"));
    let ranked = read_ranked_gcs(&gcs_path, cfg.gcgen.mu)?;
    if ranked.is_empty() {
        return Err(PipelineError::NoStableReachableGc);
    }
    let edge = p
        .geodesic_edge_length
        .unwrap_or_else(|| (scene.mesh.bbox_diagonal() / 12.0).max(1e-3));
    let geo = GeodesicField::build(&scene.mesh, edge)?;
    let opts = CooptOptions {
        m: p.m,
        n: p.n,
        population: p.population,
        rel_tol: p.rel_tol,
        budget: p.budget,
        seed: stage_seed(cfg.seed, "trajopt"),
        top_k: cfg.top_k,
        retreat_dist: p.retreat_dist,
        d_sub: p.d_sub,
        d_lin: p.d_lin,
        lambda1: p.lambda1,
        lambda2: p.lambda2,
        floor_clearance: p.floor_clearance,
        grid_res: p.grid_res,
        dense_factor: p.dense_factor,
    };
    let sols = co_optimize_ranked(
        &scene.robot,
        &scene.mesh,
        &geo,
        &ranked,
        &scene.grasp_q,
        &opts,
    );
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut chosen = None;
    for sol in &sols {
        log::info!(
            "stage=trajopt gc={} evals={} best={} verified={}",
            sol.gc_index,
            sol.eval_count,
            sol.energies.total(),
            sol.verified
        );
        let rec = SolutionRecord::from_solution(sol);
        let per = cfg
            .output_dir
            .join(format!("solution_gc{}.json", sol.gc_index));
        std::fs::write(&per, serde_json::to_string_pretty(&rec)?)?;
        if sol.verified && chosen.is_none() {
            chosen = Some((sol, rec));
        }
    }
    let Some((sol, rec)) = chosen else {
        return Err(PipelineError::NoVerifiedTrajectory);
    };
    let path = cfg.output_dir.join("solution.json");
    std::fs::write(&path, serde_json::to_string_pretty(&rec)?)?;
    export_skeleton_obj(&sol.skeleton, &cfg.output_dir.join("skeleton.obj"))?;
    write_trajectory_csv(&cfg.output_dir.join("trajectory.csv"), &sol.trajectory)?;
    Ok(path)
}

// --- topopt stage ------------------------------------------------------------

/// Per-contact share of the gravity-balancing normal forces, normalized to
/// unit total; equal shares when the balance LP degenerates.
fn contact_load_scales(
    contacts: &[ContactPoint],
    com: &Point3<f64>,
    q: usize,
    torque_scale: f64,
) -> Vec<f64> {
    let n = contacts.len();
    let mut a = DMatrix::zeros(6, n * q);
    for (i, c) in contacts.iter().enumerate() {
        for (j, w) in wrench_basis(c, com, q, torque_scale).iter().enumerate() {
            a.column_mut(i * q + j).copy_from(w);
        }
    }
    let mut b = DVector::zeros(6);
    b[2] = 1.0; // balance gravity: Σ k w = −[ĝ; 0]
    let c0 = DVector::zeros(n * q);
    let equal = vec![1.0 / n as f64; n];
    match lp::solve(&a, &b, &c0) {
        Ok(lp::LpOutcome::Optimal { x, .. }) => {
            let sums: Vec<f64> = (0..n).map(|i| (0..q).map(|j| x[i * q + j]).sum()).collect();
            let total: f64 = sums.iter().sum();
            if total > 1e-12 {
                sums.iter().map(|s| s / total).collect()
            } else {
                equal
            }
        }
        _ => equal,
    }
}

/// Compute the collision-free volume for the verified solution, run SIMP,
/// and extract gripper.obj (+ density grid and compliance history).
pub fn run_topopt(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let scene = load_scene(cfg)?;
    let p = &cfg.topopt;
    let sol_path = cfg.output_dir.join("solution.json");
    if !sol_path.exists() {
        return Err(PipelineError::MissingArtifact(sol_path.display().to_string()));
    }
    let rec: SolutionRecord = serde_json::from_str(&std::fs::read_to_string(&sol_path)?)?;
    let ranked = read_ranked_gcs(&cfg.output_dir.join("gcs.json"), cfg.gcgen.mu)?;
    let gc = ranked.get(rec.gc_index).ok_or_else(|| {
        PipelineError::Config(format!(
            "solution.json references GC {} but only {} are ranked",
            rec.gc_index,
            ranked.len()
        ))
    })?;
    let skeleton = Skeleton {
        fingers: [0, 1, 2].map(|f| {
            rec.skeleton[f]
                .iter()
                .map(|p| Point3::new(p[0], p[1], p[2]))
                .collect()
        }),
    };
    let traj = Trajectory::new(rec.keyframes_rad.clone());

    // design box around the skeleton and contacts
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for pt in skeleton
        .fingers
        .iter()
        .flatten()
        .chain(gc.contacts.iter().map(|c| &c.position))
    {
        for a in 0..3 {
            lo[a] = lo[a].min(pt[a]);
            hi[a] = hi[a].max(pt[a]);
        }
    }
    for a in 0..3 {
        lo[a] -= p.design_margin;
        hi[a] += p.design_margin;
    }

    let fv = collision_free_volume(
        &scene.mesh,
        &traj,
        &scene.robot,
        p.voxel_size,
        &lo,
        &hi,
        &skeleton,
    )?;
    let com = scene.mesh.center_of_mass;
    let torque_scale = scene.mesh.bounding_sphere_radius();
    let scales = contact_load_scales(&gc.contacts, &com, cfg.gcgen.cone_sides, torque_scale);
    let contact_info: Vec<(Point3<f64>, Vector3<f64>)> = gc
        .contacts
        .iter()
        .map(|c| (c.position, c.outward_normal))
        .collect();
    let bc = BoundaryConditions::for_gripper(
        &fv.free,
        &scene.ffo,
        p.fixed_radius,
        &contact_info,
        &scales,
    );
    log::info!(
        "stage=topopt free_cells={} fixed={} loads={}",
        fv.free.occupied_count(),
        bc.fixed_cells.len(),
        bc.loads.len()
    );
    let (density, history) =
        simp_optimize(&fv.free, &bc, p.volume_fraction, p.penalization, p.iters)?;
    let contact_pts: Vec<Point3<f64>> = gc.contacts.iter().map(|c| c.position).collect();
    let gripper = extract_gripper(&density, &fv.swept_raw, &contact_pts, p.sphere_r, 0.5)?;
    gripper.save_obj(&cfg.output_dir.join("gripper.obj"))?;
    density
        .grid
        .save(&cfg.output_dir.join("density.vox"))
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut csv = String::from("iteration,compliance\n");
    for (i, c) in history.iter().enumerate() {
        csv.push_str(&format!("{i},{c}\n"));
    }
    std::fs::write(cfg.output_dir.join("compliance_history.csv"), csv)?;
    log::info!(
        "stage=topopt iters={} final_compliance={:?}",
        history.len(),
        history.last()
    );
    Ok(())
}

// --- fused pipeline ----------------------------------------------------------

/// Run all stages, skipping any stage whose manifest entry matches its input
/// hash and whose outputs are still present.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut manifest = load_manifest(&cfg.output_dir);

    let h = gcgen_input_hash(cfg)?;
    if stage_done(&cfg.output_dir, &manifest, "gcgen", &h) {
        log::info!("stage=gcgen status=skipped (up to date)");
    } else {
        run_gcgen(cfg)?;
        record_stage(&cfg.output_dir, &mut manifest, "gcgen", &h, &["gcs.json"])?;
    }

    let h = trajopt_input_hash(cfg)?;
    if stage_done(&cfg.output_dir, &manifest, "trajopt", &h) {
        log::info!("stage=trajopt status=skipped (up to date)");
    } else {
        run_trajopt(cfg, None)?;
        record_stage(
            &cfg.output_dir,
            &mut manifest,
            "trajopt",
            &h,
            &["solution.json", "skeleton.obj", "trajectory.csv"],
        )?;
    }

    let h = topopt_input_hash(cfg)?;
    if stage_done(&cfg.output_dir, &manifest, "topopt", &h) {
        log::info!("stage=topopt status=skipped (up to date)");
    } else {
        run_topopt(cfg)?;
        record_stage(
            &cfg.output_dir,
            &mut manifest,
            "topopt",
            &h,
            &["gripper.obj", "density.vox", "compliance_history.csv"],
        )?;
    }
    Ok(())
}
