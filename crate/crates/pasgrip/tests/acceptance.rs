//! Acceptance suite. Each test covers one numbered criterion and prints a
//! single `criterion N (<name>): PASS|FAIL` line (visible with
//! `cargo test -- --nocapture`, or on failure).

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pasgrip::coopt::{verify_collision_free, SolutionRecord};
use pasgrip::crs::{crs_optimize, CrsOptions};
use pasgrip::energy::{DesignVariables, EnergyContext};
use pasgrip::fixtures;
use pasgrip::geodesic::GeodesicField;
use pasgrip::grasp::{
    partial_force_closure, reachability_check, wrench_basis, ContactPoint,
};
use pasgrip::math::{Polyline, RigidTransform};
use pasgrip::mesh::TriMesh;
use pasgrip::pathcost::{inside_distance, path_cost};
use pasgrip::pipeline::{load_scene, run_gcgen, run_pipeline, run_trajopt, PipelineConfig};
use pasgrip::robot::Trajectory;
use pasgrip::skeleton::Skeleton;
use pasgrip::topopt::{
    collision_free_volume, compliance_of, gripper_clear_of_swept, simp_optimize,
    BoundaryConditions,
};
use pasgrip::voxel::VoxelGrid;

fn report(n: usize, name: &str, ok: bool) {
    println!("criterion {n} ({name}): {}", if ok { "PASS" } else { "FAIL" });
}

// --- criterion 1: force-closure verdicts vs an NNLS feasibility oracle ------

/// Lawson–Hanson nonnegative least squares: argmin ‖Ax − b‖², x ≥ 0.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut passive = vec![false; n];
    let mut x = DVector::<f64>::zeros(n);
    for _ in 0..3 * n {
        let w = a.transpose() * (b - a * &x);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && w[j] > 1e-10 && best.is_none_or(|(_, bw)| w[j] > bw) {
                best = Some((j, w[j]));
            }
        }
        let Some((j, _)) = best else { break };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let ap = a.select_columns(idx.iter());
            let z = ap.svd(true, true).solve(b, 1e-12).unwrap();
            if z.iter().all(|&v| v > 1e-12) {
                x.fill(0.0);
                for (c, &k) in idx.iter().enumerate() {
                    x[k] = z[c];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (c, &k) in idx.iter().enumerate() {
                if z[c] <= 1e-12 && x[k] - z[c] > 0.0 {
                    alpha = alpha.min(x[k] / (x[k] - z[c]));
                }
            }
            for (c, &k) in idx.iter().enumerate() {
                x[k] += alpha * (z[c] - x[k]);
                if x[k] <= 1e-12 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
        }
    }
    x
}

#[test]
fn criterion_1_force_closure_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let com = Point3::origin();
    let (q, mu, torque_scale) = (8usize, 0.5, 1.0);
    let mut matches = 0;
    for _ in 0..200 {
        let contacts: Vec<ContactPoint> = (0..3)
            .map(|_| {
                let n = Vector3::new(
                    rng.gen_range(-1.0..1.0f64),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalize();
                ContactPoint::new(Point3::from(n), n, mu)
            })
            .collect();
        let lp_verdict = partial_force_closure(&contacts, &com, q, torque_scale).unwrap();
        // oracle: ∃ k ≥ 0 with (basis wrenches)·k balancing unit gravity
        let mut a = DMatrix::zeros(6, 3 * q);
        for (i, c) in contacts.iter().enumerate() {
            for (j, w) in wrench_basis(c, &com, q, torque_scale).iter().enumerate() {
                a.column_mut(i * q + j).copy_from(w);
            }
        }
        let mut b = DVector::zeros(6);
        b[2] = 1.0;
        let x = nnls(&a, &b);
        let oracle_verdict = (&a * x - b).norm() < 1e-8;
        if lp_verdict == oracle_verdict {
            matches += 1;
        }
    }
    let elapsed = start.elapsed();
    let ok = matches == 200 && elapsed < Duration::from_secs(30);
    report(1, "force-closure oracle equivalence", ok);
    assert_eq!(matches, 200, "LP vs NNLS oracle mismatch");
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
}

// --- criterion 2: reachability verdicts on the three reference layouts ------

#[test]
fn criterion_2_reachability_trio() {
    let start = Instant::now();
    let theta_max = 80f64.to_radians();
    let radial = |a: f64| {
        let n = Vector3::new(a.cos(), a.sin(), 0.0);
        ContactPoint::new(Point3::from(n), n, 0.5)
    };
    // (a) equatorial cage at 120° spacing: no escape motion exists
    let cage: Vec<ContactPoint> = (0..3)
        .map(|i| radial(2.0 * std::f64::consts::PI * i as f64 / 3.0))
        .collect();
    let a_ok = !reachability_check(&cage, theta_max, 16);

    // (b) contacts clustered on one side: translating along the mean normal works
    let cluster: Vec<ContactPoint> = [0.0, 0.5, 1.0].iter().map(|&a| radial(a)).collect();
    let b_ok = reachability_check(&cluster, theta_max, 16);

    // (c) plate pinched from above and below at opposite ends: translation is
    // blocked by the antipodal normals, but rotating about the midline works
    let plate = vec![
        ContactPoint::new(Point3::new(1.0, 0.0, 0.0), Vector3::z(), 0.5),
        ContactPoint::new(Point3::new(-1.0, 0.0, 0.0), -Vector3::z(), 0.5),
        ContactPoint::new(Point3::new(1.0, 1.0, 0.0), Vector3::z(), 0.5),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let translation_escapes = (0..20_000).any(|_| {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        v.norm() > 1e-9
            && plate
                .iter()
                .all(|c| v.dot(&c.outward_normal) >= theta_max.cos() * v.norm())
    });
    let c_ok = reachability_check(&plate, theta_max, 16) && !translation_escapes;

    let elapsed = start.elapsed();
    let ok = a_ok && b_ok && c_ok && elapsed < Duration::from_secs(10);
    report(2, "reachability trio", ok);
    assert!(a_ok, "equatorial cage must be unreachable");
    assert!(b_ok, "clustered contacts must be reachable");
    assert!(c_ok, "rotation-escape plate must be reachable (and not by translation)");
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
}

// --- criterion 3: geodesic accuracy -----------------------------------------

#[test]
fn criterion_3_geodesic_antipodal() {
    let start = Instant::now();
    let field = GeodesicField::build(&fixtures::icosphere(3), 0.12).unwrap();
    let d = field.between(&Point3::new(0.0, 0.0, 1.0), &Point3::new(0.0, 0.0, -1.0));
    let pi = std::f64::consts::PI;
    let rel = (d - pi).abs() / pi;
    let elapsed = start.elapsed();
    let ok = rel < 0.10 && elapsed < Duration::from_secs(60);
    report(3, "geodesic antipodal accuracy", ok);
    assert!(rel < 0.10, "antipodal distance {d} vs {pi} (rel {rel})");
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
}

// --- criterion 4: path-cost analytics ---------------------------------------

#[test]
fn criterion_4_path_cost_analytics() {
    let cube = fixtures::unit_cube();
    let line = |a: [f64; 3], b: [f64; 3]| {
        Polyline::new(vec![Point3::from(a), Point3::from(b)])
    };
    let chord = inside_distance(&line([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), &cube);
    let chord_ok = (chord - 1.0).abs() <= 1e-6;

    // equal inside length (1.0 each), but the deep chord exits on the far
    // side while the shallow one grazes just under a face
    let geo = GeodesicField::build(&cube, 0.1).unwrap();
    let deep = path_cost(&line([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), &cube, &geo);
    let shallow = path_cost(&line([-1.0, 0.0, 0.49], [1.0, 0.0, 0.49]), &cube, &geo);
    let shallow_len = inside_distance(&line([-1.0, 0.0, 0.49], [1.0, 0.0, 0.49]), &cube);
    let order_ok = (shallow_len - 1.0).abs() <= 1e-6 && deep > shallow;

    let ok = chord_ok && order_ok;
    report(4, "path-cost analytics", ok);
    assert!(chord_ok, "cube chord inside-distance {chord}");
    assert!(order_ok, "deep {deep} vs shallow {shallow} (len {shallow_len})");
}

// --- criteria 5/6/9 share three full fixture pipeline runs ------------------

struct FixtureRun {
    name: &'static str,
    _dir: tempfile::TempDir,
    cfg: PipelineConfig,
    result: Result<(), String>,
    elapsed: Duration,
}

fn fixture_mesh(name: &str) -> TriMesh {
    match name {
        "notched_box" => fixtures::notched_box(),
        "l_key" => fixtures::l_key(),
        "handle_cup" => fixtures::handle_cup(),
        other => panic!("unknown fixture {other}"),
    }
}

fn fixture_config(dir: &Path, mesh_path: &Path, out: &Path) -> PipelineConfig {
    let _ = dir;
    serde_json::from_value(serde_json::json!({
        "object_mesh_path": mesh_path,
        "object_pose": {
            "rotation": [1.0,0.0,0.0, 0.0,1.0,0.0, 0.0,0.0,1.0],
            "translation": [0.6, 0.0, 0.0],
        },
        "output_dir": out,
        "seed": 7,
        "gcgen": { "candidate_count": 1000, "gc_count": 800 },
        "trajopt": {
            "population": 2000,
            "budget": 100_000,
            "d_sub": 2e-3,
            "d_lin": 2e-3,
            "retreat_dist": 0.12,
            "grid_res": 0.008,
            "floor_clearance": 0.0,
        },
        "topopt": {
            "voxel_size": 5e-3,
            "iters": 30,
            "sphere_r": 8e-3,
            "design_margin": 0.02,
        },
    }))
    .unwrap()
}

static RUNS: OnceLock<Vec<FixtureRun>> = OnceLock::new();

fn fixture_runs() -> &'static [FixtureRun] {
    RUNS.get_or_init(|| {
        ["notched_box", "l_key", "handle_cup"]
            .iter()
            .map(|&name| {
                let dir = tempfile::tempdir().unwrap();
                let mesh_path = dir.path().join("object.obj");
                fixture_mesh(name).save_obj(&mesh_path).unwrap();
                let out = dir.path().join("out");
                let cfg = fixture_config(dir.path(), &mesh_path, &out);
                let start = Instant::now();
                let result = run_pipeline(&cfg).map_err(|e| e.to_string());
                FixtureRun {
                    name,
                    _dir: dir,
                    cfg,
                    result,
                    elapsed: start.elapsed(),
                }
            })
            .collect()
    })
}

fn read_solution(cfg: &PipelineConfig) -> SolutionRecord {
    serde_json::from_str(
        &std::fs::read_to_string(cfg.output_dir.join("solution.json")).unwrap(),
    )
    .unwrap()
}

fn record_skeleton(rec: &SolutionRecord) -> Skeleton {
    Skeleton {
        fingers: [0, 1, 2].map(|f| {
            rec.skeleton[f]
                .iter()
                .map(|p| Point3::new(p[0], p[1], p[2]))
                .collect()
        }),
    }
}

#[test]
fn criterion_5_co_optimization_success() {
    let mut ok = true;
    for run in fixture_runs() {
        let within_time = run.elapsed <= Duration::from_secs(900);
        let succeeded = run.result.is_ok();
        let mut verified = false;
        if succeeded {
            let rec = read_solution(&run.cfg);
            // independent re-verification at 4x sampling density
            let scene = load_scene(&run.cfg).unwrap();
            let edge = (scene.mesh.bbox_diagonal() / 12.0).max(1e-3);
            let geo = GeodesicField::build(&scene.mesh, edge).unwrap();
            let skeleton = record_skeleton(&rec);
            let traj = Trajectory::new(rec.keyframes_rad.clone());
            let vars = DesignVariables::new(
                run.cfg.trajopt.m,
                run.cfg.trajopt.n,
                scene.robot.dof(),
            );
            let ctx = EnergyContext {
                robot: &scene.robot,
                mesh: &scene.mesh,
                geo: &geo,
                base_skeleton: &skeleton,
                base_trajectory: &traj,
                vars: &vars,
                lambda1: run.cfg.trajopt.lambda1,
                lambda2: run.cfg.trajopt.lambda2,
                floor_clearance: run.cfg.trajopt.floor_clearance,
                d_sub: run.cfg.trajopt.d_sub,
                d_lin: run.cfg.trajopt.d_lin,
            };
            verified = rec.verified && verify_collision_free(&ctx, &skeleton, &traj, 4);
        }
        let this = succeeded && verified && within_time;
        println!(
            "  fixture {}: success={succeeded} verified_4x={verified} elapsed={:.1?} ({:?})",
            run.name, run.elapsed, run.result
        );
        ok &= this;
    }
    report(5, "co-optimization success on all fixtures", ok);
    assert!(ok);
}

#[test]
fn criterion_6_energy_co_zero() {
    let mut ok = true;
    let mut checked = 0;
    for run in fixture_runs() {
        if run.result.is_err() {
            ok = false;
            continue;
        }
        for entry in std::fs::read_dir(&run.cfg.output_dir).unwrap() {
            let path = entry.unwrap().path();
            let fname = path.file_name().unwrap().to_string_lossy().into_owned();
            if !fname.starts_with("solution") || !fname.ends_with(".json") {
                continue;
            }
            let rec: SolutionRecord =
                serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
            let g0 = rec.energies.e_g == 0.0;
            let t0 = rec.energies.e_t == 0.0;
            if g0 != t0 || (g0 && t0) != rec.verified {
                println!(
                    "  co-zero violated in {fname}: e_g={} e_t={} verified={}",
                    rec.energies.e_g, rec.energies.e_t, rec.verified
                );
                ok = false;
            }
            checked += 1;
        }
    }
    ok &= checked > 0;
    report(6, "energy co-zero property", ok);
    assert!(ok, "checked {checked} solution records");
}

// --- criterion 7: CRS monotonicity and Rosenbrock sanity --------------------

#[test]
fn criterion_7_crs_sanity() {
    let rosenbrock =
        |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let bounds = vec![(-2.0, 2.0); 2];
    let mut converged = 0;
    let mut monotone = true;
    for seed in 0..10 {
        let opts = CrsOptions::new(40, 1e-9, 200_000, seed);
        let res = crs_optimize(rosenbrock, &bounds, &opts);
        monotone &= res.trace.windows(2).all(|w| w[1] <= w[0]);
        if res.f_best < 1e-4 {
            converged += 1;
        }
    }
    let ok = monotone && converged >= 8;
    report(7, "CRS monotonicity and Rosenbrock sanity", ok);
    assert!(monotone, "best-so-far trace increased");
    assert!(converged >= 8, "only {converged}/10 seeds converged");
}

// --- criterion 8: SIMP cantilever sanity ------------------------------------

#[test]
fn criterion_8_simp_cantilever() {
    let start = Instant::now();
    let mut free = VoxelGrid::zeros(Point3::origin(), 1.0, [16, 8, 8]);
    free.values.iter_mut().for_each(|v| *v = 1.0);
    let mut fixed = Vec::new();
    for j in 0..8 {
        for k in 0..8 {
            fixed.push([0, j, k]);
        }
    }
    let bc = BoundaryConditions {
        fixed_cells: fixed,
        loads: vec![([15, 3, 0], Vector3::new(0.0, 0.0, -1.0))],
    };
    let vf = 0.3;
    let (field, history) = simp_optimize(&free, &bc, vf, 3.0, 40).unwrap();
    let masked: Vec<f64> = field
        .grid
        .values
        .iter()
        .zip(&field.mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect();
    let mean = masked.iter().sum::<f64>() / masked.len() as f64;
    let uniform = compliance_of(&free, &bc, vf, 3.0).unwrap();
    let optimized = *history.last().unwrap();
    let elapsed = start.elapsed();
    let ok = optimized < uniform
        && (mean - vf).abs() <= 1e-3
        && elapsed < Duration::from_secs(120);
    report(8, "SIMP cantilever sanity", ok);
    assert!(optimized < uniform, "optimized {optimized} vs uniform {uniform}");
    assert!((mean - vf).abs() <= 1e-3, "volume fraction {mean}");
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
}

// --- criterion 9: gripper extraction on every fixture -----------------------

#[test]
fn criterion_9_gripper_extraction() {
    let mut ok = true;
    for run in fixture_runs() {
        if run.result.is_err() {
            ok = false;
            continue;
        }
        let cfg = &run.cfg;
        let rec = read_solution(cfg);
        let scene = load_scene(cfg).unwrap();
        let gripper = TriMesh::load(&cfg.output_dir.join("gripper.obj"), 1.0).unwrap();
        // recompute the swept volume over the same design box
        let skeleton = record_skeleton(&rec);
        let traj = Trajectory::new(rec.keyframes_rad.clone());
        let gcs: Vec<pasgrip::grasp::GcRecord> = serde_json::from_str(
            &std::fs::read_to_string(cfg.output_dir.join("gcs.json")).unwrap(),
        )
        .unwrap();
        let contacts = gcs[rec.gc_index].to_contacts(cfg.gcgen.mu);
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in skeleton
            .fingers
            .iter()
            .flatten()
            .chain(contacts.iter().map(|c| &c.position))
        {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        for a in 0..3 {
            lo[a] -= cfg.topopt.design_margin;
            hi[a] += cfg.topopt.design_margin;
        }
        let fv = collision_free_volume(
            &scene.mesh,
            &traj,
            &scene.robot,
            cfg.topopt.voxel_size,
            &lo,
            &hi,
            &skeleton,
        )
        .unwrap();
        let clear = gripper_clear_of_swept(&gripper, &fv.swept_raw);
        let mut contacts_ok = true;
        for c in &contacts {
            let (nearest, _) = gripper.closest_point(&c.position);
            let dist = (nearest - c.position).norm();
            if dist > cfg.topopt.sphere_r + 1e-9 {
                println!("  fixture {}: contact {dist} m from gripper surface", run.name);
                contacts_ok = false;
            }
        }
        println!("  fixture {}: swept_clear={clear} contacts_ok={contacts_ok}", run.name);
        ok &= clear && contacts_ok;
    }
    report(9, "gripper extraction clearance and contacts", ok);
    assert!(ok);
}

// --- criterion 10: determinism ----------------------------------------------

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mesh_path = dir.path().join("object.obj");
    fixtures::notched_box()
        .transformed(&RigidTransform::new(
            Matrix3::identity(),
            Vector3::new(0.6, 0.0, 0.0),
        ))
        .save_obj(&mesh_path)
        .unwrap();
    let cfg_for = |out: &Path| -> PipelineConfig {
        serde_json::from_value(serde_json::json!({
            "object_mesh_path": mesh_path,
            "output_dir": out,
            "seed": 1,
            "gcgen": { "candidate_count": 200, "gc_count": 400 },
            "trajopt": {
                "population": 80,
                "budget": 4000,
                "d_sub": 2e-3,
                "d_lin": 2e-3,
                "retreat_dist": 0.12,
                "grid_res": 0.008,
                "floor_clearance": 0.0,
            },
        }))
        .unwrap()
    };
    let run = |out: &Path| -> (Vec<u8>, Vec<u8>) {
        let cfg = cfg_for(out);
        run_gcgen(&cfg).unwrap();
        run_trajopt(&cfg, None).unwrap();
        (
            std::fs::read(out.join("gcs.json")).unwrap(),
            std::fs::read(out.join("solution.json")).unwrap(),
        )
    };
    let (gcs_a, sol_a) = run(&dir.path().join("a"));
    let (gcs_b, sol_b) = run(&dir.path().join("b"));
    let ok = gcs_a == gcs_b && sol_a == sol_b;
    report(10, "byte-identical artifacts across reruns", ok);
    assert_eq!(gcs_a, gcs_b, "gcs.json differs between runs");
    assert_eq!(sol_a, sol_b, "solution.json differs between runs");
}
