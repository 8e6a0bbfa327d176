//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! pass/fail line each, and fails at the end if any criterion failed.

use pushplan::dynamics::{
    Configuration, ContactParams, EnvShape, FingerMode, SceneModel, SettleParams, Sim, Vec3, VecQ,
};
use pushplan::geometry::{Pose2, Shape, Vec2};
use pushplan::invdyn::{a_matrix, linearize, residual_h, retained_count, spectrum, LinearizeParams};
use pushplan::planner::{plan, sample_subgoal, Ablation, PlanOutcome, PlannerParams};
use pushplan::reachset::{
    cluster, filter_proposals, normalize, pd_rollout, reachable_set, replay_segment,
    sample_grasps, Grasp, MotionProposal, ReachParams, TerminationReason, TrajectorySegment,
};
use pushplan::scenario::{load_scene, settled_start, LoadedScene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

fn box_scene(env: Vec<EnvShape>) -> SceneModel {
    SceneModel {
        object_shape: Shape::rect(0.05, 0.05),
        object_mass: 0.1,
        object_inertia: 0.1 * 0.02 / 12.0,
        fingertip_radius: 0.01,
        fingertip_mass: 0.01,
        gravity: 9.81,
        friction_object_env: 0.5,
        friction_object_finger: 0.5,
        contact: ContactParams::default(),
        environment: env,
    }
}

fn ground() -> EnvShape {
    EnvShape { shape: Shape::rect(2.0, 0.1), pose: Pose2::new(0.0, -0.1, 0.0) }
}

fn settle_from(sc: &SceneModel, drop: Pose2) -> Pose2 {
    let sim = Sim::new(sc);
    let c = Configuration::at_rest(Vec2::new(5.0, 5.0), drop);
    let out = sim.settle(&c, FingerMode::Removed, &SettleParams::default());
    assert!(out.rested, "fixture failed to settle");
    out.config.object_pose
}

fn left_face_grasp(sc: &SceneModel, q_o: &Pose2, gap: f64) -> Grasp {
    Grasp {
        contact_point_body: Vec2::new(-0.05, 0.0),
        outward_normal_body: Vec2::new(-1.0, 0.0),
        finger_config: Vec2::new(q_o.x - 0.05 - sc.fingertip_radius - gap, q_o.y),
    }
}

fn push_proposal(grasp: Grasp) -> MotionProposal {
    MotionProposal {
        grasp,
        object_velocity: Vec3::new(1.0 / 40.5f64.sqrt(), 0.0, 0.0),
        finger_velocity: Vec2::new(1.0, 0.0),
        sigma: 1.0,
    }
}

fn scene_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name)
}

/// Max object-row residual along the action phase of a segment, skipping
/// the fingertip-placement jump at the first step.
fn max_action_residual(sim: &Sim, seg: &TrajectorySegment, dt: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 1..seg.states.len() {
        let prev = &seg.states[i - 1];
        let cur = &seg.states[i];
        let qdd = (cur.velocity() - prev.velocity()) / dt;
        worst = worst.max(residual_h(sim, cur, &qdd).amax());
    }
    worst
}

/// The three static fixtures: box on ground, box against a wall, box on a
/// step edge.
fn static_fixtures() -> Vec<(&'static str, SceneModel, Pose2)> {
    let on_ground = box_scene(vec![ground()]);
    let ground_pose = settle_from(&on_ground, Pose2::new(0.0, 0.0501, 0.0));

    let against_wall = box_scene(vec![
        ground(),
        EnvShape { shape: Shape::rect(0.05, 0.2), pose: Pose2::new(0.11, 0.1, 0.0) },
    ]);
    // Start slightly inside the wall so the settle resolves a live contact.
    let wall_pose = settle_from(&against_wall, Pose2::new(0.0105, 0.0501, 0.0));

    let on_step = box_scene(vec![
        ground(),
        EnvShape { shape: Shape::rect(0.2, 0.03), pose: Pose2::new(0.2, 0.03, 0.0) },
    ]);
    // Fully on the raised platform; pushes run off its right edge.
    let step_pose = settle_from(&on_step, Pose2::new(0.15, 0.1101, 0.0));

    vec![
        ("ground", on_ground, ground_pose),
        ("wall", against_wall, wall_pose),
        ("step", on_step, step_pose),
    ]
}

fn c01_residual_identity() {
    let t0 = Instant::now();
    for (name, sc, pose) in static_fixtures() {
        let sim = Sim::new(&sc);
        let c = Configuration::at_rest(Vec2::new(5.0, 5.0), pose);
        let h = residual_h(&sim, &c, &VecQ::zeros());
        let bound = 1e-6 * sc.object_mass * sc.gravity;
        assert!(h.norm() <= bound, "{name}: |h| = {} > {bound}", h.norm());
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 1.0, "runtime {dt:.2} s exceeds 1 s");
}

fn c02_dynamic_feasibility() {
    let t0 = Instant::now();
    let params = ReachParams::default();
    let mut checked = 0usize;
    for (name, sc, pose) in static_fixtures() {
        let sim = Sim::new(&sc);
        // One crafted push plus the whole sampled reachable set.
        let mut segments =
            vec![pd_rollout(&sim, &pose, &push_proposal(left_face_grasp(&sc, &pose, 1e-9)), &params)];
        let small = ReachParams { n_grasps: 12, n_clusters: 4, t_max: 3.0, ..params };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        segments.extend(reachable_set(&sim, &pose, &small, &mut rng).unwrap());
        for seg in &segments {
            let worst = max_action_residual(&sim, seg, params.dt_action);
            assert!(worst <= 1e-2, "{name}: residual {worst} N > 1e-2 N");
            checked += seg.states.len() - 1;
        }
    }
    assert!(checked > 1000, "suite too small: {checked} steps");
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "runtime {dt:.2} s exceeds 30 s");
}

fn c03_velocity_map_oracle() {
    let t0 = Instant::now();
    let sc = SceneModel { friction_object_env: 0.0, friction_object_finger: 0.0, ..box_scene(vec![ground()]) };
    let sim = Sim::new(&sc);
    let pose = settle_from(&sc, Pose2::new(0.0, 0.0501, 0.0));
    // Slight penetration keeps the contact active on both sides of every
    // finite difference.
    let finger = Vec2::new(pose.x - 0.05 - sc.fingertip_radius + 5e-7, pose.y);
    let base = Configuration::at_rest(finger, pose);
    let lin = LinearizeParams::default();
    let a = a_matrix(&linearize(&sim, &base, &lin).unwrap());

    let probe = |v: Vec2| -> Vec3 {
        sim.step_pinned_finger(&base, v, lin.dt_lin).unwrap().config.object_vel
    };
    let s = lin.eps_fd;
    let dir = Vec2::new(1.0, 0.0);
    let simulated = (probe(dir * s) - probe(-dir * s)) / (2.0 * s);
    let predicted = a * dir;
    let cosine = simulated.dot(&predicted) / (simulated.norm() * predicted.norm());
    assert!(cosine >= 0.95, "cosine {cosine}");
    let ratio = simulated.norm() / predicted.norm();
    assert!((0.8..=1.2).contains(&ratio), "magnitude ratio {ratio}");

    // A hovering finger has no influence at all.
    let hover = Configuration::at_rest(Vec2::new(0.0, 0.3), pose);
    let a0 = a_matrix(&linearize(&sim, &hover, &lin).unwrap());
    assert_eq!(a0, pushplan::invdyn::Mat32::zeros());

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 10.0, "runtime {dt:.2} s exceeds 10 s");
}

fn c04_spectral_properties() {
    // Real map from a frictional side grasp plus synthetic rank cases.
    let sc = box_scene(vec![ground()]);
    let sim = Sim::new(&sc);
    let pose = settle_from(&sc, Pose2::new(0.0, 0.0501, 0.0));
    let finger = Vec2::new(pose.x - 0.05 - sc.fingertip_radius + 5e-7, pose.y);
    let base = Configuration::at_rest(finger, pose);
    let a_real = a_matrix(&linearize(&sim, &base, &LinearizeParams::default()).unwrap());

    let mk = |s0: f64, s1: f64| {
        pushplan::invdyn::Mat32::from_fn(|r, c| match (r, c) {
            (0, 0) => s0,
            (1, 1) => s1,
            _ => 0.0,
        })
    };
    let c_eig = 1e-6;
    for a in [a_real, mk(1.0, 0.5), mk(1.0, 2e-3), mk(1.0, 0.0)] {
        let modes = spectrum(&a, c_eig);
        assert_eq!(modes.len(), 2 * retained_count(&a, c_eig));
        // Sign pairs: consecutive entries are exact negations.
        for pair in modes.chunks(2) {
            assert_eq!(pair[0].object, -pair[1].object);
            assert_eq!(pair[0].finger, -pair[1].finger);
        }
        // Distinct directions form an orthonormal family on both sides.
        let unique: Vec<_> = modes.iter().step_by(2).collect();
        for (i, m) in unique.iter().enumerate() {
            for (j, n) in unique.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m.object.dot(&n.object) - want).abs() <= 1e-8);
                assert!((m.finger.dot(&n.finger) - want).abs() <= 1e-8);
            }
        }
        // Reconstruction from the same decomposition is tight.
        let svd = a.svd(true, true);
        let rebuilt = svd.recompose().unwrap();
        assert!((rebuilt - a).norm() <= 1e-10);
    }

    // The energy cutoff is honored on both sides of the line.
    assert_eq!(retained_count(&mk(1.0, 1.1e-3), c_eig), 2);
    assert_eq!(retained_count(&mk(1.0, 0.9e-3), c_eig), 1);
    assert_eq!(spectrum(&mk(1.0, 1.1e-3), c_eig).len(), 4);
    assert_eq!(spectrum(&mk(1.0, 0.9e-3), c_eig).len(), 2);
}

fn c05_filter_soundness() {
    let t0 = Instant::now();
    let sc = box_scene(vec![ground()]);
    let sim = Sim::new(&sc);
    let pose = settle_from(&sc, Pose2::new(0.0, 0.0501, 0.0));
    let params = ReachParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut fixtures = 0;
    while fixtures < 200 {
        let grasps = sample_grasps(&sim, &pose, 1, params.grasp_gap, &mut rng).unwrap();
        let grasp = grasps[0];
        let mut proposals = Vec::new();
        for _ in 0..6 {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let f = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if f.norm() < 1e-3 {
                continue;
            }
            proposals.push(MotionProposal {
                grasp,
                object_velocity: v,
                finger_velocity: f.normalize(),
                sigma: 1.0,
            });
        }
        // Hand-built pull, tagged by a sentinel sigma: the fingertip retreats
        // straight along the outward normal.
        let away = pose.rotate(grasp.outward_normal_body);
        proposals.push(MotionProposal {
            grasp,
            object_velocity: Vec3::zeros(),
            finger_velocity: away,
            sigma: -1.0,
        });
        let survivors = filter_proposals(&sim, &pose, proposals, &params);
        for p in &survivors {
            assert!(p.sigma >= 0.0, "pull proposal survived the filter");
            let toward = -pose.rotate(p.grasp.outward_normal_body);
            let cosine = p.finger_velocity.dot(&toward) / p.finger_velocity.norm();
            assert!(cosine >= params.c_fingertip, "survivor pulls: cosine {cosine}");
        }
        fixtures += 1;
    }
    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 30.0, "runtime {dt:.2} s exceeds 30 s");
}

fn c06_cluster_and_normalize() {
    let params = ReachParams::default();
    assert_eq!(params.n_clusters, 9);
    assert_eq!(params.w_translation, 40.5);
    assert_eq!(params.w_rotation, 0.405);

    let sc = box_scene(vec![ground()]);
    let sim = Sim::new(&sc);
    let pose = settle_from(&sc, Pose2::new(0.0, 0.0501, 0.0));
    let grasp = left_face_grasp(&sc, &pose, 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pool = Vec::new();
    for _ in 0..60 {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-6.0..6.0));
        if v.norm() < 1e-3 {
            continue;
        }
        pool.push(MotionProposal {
            grasp,
            object_velocity: v,
            finger_velocity: Vec2::new(1.0, 0.0),
            sigma: 1.0,
        });
    }
    let picked = cluster(pool, params.n_clusters, &params, &mut rng);
    assert!(picked.len() <= 9, "{} representatives", picked.len());
    let ready = normalize(picked, &params);
    for p in &ready {
        let v = p.object_velocity;
        let quad = 40.5 * (v.x * v.x + v.y * v.y) + 0.405 * v.z * v.z;
        assert!((quad - 1.0).abs() <= 1e-9, "vWv = {quad}");
    }

    // The full pipeline obeys the same bounds.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let set = reachable_set(&sim, &pose, &params, &mut rng).unwrap();
    assert!(set.len() <= 9);
    for seg in &set {
        let v = seg.proposal.object_velocity;
        let quad = 40.5 * (v.x * v.x + v.y * v.y) + 0.405 * v.z * v.z;
        assert!((quad - 1.0).abs() <= 1e-9, "vWv = {quad}");
    }
}

fn c07_rollout_terminations() {
    let t0 = Instant::now();
    let params = ReachParams::default();

    // Timeout: free push across open ground runs the full horizon.
    let sc = box_scene(vec![ground()]);
    let sim = Sim::new(&sc);
    let pose = settle_from(&sc, Pose2::new(0.0, 0.0501, 0.0));
    let push = push_proposal(left_face_grasp(&sc, &pose, 1e-9));
    let seg = pd_rollout(&sim, &pose, &push, &params);
    assert_eq!(seg.termination_reason, TerminationReason::Timeout);
    assert_eq!(seg.states.len(), (params.t_max / params.dt_action).round() as usize + 1);

    // Stopped: a wall two centimeters ahead stalls the same push.
    let walled = box_scene(vec![
        ground(),
        EnvShape { shape: Shape::rect(0.05, 0.2), pose: Pose2::new(0.12, 0.1, 0.0) },
    ]);
    let seg = pd_rollout(&Sim::new(&walled), &pose, &push, &params);
    assert_eq!(seg.termination_reason, TerminationReason::Stopped);

    // ContactLost: pushed over a table edge, the object falls away.
    let table = box_scene(vec![
        EnvShape { shape: Shape::rect(0.5, 0.1), pose: Pose2::new(-0.44, -0.1, 0.0) },
        EnvShape { shape: Shape::rect(2.0, 0.05), pose: Pose2::new(0.0, -0.35, 0.0) },
    ]);
    let seg = pd_rollout(&Sim::new(&table), &pose, &push, &params);
    assert_eq!(seg.termination_reason, TerminationReason::ContactLost);

    // RotationLimit: a cylinder rolled up an incline accumulates rotation
    // with distance and trips the budget before the timeout.
    let phi = 0.15f64;
    let (s, c) = phi.sin_cos();
    let incline = SceneModel {
        object_shape: Shape::circle(0.02),
        object_inertia: 0.1 * 0.02 * 0.02 / 2.0,
        ..box_scene(vec![EnvShape {
            shape: Shape::rect(0.6, 0.05),
            pose: Pose2::new(0.0, -0.05 / c, phi),
        }])
    };
    let sim_i = Sim::new(&incline);
    let slope_normal = Vec2::new(-s, c);
    let downhill = Vec2::new(-c, -s);
    let weight = incline.object_mass * incline.gravity;
    let sag_n = weight * c / incline.contact.stiffness;
    let sag_t = weight * s / incline.contact.stiffness;
    let center = slope_normal * (0.02 - sag_n);
    let roll = MotionProposal {
        grasp: Grasp {
            contact_point_body: downhill * 0.02,
            outward_normal_body: downhill,
            finger_config: center + downhill * (0.02 + 0.01 - sag_t),
        },
        object_velocity: Vec3::new(c, s, 0.0) / 40.5f64.sqrt(),
        finger_velocity: Vec2::new(c, s),
        sigma: 1.0,
    };
    let seg = pd_rollout(&sim_i, &Pose2::new(center.x, center.y, 0.0), &roll, &params);
    assert_eq!(seg.termination_reason, TerminationReason::RotationLimit);
    assert!(seg.states.last().unwrap().object_pose.theta.abs() >= 2.5);

    let dt = t0.elapsed().as_secs_f64();
    assert!(dt < 60.0, "runtime {dt:.2} s exceeds 60 s");
}

struct SweepResult {
    successes: usize,
    runs: usize,
    wall_times: Vec<f64>,
    modes: Vec<usize>,
    outcomes: Vec<PlanOutcome>,
}

fn sweep(loaded: &LoadedScene, ablation: Ablation, seeds: u64, keep: bool) -> SweepResult {
    let sim = Sim::new(&loaded.scene);
    let mut params = loaded.params.clone();
    params.ablation = ablation;
    let start = settled_start(&sim, loaded).unwrap();
    let mut r = SweepResult {
        successes: 0,
        runs: seeds as usize,
        wall_times: Vec::new(),
        modes: Vec::new(),
        outcomes: Vec::new(),
    };
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = Instant::now();
        let outcome = plan(&sim, &start, &params, &mut rng).unwrap();
        r.wall_times.push(t0.elapsed().as_secs_f64());
        if outcome.plan.metrics.success {
            r.successes += 1;
            r.modes.push(outcome.plan.metrics.modes);
        }
        if keep {
            r.outcomes.push(outcome);
        }
    }
    r
}

fn c08_planar_pusher() {
    let loaded = load_scene(&scene_path("planar_pusher.toml")).unwrap();
    let sim = Sim::new(&loaded.scene);
    let reach = loaded.params.effective_reach();
    let r = sweep(&loaded, Ablation::None, 20, true);
    assert!(r.successes >= 18, "{}/20 seeds", r.successes);
    for (seed, wt) in r.wall_times.iter().enumerate() {
        assert!(*wt < 60.0, "seed {seed} took {wt:.1} s");
    }
    // Bitwise replay: re-simulating each stored segment reproduces every
    // state exactly, and segments chain through identical settled poses.
    for outcome in &r.outcomes {
        if !outcome.plan.metrics.success {
            continue;
        }
        let mut prev_end: Option<Pose2> = None;
        for seg in &outcome.plan.segments {
            if let Some(end) = prev_end {
                assert_eq!(end, seg.states[0].object_pose);
            }
            let replayed = replay_segment(&sim, seg, &reach);
            assert_eq!(&replayed, seg, "replay diverged");
            prev_end = Some(seg.settled_pose);
        }
    }
}

fn c09_maze() {
    let loaded = load_scene(&scene_path("maze2d.toml")).unwrap();
    let sim = Sim::new(&loaded.scene);
    let reach = loaded.params.effective_reach();
    let r = sweep(&loaded, Ablation::None, 20, true);
    assert!(r.successes >= 16, "{}/20 seeds", r.successes);
    for (seed, wt) in r.wall_times.iter().enumerate() {
        assert!(*wt < 120.0, "seed {seed} took {wt:.1} s");
    }
    for outcome in &r.outcomes {
        if !outcome.plan.metrics.success {
            continue;
        }
        // Library replay re-checks every state against the stored log and
        // must end inside the goal ball.
        let end = pushplan::planner::replay(&sim, &outcome.plan, &reach).unwrap();
        let goal = loaded.params.goal_center;
        let dist = ((end.x - goal.x).powi(2) + (end.y - goal.y).powi(2)).sqrt();
        assert!(dist <= loaded.params.r_terminal, "replay ends {dist:.3} m from goal");
        // Logged motion stays dynamically feasible along every segment.
        for seg in &outcome.plan.segments {
            let worst = max_action_residual(&sim, seg, reach.dt_action);
            assert!(worst <= 1e-2, "solution residual {worst} N");
        }
    }
}

fn c10_ablation_ordering() {
    let loaded = load_scene(&scene_path("maze2d.toml")).unwrap();
    let full = sweep(&loaded, Ablation::None, 20, false);
    let no_filter = sweep(&loaded, Ablation::NoFilter, 20, false);
    let random_dirs = sweep(&loaded, Ablation::RandomDirs, 20, false);

    let rate = |r: &SweepResult| r.successes as f64 / r.runs as f64;
    assert!(
        rate(&full) >= rate(&no_filter),
        "success rate: full {} < no-filter {}",
        rate(&full),
        rate(&no_filter),
    );
    let mean = |m: &[usize]| m.iter().sum::<usize>() as f64 / m.len() as f64;
    // A 0-success comparator makes the mean-modes comparison vacuous.
    if !random_dirs.modes.is_empty() {
        assert!(!full.modes.is_empty(), "full method found no solutions");
        assert!(
            mean(&full.modes) <= mean(&random_dirs.modes),
            "mean modes: full {} > random-dirs {}",
            mean(&full.modes),
            mean(&random_dirs.modes),
        );
    }
}

fn c11_worker_determinism() {
    let bin = env!("CARGO_BIN_EXE_pushplan");
    let scene = scene_path("planar_pusher.toml");
    let dir = std::env::temp_dir().join("pushplan-acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let mut bytes = Vec::new();
    for workers in [1, 2] {
        let out = dir.join(format!("workers{workers}.plan"));
        let status = std::process::Command::new(bin)
            .args(["plan", "--scene"])
            .arg(&scene)
            .args(["--seed", "3", "--workers", &workers.to_string(), "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "plan exited with {status}");
        bytes.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(bytes[0], bytes[1], "archives differ across worker counts");
}

fn c12_goal_bias() {
    let params = PlannerParams::new(
        Pose2::new(0.5, 0.05, 0.0),
        [[-0.2, 0.9], [0.0, 0.2], [-3.1, 3.1]],
    );
    assert_eq!(params.alpha, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let draws = 10_000;
    let mut hits = 0;
    for _ in 0..draws {
        let s = sample_subgoal(&params, &mut rng);
        if s == params.goal_center {
            hits += 1;
        }
    }
    let freq = hits as f64 / draws as f64;
    let sigma = (0.2f64 * 0.8 / draws as f64).sqrt();
    assert!(
        (freq - 0.2).abs() <= 3.0 * sigma,
        "goal frequency {freq} outside 0.2 +/- {}",
        3.0 * sigma,
    );
}

#[test]
fn acceptance_criteria() {
    let checks: &[(&str, fn())] = &[
        ("residual identity on settled fixtures", c01_residual_identity),
        ("dynamic feasibility along stored rollouts", c02_dynamic_feasibility),
        ("velocity map matches brute-force probe", c03_velocity_map_oracle),
        ("spectral basis, pruning, reconstruction", c04_spectral_properties),
        ("filter soundness on randomized grasps", c05_filter_soundness),
        ("cluster size and normalization", c06_cluster_and_normalize),
        ("rollout termination taxonomy", c07_rollout_terminations),
        ("planar pusher end to end", c08_planar_pusher),
        ("maze end to end", c09_maze),
        ("ablation ordering", c10_ablation_ordering),
        ("worker-count determinism", c11_worker_determinism),
        ("goal-bias statistics", c12_goal_bias),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check));
        let dt = t0.elapsed().as_secs_f64();
        let verdict = if outcome.is_ok() { "PASS" } else { "FAIL" };
        println!("criterion {:2} ({name}): {verdict} [{dt:.2} s]", i + 1);
        if outcome.is_err() {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
