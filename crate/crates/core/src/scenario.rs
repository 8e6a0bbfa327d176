//! Scene description files, plan archives, and SVG rendering. Scenes are
//! TOML with strict keys and pinned defaults; archives are line-oriented
//! text whose floats round-trip exactly, so saving a loaded archive
//! reproduces it byte for byte.

use crate::dynamics::{Actuation, Configuration, ContactParams, EnvShape, SceneModel, Sim};
use crate::geometry::{aabb, Pose2, Shape, Vec2};
use crate::planner::{
    config_close, pose_close, Ablation, PlanError, PlanOutcome, PlannerParams,
};
use crate::reachset::{
    clamp_setpoint, run_settle_tail, ReachParams, TerminationReason, TrajectorySegment,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
const ARCHIVE_MAGIC: &str = "pushplan-plan 1";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Scene(#[from] crate::dynamics::SceneError),
    #[error("validation error: {0}")]
    Planner(#[from] PlanError),
    #[error("validation error: {0}")]
    Invalid(String),
    #[error("scene/plan mismatch: archive was produced from a different scene file")]
    HashMismatch,
    #[error("archive format error at line {line}: {message}")]
    Archive { line: usize, message: String },
}

/// Shape description as written in scene files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Circle { radius: f64 },
    Rect { half_extents: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl ShapeSpec {
    pub fn to_shape(&self) -> Shape {
        match self {
            ShapeSpec::Circle { radius } => Shape::circle(*radius),
            ShapeSpec::Rect { half_extents: [hx, hy] } => Shape::rect(*hx, *hy),
            ShapeSpec::Polygon { vertices } => Shape::Polygon {
                vertices: vertices.iter().map(|[x, y]| Vec2::new(*x, *y)).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub shape: ShapeSpec,
    /// (x, y, theta) of the shape frame.
    pub pose: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub object_shape: ShapeSpec,
    pub object_mass: f64,
    pub object_inertia: f64,
    pub fingertip_radius: f64,
    pub fingertip_mass: f64,
    pub friction_object_env: f64,
    pub friction_object_finger: f64,
    #[serde(default)]
    pub contact: ContactParams,
    pub environment: Vec<EnvSpec>,
}

fn default_gravity() -> f64 {
    9.81
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartSection {
    pub finger: [f64; 2],
    pub object: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSection {
    pub center: [f64; 3],
    #[serde(default = "default_r_terminal")]
    pub r_terminal: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_tol: Option<f64>,
}

fn default_r_terminal() -> f64 {
    0.2
}

/// Planner overrides; anything omitted keeps the pinned default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSection {
    pub alpha: f64,
    pub n_nodes: usize,
    pub iteration_cap: usize,
    pub wall_clock_cap: f64,
    pub ablation: Ablation,
    pub reach: ReachParams,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let p = PlannerParams::new(Pose2::IDENTITY, [[0.0, 0.0]; 3]);
        PlannerSection {
            alpha: p.alpha,
            n_nodes: p.n_nodes,
            iteration_cap: p.iteration_cap,
            wall_clock_cap: p.wall_clock_cap,
            ablation: p.ablation,
            reach: p.reach,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub sample_box: [[f64; 2]; 3],
    pub scene: SceneSection,
    pub start: StartSection,
    pub goal: GoalSection,
    #[serde(default)]
    pub planner: PlannerSection,
}

impl SceneFile {
    pub fn to_scene_model(&self) -> SceneModel {
        let s = &self.scene;
        SceneModel {
            object_shape: s.object_shape.to_shape(),
            object_mass: s.object_mass,
            object_inertia: s.object_inertia,
            fingertip_radius: s.fingertip_radius,
            fingertip_mass: s.fingertip_mass,
            gravity: s.gravity,
            friction_object_env: s.friction_object_env,
            friction_object_finger: s.friction_object_finger,
            contact: s.contact,
            environment: s
                .environment
                .iter()
                .map(|e| EnvShape {
                    shape: e.shape.to_shape(),
                    pose: Pose2::new(e.pose[0], e.pose[1], e.pose[2]),
                })
                .collect(),
        }
    }

    pub fn to_planner_params(&self) -> PlannerParams {
        let g = self.goal.center;
        PlannerParams {
            goal_center: Pose2::new(g[0], g[1], g[2]),
            r_terminal: self.goal.r_terminal,
            theta_tol: self.goal.theta_tol,
            alpha: self.planner.alpha,
            sample_box: self.sample_box,
            n_nodes: self.planner.n_nodes,
            reach: self.planner.reach,
            iteration_cap: self.planner.iteration_cap,
            wall_clock_cap: self.planner.wall_clock_cap,
            ablation: self.planner.ablation,
        }
    }

    pub fn start_configuration(&self) -> Configuration {
        let f = self.start.finger;
        let o = self.start.object;
        Configuration::at_rest(Vec2::new(f[0], f[1]), Pose2::new(o[0], o[1], o[2]))
    }
}

/// A fully validated scene ready to run.
#[derive(Clone, Debug)]
pub struct LoadedScene {
    pub file: SceneFile,
    pub scene: SceneModel,
    pub params: PlannerParams,
    pub start: Configuration,
    pub seed: u64,
    /// Hex digest of the canonicalized file; archives pin it.
    pub hash: String,
}

/// Canonical serialization: independent of the formatting, comments, and key
/// order of the source file.
pub fn scene_to_text(file: &SceneFile) -> String {
    toml::to_string_pretty(file).expect("scene files always serialize")
}

pub fn scene_hash(file: &SceneFile) -> String {
    let digest = Sha256::digest(scene_to_text(file).as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

pub fn parse_scene(text: &str) -> Result<LoadedScene, ScenarioError> {
    let file: SceneFile =
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::Invalid(format!(
            "unsupported schema_version {}, expected {SCHEMA_VERSION}",
            file.schema_version
        )));
    }
    let scene = file.to_scene_model();
    scene.validate()?;
    let params = file.to_planner_params();
    params.validate()?;
    let start = file.start_configuration();
    let finite = file.start.finger.iter().chain(file.start.object.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(ScenarioError::Invalid("start must be finite".into()));
    }
    let hash = scene_hash(&file);
    Ok(LoadedScene { seed: file.seed, file, scene, params, start, hash })
}

pub fn load_scene(path: &Path) -> Result<LoadedScene, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_scene(&text)
}

pub fn save_scene(path: &Path, file: &SceneFile) -> Result<(), ScenarioError> {
    std::fs::write(path, scene_to_text(file)).map_err(|source| ScenarioError::Write {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub pose: Pose2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentRecord {
    pub termination: TerminationReason,
    /// Raw setpoint schedule, one entry per action step.
    pub setpoints: Vec<Vec2>,
    /// Full action-state count before decimation.
    pub n_states: usize,
    /// States at full indices 0, d, 2d, ...
    pub states: Vec<Configuration>,
    /// Full settle-tail length before decimation.
    pub n_tail: usize,
    pub tail: Vec<Configuration>,
    pub settled_pose: Pose2,
}

/// Persisted planning run. Wall time is excluded: archives must be
/// byte-identical for identical (scene, seed) regardless of machine load.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanArchive {
    pub scene_hash: String,
    pub seed: u64,
    pub decimation: usize,
    pub success: bool,
    pub modes: usize,
    pub branches: usize,
    pub path_length: f64,
    pub segments: Vec<SegmentRecord>,
    pub tree: Vec<NodeRecord>,
}

fn decimate<T: Copy>(full: &[T], d: usize) -> Vec<T> {
    full.iter().step_by(d).copied().collect()
}

pub fn archive_plan(outcome: &PlanOutcome, scene_hash: &str, seed: u64, decimation: usize) -> PlanArchive {
    let d = decimation.max(1);
    PlanArchive {
        scene_hash: scene_hash.to_string(),
        seed,
        decimation: d,
        success: outcome.plan.metrics.success,
        modes: outcome.plan.metrics.modes,
        branches: outcome.plan.metrics.branches,
        path_length: outcome.plan.metrics.path_length,
        segments: outcome
            .plan
            .segments
            .iter()
            .map(|s| SegmentRecord {
                termination: s.termination_reason,
                setpoints: s.setpoints.clone(),
                n_states: s.states.len(),
                states: decimate(&s.states, d),
                n_tail: s.settle_tail.len(),
                tail: decimate(&s.settle_tail, d),
                settled_pose: s.settled_pose,
            })
            .collect(),
        tree: outcome
            .tree
            .nodes
            .iter()
            .map(|n| NodeRecord { id: n.id, parent: n.parent, pose: n.object_pose })
            .collect(),
    }
}

fn termination_name(t: TerminationReason) -> &'static str {
    match t {
        TerminationReason::ContactLost => "contact-lost",
        TerminationReason::Stopped => "stopped",
        TerminationReason::RotationLimit => "rotation-limit",
        TerminationReason::Timeout => "timeout",
    }
}

fn termination_from(name: &str) -> Option<TerminationReason> {
    Some(match name {
        "contact-lost" => TerminationReason::ContactLost,
        "stopped" => TerminationReason::Stopped,
        "rotation-limit" => TerminationReason::RotationLimit,
        "timeout" => TerminationReason::Timeout,
        _ => return None,
    })
}

fn push_config(out: &mut String, tag: &str, c: &Configuration) {
    let _ = writeln!(
        out,
        "{tag} {} {} {} {} {} {} {} {} {} {}",
        c.finger_pos.x,
        c.finger_pos.y,
        c.finger_vel.x,
        c.finger_vel.y,
        c.object_pose.x,
        c.object_pose.y,
        c.object_pose.theta,
        c.object_vel.x,
        c.object_vel.y,
        c.object_vel.z,
    );
}

/// Exact-text form of an archive; floats print in shortest round-trip form,
/// so format(parse(format(x))) == format(x).
pub fn format_plan(archive: &PlanArchive) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{ARCHIVE_MAGIC}");
    let _ = writeln!(out, "scene {}", archive.scene_hash);
    let _ = writeln!(out, "seed {}", archive.seed);
    let _ = writeln!(out, "decimation {}", archive.decimation);
    let _ = writeln!(out, "success {}", archive.success as u8);
    let _ = writeln!(out, "modes {}", archive.modes);
    let _ = writeln!(out, "branches {}", archive.branches);
    let _ = writeln!(out, "length {}", archive.path_length);
    let _ = writeln!(out, "tree {}", archive.tree.len());
    for n in &archive.tree {
        match n.parent {
            Some(p) => {
                let _ = writeln!(out, "node {} {} {} {} {}", n.id, p, n.pose.x, n.pose.y, n.pose.theta);
            }
            None => {
                let _ = writeln!(out, "node {} - {} {} {}", n.id, n.pose.x, n.pose.y, n.pose.theta);
            }
        }
    }
    let _ = writeln!(out, "segments {}", archive.segments.len());
    for s in &archive.segments {
        let _ = writeln!(
            out,
            "segment {} {} {} {} {} {}",
            termination_name(s.termination),
            s.n_states,
            s.n_tail,
            s.settled_pose.x,
            s.settled_pose.y,
            s.settled_pose.theta,
        );
        for sp in &s.setpoints {
            let _ = writeln!(out, "sp {} {}", sp.x, sp.y);
        }
        for c in &s.states {
            push_config(&mut out, "st", c);
        }
        for c in &s.tail {
            push_config(&mut out, "tl", c);
        }
    }
    out
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn new(text: &'a str) -> Self {
        LineReader { lines: text.lines().enumerate() }
    }

    fn next(&mut self) -> Result<(usize, Vec<&'a str>), ScenarioError> {
        match self.lines.next() {
            Some((i, line)) => Ok((i + 1, line.split_whitespace().collect())),
            None => Err(ScenarioError::Archive {
                line: 0,
                message: "unexpected end of file".into(),
            }),
        }
    }

    /// Line whose first token is `tag`; returns the remaining tokens.
    fn tagged(&mut self, tag: &str) -> Result<(usize, Vec<&'a str>), ScenarioError> {
        let (line, tokens) = self.next()?;
        match tokens.split_first() {
            Some((first, rest)) if *first == tag => Ok((line, rest.to_vec())),
            _ => Err(ScenarioError::Archive {
                line,
                message: format!("expected '{tag}' record"),
            }),
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, token: &str) -> Result<T, ScenarioError> {
    token.parse().map_err(|_| ScenarioError::Archive {
        line,
        message: format!("bad number '{token}'"),
    })
}

fn parse_one<T: std::str::FromStr>(line: usize, tokens: &[&str]) -> Result<T, ScenarioError> {
    match tokens {
        [only] => parse_num(line, only),
        _ => Err(ScenarioError::Archive { line, message: "expected one value".into() }),
    }
}

fn parse_config(line: usize, tokens: &[&str]) -> Result<Configuration, ScenarioError> {
    if tokens.len() != 10 {
        return Err(ScenarioError::Archive { line, message: "expected 10 values".into() });
    }
    let mut v = [0.0f64; 10];
    for (slot, token) in v.iter_mut().zip(tokens) {
        *slot = parse_num(line, token)?;
    }
    let mut c = Configuration::at_rest(Vec2::new(v[0], v[1]), Pose2::new(v[4], v[5], v[6]));
    c.finger_vel = Vec2::new(v[2], v[3]);
    c.object_vel = crate::dynamics::Vec3::new(v[7], v[8], v[9]);
    Ok(c)
}

pub fn parse_plan(text: &str) -> Result<PlanArchive, ScenarioError> {
    let mut r = LineReader::new(text);
    let (line, first) = r.next()?;
    if first.join(" ") != ARCHIVE_MAGIC {
        return Err(ScenarioError::Archive { line, message: "not a plan archive".into() });
    }
    let (line, hash) = r.tagged("scene")?;
    let scene_hash = match hash.as_slice() {
        [h] => h.to_string(),
        _ => return Err(ScenarioError::Archive { line, message: "expected one hash".into() }),
    };
    let (line, t) = r.tagged("seed")?;
    let seed = parse_one(line, &t)?;
    let (line, t) = r.tagged("decimation")?;
    let decimation: usize = parse_one(line, &t)?;
    if decimation == 0 {
        return Err(ScenarioError::Archive { line, message: "decimation must be >= 1".into() });
    }
    let (line, t) = r.tagged("success")?;
    let success = parse_one::<u8>(line, &t)? != 0;
    let (line, t) = r.tagged("modes")?;
    let modes = parse_one(line, &t)?;
    let (line, t) = r.tagged("branches")?;
    let branches = parse_one(line, &t)?;
    let (line, t) = r.tagged("length")?;
    let path_length = parse_one(line, &t)?;

    let (line, t) = r.tagged("tree")?;
    let n_nodes: usize = parse_one(line, &t)?;
    let mut tree = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (line, t) = r.tagged("node")?;
        if t.len() != 5 {
            return Err(ScenarioError::Archive { line, message: "expected 5 values".into() });
        }
        let id = parse_num(line, t[0])?;
        let parent = if t[1] == "-" { None } else { Some(parse_num(line, t[1])?) };
        let pose = Pose2::new(parse_num(line, t[2])?, parse_num(line, t[3])?, parse_num(line, t[4])?);
        tree.push(NodeRecord { id, parent, pose });
    }

    let (line, t) = r.tagged("segments")?;
    let n_segments: usize = parse_one(line, &t)?;
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        let (line, t) = r.tagged("segment")?;
        if t.len() != 6 {
            return Err(ScenarioError::Archive { line, message: "expected 6 values".into() });
        }
        let termination = termination_from(t[0]).ok_or_else(|| ScenarioError::Archive {
            line,
            message: format!("unknown termination '{}'", t[0]),
        })?;
        let n_states: usize = parse_num(line, t[1])?;
        let n_tail: usize = parse_num(line, t[2])?;
        if n_states == 0 {
            return Err(ScenarioError::Archive { line, message: "segment needs states".into() });
        }
        let settled_pose =
            Pose2::new(parse_num(line, t[3])?, parse_num(line, t[4])?, parse_num(line, t[5])?);
        let mut setpoints = Vec::with_capacity(n_states - 1);
        for _ in 0..n_states - 1 {
            let (line, t) = r.tagged("sp")?;
            if t.len() != 2 {
                return Err(ScenarioError::Archive { line, message: "expected 2 values".into() });
            }
            setpoints.push(Vec2::new(parse_num(line, t[0])?, parse_num(line, t[1])?));
        }
        let stored_states = n_states.div_ceil(decimation);
        let mut states = Vec::with_capacity(stored_states);
        for _ in 0..stored_states {
            let (line, t) = r.tagged("st")?;
            states.push(parse_config(line, &t)?);
        }
        let stored_tail = n_tail.div_ceil(decimation);
        let mut tail = Vec::with_capacity(stored_tail);
        for _ in 0..stored_tail {
            let (line, t) = r.tagged("tl")?;
            tail.push(parse_config(line, &t)?);
        }
        segments.push(SegmentRecord {
            termination,
            setpoints,
            n_states,
            states,
            n_tail,
            tail,
            settled_pose,
        });
    }

    Ok(PlanArchive {
        scene_hash,
        seed,
        decimation,
        success,
        modes,
        branches,
        path_length,
        segments,
        tree,
    })
}

pub fn save_plan(path: &Path, archive: &PlanArchive) -> Result<(), ScenarioError> {
    std::fs::write(path, format_plan(archive)).map_err(|source| ScenarioError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_plan(path: &Path) -> Result<PlanArchive, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_plan(&text)
}

pub fn check_scene_match(archive: &PlanArchive, scene: &LoadedScene) -> Result<(), ScenarioError> {
    if archive.scene_hash == scene.hash {
        Ok(())
    } else {
        Err(ScenarioError::HashMismatch)
    }
}

/// Settle the scene's start pose with the finger absent. Tree roots store
/// finger-free rested poses, so authors may write approximate start heights.
pub fn settled_start(sim: &Sim, loaded: &LoadedScene) -> Result<Configuration, ScenarioError> {
    let out = sim.settle(
        &loaded.start,
        crate::dynamics::FingerMode::Removed,
        &loaded.params.reach.settle,
    );
    if !out.rested {
        return Err(ScenarioError::Invalid("start pose does not settle to rest".into()));
    }
    Ok(Configuration::at_rest(loaded.start.finger_pos, out.config.object_pose))
}

/// Re-simulate every archived segment from its stored first state and verify
/// the log at each archived index (and the settle tail and chained poses)
/// within 1e-9. Returns the final settled pose.
pub fn verify_archive(
    sim: &Sim,
    archive: &PlanArchive,
    reach: &ReachParams,
) -> Result<Pose2, PlanError> {
    let d = archive.decimation;
    let mut prev_end: Option<Pose2> = None;
    for (si, seg) in archive.segments.iter().enumerate() {
        let diverged = |index: usize| PlanError::ReplayDivergence { segment: si, index };
        let first = seg.states.first().ok_or_else(|| diverged(0))?;
        if let Some(end) = prev_end {
            if !pose_close(&end, &first.object_pose, 1e-9) {
                return Err(diverged(0));
            }
        }
        let mut current = *first;
        for step in 0..seg.n_states - 1 {
            let raw = seg.setpoints[step];
            let setpoint = clamp_setpoint(raw, current.finger_pos, reach.kp, reach.max_track_force);
            let act = Actuation::Pd { setpoint, kp: reach.kp, kd: reach.kd };
            current = sim
                .step(&current, &act, reach.dt_action)
                .map_err(|_| diverged(step + 1))?
                .config;
            let full = step + 1;
            if full % d == 0 {
                match seg.states.get(full / d) {
                    Some(stored) if config_close(stored, &current, 1e-9) => {}
                    _ => return Err(diverged(full)),
                }
            }
        }
        let (tail, settled) = run_settle_tail(sim, &current, reach);
        if tail.len() != seg.n_tail {
            return Err(diverged(seg.n_states));
        }
        for (i, t) in tail.iter().enumerate() {
            if i % d == 0 {
                match seg.tail.get(i / d) {
                    Some(stored) if config_close(stored, t, 1e-9) => {}
                    _ => return Err(diverged(seg.n_states + i)),
                }
            }
        }
        if !pose_close(&seg.settled_pose, &settled, 1e-9) {
            return Err(diverged(seg.n_states + seg.n_tail));
        }
        prev_end = Some(seg.settled_pose);
    }
    prev_end.ok_or(PlanError::NothingToReplay)
}

/// Everything one picture can show; leave slices empty to omit layers.
pub struct RenderInput<'a> {
    pub scene: &'a SceneModel,
    pub start: Pose2,
    pub goal: Option<(Pose2, f64)>,
    pub tree: &'a [NodeRecord],
    /// Gray object-center polylines (reachable-set rollouts).
    pub paths: &'a [Vec<[f64; 2]>],
    /// Highlighted object-center polylines (the solution).
    pub solution: &'a [Vec<[f64; 2]>],
}

pub fn segment_com_polyline(segment: &TrajectorySegment) -> Vec<[f64; 2]> {
    segment
        .states
        .iter()
        .chain(segment.settle_tail.iter())
        .map(|c| [c.object_pose.x, c.object_pose.y])
        .collect()
}

pub fn record_com_polyline(record: &SegmentRecord) -> Vec<[f64; 2]> {
    record
        .states
        .iter()
        .chain(record.tail.iter())
        .map(|c| [c.object_pose.x, c.object_pose.y])
        .collect()
}

struct Viewport {
    scale: f64,
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
}

impl Viewport {
    fn fit(lo: [f64; 2], hi: [f64; 2]) -> Viewport {
        let (w, h) = (900.0, 600.0);
        let margin = 30.0;
        let span_x = (hi[0] - lo[0]).max(1e-6);
        let span_y = (hi[1] - lo[1]).max(1e-6);
        let scale = ((w - 2.0 * margin) / span_x).min((h - 2.0 * margin) / span_y);
        let cx = 0.5 * (lo[0] + hi[0]);
        let cy = 0.5 * (lo[1] + hi[1]);
        Viewport {
            scale,
            x0: 0.5 * w - cx * scale,
            y0: 0.5 * h + cy * scale,
            width: w,
            height: h,
        }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (self.x0 + p[0] * self.scale, self.y0 - p[1] * self.scale)
    }
}

fn shape_world_outline(shape: &Shape, pose: &Pose2) -> Vec<[f64; 2]> {
    match shape {
        Shape::Circle { .. } => Vec::new(),
        Shape::Polygon { vertices } => vertices
            .iter()
            .map(|v| {
                let w = pose.transform(*v);
                [w.x, w.y]
            })
            .collect(),
    }
}

fn push_shape(out: &mut String, vp: &Viewport, shape: &Shape, pose: &Pose2, style: &str) {
    match shape {
        Shape::Circle { radius } => {
            let (cx, cy) = vp.map([pose.x, pose.y]);
            let _ = writeln!(
                out,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" {style}/>"#,
                radius * vp.scale
            );
        }
        Shape::Polygon { .. } => {
            let pts: Vec<String> = shape_world_outline(shape, pose)
                .into_iter()
                .map(|p| {
                    let (x, y) = vp.map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(out, r#"<polygon points="{}" {style}/>"#, pts.join(" "));
        }
    }
}

fn extend_bounds(lo: &mut [f64; 2], hi: &mut [f64; 2], p: [f64; 2]) {
    lo[0] = lo[0].min(p[0]);
    lo[1] = lo[1].min(p[1]);
    hi[0] = hi[0].max(p[0]);
    hi[1] = hi[1].max(p[1]);
}

/// Deterministic SVG: same inputs give identical bytes.
pub fn render_svg(input: &RenderInput) -> String {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for e in &input.scene.environment {
        let (a, b) = aabb(&e.shape, &e.pose);
        extend_bounds(&mut lo, &mut hi, [a.x, a.y]);
        extend_bounds(&mut lo, &mut hi, [b.x, b.y]);
    }
    let r_obj = input.scene.object_bounding_radius();
    let mut centers = vec![input.start];
    if let Some((goal, r)) = input.goal {
        extend_bounds(&mut lo, &mut hi, [goal.x - r, goal.y - r]);
        extend_bounds(&mut lo, &mut hi, [goal.x + r, goal.y + r]);
        centers.push(goal);
    }
    for c in &centers {
        extend_bounds(&mut lo, &mut hi, [c.x - r_obj, c.y - r_obj]);
        extend_bounds(&mut lo, &mut hi, [c.x + r_obj, c.y + r_obj]);
    }
    for n in input.tree {
        extend_bounds(&mut lo, &mut hi, [n.pose.x, n.pose.y]);
    }
    for line in input.paths.iter().chain(input.solution.iter()) {
        for &p in line {
            extend_bounds(&mut lo, &mut hi, p);
        }
    }
    let vp = Viewport::fit(lo, hi);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = vp.width,
        h = vp.height
    );
    let _ = writeln!(out, r#"<rect width="{}" height="{}" fill="white"/>"#, vp.width, vp.height);
    for e in &input.scene.environment {
        push_shape(&mut out, &vp, &e.shape, &e.pose, r##"fill="#c8cdd3" stroke="#7d858e""##);
    }
    if let Some((goal, r)) = input.goal {
        let (cx, cy) = vp.map([goal.x, goal.y]);
        let _ = writeln!(
            out,
            r##"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="#e6f4ea" stroke="#34a853"/>"##,
            r * vp.scale
        );
        push_shape(
            &mut out,
            &vp,
            &input.scene.object_shape,
            &goal,
            r##"fill="none" stroke="#34a853" stroke-dasharray="6 4""##,
        );
    }
    push_shape(
        &mut out,
        &vp,
        &input.scene.object_shape,
        &input.start,
        r##"fill="none" stroke="#1a73e8" stroke-width="2""##,
    );
    for n in input.tree {
        let Some(parent) = n.parent else { continue };
        let p = input.tree.iter().find(|m| m.id == parent);
        let Some(p) = p else { continue };
        let (x1, y1) = vp.map([p.pose.x, p.pose.y]);
        let (x2, y2) = vp.map([n.pose.x, n.pose.y]);
        let _ = writeln!(
            out,
            r##"<polyline points="{x1:.2},{y1:.2} {x2:.2},{y2:.2}" fill="none" stroke="#b3b9c2"/>"##
        );
    }
    for line in input.paths {
        let pts: Vec<String> = line
            .iter()
            .map(|&p| {
                let (x, y) = vp.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#9aa0a6"/>"##,
            pts.join(" ")
        );
    }
    for line in input.solution {
        let pts: Vec<String> = line
            .iter()
            .map(|&p| {
                let (x, y) = vp.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#d93025" stroke-width="2.5"/>"##,
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::plan;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_scene_text() -> String {
        r#"
schema_version = 1
seed = 7
sample_box = [[-0.4, 0.4], [0.0, 0.15], [-1.0, 1.0]]

[scene]
object_shape = { kind = "rect", half_extents = [0.05, 0.05] }
object_mass = 0.1
object_inertia = 0.000167
fingertip_radius = 0.01
fingertip_mass = 0.01
friction_object_env = 0.5
friction_object_finger = 0.5

[[scene.environment]]
shape = { kind = "rect", half_extents = [2.0, 0.1] }
pose = [0.0, -0.1, 0.0]

[start]
finger = [1.0, 1.0]
object = [0.0, 0.0499019, 0.0]

[goal]
center = [0.1, 0.05, 0.0]
r_terminal = 0.05

[planner]
iteration_cap = 60

[planner.reach]
n_grasps = 10
n_clusters = 4
t_max = 4.0
"#
        .to_string()
    }

    #[test]
    fn scene_parses_with_pinned_defaults() {
        let loaded = parse_scene(&demo_scene_text()).unwrap();
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.params.alpha, 0.2);
        assert_eq!(loaded.params.n_nodes, 5);
        assert_eq!(loaded.params.iteration_cap, 60);
        assert_eq!(loaded.params.reach.n_grasps, 10);
        assert_eq!(loaded.params.reach.kp, 5000.0);
        assert_eq!(loaded.scene.gravity, 9.81);
        assert_eq!(loaded.scene.contact.stiffness, 1e4);
        assert_eq!(loaded.params.r_terminal, 0.05);
        assert_eq!(loaded.start.finger_pos, Vec2::new(1.0, 1.0));
        assert_eq!(loaded.hash.len(), 64);
    }

    #[test]
    fn scene_round_trips_through_canonical_text() {
        let loaded = parse_scene(&demo_scene_text()).unwrap();
        let text = scene_to_text(&loaded.file);
        let again = parse_scene(&text).unwrap();
        assert_eq!(again.file, loaded.file);
        assert_eq!(again.hash, loaded.hash);
    }

    #[test]
    fn scene_rejects_unknown_keys_naming_them() {
        let bad = demo_scene_text().replace("friction_object_env", "frictionn");
        let err = parse_scene(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frictionn"), "{msg}");
    }

    #[test]
    fn scene_rejects_invalid_physics_naming_the_invariant() {
        let bad = demo_scene_text().replace("object_mass = 0.1", "object_mass = -0.1");
        let err = parse_scene(&bad).unwrap_err();
        assert!(err.to_string().contains("object_mass must be positive"), "{err}");
        let bad = demo_scene_text().replace("schema_version = 1", "schema_version = 3");
        assert!(parse_scene(&bad).unwrap_err().to_string().contains("schema_version"));
    }

    fn quick_outcome(loaded: &LoadedScene) -> PlanOutcome {
        let sim = Sim::new(&loaded.scene);
        let start = settled_start(&sim, loaded).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(loaded.seed);
        plan(&sim, &start, &loaded.params, &mut rng).unwrap()
    }

    #[test]
    fn archive_round_trips_byte_stable_and_verifies() {
        let loaded = parse_scene(&demo_scene_text()).unwrap();
        let outcome = quick_outcome(&loaded);
        assert!(outcome.plan.metrics.success);

        let archive = archive_plan(&outcome, &loaded.hash, loaded.seed, 1);
        let text = format_plan(&archive);
        let parsed = parse_plan(&text).unwrap();
        assert_eq!(parsed, archive);
        assert_eq!(format_plan(&parsed), text);

        check_scene_match(&archive, &loaded).unwrap();
        let sim = Sim::new(&loaded.scene);
        let reach = loaded.params.effective_reach();
        let end = verify_archive(&sim, &archive, &reach).unwrap();
        assert_eq!(end, outcome.plan.segments.last().unwrap().settled_pose);

        // A corrupted stored state is caught at its index.
        let mut broken = archive.clone();
        let mid = broken.segments[0].states.len() / 2;
        broken.segments[0].states[mid].object_pose.y += 1e-4;
        match verify_archive(&sim, &broken, &reach) {
            Err(PlanError::ReplayDivergence { segment: 0, index }) => assert_eq!(index, mid),
            other => panic!("expected divergence, got {other:?}"),
        }

        // A different scene file no longer matches the stored hash.
        let other = parse_scene(&demo_scene_text().replace("0.5", "0.4")).unwrap();
        assert!(matches!(
            check_scene_match(&archive, &other),
            Err(ScenarioError::HashMismatch)
        ));
    }

    #[test]
    fn archive_decimation_stores_every_dth_state_and_still_verifies() {
        let loaded = parse_scene(&demo_scene_text()).unwrap();
        let outcome = quick_outcome(&loaded);
        let full = archive_plan(&outcome, &loaded.hash, loaded.seed, 1);
        let thin = archive_plan(&outcome, &loaded.hash, loaded.seed, 10);
        for (f, t) in full.segments.iter().zip(&thin.segments) {
            assert_eq!(t.states.len(), f.n_states.div_ceil(10));
            assert_eq!(t.tail.len(), f.n_tail.div_ceil(10));
            assert_eq!(t.setpoints, f.setpoints);
        }
        let text = format_plan(&thin);
        let parsed = parse_plan(&text).unwrap();
        assert_eq!(parsed, thin);
        assert_eq!(format_plan(&parsed), text);

        let sim = Sim::new(&loaded.scene);
        let reach = loaded.params.effective_reach();
        verify_archive(&sim, &thin, &reach).unwrap();
    }

    #[test]
    fn archive_parse_reports_line_numbers() {
        let loaded = parse_scene(&demo_scene_text()).unwrap();
        let outcome = quick_outcome(&loaded);
        let archive = archive_plan(&outcome, &loaded.hash, loaded.seed, 1);
        let text = format_plan(&archive);
        let mangled = text.replacen("seed 7", "seed x", 1);
        match parse_plan(&mangled) {
            Err(ScenarioError::Archive { line: 3, .. }) => {}
            other => panic!("expected line-3 error, got {other:?}"),
        }
        assert!(parse_plan("nonsense").is_err());
    }

    #[test]
    fn svg_render_is_deterministic_and_counts_tree_edges() {
        let loaded = parse_scene(&demo_scene_text()).unwrap();
        let scene = &loaded.scene;
        let start = Pose2::new(0.0, 0.05, 0.0);

        let empty = RenderInput {
            scene,
            start,
            goal: Some((Pose2::new(0.1, 0.05, 0.0), 0.05)),
            tree: &[],
            paths: &[],
            solution: &[],
        };
        let svg = render_svg(&empty);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert!(svg.matches("<polygon").count() >= 2, "environment and object outlines");
        assert_eq!(render_svg(&empty), svg);

        let tree = [
            NodeRecord { id: 0, parent: None, pose: start },
            NodeRecord { id: 1, parent: Some(0), pose: Pose2::new(0.05, 0.05, 0.0) },
            NodeRecord { id: 2, parent: Some(0), pose: Pose2::new(-0.04, 0.05, 0.1) },
        ];
        let with_tree = RenderInput { tree: &tree, ..empty };
        let svg = render_svg(&with_tree);
        assert_eq!(svg.matches("<polyline").count(), 2);

        let path = vec![vec![[0.0, 0.05], [0.02, 0.05], [0.05, 0.051]]];
        let with_solution = RenderInput { solution: &path, ..with_tree };
        let svg = render_svg(&with_solution);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("stroke-width=\"2.5\""));
    }
}
