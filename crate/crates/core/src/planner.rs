//! Goal-biased tree search over settle-terminated push segments. Tree nodes
//! store finger-free settled poses; edges store the proposal that produced
//! them, so any root-to-node path can be re-simulated exactly. Expansion
//! draws actions without replacement from a per-node cached reachable set.

use crate::dynamics::{Configuration, Sim};
use crate::geometry::{wrap_angle, Pose2, Vec2};
use crate::reachset::{
    pd_rollout, reachable_set, replay_segment, run_settle_tail, MotionProposal, ReachParams,
    TerminationReason, TrajectorySegment,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("invalid planner parameter: {0}")]
    InvalidParams(&'static str),
    #[error("replay divergence at segment {segment}, state {index}")]
    ReplayDivergence { segment: usize, index: usize },
    #[error("plan has no executed segments to replay")]
    NothingToReplay,
}

/// Search variants toggled for comparison runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Expand every remaining action of the selected node at once.
    ExpandAll,
    /// Roll out the whole filtered proposal pool, no cluster budget.
    NoKmeans,
    /// Keep pulls and obstructed directions in the pool.
    NoFilter,
    /// Replace spectral directions with random unit velocities.
    RandomDirs,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::None,
        Ablation::ExpandAll,
        Ablation::NoKmeans,
        Ablation::NoFilter,
        Ablation::RandomDirs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::ExpandAll => "expand-all",
            Ablation::NoKmeans => "no-kmeans",
            Ablation::NoFilter => "no-filter",
            Ablation::RandomDirs => "random-dirs",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown ablation '{s}' (expected none, expand-all, no-kmeans, no-filter \
                     or random-dirs)"
                )
            })
    }
}

#[derive(Clone, Debug)]
pub struct PlannerParams {
    pub goal_center: Pose2,
    /// Goal radius on the object center, closed ball.
    pub r_terminal: f64,
    /// Optional orientation tolerance around the goal heading.
    pub theta_tol: Option<f64>,
    /// Probability of sampling the goal center instead of the box.
    pub alpha: f64,
    /// Uniform sampling intervals for (x, y, theta).
    pub sample_box: [[f64; 2]; 3],
    /// Tree nodes inserted per executed segment.
    pub n_nodes: usize,
    pub reach: ReachParams,
    pub iteration_cap: usize,
    /// Seconds; checked between iterations only.
    pub wall_clock_cap: f64,
    pub ablation: Ablation,
}

impl PlannerParams {
    pub fn new(goal_center: Pose2, sample_box: [[f64; 2]; 3]) -> Self {
        PlannerParams {
            goal_center,
            r_terminal: 0.2,
            theta_tol: None,
            alpha: 0.2,
            sample_box,
            n_nodes: 5,
            reach: ReachParams::default(),
            iteration_cap: 2000,
            wall_clock_cap: f64::INFINITY,
            ablation: Ablation::None,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(PlanError::InvalidParams("alpha must be in [0, 1]"));
        }
        if !(self.r_terminal > 0.0) {
            return Err(PlanError::InvalidParams("r_terminal must be positive"));
        }
        if self.theta_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(PlanError::InvalidParams("theta_tol must be positive"));
        }
        if self.n_nodes == 0 {
            return Err(PlanError::InvalidParams("n_nodes must be at least 1"));
        }
        if self.iteration_cap == 0 {
            return Err(PlanError::InvalidParams("iteration_cap must be positive"));
        }
        if !(self.wall_clock_cap > 0.0) {
            return Err(PlanError::InvalidParams("wall_clock_cap must be positive"));
        }
        for [lo, hi] in self.sample_box {
            if !(lo <= hi) {
                return Err(PlanError::InvalidParams("sample_box intervals need lo <= hi"));
            }
        }
        self.reach.validate().map_err(PlanError::InvalidParams)
    }

    /// Reachable-set parameters with the ablation switches folded in.
    pub fn effective_reach(&self) -> ReachParams {
        let mut reach = self.reach;
        match self.ablation {
            Ablation::NoKmeans => reach.skip_cluster = true,
            Ablation::NoFilter => reach.skip_filter = true,
            Ablation::RandomDirs => reach.random_dirs = true,
            Ablation::None | Ablation::ExpandAll => {}
        }
        reach
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    /// None exactly for the root.
    pub parent: Option<usize>,
    /// Finger-free settled pose this node plans from.
    pub object_pose: Pose2,
    /// Index into `Tree::edges` of the rollout that created this node.
    pub edge: Option<usize>,
    /// State index within that rollout where this node cuts it.
    pub index: usize,
    pub depth: usize,
}

/// Executed action: enough to re-simulate the segment deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeRecord {
    pub from_pose: Pose2,
    pub proposal: MotionProposal,
    /// Action steps in the full rollout (states minus the start).
    pub steps: usize,
    pub termination: TerminationReason,
}

#[derive(Clone, Debug, PartialEq)]
enum ActionState {
    Unknown,
    Ready { proposals: Vec<MotionProposal>, unused: Vec<usize> },
    Exhausted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub edges: Vec<EdgeRecord>,
    actions: Vec<ActionState>,
}

impl Tree {
    pub fn new(root_pose: Pose2) -> Self {
        Tree {
            nodes: vec![TreeNode {
                id: 0,
                parent: None,
                object_pose: root_pose,
                edge: None,
                index: 0,
                depth: 0,
            }],
            edges: Vec::new(),
            actions: vec![ActionState::Unknown],
        }
    }

    /// True once the node's action set is known to be used up or empty.
    pub fn is_exhausted(&self, id: usize) -> bool {
        matches!(self.actions[id], ActionState::Exhausted)
    }
}

/// With probability `alpha` the goal center itself, else uniform in the box.
pub fn sample_subgoal(params: &PlannerParams, rng: &mut impl Rng) -> Pose2 {
    if rng.gen::<f64>() < params.alpha {
        return params.goal_center;
    }
    let [xr, yr, tr] = params.sample_box;
    let x = xr[0] + (xr[1] - xr[0]) * rng.gen::<f64>();
    let y = yr[0] + (yr[1] - yr[0]) * rng.gen::<f64>();
    let theta = tr[0] + (tr[1] - tr[0]) * rng.gen::<f64>();
    Pose2::new(x, y, theta)
}

fn planar_dist2(p: &Pose2, target: &Pose2) -> f64 {
    let dx = p.x - target.x;
    let dy = p.y - target.y;
    dx * dx + dy * dy
}

/// Node with the smallest translational distance to the target; orientation
/// is ignored and ties go to the lowest id.
pub fn select_nearest<'a>(tree: &'a Tree, target: &Pose2) -> &'a TreeNode {
    tree.nodes
        .iter()
        .min_by(|a, b| {
            planar_dist2(&a.object_pose, target)
                .partial_cmp(&planar_dist2(&b.object_pose, target))
                .unwrap()
        })
        .expect("tree always has a root")
}

/// Same metric, restricted to nodes that can still be expanded.
fn nearest_active(tree: &Tree, target: &Pose2) -> Option<usize> {
    tree.nodes
        .iter()
        .filter(|n| !tree.is_exhausted(n.id))
        .min_by(|a, b| {
            planar_dist2(&a.object_pose, target)
                .partial_cmp(&planar_dist2(&b.object_pose, target))
                .unwrap()
        })
        .map(|n| n.id)
}

pub fn goal_test(node: &TreeNode, params: &PlannerParams) -> bool {
    let within = planar_dist2(&node.object_pose, &params.goal_center).sqrt() <= params.r_terminal;
    match params.theta_tol {
        Some(tol) => {
            within && wrap_angle(node.object_pose.theta - params.goal_center.theta).abs() <= tol
        }
        None => within,
    }
}

/// State indices at which a `steps`-step segment is cut into tree nodes:
/// evenly spaced, deduplicated, the last always at the segment end.
fn node_cut_indices(steps: usize, n_nodes: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = (1..=n_nodes)
        .map(|j| (j as f64 * steps as f64 / n_nodes as f64).round() as usize)
        .filter(|&k| k >= 1)
        .collect();
    cuts.dedup();
    cuts
}

fn insert_segment_nodes(
    sim: &Sim,
    tree: &mut Tree,
    parent: usize,
    segment: &TrajectorySegment,
    params: &PlannerParams,
    reach: &ReachParams,
) -> Vec<usize> {
    let steps = segment.states.len() - 1;
    let edge = tree.edges.len();
    tree.edges.push(EdgeRecord {
        from_pose: segment.states[0].object_pose,
        proposal: segment.proposal,
        steps,
        termination: segment.termination_reason,
    });
    let depth = tree.nodes[parent].depth + 1;
    let mut ids = Vec::new();
    for k in node_cut_indices(steps, params.n_nodes) {
        // Interior cuts settle from the mid-rollout state so the node pose is
        // a valid finger-free query; the final cut reuses the rollout's tail.
        let pose = if k == steps {
            segment.settled_pose
        } else {
            run_settle_tail(sim, &segment.states[k], reach).1
        };
        let id = tree.nodes.len();
        tree.nodes.push(TreeNode {
            id,
            parent: Some(parent),
            object_pose: pose,
            edge: Some(edge),
            index: k,
            depth,
        });
        tree.actions.push(ActionState::Unknown);
        ids.push(id);
    }
    ids
}

/// Expand one node: compute (or reuse) its reachable set, execute one unused
/// action (all of them under `ExpandAll`), and insert the new nodes. An
/// empty or used-up action set marks the node exhausted and adds nothing.
pub fn steer(
    sim: &Sim,
    tree: &mut Tree,
    node_id: usize,
    params: &PlannerParams,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let pose = tree.nodes[node_id].object_pose;
    let reach = params.effective_reach();

    // First expansion builds the cache; its freshly rolled segments are kept
    // in hand so the chosen ones are not re-simulated within this call.
    let mut in_hand: Option<Vec<TrajectorySegment>> = None;
    if matches!(tree.actions[node_id], ActionState::Unknown) {
        match reachable_set(sim, &pose, &reach, rng) {
            Ok(segments) => {
                tree.actions[node_id] = ActionState::Ready {
                    proposals: segments.iter().map(|s| s.proposal).collect(),
                    unused: (0..segments.len()).collect(),
                };
                in_hand = Some(segments);
            }
            Err(_) => {
                tree.actions[node_id] = ActionState::Exhausted;
                return Vec::new();
            }
        }
    }

    let picks: Vec<usize> = match &mut tree.actions[node_id] {
        ActionState::Ready { unused, .. } if !unused.is_empty() => {
            if params.ablation == Ablation::ExpandAll {
                std::mem::take(unused)
            } else {
                let at = rng.gen_range(0..unused.len());
                vec![unused.remove(at)]
            }
        }
        _ => Vec::new(),
    };
    if picks.is_empty() {
        tree.actions[node_id] = ActionState::Exhausted;
        return Vec::new();
    }

    let mut new_ids = Vec::new();
    for j in picks {
        let segment = match &in_hand {
            Some(segments) => segments[j].clone(),
            // A later visit re-rolls the cached proposal; the rollout is
            // deterministic, so this reproduces the original segment.
            None => {
                let proposal = match &tree.actions[node_id] {
                    ActionState::Ready { proposals, .. } => proposals[j],
                    _ => unreachable!("picks only come from Ready"),
                };
                pd_rollout(sim, &pose, &proposal, &reach)
            }
        };
        new_ids.extend(insert_segment_nodes(sim, tree, node_id, &segment, params, &reach));
    }
    if matches!(&tree.actions[node_id], ActionState::Ready { unused, .. } if unused.is_empty()) {
        tree.actions[node_id] = ActionState::Exhausted;
    }
    new_ids
}

#[derive(Clone, Copy, Debug)]
pub struct PlanMetrics {
    pub success: bool,
    pub wall_time: f64,
    /// Solution segment count; each segment starts with one fingertip
    /// repositioning, so this counts contact-mode changes.
    pub modes: usize,
    /// Total tree nodes at return time.
    pub branches: usize,
    /// Movement of the object center summed along the solution.
    pub path_length: f64,
    /// Loop iterations executed before stopping; when a wall-clock cap
    /// fires, this is the machine-dependent stopping index.
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Plan {
    /// Solution segments in execution order; consecutive segments chain
    /// through identical settled object poses. Empty on failure and for a
    /// start that already satisfies the goal.
    pub segments: Vec<TrajectorySegment>,
    pub metrics: PlanMetrics,
}

#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub plan: Plan,
    pub tree: Tree,
}

/// Path length of the object center across action states and settle tail.
pub fn com_path_length(segment: &TrajectorySegment) -> f64 {
    let mut total = 0.0;
    let mut prev = Vec2::new(segment.states[0].object_pose.x, segment.states[0].object_pose.y);
    for c in segment.states.iter().skip(1).chain(segment.settle_tail.iter()) {
        let p = Vec2::new(c.object_pose.x, c.object_pose.y);
        total += (p - prev).norm();
        prev = p;
    }
    total + (Vec2::new(segment.settled_pose.x, segment.settled_pose.y) - prev).norm()
}

fn cut_segment(sim: &Sim, full: TrajectorySegment, k: usize, reach: &ReachParams) -> TrajectorySegment {
    if k + 1 == full.states.len() {
        return full;
    }
    let states = full.states[..=k].to_vec();
    let setpoints = full.setpoints[..k].to_vec();
    let (settle_tail, settled_pose) = run_settle_tail(sim, &states[k], reach);
    TrajectorySegment {
        proposal: full.proposal,
        states,
        setpoints,
        settle_tail,
        settled_pose,
        termination_reason: full.termination_reason,
    }
}

fn finish(
    sim: &Sim,
    tree: Tree,
    goal_id: usize,
    params: &PlannerParams,
    t0: &Instant,
    iterations: usize,
) -> PlanOutcome {
    let reach = params.effective_reach();
    let mut chain = vec![goal_id];
    while let Some(p) = tree.nodes[*chain.last().unwrap()].parent {
        chain.push(p);
    }
    chain.reverse();

    let mut segments = Vec::with_capacity(chain.len() - 1);
    for pair in chain.windows(2) {
        let child = &tree.nodes[pair[1]];
        let record = &tree.edges[child.edge.expect("non-root nodes carry an edge")];
        let full = pd_rollout(sim, &record.from_pose, &record.proposal, &reach);
        segments.push(cut_segment(sim, full, child.index, &reach));
    }

    let metrics = PlanMetrics {
        success: true,
        wall_time: t0.elapsed().as_secs_f64(),
        modes: segments.len(),
        branches: tree.nodes.len(),
        path_length: segments.iter().map(com_path_length).sum(),
        iterations,
    };
    PlanOutcome { plan: Plan { segments, metrics }, tree }
}

/// Grow the tree until a node satisfies the goal or a cap trips. A failed
/// run still reports the tree statistics gathered so far.
pub fn plan(
    sim: &Sim,
    start: &Configuration,
    params: &PlannerParams,
    rng: &mut impl Rng,
) -> Result<PlanOutcome, PlanError> {
    params.validate()?;
    let t0 = Instant::now();
    let mut tree = Tree::new(start.object_pose);
    if goal_test(&tree.nodes[0], params) {
        let metrics = PlanMetrics {
            success: true,
            wall_time: t0.elapsed().as_secs_f64(),
            modes: 0,
            branches: 1,
            path_length: 0.0,
            iterations: 0,
        };
        return Ok(PlanOutcome { plan: Plan { segments: Vec::new(), metrics }, tree });
    }

    let mut iterations = 0;
    while iterations < params.iteration_cap && t0.elapsed().as_secs_f64() < params.wall_clock_cap {
        iterations += 1;
        let target = sample_subgoal(params, rng);
        let Some(node_id) = nearest_active(&tree, &target) else {
            break;
        };
        for id in steer(sim, &mut tree, node_id, params, rng) {
            if goal_test(&tree.nodes[id], params) {
                return Ok(finish(sim, tree, id, params, &t0, iterations));
            }
        }
    }

    let metrics = PlanMetrics {
        success: false,
        wall_time: t0.elapsed().as_secs_f64(),
        modes: 0,
        branches: tree.nodes.len(),
        path_length: 0.0,
        iterations,
    };
    Ok(PlanOutcome { plan: Plan { segments: Vec::new(), metrics }, tree })
}

pub(crate) fn pose_close(a: &Pose2, b: &Pose2, tol: f64) -> bool {
    (a.x - b.x).abs() <= tol && (a.y - b.y).abs() <= tol && (a.theta - b.theta).abs() <= tol
}

pub(crate) fn config_close(a: &Configuration, b: &Configuration, tol: f64) -> bool {
    (a.finger_pos - b.finger_pos).amax() <= tol
        && (a.finger_vel - b.finger_vel).amax() <= tol
        && pose_close(&a.object_pose, &b.object_pose, tol)
        && (a.object_vel - b.object_vel).amax() <= tol
}

/// Index of the first stored entry the re-simulation fails to reproduce:
/// action states first, then tail states, then the polished pose.
fn first_state_mismatch(stored: &TrajectorySegment, re: &TrajectorySegment) -> Option<usize> {
    let n = stored.states.len().max(re.states.len());
    for i in 0..n {
        match (stored.states.get(i), re.states.get(i)) {
            (Some(a), Some(b)) if config_close(a, b, 1e-9) => {}
            _ => return Some(i),
        }
    }
    let nt = stored.settle_tail.len().max(re.settle_tail.len());
    for i in 0..nt {
        match (stored.settle_tail.get(i), re.settle_tail.get(i)) {
            (Some(a), Some(b)) if config_close(a, b, 1e-9) => {}
            _ => return Some(stored.states.len() + i),
        }
    }
    if !pose_close(&stored.settled_pose, &re.settled_pose, 1e-9) {
        return Some(stored.states.len() + stored.settle_tail.len());
    }
    None
}

/// Re-execute every stored segment from its own first state and verify the
/// logs match within 1e-9, including the chaining between segments. Returns
/// the final settled pose.
pub fn replay(sim: &Sim, plan: &Plan, reach: &ReachParams) -> Result<Pose2, PlanError> {
    if plan.segments.is_empty() {
        return Err(PlanError::NothingToReplay);
    }
    let mut prev_end: Option<Pose2> = None;
    for (si, segment) in plan.segments.iter().enumerate() {
        if let Some(end) = prev_end {
            if !pose_close(&end, &segment.states[0].object_pose, 1e-9) {
                return Err(PlanError::ReplayDivergence { segment: si, index: 0 });
            }
        }
        let re = replay_segment(sim, segment, reach);
        if let Some(index) = first_state_mismatch(segment, &re) {
            return Err(PlanError::ReplayDivergence { segment: si, index });
        }
        prev_end = Some(segment.settled_pose);
    }
    Ok(prev_end.expect("at least one segment"))
}
