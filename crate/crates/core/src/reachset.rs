//! Approximate reachable sets for one object pose: sampled fingertip
//! placements on the object surface, candidate velocity directions from the
//! local velocity map, pull and obstruction filtering on the pooled
//! candidates, clustering to a proposal budget, weighted normalization, and
//! PD-tracked rollouts ending in a finger-free settle tail.

use crate::dynamics::{
    Actuation, Configuration, ContactPair, FingerMode, SettleParams, Sim, Vec3,
};
use crate::geometry::{Pose2, Vec2};
use crate::invdyn::{self, LinearizeParams};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("no valid grasp: all {attempts} placements collided")]
    NoValidGrasp { attempts: usize },
    #[error("empty reachable set: no feasible proposal survives")]
    EmptyReachableSet,
}

/// All knobs of reachable-set construction. Defaults follow the reference
/// experiment values; tests override freely.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReachParams {
    pub n_grasps: usize,
    pub n_clusters: usize,
    /// Relative spectral energy cutoff on the velocity map.
    pub c_eig: f64,
    /// Pull-test floor on <finger velocity, finger-to-object direction>.
    pub c_fingertip: f64,
    /// Obstruction floor on <object velocity, environment normal>.
    pub c_env: f64,
    /// Translational-to-rotational ratio above which the obstruction test
    /// applies.
    pub c_ratio: f64,
    /// Translational diagonal weight of the velocity metric.
    pub w_translation: f64,
    /// Rotational diagonal weight of the velocity metric.
    pub w_rotation: f64,
    /// Projection horizon for the tracking setpoint, s.
    pub t_proj: f64,
    /// Contact-point refresh period, s.
    pub t_track: f64,
    pub dt_action: f64,
    pub t_max: f64,
    /// Finger-object separation that counts as losing contact, m.
    pub d_contact: f64,
    /// Stop threshold as a fraction of the first-window speed.
    pub v_stopped: f64,
    /// Accumulated rotation bound, rad.
    pub phi_max: f64,
    pub kp: f64,
    pub kd: f64,
    /// Ceiling on the PD position term; the tracking setpoint is pulled
    /// toward the finger until respected. Raw setpoints stay unclamped.
    pub max_track_force: f64,
    /// Surface gap of sampled grasps, m.
    pub grasp_gap: f64,
    pub linearize: LinearizeParams,
    /// Settle-tail stepping and rest detection; `settle.dt` is the tail
    /// spacing.
    pub settle: SettleParams,
    /// Disable the pull/obstruction filter.
    pub skip_filter: bool,
    /// Disable clustering (every surviving proposal rolls out).
    pub skip_cluster: bool,
    /// Replace spectral directions with random ones of equal count.
    pub random_dirs: bool,
}

impl Default for ReachParams {
    fn default() -> Self {
        ReachParams {
            n_grasps: 100,
            n_clusters: 9,
            c_eig: 1e-6,
            c_fingertip: -0.1,
            c_env: -0.3,
            c_ratio: 0.05,
            w_translation: 40.5,
            w_rotation: 0.405,
            t_proj: 2.0,
            t_track: 0.4,
            dt_action: 1e-2,
            t_max: 10.0,
            d_contact: 1e-3,
            v_stopped: 1e-2,
            phi_max: 2.5,
            kp: 5000.0,
            kd: 500.0,
            max_track_force: 5.0,
            grasp_gap: 1e-9,
            linearize: LinearizeParams::default(),
            settle: SettleParams::default(),
            skip_filter: false,
            skip_cluster: false,
            random_dirs: false,
        }
    }
}

impl ReachParams {
    /// Guard against configurations the pipeline cannot execute.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.n_grasps == 0 {
            return Err("n_grasps must be at least 1");
        }
        if self.n_clusters == 0 {
            return Err("n_clusters must be at least 1");
        }
        let positive = [
            ("w_translation must be positive", self.w_translation),
            ("w_rotation must be positive", self.w_rotation),
            ("t_track must be positive", self.t_track),
            ("dt_action must be positive", self.dt_action),
            ("d_contact must be positive", self.d_contact),
            ("phi_max must be positive", self.phi_max),
            ("kp must be positive", self.kp),
            ("max_track_force must be positive", self.max_track_force),
            ("settle dt must be positive", self.settle.dt),
        ];
        for (msg, v) in positive {
            if !(v > 0.0) {
                return Err(msg);
            }
        }
        let non_negative = [
            ("c_eig must be non-negative", self.c_eig),
            ("kd must be non-negative", self.kd),
            ("v_stopped must be non-negative", self.v_stopped),
            ("grasp_gap must be non-negative", self.grasp_gap),
        ];
        for (msg, v) in non_negative {
            if !(v >= 0.0) {
                return Err(msg);
            }
        }
        if !(self.t_max >= self.dt_action) {
            return Err("t_max must cover at least one action step");
        }
        if !self.t_proj.is_finite() {
            return Err("t_proj must be finite");
        }
        Ok(())
    }

    /// Weighted squared distance between object velocities.
    pub fn w_dist2(&self, a: &Vec3, b: &Vec3) -> f64 {
        let d = a - b;
        self.w_translation * (d.x * d.x + d.y * d.y) + self.w_rotation * d.z * d.z
    }

    /// Weighted speed norm of an object velocity.
    pub fn w_norm(&self, v: &Vec3) -> f64 {
        (self.w_translation * (v.x * v.x + v.y * v.y) + self.w_rotation * v.z * v.z).sqrt()
    }
}

/// One fingertip placement against the object surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grasp {
    /// Contact point on the object, body frame.
    pub contact_point_body: Vec2,
    /// Unit outward surface normal at the contact point, body frame.
    pub outward_normal_body: Vec2,
    /// Fingertip center, world frame.
    pub finger_config: Vec2,
}

/// One candidate object velocity direction with its paired finger velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionProposal {
    pub grasp: Grasp,
    pub object_velocity: Vec3,
    pub finger_velocity: Vec2,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    ContactLost,
    Stopped,
    RotationLimit,
    Timeout,
}

/// One rolled-out push: action-rate states, the raw (unclamped) setpoint
/// schedule that produced them, and the finger-free settle tail ending in a
/// polished static pose.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    pub proposal: MotionProposal,
    /// States at `dt_action` spacing; the first is the query configuration.
    pub states: Vec<Configuration>,
    /// Raw tracking setpoint active during each action step.
    pub setpoints: Vec<Vec2>,
    /// States at `settle.dt` spacing after finger removal.
    pub settle_tail: Vec<Configuration>,
    /// Statically polished end pose.
    pub settled_pose: Pose2,
    pub termination_reason: TerminationReason,
}

/// Sample fingertip placements uniformly over the object surface at `q_o`,
/// rejecting any that penetrate the environment. Up to `10 n` attempts.
pub fn sample_grasps(
    sim: &Sim,
    q_o: &Pose2,
    n: usize,
    gap: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Grasp>, ReachError> {
    assert!(n >= 1, "need at least one grasp");
    let radius = sim.scene.fingertip_radius;
    let mut out = Vec::with_capacity(n);
    let max_attempts = 10 * n;
    let mut attempts = 0;
    while out.len() < n && attempts < max_attempts {
        attempts += 1;
        let u: f64 = rng.gen();
        let (p_body, n_body) = sim.scene.object_shape.surface_sample(u);
        let n_world = q_o.rotate(n_body);
        let center = q_o.transform(p_body) + n_world * (radius + gap);
        if sim.finger_env_distance(center) <= 0.0 {
            continue;
        }
        out.push(Grasp {
            contact_point_body: p_body,
            outward_normal_body: n_body,
            finger_config: center,
        });
    }
    if out.is_empty() {
        return Err(ReachError::NoValidGrasp { attempts });
    }
    Ok(out)
}

/// Settle the held-finger configuration, refresh the grasp witness, and turn
/// the local velocity map's singular directions into motion proposals.
/// Infeasible or immobile placements yield an empty list.
pub fn propose(sim: &Sim, q_o: &Pose2, grasp: &Grasp, params: &ReachParams) -> Vec<MotionProposal> {
    let start = Configuration::at_rest(grasp.finger_config, *q_o);
    let settle = SettleParams { kp: params.kp, kd: params.kd, ..params.settle };
    let settled = sim.settle(&start, FingerMode::Held, &settle);
    if !settled.rested {
        return Vec::new();
    }
    let base = settled.config;
    // The witness may have shifted during settling; store the live one.
    let witness = sim.finger_object_distance(&base);
    let pose = base.object_pose;
    let refreshed = Grasp {
        contact_point_body: pose.inverse_transform(witness.point_b),
        outward_normal_body: pose.rotate_inverse(witness.normal),
        finger_config: base.finger_pos,
    };
    let jac = match invdyn::linearize(sim, &base, &params.linearize) {
        Ok(j) => j,
        Err(_) => return Vec::new(),
    };
    let a = invdyn::a_matrix(&jac);
    invdyn::spectrum(&a, params.c_eig)
        .into_iter()
        .map(|m| MotionProposal {
            grasp: refreshed,
            object_velocity: m.object,
            finger_velocity: m.finger,
            sigma: m.sigma,
        })
        .collect()
}

/// Random-direction stand-in for `propose`: same settle, feasibility gate,
/// and per-grasp direction count as the spectral path, but directions drawn
/// uniformly. Keeps the comparison honest in the direction-ablation.
pub fn propose_random(
    sim: &Sim,
    q_o: &Pose2,
    grasp: &Grasp,
    params: &ReachParams,
    rng: &mut impl Rng,
) -> Vec<MotionProposal> {
    let start = Configuration::at_rest(grasp.finger_config, *q_o);
    let settle = SettleParams { kp: params.kp, kd: params.kd, ..params.settle };
    let settled = sim.settle(&start, FingerMode::Held, &settle);
    if !settled.rested {
        return Vec::new();
    }
    let base = settled.config;
    let witness = sim.finger_object_distance(&base);
    let pose = base.object_pose;
    let refreshed = Grasp {
        contact_point_body: pose.inverse_transform(witness.point_b),
        outward_normal_body: pose.rotate_inverse(witness.normal),
        finger_config: base.finger_pos,
    };
    let jac = match invdyn::linearize(sim, &base, &params.linearize) {
        Ok(j) => j,
        Err(_) => return Vec::new(),
    };
    let a = invdyn::a_matrix(&jac);
    let spectral = invdyn::spectrum(&a, params.c_eig);
    let mut out = Vec::with_capacity(spectral.len());
    for pair in spectral.chunks(2) {
        let sigma = pair[0].sigma;
        let object = random_unit3(rng);
        let finger = random_unit2(rng);
        out.push(MotionProposal {
            grasp: refreshed,
            object_velocity: object,
            finger_velocity: finger,
            sigma,
        });
        out.push(MotionProposal {
            grasp: refreshed,
            object_velocity: -object,
            finger_velocity: -finger,
            sigma,
        });
    }
    out
}

fn random_unit3(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn random_unit2(rng: &mut impl Rng) -> Vec2 {
    loop {
        let v = Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Active environment-into-object contact normals at the query pose.
fn environment_normals(sim: &Sim, q_o: &Pose2) -> Vec<Vec2> {
    // Finger parked far away so only object-environment pairs register.
    let probe = Configuration::at_rest(Vec2::new(1e6, 1e6), *q_o);
    sim.contact_forces(&probe)
        .points
        .iter()
        .filter(|p| matches!(p.pair, ContactPair::ObjectEnv(_)))
        .map(|p| p.normal)
        .collect()
}

/// Pull and obstruction filter. A proposal survives when its finger velocity
/// does not pull away from the object, and, if translation-dominant, its
/// object velocity does not drive into any active environment contact.
pub fn filter_proposals(
    sim: &Sim,
    q_o: &Pose2,
    proposals: Vec<MotionProposal>,
    params: &ReachParams,
) -> Vec<MotionProposal> {
    let env_normals = environment_normals(sim, q_o);
    let l_char = sim.scene.object_bounding_radius();
    proposals
        .into_iter()
        .filter(|p| {
            let to_object = -q_o.rotate(p.grasp.outward_normal_body);
            let fv = p.finger_velocity;
            let fv_norm = fv.norm();
            if fv_norm > 0.0 && fv.dot(&to_object) / fv_norm < params.c_fingertip {
                return false;
            }
            let v = p.object_velocity;
            let trans = Vec2::new(v.x, v.y);
            let trans_norm = trans.norm();
            let ratio = if v.z.abs() > 0.0 {
                trans_norm * l_char / v.z.abs()
            } else {
                f64::INFINITY
            };
            if ratio > params.c_ratio && trans_norm > 0.0 {
                let dir = trans / trans_norm;
                for n in &env_normals {
                    if dir.dot(n) < params.c_env {
                        return false;
                    }
                }
            }
            true
        })
        .collect()
}

/// K-means in the weighted velocity metric, returning the medoid of each
/// cluster. Inputs of size at most `k` pass through unchanged.
pub fn cluster(
    proposals: Vec<MotionProposal>,
    k: usize,
    params: &ReachParams,
    rng: &mut impl Rng,
) -> Vec<MotionProposal> {
    assert!(k >= 1, "need at least one cluster");
    if proposals.len() <= k {
        return proposals;
    }
    let points: Vec<Vec3> = proposals.iter().map(|p| p.object_velocity).collect();
    let n = points.len();

    // k-means++ seeding.
    let mut centers: Vec<Vec3> = Vec::with_capacity(k);
    centers.push(points[rng.gen_range(0..n)]);
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| params.w_dist2(p, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let dist = WeightedIndex::new(&d2).expect("non-negative weights");
            dist.sample(rng)
        } else {
            rng.gen_range(0..n)
        };
        let c = points[next];
        centers.push(c);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(params.w_dist2(p, &c));
        }
    }

    // Lloyd iterations to stable assignments.
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = params.w_dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            sums[assign[i]] += p;
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            } else {
                // Reseed an empty cluster at the point farthest from its own
                // center; deterministic and keeps k representatives.
                let far = (0..n)
                    .max_by(|&i, &j| {
                        params
                            .w_dist2(&points[i], &centers[assign[i]])
                            .partial_cmp(&params.w_dist2(&points[j], &centers[assign[j]]))
                            .unwrap()
                    })
                    .unwrap();
                centers[c] = points[far];
            }
        }
    }

    // Medoids: the member nearest its cluster center, lowest index on ties.
    let mut out = Vec::with_capacity(k);
    for (c, center) in centers.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if assign[i] != c {
                continue;
            }
            let d = params.w_dist2(p, center);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            out.push(proposals[i].clone());
        }
    }
    out
}

/// Scale object velocities to unit weighted norm; zero velocities drop.
pub fn normalize(proposals: Vec<MotionProposal>, params: &ReachParams) -> Vec<MotionProposal> {
    proposals
        .into_iter()
        .filter_map(|mut p| {
            let n = params.w_norm(&p.object_velocity);
            if n > 0.0 {
                p.object_velocity /= n;
                Some(p)
            } else {
                None
            }
        })
        .collect()
}

/// Pull the raw setpoint toward the finger until the position term of the PD
/// respects the force ceiling. Pure in the live state, so replays agree.
pub fn clamp_setpoint(raw: Vec2, finger_pos: Vec2, kp: f64, max_force: f64) -> Vec2 {
    let err = raw - finger_pos;
    let norm = err.norm();
    let cap = max_force / kp;
    if norm > cap {
        finger_pos + err * (cap / norm)
    } else {
        raw
    }
}

/// Roll out one proposal under contact-tracking PD control from the query
/// pose, then settle with the finger removed.
pub fn pd_rollout(
    sim: &Sim,
    q_o: &Pose2,
    proposal: &MotionProposal,
    params: &ReachParams,
) -> TrajectorySegment {
    let total_steps = (params.t_max / params.dt_action).round() as usize;
    let window = (params.t_track / params.dt_action).round().max(1.0) as usize;
    let v = proposal.object_velocity;

    let mut current = Configuration::at_rest(proposal.grasp.finger_config, *q_o);
    let mut states = Vec::with_capacity(total_steps + 1);
    let mut setpoints = Vec::with_capacity(total_steps);
    states.push(current);

    let mut raw_setpoint = Vec2::zeros();
    let mut reference_speed: Option<f64> = None;
    let mut accumulated_rotation = 0.0;
    let mut termination = TerminationReason::Timeout;

    for step in 0..total_steps {
        if step % window == 0 {
            // Refresh the tracked surface point: the finger may have slipped.
            let witness = sim.finger_object_distance(&current);
            let p_body = current.object_pose.inverse_transform(witness.point_b);
            let n_body = current.object_pose.rotate_inverse(witness.normal);
            let projected = Pose2::new(
                current.object_pose.x + v.x * params.t_proj,
                current.object_pose.y + v.y * params.t_proj,
                current.object_pose.theta + v.z * params.t_proj,
            );
            raw_setpoint =
                projected.transform(p_body) + projected.rotate(n_body) * sim.scene.fingertip_radius;
        }
        let setpoint = clamp_setpoint(
            raw_setpoint,
            current.finger_pos,
            params.kp,
            params.max_track_force,
        );
        let act = Actuation::Pd { setpoint, kp: params.kp, kd: params.kd };
        let result = match sim.step(&current, &act, params.dt_action) {
            Ok(r) => r,
            Err(_) => break,
        };
        let prev_theta = current.object_pose.theta;
        current = result.config;
        states.push(current);
        setpoints.push(raw_setpoint);
        accumulated_rotation += (current.object_pose.theta - prev_theta).abs();

        let distance = sim.finger_object_distance(&current).distance;
        if distance > params.d_contact {
            termination = TerminationReason::ContactLost;
            break;
        }
        // The stop test compares against the speed reached on the first
        // tracked step; a reference of zero makes the test vacuous.
        match reference_speed {
            None => reference_speed = Some(params.w_norm(&current.object_vel)),
            Some(reference) => {
                if params.w_norm(&current.object_vel) < params.v_stopped * reference {
                    termination = TerminationReason::Stopped;
                    break;
                }
            }
        }
        if accumulated_rotation > params.phi_max {
            termination = TerminationReason::RotationLimit;
            break;
        }
    }

    let (settle_tail, settled_pose) = run_settle_tail(sim, states.last().unwrap(), params);
    TrajectorySegment {
        proposal: proposal.clone(),
        states,
        setpoints,
        settle_tail,
        settled_pose,
        termination_reason: termination,
    }
}

/// Finger-free settle recorded at the tail spacing, then polished.
pub fn run_settle_tail(
    sim: &Sim,
    from: &Configuration,
    params: &ReachParams,
) -> (Vec<Configuration>, Pose2) {
    let p = &params.settle;
    let max_steps = (p.t_max / p.dt).round() as usize;
    let rest_steps = (p.t_rest / p.dt).round().max(1.0) as usize;
    let mut tail = Vec::new();
    // The object keeps its momentum into the settle; only the finger goes.
    let mut cur = *from;
    let mut consec = 0usize;
    for _ in 0..max_steps {
        match sim.step_no_finger(&cur, p.dt) {
            Ok(r) => cur = r.config,
            Err(_) => break,
        }
        tail.push(cur);
        if sim.scene.object_speed(&cur) < p.v_rest {
            consec += 1;
            if consec >= rest_steps {
                break;
            }
        } else {
            consec = 0;
        }
    }
    let (polished, _) = sim.polish_static(&cur, FingerMode::Removed, p.kp, p.kd);
    (tail, polished.object_pose)
}

/// Re-simulate a segment from its first state and recorded raw setpoints.
/// Deterministic solvers make this bit-exact against the original.
pub fn replay_segment(sim: &Sim, segment: &TrajectorySegment, params: &ReachParams) -> TrajectorySegment {
    let mut current = segment.states[0];
    let mut states = vec![current];
    for raw in &segment.setpoints {
        let setpoint = clamp_setpoint(*raw, current.finger_pos, params.kp, params.max_track_force);
        let act = Actuation::Pd { setpoint, kp: params.kp, kd: params.kd };
        let r = sim.step(&current, &act, params.dt_action).expect("replay step");
        current = r.config;
        states.push(current);
    }
    let (settle_tail, settled_pose) = run_settle_tail(sim, states.last().unwrap(), params);
    TrajectorySegment {
        proposal: segment.proposal.clone(),
        states,
        setpoints: segment.setpoints.clone(),
        settle_tail,
        settled_pose,
        termination_reason: segment.termination_reason,
    }
}

/// Full pipeline: grasps, pooled proposals, filter, cluster, normalize, and
/// concurrent rollouts merged in proposal order.
pub fn reachable_set(
    sim: &Sim,
    q_o: &Pose2,
    params: &ReachParams,
    rng: &mut impl Rng,
) -> Result<Vec<TrajectorySegment>, ReachError> {
    let grasps = sample_grasps(sim, q_o, params.n_grasps, params.grasp_gap, rng)?;

    let mut pooled: Vec<MotionProposal> = if params.random_dirs {
        // Random draws happen grasp by grasp on this thread so the stream of
        // RNG consumption is schedule-independent.
        let mut all = Vec::new();
        for g in &grasps {
            all.extend(propose_random(sim, q_o, g, params, rng));
        }
        all
    } else {
        grasps
            .par_iter()
            .map(|g| propose(sim, q_o, g, params))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };

    if !params.skip_filter {
        pooled = filter_proposals(sim, q_o, pooled, params);
    }
    if pooled.is_empty() {
        return Err(ReachError::EmptyReachableSet);
    }
    let selected = if params.skip_cluster {
        pooled
    } else {
        cluster(pooled, params.n_clusters, params, rng)
    };
    let ready = normalize(selected, params);
    if ready.is_empty() {
        return Err(ReachError::EmptyReachableSet);
    }

    let segments: Vec<TrajectorySegment> = ready
        .par_iter()
        .map(|p| pd_rollout(sim, q_o, p, params))
        .collect();
    Ok(segments)
}
