//! Rigid planar dynamics of one fingertip and one free object among static
//! obstacles, with compliant contact and velocity-regularized friction.
//!
//! Generalized coordinates are `[finger x, finger y, object x, object y,
//! object theta]`. Each step solves for the end-of-step velocity with contact
//! and actuation forces evaluated at the end-of-step state (damped Newton),
//! then advances positions with the solved velocity. Evaluating the stiff
//! contact law at the old state is unstable at the control timestep, so the
//! implicit solve is required, not an optimization.

use crate::geometry::{self, perp, ContactQuery, Pose2, Shape, ShapeError, Vec2};
use nalgebra::{SMatrix, SVector, Vector3};
use thiserror::Error;

pub type VecQ = SVector<f64, 5>;
pub type Vec3 = Vector3<f64>;
type Mat5 = SMatrix<f64, 5, 5>;

pub const DIM: usize = 5;
const MAX_CONTACT_POINTS: usize = 80;
const NEWTON_MAX_ITERS: usize = 60;
/// Convergence target for the velocity solve, in velocity units.
const NEWTON_TOL: f64 = 1e-11;
/// Finite-difference step for the velocity Jacobian; a power of two so the
/// contact-free (linear) case solves exactly.
const FD_VEL_STEP: f64 = 1.0 / (1u64 << 26) as f64;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("actuation must be finite")]
    NonFiniteActuation,
    #[error("state became non-finite")]
    NonFiniteState,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{field} must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("{field} must be non-negative, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("object shape: {0}")]
    ObjectShape(ShapeError),
    #[error("environment shape {index}: {source}")]
    EnvironmentShape { index: usize, source: ShapeError },
}

/// Compliant contact constants shared by every contact pair.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    /// Normal stiffness, N/m of penetration.
    pub stiffness: f64,
    /// Rate gain on the penetration velocity, s/m.
    pub dissipation: f64,
    /// Slip speed scale regularizing Coulomb friction, m/s.
    pub slip_velocity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams { stiffness: 1e4, dissipation: 100.0, slip_velocity: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvShape {
    pub shape: Shape,
    pub pose: Pose2,
}

/// Immutable description of one planning world: a single dynamic object, a
/// dynamic fingertip disc, and static environment shapes. The object body
/// frame origin is its center of mass. Gravity acts along -y.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub object_shape: Shape,
    pub object_mass: f64,
    pub object_inertia: f64,
    pub fingertip_radius: f64,
    pub fingertip_mass: f64,
    pub gravity: f64,
    /// Coulomb coefficient for object-environment pairs, also used for
    /// fingertip-environment pairs.
    pub friction_object_env: f64,
    pub friction_object_finger: f64,
    pub contact: ContactParams,
    pub environment: Vec<EnvShape>,
}

impl SceneModel {
    pub fn validate(&self) -> Result<(), SceneError> {
        let positive = [
            ("object_mass", self.object_mass),
            ("object_inertia", self.object_inertia),
            ("fingertip_radius", self.fingertip_radius),
            ("fingertip_mass", self.fingertip_mass),
            ("contact stiffness", self.contact.stiffness),
            ("contact slip_velocity", self.contact.slip_velocity),
        ];
        for (field, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SceneError::NonPositive { field, value });
            }
        }
        let non_negative = [
            ("gravity", self.gravity),
            ("friction_object_env", self.friction_object_env),
            ("friction_object_finger", self.friction_object_finger),
            ("contact dissipation", self.contact.dissipation),
        ];
        for (field, value) in non_negative {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(SceneError::Negative { field, value });
            }
        }
        self.object_shape.validate().map_err(SceneError::ObjectShape)?;
        for (index, env) in self.environment.iter().enumerate() {
            env.shape
                .validate()
                .map_err(|source| SceneError::EnvironmentShape { index, source })?;
        }
        Ok(())
    }

    /// Diagonal of the (constant) generalized mass matrix.
    pub fn mass_matrix(&self) -> VecQ {
        VecQ::from([
            self.fingertip_mass,
            self.fingertip_mass,
            self.object_mass,
            self.object_mass,
            self.object_inertia,
        ])
    }

    /// Velocity-independent bias forces `k` in `M qdd + k = B u + contacts`;
    /// gravity contributes +m g on the vertical rows.
    pub fn bias(&self) -> VecQ {
        VecQ::from([
            0.0,
            self.fingertip_mass * self.gravity,
            0.0,
            self.object_mass * self.gravity,
            0.0,
        ])
    }

    /// Static penetration of the object resting on a flat support.
    pub fn equilibrium_penetration(&self) -> f64 {
        self.object_mass * self.gravity / self.contact.stiffness
    }

    pub fn object_bounding_radius(&self) -> f64 {
        self.object_shape.bounding_radius()
    }

    /// Mixed translational/rotational object speed used by rest detection.
    pub fn object_speed(&self, c: &Configuration) -> f64 {
        let l = self.object_bounding_radius();
        (c.object_vel.x.powi(2)
            + c.object_vel.y.powi(2)
            + (l * c.object_vel.z).powi(2))
        .sqrt()
    }
}

/// Full kinematic state of the fingertip and the object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Configuration {
    pub finger_pos: Vec2,
    pub finger_vel: Vec2,
    pub object_pose: Pose2,
    /// `[vx, vy, omega]` of the object center of mass.
    pub object_vel: Vec3,
}

impl Configuration {
    pub fn at_rest(finger_pos: Vec2, object_pose: Pose2) -> Configuration {
        Configuration {
            finger_pos,
            finger_vel: Vec2::zeros(),
            object_pose,
            object_vel: Vec3::zeros(),
        }
    }

    pub fn velocity(&self) -> VecQ {
        VecQ::from([
            self.finger_vel.x,
            self.finger_vel.y,
            self.object_vel.x,
            self.object_vel.y,
            self.object_vel.z,
        ])
    }

    /// Positions advanced by `w * dt`, velocities replaced by `w`.
    pub fn advanced(&self, w: &VecQ, dt: f64) -> Configuration {
        Configuration {
            finger_pos: self.finger_pos + Vec2::new(w[0], w[1]) * dt,
            finger_vel: Vec2::new(w[0], w[1]),
            object_pose: Pose2::new(
                self.object_pose.x + w[2] * dt,
                self.object_pose.y + w[3] * dt,
                self.object_pose.theta + w[4] * dt,
            ),
            object_vel: Vec3::new(w[2], w[3], w[4]),
        }
    }

    pub fn zero_velocities(&self) -> Configuration {
        Configuration {
            finger_vel: Vec2::zeros(),
            object_vel: Vec3::zeros(),
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.finger_pos.iter().all(|v| v.is_finite())
            && self.finger_vel.iter().all(|v| v.is_finite())
            && self.object_pose.x.is_finite()
            && self.object_pose.y.is_finite()
            && self.object_pose.theta.is_finite()
            && self.object_vel.iter().all(|v| v.is_finite())
    }

    /// Velocity of the object material point currently at world point `p`.
    pub fn object_point_velocity(&self, p: Vec2) -> Vec2 {
        let r = p - self.object_pose.translation();
        Vec2::new(self.object_vel.x, self.object_vel.y) + perp(r) * self.object_vel.z
    }
}

/// Fingertip actuation for one step. The PD form is evaluated inside the
/// implicit velocity solve; feeding the equivalent precomputed force is
/// unstable at these gains and timesteps.
#[derive(Clone, Copy, Debug)]
pub enum Actuation {
    None,
    Force(Vec2),
    Pd { setpoint: Vec2, kp: f64, kd: f64 },
}

impl Actuation {
    fn eval(&self, finger_pos: Vec2, finger_vel: Vec2) -> Vec2 {
        match self {
            Actuation::None => Vec2::zeros(),
            Actuation::Force(f) => *f,
            Actuation::Pd { setpoint, kp, kd } => {
                pd_fingertip_force(finger_pos, finger_vel, *setpoint, *kp, *kd)
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Actuation::None => true,
            Actuation::Force(f) => f.x.is_finite() && f.y.is_finite(),
            Actuation::Pd { setpoint, kp, kd } => {
                setpoint.x.is_finite() && setpoint.y.is_finite() && kp.is_finite() && kd.is_finite()
            }
        }
    }
}

/// Stabilizing fingertip PD law `u = -kp (q_a - p_w) - kd qd_a`.
pub fn pd_fingertip_force(finger_pos: Vec2, finger_vel: Vec2, setpoint: Vec2, kp: f64, kd: f64) -> Vec2 {
    -(finger_pos - setpoint) * kp - finger_vel * kd
}

/// Identifies which body pair produced a contact point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContactPair {
    ObjectEnv(usize),
    FingerObject,
    FingerEnv(usize),
}

/// One force-carrying contact point. `normal` points from the second body of
/// the pair into the first (object for ObjectEnv, finger otherwise).
#[derive(Clone, Copy, Debug)]
pub struct ContactForce {
    pub pair: ContactPair,
    pub point: Vec2,
    pub normal: Vec2,
    /// Normal force magnitude applied to the first body, never negative.
    pub normal_force: f64,
    /// Friction along `perp(normal)`, applied to the first body.
    pub tangent_force: f64,
    pub distance: f64,
}

impl ContactForce {
    pub fn force(&self) -> Vec2 {
        self.normal * self.normal_force + perp(self.normal) * self.tangent_force
    }
}

#[derive(Clone, Debug, Default)]
pub struct ContactForceSet {
    pub points: Vec<ContactForce>,
}

impl ContactForceSet {
    /// Generalized force contributed by all points, given the object center
    /// of mass the torque arms are measured from.
    pub fn generalized(&self, object_com: Vec2) -> VecQ {
        let mut g = VecQ::zeros();
        for cf in &self.points {
            accumulate_generalized(&mut g, cf.pair, cf.point, cf.force(), object_com);
        }
        g
    }
}

fn accumulate_generalized(g: &mut VecQ, pair: ContactPair, point: Vec2, force: Vec2, com: Vec2) {
    let torque = |p: Vec2, f: Vec2| (p.x - com.x) * f.y - (p.y - com.y) * f.x;
    match pair {
        ContactPair::ObjectEnv(_) => {
            g[2] += force.x;
            g[3] += force.y;
            g[4] += torque(point, force);
        }
        ContactPair::FingerObject => {
            g[0] += force.x;
            g[1] += force.y;
            g[2] -= force.x;
            g[3] -= force.y;
            g[4] -= torque(point, force);
        }
        ContactPair::FingerEnv(_) => {
            g[0] += force.x;
            g[1] += force.y;
        }
    }
}

#[derive(Clone, Copy)]
struct ContactPointEval {
    pair: ContactPair,
    point: Vec2,
    normal: Vec2,
    normal_force: f64,
    tangent_force: f64,
    distance: f64,
}

/// Which bodies take part in a solve.
#[derive(Clone, Copy, Debug, PartialEq)]
enum SolveMode {
    /// Finger and object both dynamic.
    Full,
    /// Finger moves at a prescribed velocity; only the object is solved.
    PinnedFinger(Vec2),
    /// Finger absent from the world; only the object is solved.
    NoFinger,
}

pub struct StepResult {
    pub config: Configuration,
    pub forces: ContactForceSet,
    /// Actuation force realized during the step.
    pub applied_force: Vec2,
    pub newton_iters: u32,
    /// Final solve residual in velocity units.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FingerMode {
    Held,
    Removed,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettleParams {
    pub dt: f64,
    /// Mixed-norm object speed below which the object counts as resting.
    pub v_rest: f64,
    /// Required consecutive resting time.
    pub t_rest: f64,
    pub t_max: f64,
    pub kp: f64,
    pub kd: f64,
}

impl Default for SettleParams {
    fn default() -> Self {
        SettleParams { dt: 1e-3, v_rest: 1e-3, t_rest: 0.1, t_max: 2.0, kp: 5000.0, kd: 500.0 }
    }
}

pub struct SettleOutcome {
    pub config: Configuration,
    /// False when the settle loop hit `t_max` before resting; the
    /// configuration is still usable.
    pub rested: bool,
    pub steps: u32,
    /// Static force residual after polishing, N.
    pub static_residual: f64,
}

/// Simulator bound to one scene. Environment polygons are baked into world
/// coordinates at construction.
pub struct Sim<'a> {
    pub scene: &'a SceneModel,
    env_world: Vec<(Shape, Pose2)>,
}

impl<'a> Sim<'a> {
    pub fn new(scene: &'a SceneModel) -> Sim<'a> {
        let env_world = scene
            .environment
            .iter()
            .map(|e| match &e.shape {
                Shape::Polygon { vertices } => {
                    let baked = vertices.iter().map(|v| e.pose.transform(*v)).collect();
                    (Shape::Polygon { vertices: baked }, Pose2::IDENTITY)
                }
                Shape::Circle { .. } => (e.shape.clone(), e.pose),
            })
            .collect();
        Sim { scene, env_world }
    }

    fn finger_shape(&self) -> Shape {
        Shape::Circle { radius: self.scene.fingertip_radius }
    }

    /// Closest finger-object witness pair at a configuration.
    pub fn finger_object_distance(&self, c: &Configuration) -> ContactQuery {
        geometry::signed_distance(
            &self.finger_shape(),
            &Pose2::new(c.finger_pos.x, c.finger_pos.y, 0.0),
            &self.scene.object_shape,
            &c.object_pose,
        )
    }

    /// Smallest signed distance from a finger placed at `center` to any
    /// environment shape; +inf for an empty environment.
    pub fn finger_env_distance(&self, center: Vec2) -> f64 {
        let finger = self.finger_shape();
        let pose = Pose2::new(center.x, center.y, 0.0);
        self.env_world
            .iter()
            .map(|(shape, env_pose)| geometry::signed_distance(&finger, &pose, shape, env_pose).distance)
            .fold(f64::INFINITY, f64::min)
    }

    fn eval_contact_points(
        &self,
        c: &Configuration,
        mode: SolveMode,
        out: &mut [ContactPointEval; MAX_CONTACT_POINTS],
    ) -> usize {
        let mut n = 0;
        let object_pose = c.object_pose;
        let finger_pose = Pose2::new(c.finger_pos.x, c.finger_pos.y, 0.0);
        let finger_shape = self.finger_shape();
        let with_finger = !matches!(mode, SolveMode::NoFinger);
        let finger_vel = match mode {
            SolveMode::PinnedFinger(v) => v,
            _ => c.finger_vel,
        };
        let p = &self.scene.contact;

        // A multi-point manifold shares the normal stiffness in proportion to
        // depth, so a flat resting contact carries the same total force as a
        // single point and point count transitions stay continuous.
        let mut push = |pair: ContactPair, q: &ContactQuery, mu: f64, weight: f64| {
            let depth = -q.distance;
            if depth <= 0.0 || weight <= 0.0 {
                return;
            }
            let point = (q.point_a + q.point_b) * 0.5;
            let v_rel = match pair {
                ContactPair::ObjectEnv(_) => c.object_point_velocity(point),
                ContactPair::FingerObject => finger_vel - c.object_point_velocity(point),
                ContactPair::FingerEnv(_) => finger_vel,
            };
            let pen_rate = -q.normal.dot(&v_rel);
            let factor = (1.0 + p.dissipation * pen_rate).max(0.0);
            let normal_force = weight * p.stiffness * depth * factor;
            if normal_force <= 0.0 {
                return;
            }
            let slip = perp(q.normal).dot(&v_rel);
            let tangent_force = -mu * normal_force * (slip / p.slip_velocity).tanh();
            if n < MAX_CONTACT_POINTS {
                out[n] = ContactPointEval {
                    pair,
                    point,
                    normal: q.normal,
                    normal_force,
                    tangent_force,
                    distance: q.distance,
                };
                n += 1;
            }
        };

        for (i, (shape, pose)) in self.env_world.iter().enumerate() {
            let manifold = geometry::contact_manifold(&self.scene.object_shape, &object_pose, shape, pose);
            let points = manifold.as_slice();
            let depth_sum: f64 = points.iter().map(|q| (-q.distance).max(0.0)).sum();
            for q in points {
                let weight = if depth_sum > 0.0 { (-q.distance).max(0.0) / depth_sum } else { 0.0 };
                push(ContactPair::ObjectEnv(i), q, self.scene.friction_object_env, weight);
            }
        }
        if with_finger {
            let q = geometry::signed_distance(
                &finger_shape,
                &finger_pose,
                &self.scene.object_shape,
                &object_pose,
            );
            push(ContactPair::FingerObject, &q, self.scene.friction_object_finger, 1.0);
            for (i, (shape, pose)) in self.env_world.iter().enumerate() {
                let q = geometry::signed_distance(&finger_shape, &finger_pose, shape, pose);
                push(ContactPair::FingerEnv(i), &q, self.scene.friction_object_env, 1.0);
            }
        }
        n
    }

    /// Contact force law evaluated at the given configuration, reporting only
    /// force-carrying points.
    pub fn contact_forces(&self, c: &Configuration) -> ContactForceSet {
        let mut buf = [ContactPointEval {
            pair: ContactPair::FingerObject,
            point: Vec2::zeros(),
            normal: Vec2::zeros(),
            normal_force: 0.0,
            tangent_force: 0.0,
            distance: 0.0,
        }; MAX_CONTACT_POINTS];
        let n = self.eval_contact_points(c, SolveMode::Full, &mut buf);
        ContactForceSet {
            points: buf[..n]
                .iter()
                .map(|e| ContactForce {
                    pair: e.pair,
                    point: e.point,
                    normal: e.normal,
                    normal_force: e.normal_force,
                    tangent_force: e.tangent_force,
                    distance: e.distance,
                })
                .collect(),
        }
    }

    /// Generalized contact force (no gravity, no actuation) at `c`.
    pub fn generalized_contact_force(&self, c: &Configuration) -> VecQ {
        let mut buf = [ContactPointEval {
            pair: ContactPair::FingerObject,
            point: Vec2::zeros(),
            normal: Vec2::zeros(),
            normal_force: 0.0,
            tangent_force: 0.0,
            distance: 0.0,
        }; MAX_CONTACT_POINTS];
        let n = self.eval_contact_points(c, SolveMode::Full, &mut buf);
        let com = c.object_pose.translation();
        let mut g = VecQ::zeros();
        for e in &buf[..n] {
            let force = e.normal * e.normal_force + perp(e.normal) * e.tangent_force;
            accumulate_generalized(&mut g, e.pair, e.point, force, com);
        }
        g
    }

    /// Momentum residual of the implicit velocity equation, scaled to
    /// velocity units row-wise. Rows outside the solved set are pinned.
    fn velocity_residual(
        &self,
        start: &Configuration,
        w: &VecQ,
        act: &Actuation,
        dt: f64,
        mode: SolveMode,
    ) -> VecQ {
        let adv = start.advanced(w, dt);
        let mut buf = [ContactPointEval {
            pair: ContactPair::FingerObject,
            point: Vec2::zeros(),
            normal: Vec2::zeros(),
            normal_force: 0.0,
            tangent_force: 0.0,
            distance: 0.0,
        }; MAX_CONTACT_POINTS];
        let n = self.eval_contact_points(&adv, mode, &mut buf);
        let com = adv.object_pose.translation();
        let mut g = VecQ::zeros();
        for e in &buf[..n] {
            let force = e.normal * e.normal_force + perp(e.normal) * e.tangent_force;
            accumulate_generalized(&mut g, e.pair, e.point, force, com);
        }
        let u = act.eval(adv.finger_pos, Vec2::new(w[0], w[1]));
        g[0] += u.x;
        g[1] += u.y;
        g -= self.scene.bias();

        let m = self.scene.mass_matrix();
        let v0 = start.velocity();
        let mut r = VecQ::zeros();
        for i in 0..DIM {
            r[i] = (w[i] - v0[i]) - dt * g[i] / m[i];
        }
        match mode {
            SolveMode::Full => {}
            SolveMode::PinnedFinger(vf) => {
                r[0] = w[0] - vf.x;
                r[1] = w[1] - vf.y;
            }
            SolveMode::NoFinger => {
                r[0] = w[0];
                r[1] = w[1];
            }
        }
        r
    }

    fn solve_velocity(
        &self,
        start: &Configuration,
        act: &Actuation,
        dt: f64,
        mode: SolveMode,
    ) -> (VecQ, u32, f64) {
        let mut w = start.velocity();
        match mode {
            SolveMode::PinnedFinger(vf) => {
                w[0] = vf.x;
                w[1] = vf.y;
            }
            SolveMode::NoFinger => {
                w[0] = 0.0;
                w[1] = 0.0;
            }
            SolveMode::Full => {}
        }
        let mut r = self.velocity_residual(start, &w, act, dt, mode);
        let mut err = r.amax();
        let mut jac: Option<Mat5> = None;
        let mut iters = 0u32;
        while err > NEWTON_TOL && (iters as usize) < NEWTON_MAX_ITERS {
            let j = jac.get_or_insert_with(|| {
                let mut m = Mat5::zeros();
                for col in 0..DIM {
                    let mut wp = w;
                    wp[col] += FD_VEL_STEP;
                    let rp = self.velocity_residual(start, &wp, act, dt, mode);
                    m.set_column(col, &((rp - r) / FD_VEL_STEP));
                }
                m
            });
            let delta = match j.lu().solve(&(-r)) {
                Some(d) => d,
                None => break,
            };
            // Backtracking line search on the residual norm.
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..20 {
                let w_try = w + delta * alpha;
                let r_try = self.velocity_residual(start, &w_try, act, dt, mode);
                let err_try = r_try.amax();
                if err_try < err {
                    w = w_try;
                    r = r_try;
                    // Slow progress means a stale Jacobian; rebuild it.
                    if err_try > 0.2 * err || alpha < 1.0 {
                        jac = None;
                    }
                    err = err_try;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            iters += 1;
            if !accepted {
                if jac.is_some() && err > NEWTON_TOL {
                    // Retry once with a fresh Jacobian before giving up.
                    jac = None;
                    continue;
                }
                break;
            }
        }
        (w, iters, err)
    }

    fn step_mode(
        &self,
        c: &Configuration,
        act: &Actuation,
        dt: f64,
        mode: SolveMode,
    ) -> Result<StepResult, DynamicsError> {
        if !act.is_finite() {
            return Err(DynamicsError::NonFiniteActuation);
        }
        let (w, newton_iters, residual) = self.solve_velocity(c, act, dt, mode);
        let next = c.advanced(&w, dt);
        if !next.is_finite() {
            return Err(DynamicsError::NonFiniteState);
        }
        let mut buf = [ContactPointEval {
            pair: ContactPair::FingerObject,
            point: Vec2::zeros(),
            normal: Vec2::zeros(),
            normal_force: 0.0,
            tangent_force: 0.0,
            distance: 0.0,
        }; MAX_CONTACT_POINTS];
        let n = self.eval_contact_points(&next, mode, &mut buf);
        let forces = ContactForceSet {
            points: buf[..n]
                .iter()
                .map(|e| ContactForce {
                    pair: e.pair,
                    point: e.point,
                    normal: e.normal,
                    normal_force: e.normal_force,
                    tangent_force: e.tangent_force,
                    distance: e.distance,
                })
                .collect(),
        };
        let applied_force = act.eval(next.finger_pos, next.finger_vel);
        Ok(StepResult { config: next, forces, applied_force, newton_iters, residual })
    }

    /// Advance the full system by one step.
    pub fn step(&self, c: &Configuration, act: &Actuation, dt: f64) -> Result<StepResult, DynamicsError> {
        self.step_mode(c, act, dt, SolveMode::Full)
    }

    /// Advance with the fingertip moving at a prescribed velocity. Contact
    /// forces act on the object; the fingertip is kinematic. Used as the
    /// brute-force probe the velocity-map tests compare against.
    pub fn step_pinned_finger(
        &self,
        c: &Configuration,
        finger_vel: Vec2,
        dt: f64,
    ) -> Result<StepResult, DynamicsError> {
        self.step_mode(c, &Actuation::None, dt, SolveMode::PinnedFinger(finger_vel))
    }

    /// Advance the object alone as if the fingertip were removed.
    pub fn step_no_finger(&self, c: &Configuration, dt: f64) -> Result<StepResult, DynamicsError> {
        self.step_mode(c, &Actuation::None, dt, SolveMode::NoFinger)
    }

    /// Run the object (and optionally the PD-held fingertip) to rest, then
    /// polish the resting pose to a static force balance and zero the
    /// velocities.
    pub fn settle(&self, c: &Configuration, mode: FingerMode, p: &SettleParams) -> SettleOutcome {
        let act = match mode {
            FingerMode::Held => Actuation::Pd { setpoint: c.finger_pos, kp: p.kp, kd: p.kd },
            FingerMode::Removed => Actuation::None,
        };
        let max_steps = (p.t_max / p.dt).round() as u32;
        let rest_steps = (p.t_rest / p.dt).round().max(1.0) as u32;
        let mut cur = *c;
        let mut consec = 0u32;
        let mut steps = 0u32;
        let mut rested = false;
        // Already static: skip the simulation loop and go straight to the
        // polish. Common for freshly placed grasps on settled objects.
        let initial = self.static_residual(c, &act, mode == FingerMode::Removed);
        let initial_obj = initial[2].abs().max(initial[3].abs()).max(initial[4].abs());
        if self.scene.object_speed(c) < p.v_rest
            && c.finger_vel.norm() < p.v_rest
            && initial_obj <= 1e-9
        {
            rested = true;
            let mut out = cur.zero_velocities();
            let static_residual = self.polish_equilibrium(&mut out, mode, &act);
            return SettleOutcome { config: out, rested, steps, static_residual };
        }
        while steps < max_steps {
            let result = match mode {
                FingerMode::Held => self.step_mode(&cur, &act, p.dt, SolveMode::Full),
                FingerMode::Removed => self.step_no_finger(&cur, p.dt),
            };
            cur = match result {
                Ok(r) => r.config,
                Err(_) => break,
            };
            steps += 1;
            if self.scene.object_speed(&cur) < p.v_rest {
                consec += 1;
                if consec >= rest_steps {
                    rested = true;
                    break;
                }
            } else {
                consec = 0;
            }
        }
        let mut out = cur.zero_velocities();
        let static_residual = self.polish_equilibrium(&mut out, mode, &act);
        SettleOutcome { config: out, rested, steps, static_residual }
    }

    /// Static force residual at zero velocity, N (force rows) and N*m
    /// (torque row): `bias - contacts - actuation`.
    pub fn static_residual(&self, c: &Configuration, act: &Actuation, mode_no_finger: bool) -> VecQ {
        let rest = c.zero_velocities();
        let mode = if mode_no_finger { SolveMode::NoFinger } else { SolveMode::Full };
        let mut buf = [ContactPointEval {
            pair: ContactPair::FingerObject,
            point: Vec2::zeros(),
            normal: Vec2::zeros(),
            normal_force: 0.0,
            tangent_force: 0.0,
            distance: 0.0,
        }; MAX_CONTACT_POINTS];
        let n = self.eval_contact_points(&rest, mode, &mut buf);
        let com = rest.object_pose.translation();
        let mut g = VecQ::zeros();
        for e in &buf[..n] {
            let force = e.normal * e.normal_force + perp(e.normal) * e.tangent_force;
            accumulate_generalized(&mut g, e.pair, e.point, force, com);
        }
        let u = act.eval(rest.finger_pos, Vec2::zeros());
        g[0] += u.x;
        g[1] += u.y;
        self.scene.bias() - g
    }

    /// Polish a near-rest configuration to a static force balance, with the
    /// finger either PD-held at its current position or absent. Returns the
    /// polished configuration (velocities zeroed) and the residual reached.
    pub fn polish_static(
        &self,
        c: &Configuration,
        mode: FingerMode,
        kp: f64,
        kd: f64,
    ) -> (Configuration, f64) {
        let act = match mode {
            FingerMode::Held => Actuation::Pd { setpoint: c.finger_pos, kp, kd },
            FingerMode::Removed => Actuation::None,
        };
        let mut out = c.zero_velocities();
        let residual = self.polish_equilibrium(&mut out, mode, &act);
        (out, residual)
    }

    /// Newton-polish the resting pose so the static residual vanishes; the
    /// settle loop alone only reaches the creep floor of the rate-damped
    /// contact law. Returns the final residual norm over the polished rows.
    fn polish_equilibrium(&self, c: &mut Configuration, mode: FingerMode, act: &Actuation) -> f64 {
        let no_finger = mode == FingerMode::Removed;
        let rows: &[usize] = if no_finger { &[2, 3, 4] } else { &[0, 1, 2, 3, 4] };
        let err_of = |cfg: &Configuration| -> (VecQ, f64) {
            let r = self.static_residual(cfg, act, no_finger);
            let e = rows.iter().map(|&i| r[i].abs()).fold(0.0, f64::max);
            (r, e)
        };
        let (mut r, mut err) = err_of(c);
        let mut total_shift = 0.0;
        let h = 1e-8;
        for _ in 0..40 {
            if err <= 1e-10 || total_shift > 5e-3 {
                break;
            }
            let k = rows.len();
            let mut jac = nalgebra::DMatrix::<f64>::zeros(k, k);
            for (cj, &col) in rows.iter().enumerate() {
                let mut probe = *c;
                match col {
                    0 => probe.finger_pos.x += h,
                    1 => probe.finger_pos.y += h,
                    2 => probe.object_pose.x += h,
                    3 => probe.object_pose.y += h,
                    _ => probe.object_pose.theta += h,
                }
                let rp = self.static_residual(&probe, act, no_finger);
                for (ci, &row) in rows.iter().enumerate() {
                    jac[(ci, cj)] = (rp[row] - r[row]) / h;
                }
            }
            let rhs = nalgebra::DVector::from_iterator(k, rows.iter().map(|&i| -r[i]));
            // The static residual can be flat along some directions (sliding
            // on level ground); a pseudo-inverse keeps the step out of them.
            let svd = jac.clone().svd(true, true);
            let cutoff = svd.singular_values.max() * 1e-10;
            let delta = match svd.solve(&rhs, cutoff) {
                Ok(d) => d,
                Err(_) => break,
            };
            let mut alpha: f64 = 1.0;
            // Never move more than a third of the rest penetration per trial;
            // the residual is only piecewise smooth.
            let max_step = (self.scene.equilibrium_penetration() / 3.0).max(1e-7);
            let dmax = delta.amax();
            if dmax * alpha > max_step {
                alpha = max_step / dmax;
            }
            let mut improved = false;
            for _ in 0..12 {
                let mut trial = *c;
                for (cj, &col) in rows.iter().enumerate() {
                    let d = delta[cj] * alpha;
                    match col {
                        0 => trial.finger_pos.x += d,
                        1 => trial.finger_pos.y += d,
                        2 => trial.object_pose.x += d,
                        3 => trial.object_pose.y += d,
                        _ => trial.object_pose.theta += d,
                    }
                }
                let (rt, et) = err_of(&trial);
                if et < err {
                    total_shift += delta.amax() * alpha;
                    *c = trial;
                    r = rt;
                    err = et;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        err
    }

    pub fn kinetic_energy(&self, c: &Configuration) -> f64 {
        0.5 * self.scene.fingertip_mass * c.finger_vel.norm_squared()
            + 0.5
                * self.scene.object_mass
                * (c.object_vel.x * c.object_vel.x + c.object_vel.y * c.object_vel.y)
            + 0.5 * self.scene.object_inertia * c.object_vel.z * c.object_vel.z
    }

    pub fn gravity_potential(&self, c: &Configuration) -> f64 {
        self.scene.gravity
            * (self.scene.fingertip_mass * c.finger_pos.y + self.scene.object_mass * c.object_pose.y)
    }
}

/// Work done by each force class across one logged step, reconstructed from
/// the reported contact set and the two bounding states. The totals satisfy
/// `delta_ke == conservative + dissipated + actuation` up to the solver
/// tolerance, which makes the audit an independent check on force reporting.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepWork {
    pub delta_ke: f64,
    pub gravity: f64,
    pub elastic: f64,
    pub damping: f64,
    pub friction: f64,
    pub actuation: f64,
}

impl StepWork {
    pub fn defect(&self) -> f64 {
        self.delta_ke - (self.gravity + self.elastic + self.damping + self.friction + self.actuation)
    }

    pub fn dissipated(&self) -> f64 {
        self.damping + self.friction
    }
}

/// Audit one step `before -> after` given the force set and actuation force
/// the step reported. Midpoint generalized velocities make the work identity
/// exact for the implicit update.
pub fn audit_step(
    scene: &SceneModel,
    before: &Configuration,
    after: &Configuration,
    forces: &ContactForceSet,
    applied_force: Vec2,
    dt: f64,
) -> StepWork {
    let sim = Sim::new(scene);
    let mut work = StepWork {
        delta_ke: sim.kinetic_energy(after) - sim.kinetic_energy(before),
        ..Default::default()
    };
    let mid_finger = (before.finger_vel + after.finger_vel) * 0.5;
    let mid_object = (before.object_vel + after.object_vel) * 0.5;
    work.gravity = -scene.gravity
        * (scene.fingertip_mass * mid_finger.y + scene.object_mass * mid_object.y)
        * dt;
    work.actuation = applied_force.dot(&mid_finger) * dt;

    let com = after.object_pose.translation();
    let object_mid = |p: Vec2| -> Vec2 {
        let r = p - com;
        Vec2::new(mid_object.x, mid_object.y) + perp(r) * mid_object.z
    };
    for cf in &forces.points {
        let v_rel = match cf.pair {
            ContactPair::ObjectEnv(_) => object_mid(cf.point),
            ContactPair::FingerObject => mid_finger - object_mid(cf.point),
            ContactPair::FingerEnv(_) => mid_finger,
        };
        let depth = (-cf.distance).max(0.0);
        // Reconstruct the within-manifold stiffness share from the reported
        // distances; single-point pairs have weight one.
        let depth_sum: f64 = forces
            .points
            .iter()
            .filter(|o| o.pair == cf.pair)
            .map(|o| (-o.distance).max(0.0))
            .sum();
        let weight = if depth_sum > 0.0 { depth / depth_sum } else { 0.0 };
        let elastic = weight * scene.contact.stiffness * depth;
        let w_total_normal = cf.normal_force * cf.normal.dot(&v_rel) * dt;
        let w_elastic = elastic * cf.normal.dot(&v_rel) * dt;
        work.elastic += w_elastic;
        work.damping += w_total_normal - w_elastic;
        work.friction += cf.tangent_force * perp(cf.normal).dot(&v_rel) * dt;
    }
    work
}
