//! Inverse-dynamics residual of the object rows and its linearization into a
//! local fingertip-to-object velocity map.
//!
//! The residual `tau_ext = M qdd + k - contacts` reconstructs the generalized
//! force a motion implies beyond what contacts explain. Along logged
//! trajectories its object rows vanish and its finger rows equal the applied
//! actuation, which is the replay identity the tests pin down.
//!
//! Linearization folds positions, velocities, and accelerations into a single
//! velocity argument: `g(qdot) = h(q0 + qdot*dt_lin, qdot, qdot/dt_lin)`.
//! Forces are thereby evaluated at advanced positions, matching the implicit
//! stepper, so touching contacts contribute through the stiffness channel
//! instead of differentiating to zero.

use crate::dynamics::{Configuration, Sim, Vec3, VecQ};
use nalgebra::{Matrix3, SMatrix, Vector2};
use thiserror::Error;

pub type Mat32 = SMatrix<f64, 3, 2>;

#[derive(Debug, Error)]
pub enum InvdynError {
    #[error("infeasible linearization point: static object residual {residual:.3e} N")]
    InfeasibleBase { residual: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizeParams {
    /// Folding horizon tying positions and accelerations to velocities, s.
    pub dt_lin: f64,
    /// Central-difference step on velocity coordinates, m/s.
    pub eps_fd: f64,
    /// Maximum static object residual accepted as a linearization base, N.
    pub feasibility_tol: f64,
    /// Relative singular-value cutoff for the pseudoinverse.
    pub rcond: f64,
}

impl Default for LinearizeParams {
    fn default() -> Self {
        LinearizeParams { dt_lin: 1e-3, eps_fd: 1e-4, feasibility_tol: 1e-2, rcond: 1e-8 }
    }
}

/// Generalized force not explained by contacts: `M qdd + k - contacts`.
/// Finger rows recover actuation; object rows are the unactuated residual.
pub fn tau_ext(sim: &Sim, c: &Configuration, qdd: &VecQ) -> VecQ {
    let m = sim.scene.mass_matrix();
    let g = sim.generalized_contact_force(c);
    let k = sim.scene.bias();
    VecQ::from_fn(|i, _| m[i] * qdd[i] + k[i] - g[i])
}

/// Object rows of `tau_ext`.
pub fn residual_h(sim: &Sim, c: &Configuration, qdd: &VecQ) -> Vec3 {
    let t = tau_ext(sim, c, qdd);
    Vec3::new(t[2], t[3], t[4])
}

/// The folded residual `g(qdot)` at the base positions of `c0`.
fn folded_residual(sim: &Sim, c0: &Configuration, qdot: &VecQ, dt_lin: f64) -> Vec3 {
    let adv = c0.zero_velocities().advanced(qdot, dt_lin);
    let qdd = qdot / dt_lin;
    residual_h(sim, &adv, &qdd)
}

/// Central-difference Jacobians of the folded residual with respect to the
/// finger and object velocity blocks, taken at zero velocity.
#[derive(Clone, Debug)]
pub struct ResidualJacobians {
    pub wrt_finger: Mat32,
    pub wrt_object: Matrix3<f64>,
    /// Static residual at the base, N.
    pub base: Vec3,
    pub params: LinearizeParams,
}

pub fn linearize(
    sim: &Sim,
    c0: &Configuration,
    params: &LinearizeParams,
) -> Result<ResidualJacobians, InvdynError> {
    let base = folded_residual(sim, c0, &VecQ::zeros(), params.dt_lin);
    if base.norm() > params.feasibility_tol {
        return Err(InvdynError::InfeasibleBase { residual: base.norm() });
    }
    let mut cols = [Vec3::zeros(); 5];
    for (i, col) in cols.iter_mut().enumerate() {
        let mut plus = VecQ::zeros();
        plus[i] = params.eps_fd;
        let mut minus = VecQ::zeros();
        minus[i] = -params.eps_fd;
        let gp = folded_residual(sim, c0, &plus, params.dt_lin);
        let gm = folded_residual(sim, c0, &minus, params.dt_lin);
        *col = (gp - gm) / (2.0 * params.eps_fd);
    }
    Ok(ResidualJacobians {
        wrt_finger: Mat32::from_columns(&[cols[0], cols[1]]),
        wrt_object: Matrix3::from_columns(&[cols[2], cols[3], cols[4]]),
        base,
        params: *params,
    })
}

/// Local velocity map `v_object = A v_finger`, built as the constrained
/// solution of the linearized residual staying zero:
/// `A = -pinv(d g / d v_object) * (d g / d v_finger)`.
pub fn a_matrix(j: &ResidualJacobians) -> Mat32 {
    let svd = j.wrt_object.svd(true, true);
    let cutoff = svd.singular_values.max() * j.params.rcond;
    let pinv = svd
        .pseudo_inverse(cutoff)
        .expect("svd of 3x3 residual jacobian");
    -pinv * j.wrt_finger
}

/// One candidate direction of the velocity map: a unit object velocity, the
/// paired finger velocity direction, and the singular value relating them.
#[derive(Clone, Copy, Debug)]
pub struct VelocityMode {
    pub object: Vec3,
    pub finger: Vector2<f64>,
    pub sigma: f64,
}

/// Count of singular values of `a` surviving the relative energy cutoff
/// `sigma_i^2 >= c_eig * sigma_max^2`.
pub fn retained_count(a: &Mat32, c_eig: f64) -> usize {
    let svd = a.svd(false, false);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|s| s.powi(2) >= c_eig * smax.powi(2))
        .count()
}

/// Singular directions of the velocity map, strongest first, each emitted in
/// both signs. Directions are sign-canonicalized before expansion so the
/// output is deterministic under SVD sign ambiguity.
pub fn spectrum(a: &Mat32, c_eig: f64) -> Vec<VelocityMode> {
    let svd = a.svd(true, true);
    let sv = svd.singular_values;
    let smax = sv.max();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&i, &j| sv[j].partial_cmp(&sv[i]).unwrap());
    let mut modes = Vec::new();
    if !(smax > 0.0) {
        return modes;
    }
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    for &i in &order {
        let sigma = sv[i];
        if sigma.powi(2) < c_eig * smax.powi(2) {
            continue;
        }
        let mut object = Vec3::new(u[(0, i)], u[(1, i)], u[(2, i)]);
        let mut finger = Vector2::new(vt[(i, 0)], vt[(i, 1)]);
        // Canonical sign: the largest-magnitude object component is positive.
        let lead = object.iter().cloned().fold(0.0, |acc: f64, x| {
            if x.abs() > acc.abs() { x } else { acc }
        });
        if lead < 0.0 {
            object = -object;
            finger = -finger;
        }
        modes.push(VelocityMode { object, finger, sigma });
        modes.push(VelocityMode { object: -object, finger: -finger, sigma });
    }
    modes
}
