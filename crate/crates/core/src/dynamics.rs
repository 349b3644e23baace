//! Rigid-body inverse dynamics and the leader-arm torque command.
//!
//! The leader servo command is the sum of four parts: gravity (and
//! optionally full inverse-dynamics) compensation, friction compensation,
//! a restoring torque that pulls the leader back toward the follower near
//! its soft limits, and the trigger feedback torque.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{JointVector, KinematicChain, KinematicsError};

pub const STANDARD_GRAVITY: [f64; 3] = [0.0, 0.0, -9.81];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InertiaError {
    #[error("mass must be finite and non-negative, got {0}")]
    Mass(f64),
    #[error("inertia tensor is not symmetric")]
    Asymmetric,
    #[error("inertia tensor is not positive semidefinite")]
    NotPsd,
    #[error("principal moments violate the triangle inequality")]
    Triangle,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("{what} has {got} entries, chain has {expected} joints")]
    ParameterCount { what: &'static str, expected: usize, got: usize },
    #[error("mass matrix is not positive definite")]
    SingularMassMatrix,
}

/// Mass properties of one link, expressed in that link's joint frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkInertia {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// About the center of mass, kg m^2.
    pub inertia: Matrix3<f64>,
}

impl LinkInertia {
    pub fn point_mass(mass: f64, com: Vector3<f64>) -> Self {
        Self { mass, com, inertia: Matrix3::zeros() }
    }

    pub fn validate(&self) -> Result<(), InertiaError> {
        if !(self.mass.is_finite() && self.mass >= 0.0) {
            return Err(InertiaError::Mass(self.mass));
        }
        let scale = self.inertia.amax().max(1.0);
        if (self.inertia - self.inertia.transpose()).amax() > 1e-12 * scale {
            return Err(InertiaError::Asymmetric);
        }
        let eig = SymmetricEigen::new(self.inertia).eigenvalues;
        let tol = 1e-12 * scale;
        if eig.iter().any(|&l| l < -tol) {
            return Err(InertiaError::NotPsd);
        }
        let (a, b, c) = (eig[0], eig[1], eig[2]);
        if a + b < c - tol || a + c < b - tol || b + c < a - tol {
            return Err(InertiaError::Triangle);
        }
        Ok(())
    }
}

fn gravity_vector(g: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(g[0], g[1], g[2])
}

/// Recursive Newton-Euler inverse dynamics:
/// `M(q) qdd + C(q, qd) qd + g(q)`.
///
/// `gravity` is the gravitational acceleration in the base frame.
pub fn rnea(
    chain: &KinematicChain,
    q: &JointVector,
    qd: &JointVector,
    qdd: &JointVector,
    gravity: &[f64; 3],
) -> Result<JointVector, DynamicsError> {
    chain.check_dimension(qd)?;
    chain.check_dimension(qdd)?;
    let fk = chain.forward_kinematics(q)?;
    let n = chain.dof();
    let joints = chain.joints();

    let mut axes = Vec::with_capacity(n);
    let mut com_offsets = Vec::with_capacity(n);
    let mut forces = Vec::with_capacity(n);
    let mut moments = Vec::with_capacity(n);

    // Base acceleration of -g folds gravity into the inertial forces.
    let mut omega = Vector3::zeros();
    let mut alpha = Vector3::zeros();
    let mut accel = -gravity_vector(gravity);
    let mut origin = Vector3::zeros();

    for i in 0..n {
        let frame = &fk.link_frames[i];
        let joint = &joints[i];
        let p = frame.translation;
        let r = p - origin;
        accel += alpha.cross(&r) + omega.cross(&omega.cross(&r));

        let z = frame.rotation * joint.axis;
        let spin = z * qd[i];
        alpha += z * qdd[i] + omega.cross(&spin);
        omega += spin;

        let rc = frame.rotation * joint.inertia.com;
        let a_com = accel + alpha.cross(&rc) + omega.cross(&omega.cross(&rc));
        let rot = frame.rotation.matrix();
        let inertia_world = rot * joint.inertia.inertia * rot.transpose();

        forces.push(a_com * joint.inertia.mass);
        moments.push(inertia_world * alpha + omega.cross(&(inertia_world * omega)));
        axes.push(z);
        com_offsets.push(rc);
        origin = p;
    }

    let mut tau = JointVector::zeros(n);
    let mut f_child = Vector3::zeros();
    let mut n_child = Vector3::zeros();
    for i in (0..n).rev() {
        let p = fk.link_frames[i].translation;
        let lever = match fk.link_frames.get(i + 1) {
            Some(next) => next.translation - p,
            None => Vector3::zeros(),
        };
        let f = forces[i] + f_child;
        let m = moments[i] + n_child + com_offsets[i].cross(&forces[i]) + lever.cross(&f_child);
        tau[i] = axes[i].dot(&m);
        f_child = f;
        n_child = m;
    }
    Ok(tau)
}

/// Static holding torque `g(q)`.
pub fn gravity_torque(
    chain: &KinematicChain,
    q: &JointVector,
    gravity: &[f64; 3],
) -> Result<JointVector, DynamicsError> {
    let zero = JointVector::zeros(chain.dof());
    rnea(chain, q, &zero, &zero, gravity)
}

/// Velocity-product term `C(q, qd) qd`.
pub fn velocity_torque(
    chain: &KinematicChain,
    q: &JointVector,
    qd: &JointVector,
) -> Result<JointVector, DynamicsError> {
    let zero = JointVector::zeros(chain.dof());
    rnea(chain, q, qd, &zero, &[0.0; 3])
}

/// Joint-space inertia matrix, column j = rnea(q, 0, e_j) without gravity.
pub fn mass_matrix(chain: &KinematicChain, q: &JointVector) -> Result<DMatrix<f64>, DynamicsError> {
    let n = chain.dof();
    let zero = JointVector::zeros(n);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = JointVector::zeros(n);
        e[j] = 1.0;
        let col = rnea(chain, q, &zero, &e, &[0.0; 3])?;
        m.set_column(j, &col);
    }
    Ok(m)
}

/// Unforced joint accelerations: `M^-1 (tau - C qd - g)`.
pub fn forward_dynamics(
    chain: &KinematicChain,
    q: &JointVector,
    qd: &JointVector,
    tau: &JointVector,
    gravity: &[f64; 3],
) -> Result<JointVector, DynamicsError> {
    let zero = JointVector::zeros(chain.dof());
    let bias = rnea(chain, q, qd, &zero, gravity)?;
    let m = mass_matrix(chain, q)?;
    let chol = m.cholesky().ok_or(DynamicsError::SingularMassMatrix)?;
    Ok(chol.solve(&(tau - bias)))
}

/// Integrates an unactuated, frictionless chain under gravity with
/// classical RK4. Returns the (q, qd) state after every step.
pub fn passive_swing(
    chain: &KinematicChain,
    q0: &JointVector,
    qd0: &JointVector,
    gravity: &[f64; 3],
    dt: f64,
    steps: usize,
) -> Result<Vec<(JointVector, JointVector)>, DynamicsError> {
    let tau = JointVector::zeros(chain.dof());
    let accel = |q: &JointVector, qd: &JointVector| forward_dynamics(chain, q, qd, &tau, gravity);
    let mut q = q0.clone();
    let mut qd = qd0.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let k1v = qd.clone();
        let k1a = accel(&q, &qd)?;
        let k2v = &qd + &k1a * (0.5 * dt);
        let k2a = accel(&(&q + &k1v * (0.5 * dt)), &k2v)?;
        let k3v = &qd + &k2a * (0.5 * dt);
        let k3a = accel(&(&q + &k2v * (0.5 * dt)), &k3v)?;
        let k4v = &qd + &k3a * dt;
        let k4a = accel(&(&q + &k3v * dt), &k4v)?;
        q += (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (dt / 6.0);
        qd += (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (dt / 6.0);
        out.push((q.clone(), qd.clone()));
    }
    Ok(out)
}

/// Static/viscous friction coefficients of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFriction {
    /// N m
    pub k_static: f64,
    /// N m s/rad
    pub k_viscous: f64,
    /// rad/s, boundary between the static and viscous regimes
    pub velocity_threshold: f64,
}

impl JointFriction {
    /// Static branch below the threshold, viscous at or above it.
    pub fn torque(&self, qd: f64) -> f64 {
        if qd.abs() < self.velocity_threshold {
            self.k_static * signum0(qd)
        } else {
            self.k_viscous * qd
        }
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn friction_torque(params: &[JointFriction], qd: &JointVector) -> Result<JointVector, DynamicsError> {
    if params.len() != qd.len() {
        return Err(DynamicsError::ParameterCount {
            what: "friction table",
            expected: qd.len(),
            got: params.len(),
        });
    }
    Ok(JointVector::from_iterator(qd.len(), params.iter().zip(qd.iter()).map(|(p, &v)| p.torque(v))))
}

/// Gains of the leader restoring torque.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationGains {
    /// N m/rad, per joint
    pub kp: Vec<f64>,
    /// N m s/rad, per joint
    pub kd: Vec<f64>,
    /// N m/(rad s), per joint
    pub ki: Vec<f64>,
    /// rad; below this joint error no restoring torque is applied
    pub error_threshold: f64,
    /// rad; distance to a soft limit inside which the torque may activate
    pub limit_margin: f64,
    /// N m; bound on the magnitude of the integral contribution
    pub integral_clamp: f64,
}

impl CompensationGains {
    pub fn uniform(n: usize, kp: f64, kd: f64, ki: f64) -> Self {
        Self {
            kp: vec![kp; n],
            kd: vec![kd; n],
            ki: vec![ki; n],
            error_threshold: 0.05,
            limit_margin: 0.15,
            integral_clamp: 1.0,
        }
    }

    fn check(&self, n: usize) -> Result<(), DynamicsError> {
        for (what, v) in [("kp", &self.kp), ("kd", &self.kd), ("ki", &self.ki)] {
            if v.len() != n {
                return Err(DynamicsError::ParameterCount { what, expected: n, got: v.len() });
            }
        }
        Ok(())
    }
}

/// Integral memory of the restoring-torque controller. Owned by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackState {
    pub integral: JointVector,
}

impl FeedbackState {
    pub fn new(n: usize) -> Self {
        Self { integral: JointVector::zeros(n) }
    }
}

/// Restoring torque on the leader from the leader/follower joint error
/// `e = q_leader - q_follower`.
///
/// On a joint it is active only when `|e|` exceeds the error threshold and
/// the leader joint is within the limit margin of a soft limit; there it is
/// `-(kp e + kd qd_leader + ki integral(e))`, i.e. it pulls the leader toward
/// the follower. The integral resets whenever the joint is inactive.
pub fn joint_feedback_torque(
    chain: &KinematicChain,
    gains: &CompensationGains,
    q_leader: &JointVector,
    q_follower: &JointVector,
    qd_leader: &JointVector,
    dt: f64,
    state: &FeedbackState,
) -> Result<(JointVector, FeedbackState), DynamicsError> {
    let n = chain.dof();
    chain.check_dimension(q_leader)?;
    chain.check_dimension(q_follower)?;
    chain.check_dimension(qd_leader)?;
    gains.check(n)?;
    let mut tau = JointVector::zeros(n);
    let mut integral = state.integral.clone();
    for (i, limits) in chain.limits().enumerate() {
        let e = q_leader[i] - q_follower[i];
        let ql = q_leader[i];
        let near_limit =
            ql >= limits.upper - gains.limit_margin || ql <= limits.lower + gains.limit_margin;
        if e.abs() > gains.error_threshold && near_limit {
            let mut acc = integral[i] + e * dt;
            if gains.ki[i] > 0.0 {
                let bound = gains.integral_clamp / gains.ki[i];
                acc = acc.clamp(-bound, bound);
            }
            integral[i] = acc;
            tau[i] = -(gains.kp[i] * e + gains.kd[i] * qd_leader[i] + gains.ki[i] * acc);
        } else {
            integral[i] = 0.0;
        }
    }
    Ok((tau, FeedbackState { integral }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    /// N m/rad, return spring of the trigger
    pub stiffness: f64,
    /// N m, constant feedback while the gripper holds an object
    pub contact_torque: f64,
    /// rad, trigger angle at a full pull (trigger value 1.0)
    pub full_pull_angle: f64,
}

impl Default for TriggerParams {
    fn default() -> Self {
        Self { stiffness: 0.2, contact_torque: 0.1, full_pull_angle: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TriggerState {
    /// rad
    pub angle: f64,
    pub grasp_contact: bool,
}

/// Spring torque plus the contact offset, placed on the chain's trigger
/// joint and zero everywhere else (and everywhere when no trigger joint
/// is designated).
pub fn trigger_torque(chain: &KinematicChain, params: &TriggerParams, state: &TriggerState) -> JointVector {
    let mut tau = JointVector::zeros(chain.dof());
    if let Some(i) = chain.trigger_joint() {
        let contact = if state.grasp_contact { params.contact_torque } else { 0.0 };
        tau[i] = params.stiffness * state.angle + contact;
    }
    tau
}

/// The four leader torque components and their sum, N m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorqueStack {
    pub tau_grav: Vec<f64>,
    pub tau_fric: Vec<f64>,
    pub tau_joint: Vec<f64>,
    pub tau_trig: Vec<f64>,
    pub tau_total: Vec<f64>,
}

impl TorqueStack {
    pub fn from_parts(
        grav: &JointVector,
        fric: &JointVector,
        joint: &JointVector,
        trig: &JointVector,
    ) -> Self {
        let total = (0..grav.len()).map(|i| grav[i] + fric[i] + joint[i] + trig[i]).collect();
        Self {
            tau_grav: grav.iter().copied().collect(),
            tau_fric: fric.iter().copied().collect(),
            tau_joint: joint.iter().copied().collect(),
            tau_trig: trig.iter().copied().collect(),
            tau_total: total,
        }
    }

    pub fn zeros(n: usize) -> Self {
        let z = JointVector::zeros(n);
        Self::from_parts(&z, &z, &z, &z)
    }
}

/// Everything the leader torque needs besides the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderTorqueParams {
    pub friction: Vec<JointFriction>,
    pub gains: CompensationGains,
    pub trigger: TriggerParams,
    pub gravity: [f64; 3],
    /// Use the full inverse dynamics (with the measured velocity and
    /// acceleration) instead of the static gravity term.
    #[serde(default)]
    pub full_inverse_dynamics: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderState {
    pub q: JointVector,
    pub qd: JointVector,
    pub qdd: JointVector,
    pub q_follower: JointVector,
}

pub fn total_leader_torque(
    chain: &KinematicChain,
    state: &LeaderState,
    params: &LeaderTorqueParams,
    feedback: &FeedbackState,
    trigger: &TriggerState,
    dt: f64,
) -> Result<(TorqueStack, FeedbackState), DynamicsError> {
    let grav = if params.full_inverse_dynamics {
        rnea(chain, &state.q, &state.qd, &state.qdd, &params.gravity)?
    } else {
        gravity_torque(chain, &state.q, &params.gravity)?
    };
    let fric = friction_torque(&params.friction, &state.qd)?;
    let (joint, next) = joint_feedback_torque(
        chain,
        &params.gains,
        &state.q,
        &state.q_follower,
        &state.qd,
        dt,
        feedback,
    )?;
    let trig = trigger_torque(chain, &params.trigger, trigger);
    Ok((TorqueStack::from_parts(&grav, &fric, &joint, &trig), next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::planar_chain;
    use std::f64::consts::FRAC_PI_2;

    /// Two unit links in the x-z plane; positive angles raise the links.
    fn vertical_two_link() -> KinematicChain {
        planar_chain(&[1.0, 1.0], -Vector3::y(), &[1.0, 1.0])
    }

    fn jv(v: &[f64]) -> JointVector {
        JointVector::from_column_slice(v)
    }

    #[test]
    fn no_motion_no_gravity_is_zero() {
        let chain = vertical_two_link();
        let z = jv(&[0.0, 0.0]);
        let tau = rnea(&chain, &jv(&[0.4, -1.0]), &z, &z, &[0.0; 3]).unwrap();
        assert_eq!(tau, z);
    }

    #[test]
    fn two_link_holding_torque_horizontal() {
        let tau = gravity_torque(&vertical_two_link(), &jv(&[0.0, 0.0]), &STANDARD_GRAVITY).unwrap();
        assert!((tau[0] - 29.43).abs() < 1e-9, "{tau}");
        assert!((tau[1] - 9.81).abs() < 1e-9, "{tau}");
    }

    #[test]
    fn two_link_holding_torque_vertical() {
        let tau =
            gravity_torque(&vertical_two_link(), &jv(&[FRAC_PI_2, 0.0]), &STANDARD_GRAVITY).unwrap();
        assert!(tau.amax() < 1e-12, "{tau}");
    }

    #[test]
    fn pendulum_inertia() {
        let chain = planar_chain(&[0.7], Vector3::z(), &[2.5]);
        let m = mass_matrix(&chain, &jv(&[0.3])).unwrap();
        assert!((m[(0, 0)] - 2.5 * 0.49).abs() < 1e-12);
    }

    #[test]
    fn folded_arm_has_less_inertia() {
        let chain = vertical_two_link();
        let straight = mass_matrix(&chain, &jv(&[0.0, 0.0])).unwrap();
        let folded = mass_matrix(&chain, &jv(&[0.0, std::f64::consts::PI])).unwrap();
        assert!(folded[(0, 0)] < straight[(0, 0)]);
        // closed form: m1 l1^2 + m2 (l1^2 + l2^2 + 2 l1 l2 cos q2)
        assert!((straight[(0, 0)] - 5.0).abs() < 1e-12);
        assert!((folded[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn friction_branches() {
        let p = JointFriction { k_static: 0.5, k_viscous: 2.0, velocity_threshold: 0.01 };
        assert_eq!(p.torque(0.0), 0.0);
        assert_eq!(p.torque(0.005), 0.5);
        assert_eq!(p.torque(-0.005), -0.5);
        assert_eq!(p.torque(-0.5), -1.0);
        assert_eq!(p.torque(0.01), 2.0 * 0.01);
    }

    #[test]
    fn friction_parameter_count() {
        let p = JointFriction { k_static: 0.5, k_viscous: 2.0, velocity_threshold: 0.01 };
        assert!(friction_torque(&[p], &jv(&[0.0, 1.0])).is_err());
    }

    fn single_limit_chain() -> KinematicChain {
        planar_chain(&[1.0], Vector3::z(), &[1.0])
    }

    #[test]
    fn feedback_zero_without_error() {
        let chain = single_limit_chain();
        let gains = CompensationGains::uniform(1, 10.0, 1.0, 0.5);
        let q = jv(&[3.1]);
        let (tau, _) =
            joint_feedback_torque(&chain, &gains, &q, &q, &jv(&[0.0]), 0.01, &FeedbackState::new(1))
                .unwrap();
        assert_eq!(tau[0], 0.0);
    }

    #[test]
    fn feedback_proportional_near_upper_limit() {
        let chain = single_limit_chain();
        let gains = CompensationGains::uniform(1, 10.0, 0.0, 0.0);
        let upper = chain.joints()[0].limits.upper;
        let q_l = jv(&[upper - 0.05]);
        let q_b = jv(&[upper - 0.15]);
        let (tau, _) = joint_feedback_torque(
            &chain,
            &gains,
            &q_l,
            &q_b,
            &jv(&[0.0]),
            0.01,
            &FeedbackState::new(1),
        )
        .unwrap();
        // magnitude kp * e = 1.0, directed from the leader toward the follower
        assert!((tau[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn feedback_gated_mid_range() {
        let chain = single_limit_chain();
        let gains = CompensationGains::uniform(1, 10.0, 0.0, 0.0);
        let (tau, _) = joint_feedback_torque(
            &chain,
            &gains,
            &jv(&[0.1]),
            &jv(&[0.0]),
            &jv(&[0.0]),
            0.01,
            &FeedbackState::new(1),
        )
        .unwrap();
        assert_eq!(tau[0], 0.0);
    }

    #[test]
    fn feedback_integral_is_clamped_and_resets() {
        let chain = single_limit_chain();
        let mut gains = CompensationGains::uniform(1, 0.0, 0.0, 10.0);
        gains.integral_clamp = 0.2;
        let lower = chain.joints()[0].limits.lower;
        let mut state = FeedbackState::new(1);
        let mut tau = JointVector::zeros(1);
        for _ in 0..1000 {
            let out = joint_feedback_torque(
                &chain,
                &gains,
                &jv(&[lower]),
                &jv(&[lower + 0.3]),
                &jv(&[0.0]),
                0.01,
                &state,
            )
            .unwrap();
            tau = out.0;
            state = out.1;
        }
        assert!((tau[0] - 0.2).abs() < 1e-12, "{tau}");
        let (_, state) = joint_feedback_torque(
            &chain,
            &gains,
            &jv(&[0.0]),
            &jv(&[0.0]),
            &jv(&[0.0]),
            0.01,
            &state,
        )
        .unwrap();
        assert_eq!(state.integral[0], 0.0);
    }

    fn trigger_chain() -> KinematicChain {
        let base = planar_chain(&[0.3, 0.2, 0.1], Vector3::z(), &[0.1, 0.1, 0.1]);
        KinematicChain::new("leader", base.joints().to_vec(), *base.tool(), Some(2)).unwrap()
    }

    #[test]
    fn trigger_cases() {
        let chain = trigger_chain();
        let params = TriggerParams::default();
        let released = trigger_torque(&chain, &params, &TriggerState::default());
        assert_eq!(released, JointVector::zeros(3));
        let pulled =
            trigger_torque(&chain, &params, &TriggerState { angle: 0.3, grasp_contact: false });
        assert!((pulled[2] - 0.06).abs() < 1e-15);
        assert_eq!((pulled[0], pulled[1]), (0.0, 0.0));
        let holding =
            trigger_torque(&chain, &params, &TriggerState { angle: 0.3, grasp_contact: true });
        assert!((holding[2] - 0.16).abs() < 1e-15);
    }

    fn leader_params(n: usize) -> LeaderTorqueParams {
        LeaderTorqueParams {
            friction: vec![
                JointFriction { k_static: 0.05, k_viscous: 0.5, velocity_threshold: 0.1 };
                n
            ],
            gains: CompensationGains::uniform(n, 10.0, 1.0, 0.5),
            trigger: TriggerParams::default(),
            gravity: STANDARD_GRAVITY,
            full_inverse_dynamics: false,
        }
    }

    #[test]
    fn stack_all_zero_without_gravity() {
        let chain = trigger_chain();
        let mut params = leader_params(3);
        params.gravity = [0.0; 3];
        let z = JointVector::zeros(3);
        let state = LeaderState { q: z.clone(), qd: z.clone(), qdd: z.clone(), q_follower: z };
        let (stack, _) = total_leader_torque(
            &chain,
            &state,
            &params,
            &FeedbackState::new(3),
            &TriggerState::default(),
            0.01,
        )
        .unwrap();
        assert_eq!(stack, TorqueStack::zeros(3));
    }

    #[test]
    fn statics_stack_is_pure_gravity() {
        let chain = vertical_two_link();
        let params = leader_params(2);
        let q = jv(&[0.3, -0.2]);
        let z = JointVector::zeros(2);
        let state = LeaderState { q: q.clone(), qd: z.clone(), qdd: z, q_follower: q.clone() };
        let (stack, _) = total_leader_torque(
            &chain,
            &state,
            &params,
            &FeedbackState::new(2),
            &TriggerState::default(),
            0.01,
        )
        .unwrap();
        let g = gravity_torque(&chain, &q, &STANDARD_GRAVITY).unwrap();
        assert_eq!(stack.tau_total, g.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn stack_sums_exactly() {
        let chain = trigger_chain();
        let params = leader_params(3);
        let state = LeaderState {
            q: jv(&[3.1, 0.2, -3.05]),
            qd: jv(&[0.05, -0.4, 0.0]),
            qdd: jv(&[0.0; 3]),
            q_follower: jv(&[2.9, 0.1, -2.7]),
        };
        let (stack, _) = total_leader_torque(
            &chain,
            &state,
            &params,
            &FeedbackState::new(3),
            &TriggerState { angle: 0.2, grasp_contact: true },
            0.01,
        )
        .unwrap();
        for i in 0..3 {
            let sum = stack.tau_grav[i] + stack.tau_fric[i] + stack.tau_joint[i] + stack.tau_trig[i];
            assert_eq!(sum.to_bits(), stack.tau_total[i].to_bits());
        }
        assert_eq!((stack.tau_trig[0], stack.tau_trig[1]), (0.0, 0.0));
        assert!(stack.tau_joint[0] != 0.0 && stack.tau_joint[2] != 0.0);
    }

    #[test]
    fn inertia_validation() {
        let mut li = LinkInertia::point_mass(1.0, Vector3::zeros());
        assert!(li.validate().is_ok());
        li.mass = -1.0;
        assert_eq!(li.validate(), Err(InertiaError::Mass(-1.0)));
        let li = LinkInertia {
            mass: 1.0,
            com: Vector3::zeros(),
            inertia: Matrix3::from_diagonal(&Vector3::new(1.0, 0.1, 0.1)),
        };
        assert_eq!(li.validate(), Err(InertiaError::Triangle));
        let li = LinkInertia {
            mass: 1.0,
            com: Vector3::zeros(),
            inertia: Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0)),
        };
        assert_eq!(li.validate(), Err(InertiaError::NotPsd));
    }
}
