//! Serial revolute chains: forward kinematics, geometric Jacobian and
//! damped-least-squares inverse kinematics.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{InertiaError, LinkInertia};
use crate::geometry::{orientation_error, position_error, RigidTransform, Rotation};

/// Joint-space vector (positions, velocities, accelerations or torques).
pub type JointVector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("a chain needs at least one joint")]
    Empty,
    #[error("joint `{joint}`: lower limit {lower} must be below upper limit {upper}")]
    Limits { joint: String, lower: f64, upper: f64 },
    #[error("joint `{joint}`: velocity and acceleration limits must be positive")]
    RateLimits { joint: String },
    #[error("joint `{joint}`: rotation axis must be non-zero and finite")]
    Axis { joint: String },
    #[error("joint `{joint}`: {source}")]
    Inertia { joint: String, source: InertiaError },
    #[error("joint `{joint}`: link radius must be non-negative")]
    LinkRadius { joint: String },
    #[error("trigger joint index {index} is out of range for {n} joints")]
    TriggerIndex { index: usize, n: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(
        "inverse kinematics did not converge after {iterations} iterations \
         (position error {position_error:.3e} m, orientation error {orientation_error:.3e} rad)"
    )]
    NotConverged { iterations: usize, position_error: f64, orientation_error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    /// rad
    pub lower: f64,
    /// rad
    pub upper: f64,
    /// rad/s
    pub velocity: f64,
    /// rad/s^2
    pub acceleration: f64,
}

impl JointLimits {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.lower && q <= self.upper
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Parent link frame to this joint's frame at q = 0.
    pub origin: RigidTransform,
    /// Unit rotation axis expressed in the joint frame.
    pub axis: Vector3<f64>,
    pub limits: JointLimits,
    /// Inertia of the link driven by this joint, in the joint frame.
    pub inertia: LinkInertia,
    /// Capsule radius of the link segment, for collision checking.
    pub link_radius: f64,
}

/// An immutable serial chain of revolute joints ending in a tool frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    name: String,
    joints: Vec<Joint>,
    tool: RigidTransform,
    trigger_joint: Option<usize>,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        mut joints: Vec<Joint>,
        tool: RigidTransform,
        trigger_joint: Option<usize>,
    ) -> Result<Self, ChainError> {
        if joints.is_empty() {
            return Err(ChainError::Empty);
        }
        for j in &mut joints {
            let n = j.axis.norm();
            if !(n.is_finite() && n > 0.0) {
                return Err(ChainError::Axis { joint: j.name.clone() });
            }
            j.axis /= n;
            let l = &j.limits;
            if !(l.lower < l.upper) {
                return Err(ChainError::Limits {
                    joint: j.name.clone(),
                    lower: l.lower,
                    upper: l.upper,
                });
            }
            if !(l.velocity > 0.0 && l.acceleration > 0.0) {
                return Err(ChainError::RateLimits { joint: j.name.clone() });
            }
            if !(j.link_radius >= 0.0) {
                return Err(ChainError::LinkRadius { joint: j.name.clone() });
            }
            j.inertia
                .validate()
                .map_err(|source| ChainError::Inertia { joint: j.name.clone(), source })?;
        }
        if let Some(index) = trigger_joint {
            if index >= joints.len() {
                return Err(ChainError::TriggerIndex { index, n: joints.len() });
            }
        }
        Ok(Self { name: name.into(), joints, tool, trigger_joint })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn tool(&self) -> &RigidTransform {
        &self.tool
    }

    pub fn trigger_joint(&self) -> Option<usize> {
        self.trigger_joint
    }

    pub fn limits(&self) -> impl Iterator<Item = &JointLimits> {
        self.joints.iter().map(|j| &j.limits)
    }

    pub fn check_dimension(&self, v: &JointVector) -> Result<(), KinematicsError> {
        if v.len() == self.dof() {
            Ok(())
        } else {
            Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: v.len() })
        }
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof() && self.limits().zip(q.iter()).all(|(l, &v)| l.contains(v))
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector::from_iterator(q.len(), self.limits().zip(q.iter()).map(|(l, &v)| l.clamp(v)))
    }

    /// Midpoint of every joint range.
    pub fn mid_configuration(&self) -> JointVector {
        JointVector::from_iterator(self.dof(), self.limits().map(|l| 0.5 * (l.lower + l.upper)))
    }

    pub fn forward_kinematics(&self, q: &JointVector) -> Result<ForwardKinematics, KinematicsError> {
        self.check_dimension(q)?;
        let mut frames = Vec::with_capacity(self.dof());
        let mut current = RigidTransform::identity();
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            current = current
                * joint.origin
                * RigidTransform::from_rotation(Rotation::from_axis_angle(&joint.axis, angle));
            frames.push(current);
        }
        let end_effector = current * self.tool;
        Ok(ForwardKinematics { link_frames: frames, end_effector })
    }

    /// Base-to-end-effector pose only.
    pub fn end_effector_pose(&self, q: &JointVector) -> Result<RigidTransform, KinematicsError> {
        Ok(self.forward_kinematics(q)?.end_effector)
    }

    /// Geometric Jacobian at the end-effector in the base frame. Rows 0..3
    /// are linear velocity, rows 3..6 angular velocity.
    pub fn jacobian(&self, q: &JointVector) -> Result<DMatrix<f64>, KinematicsError> {
        let fk = self.forward_kinematics(q)?;
        Ok(self.jacobian_from(&fk))
    }

    fn jacobian_from(&self, fk: &ForwardKinematics) -> DMatrix<f64> {
        let p_ee = fk.end_effector.translation;
        let mut jac = DMatrix::zeros(6, self.dof());
        for (i, (joint, frame)) in self.joints.iter().zip(&fk.link_frames).enumerate() {
            let z = frame.rotation * joint.axis;
            let linear = z.cross(&(p_ee - frame.translation));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&linear);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        jac
    }

    /// Damped-least-squares IK seeded from `seed`, projecting onto the joint
    /// limits after every step.
    pub fn solve_ik(
        &self,
        target: &RigidTransform,
        seed: &JointVector,
        options: &IkOptions,
    ) -> Result<IkSolution, IkError> {
        self.check_dimension(seed)?;
        let mut q = self.clamp_to_limits(seed);
        let damping2 = options.damping * options.damping;
        let mut iterations = 0;
        loop {
            let fk = self.forward_kinematics(&q)?;
            let ee = &fk.end_effector;
            let e_p = position_error(&target.translation, &ee.translation);
            let e_r = orientation_error(&target.rotation, &ee.rotation);
            if e_p <= options.position_tolerance && e_r <= options.orientation_tolerance {
                return Ok(IkSolution { q, iterations, position_error: e_p, orientation_error: e_r });
            }
            if iterations >= options.max_iterations {
                return Err(IkError::NotConverged {
                    iterations,
                    position_error: e_p,
                    orientation_error: e_r,
                });
            }
            let dp = target.translation - ee.translation;
            let dr = (target.rotation * ee.rotation.transpose()).log();
            let err = Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z);

            let jac = self.jacobian_from(&fk);
            let jjt: Matrix6<f64> = (&jac * jac.transpose()).fixed_view::<6, 6>(0, 0).into_owned()
                + Matrix6::identity() * damping2;
            let Some(chol) = jjt.cholesky() else {
                return Err(IkError::NotConverged {
                    iterations,
                    position_error: e_p,
                    orientation_error: e_r,
                });
            };
            let y = chol.solve(&err);
            let mut step = jac.transpose() * DVector::from_column_slice(y.as_slice());
            let largest = step.amax();
            if largest > options.max_step {
                step *= options.max_step / largest;
            }
            q = self.clamp_to_limits(&(q + step));
            iterations += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardKinematics {
    /// Base-to-link frame of every joint, after its rotation.
    pub link_frames: Vec<RigidTransform>,
    pub end_effector: RigidTransform,
}

impl ForwardKinematics {
    /// Link segments as (start, end) points in the base frame: joint i's
    /// origin to joint i+1's origin, the last one ending at the tool frame.
    pub fn link_segments(&self) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let mut out = Vec::with_capacity(self.link_frames.len());
        for (i, frame) in self.link_frames.iter().enumerate() {
            let end = match self.link_frames.get(i + 1) {
                Some(next) => next.translation,
                None => self.end_effector.translation,
            };
            out.push((frame.translation, end));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkOptions {
    pub damping: f64,
    /// Largest per-joint change in one iteration, rad.
    pub max_step: f64,
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub orientation_tolerance: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 1e-2,
            max_step: 0.2,
            max_iterations: 200,
            position_tolerance: 1e-4,
            orientation_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    pub iterations: usize,
    pub position_error: f64,
    pub orientation_error: f64,
}

/// Planar chain of revolute joints sharing `axis`, each link `lengths[i]`
/// long along its local x, with a point mass `tip_masses[i]` at the link tip.
///
/// Useful as a reference geometry: its kinematics and dynamics have simple
/// closed forms.
pub fn planar_chain(lengths: &[f64], axis: Vector3<f64>, tip_masses: &[f64]) -> KinematicChain {
    assert_eq!(lengths.len(), tip_masses.len());
    let joints = lengths
        .iter()
        .zip(tip_masses)
        .enumerate()
        .map(|(i, (&len, &mass))| Joint {
            name: format!("j{}", i + 1),
            origin: if i == 0 {
                RigidTransform::identity()
            } else {
                RigidTransform::from_translation(lengths[i - 1], 0.0, 0.0)
            },
            axis,
            limits: JointLimits {
                lower: -std::f64::consts::PI,
                upper: std::f64::consts::PI,
                velocity: 1.0,
                acceleration: 2.0,
            },
            inertia: LinkInertia::point_mass(mass, Vector3::new(len, 0.0, 0.0)),
            link_radius: 0.02,
        })
        .collect();
    let tool = RigidTransform::from_translation(*lengths.last().unwrap(), 0.0, 0.0);
    KinematicChain::new("planar", joints, tool, None).expect("planar chain is valid")
}
