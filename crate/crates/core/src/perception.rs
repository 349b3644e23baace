//! Simulated fiducial detection and the camera-to-base pose chain.
//!
//! Detection is not image based: the ground-truth tag pose is expressed in
//! the camera frame, gated by a range/field-of-view cone and perturbed by
//! Gaussian noise in the camera frame.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orientation_error, position_error, RigidTransform, Rotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("camera range must be positive")]
    Range,
    #[error("half field of view must lie in (0, pi/2]")]
    FieldOfView,
    #[error("noise standard deviations must be non-negative")]
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// End-effector to camera frame. The optical axis is the camera's +z.
    pub extrinsics: RigidTransform,
    /// m
    pub max_range: f64,
    /// rad
    pub half_fov: f64,
    /// Per-axis translation noise, m.
    #[serde(default)]
    pub sigma_position: f64,
    /// Rotation noise angle, rad.
    #[serde(default)]
    pub sigma_rotation: f64,
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.max_range > 0.0) {
            return Err(CameraError::Range);
        }
        if !(self.half_fov > 0.0 && self.half_fov <= std::f64::consts::FRAC_PI_2) {
            return Err(CameraError::FieldOfView);
        }
        if !(self.sigma_position >= 0.0 && self.sigma_rotation >= 0.0) {
            return Err(CameraError::Noise);
        }
        Ok(())
    }

    /// Base-to-camera pose for a given end-effector pose.
    pub fn camera_pose(&self, ee_pose: &RigidTransform) -> RigidTransform {
        ee_pose * &self.extrinsics
    }

    /// Whether a point given in the camera frame is inside the detection cone.
    pub fn sees(&self, p_cam: &Vector3<f64>) -> bool {
        if p_cam.z <= 0.0 || p_cam.norm() > self.max_range {
            return false;
        }
        let off_axis = (p_cam.x * p_cam.x + p_cam.y * p_cam.y).sqrt().atan2(p_cam.z);
        off_axis <= self.half_fov
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagDetection {
    pub tag_id: u32,
    /// Camera-to-tag pose.
    pub pose: RigidTransform,
    /// s
    pub timestamp: f64,
}

/// Detects the nearest visible tag among `tags` (id, base-frame tag pose).
///
/// Noise draws are skipped entirely when both sigmas are zero, so a
/// noise-free detection is the exact frame-chain result.
pub fn simulate_detection<R: Rng + ?Sized>(
    tags: &[(u32, RigidTransform)],
    camera: &CameraModel,
    ee_pose: &RigidTransform,
    timestamp: f64,
    rng: &mut R,
) -> Option<TagDetection> {
    let cam_inv = camera.camera_pose(ee_pose).inverse();
    let (tag_id, truth) = tags
        .iter()
        .map(|(id, pose)| (*id, &cam_inv * pose))
        .filter(|(_, rel)| camera.sees(&rel.translation))
        .min_by(|a, b| a.1.translation.norm().total_cmp(&b.1.translation.norm()))?;
    let pose = perturb(truth, camera.sigma_position, camera.sigma_rotation, rng);
    Some(TagDetection { tag_id, pose, timestamp })
}

fn perturb<R: Rng + ?Sized>(pose: RigidTransform, sigma_p: f64, sigma_r: f64, rng: &mut R) -> RigidTransform {
    if sigma_p == 0.0 && sigma_r == 0.0 {
        return pose;
    }
    let mut out = pose;
    if sigma_p > 0.0 {
        let n = Normal::new(0.0, sigma_p).expect("finite sigma");
        out.translation += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
    }
    if sigma_r > 0.0 {
        let axis = random_unit_vector(rng);
        let angle = Normal::new(0.0, sigma_r).expect("finite sigma").sample(rng);
        out.rotation = Rotation::from_axis_angle(&axis, angle) * out.rotation;
    }
    out
}

fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Base-frame pose of the tagged object frame:
/// base->end-effector * end-effector->camera * camera->tag.
pub fn object_pose_from_detection(
    ee_pose: &RigidTransform,
    camera: &CameraModel,
    detection: &TagDetection,
) -> RigidTransform {
    ee_pose * &camera.extrinsics * detection.pose
}

/// Desired end-effector pose: object pose composed with the grasp offset
/// expressed in the object frame.
pub fn grasp_pose_from_object(object_pose: &RigidTransform, grasp_offset: &RigidTransform) -> RigidTransform {
    object_pose * grasp_offset
}

/// When a stream of detections counts as a reliable pose estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliabilityPolicy {
    /// Consecutive per-tick detections required.
    pub consecutive: usize,
    /// Every estimate in the required run must lie this close to the run's
    /// mean, m / rad.
    pub max_position_spread: f64,
    pub max_orientation_spread: f64,
    /// Number of most recent estimates (of the current run) averaged into
    /// the reported object pose.
    pub fusion_window: usize,
}

impl Default for ReliabilityPolicy {
    fn default() -> Self {
        Self { consecutive: 1, max_position_spread: 0.005, max_orientation_spread: 0.02, fusion_window: 1 }
    }
}

/// Tracks the current run of consecutive base-frame object estimates.
#[derive(Debug, Clone)]
pub struct DetectionFilter {
    policy: ReliabilityPolicy,
    tag_id: Option<u32>,
    run: VecDeque<RigidTransform>,
}

impl DetectionFilter {
    pub fn new(policy: ReliabilityPolicy) -> Self {
        Self { policy, tag_id: None, run: VecDeque::new() }
    }

    pub fn policy(&self) -> &ReliabilityPolicy {
        &self.policy
    }

    pub fn observe(&mut self, tag_id: u32, estimate: RigidTransform) {
        if self.tag_id != Some(tag_id) {
            self.run.clear();
            self.tag_id = Some(tag_id);
        }
        self.run.push_back(estimate);
        let keep = self.policy.consecutive.max(self.policy.fusion_window).max(1);
        while self.run.len() > keep {
            self.run.pop_front();
        }
    }

    /// A tick without a detection breaks the run.
    pub fn miss(&mut self) {
        self.run.clear();
    }

    pub fn reset(&mut self) {
        self.run.clear();
        self.tag_id = None;
    }

    pub fn tag_id(&self) -> Option<u32> {
        self.tag_id
    }

    pub fn run_length(&self) -> usize {
        self.run.len()
    }

    pub fn is_reliable(&self) -> bool {
        let k = self.policy.consecutive.max(1);
        if self.run.len() < k {
            return false;
        }
        let recent: Vec<RigidTransform> = self.run.iter().rev().take(k).copied().collect();
        let mean = mean_pose(&recent);
        recent.iter().all(|p| {
            position_error(&p.translation, &mean.translation) <= self.policy.max_position_spread
                && orientation_error(&p.rotation, &mean.rotation) <= self.policy.max_orientation_spread
        })
    }

    /// Mean of the most recent `fusion_window` estimates.
    pub fn fused_estimate(&self) -> Option<RigidTransform> {
        if self.run.is_empty() {
            return None;
        }
        let w = self.policy.fusion_window.max(1);
        let recent: Vec<RigidTransform> = self.run.iter().rev().take(w).copied().collect();
        Some(mean_pose(&recent))
    }
}

/// Arithmetic mean translation and chordal mean rotation (projected back
/// onto SO(3)).
pub fn mean_pose(poses: &[RigidTransform]) -> RigidTransform {
    if poses.len() == 1 {
        return poses[0];
    }
    let n = poses.len() as f64;
    let t = poses.iter().fold(Vector3::zeros(), |acc, p| acc + p.translation) / n;
    let m = poses.iter().fold(Matrix3::zeros(), |acc, p| acc + p.rotation.matrix()) / n;
    RigidTransform::new(Rotation::from_matrix_unchecked(m).orthonormalized(), t)
}
