//! Kinematic follower simulation: trajectory execution, gripper, object
//! attachment, link-vs-obstacle collision checks and simulated detections.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orientation_error, position_error, RigidTransform};
use crate::kinematics::{ForwardKinematics, JointVector, KinematicChain, KinematicsError};
use crate::perception::{simulate_detection, CameraModel, TagDetection};
use crate::planner::JointTrajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapeError {
    #[error("shape `{0}` has a non-positive dimension")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere { radius: f64 },
    /// Axis-aligned in the base frame; the pose rotation is ignored.
    Box { half_extents: [f64; 3] },
    /// Axis along the pose's local z.
    Capsule { radius: f64, half_length: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionShape {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub pose: RigidTransform,
    #[serde(flatten)]
    pub kind: ShapeKind,
}

impl CollisionShape {
    pub fn validate(&self) -> Result<(), ShapeError> {
        let ok = match self.kind {
            ShapeKind::Sphere { radius } => radius > 0.0,
            ShapeKind::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            ShapeKind::Capsule { radius, half_length } => radius > 0.0 && half_length >= 0.0,
        };
        if ok && self.pose.is_finite() {
            Ok(())
        } else {
            Err(ShapeError::Dimension(self.name.clone()))
        }
    }

    /// Signed clearance between this shape and a capsule around segment
    /// `a`-`b` with radius `r`. Non-positive means contact.
    pub fn clearance_to_capsule(&self, a: &Vector3<f64>, b: &Vector3<f64>, r: f64) -> f64 {
        let c = self.pose.translation;
        match self.kind {
            ShapeKind::Sphere { radius } => point_segment_distance(&c, a, b) - radius - r,
            ShapeKind::Box { half_extents } => {
                let h = Vector3::from(half_extents);
                segment_aabb_distance(a, b, &(c - h), &(c + h)) - r
            }
            ShapeKind::Capsule { radius, half_length } => {
                let axis = self.pose.rotation * Vector3::z();
                let p = c - axis * half_length;
                let q = c + axis * half_length;
                segment_segment_distance(a, b, &p, &q) - radius - r
            }
        }
    }
}

pub fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

/// Closest distance between segments `p1`-`q1` and `p2`-`q2`.
pub fn segment_segment_distance(p1: &Vector3<f64>, q1: &Vector3<f64>, p2: &Vector3<f64>, q2: &Vector3<f64>) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    const EPS: f64 = 1e-18;
    let (s, t);
    if a <= EPS && e <= EPS {
        return r.norm();
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

pub fn point_aabb_distance(p: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    let mut d2 = 0.0;
    for i in 0..3 {
        let v = if p[i] < lo[i] {
            lo[i] - p[i]
        } else if p[i] > hi[i] {
            p[i] - hi[i]
        } else {
            0.0
        };
        d2 += v * v;
    }
    d2.sqrt()
}

fn segment_hits_aabb(a: &Vector3<f64>, b: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> bool {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if a[i] < lo[i] || a[i] > hi[i] {
                return false;
            }
        } else {
            let inv = 1.0 / d[i];
            let (mut ta, mut tb) = ((lo[i] - a[i]) * inv, (hi[i] - a[i]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

/// Distance from a segment to an axis-aligned box. Zero when they
/// intersect; otherwise a golden-section search over the segment
/// parameter (the point-to-box distance is convex along a line).
pub fn segment_aabb_distance(a: &Vector3<f64>, b: &Vector3<f64>, lo: &Vector3<f64>, hi: &Vector3<f64>) -> f64 {
    if segment_hits_aabb(a, b, lo, hi) {
        return 0.0;
    }
    let f = |t: f64| point_aabb_distance(&(a + (b - a) * t), lo, hi);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut l, mut r) = (0.0, 1.0);
    let mut x1 = r - g * (r - l);
    let mut x2 = l + g * (r - l);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..80 {
        if f1 <= f2 {
            r = x2;
            x2 = x1;
            f2 = f1;
            x1 = r - g * (r - l);
            f1 = f(x1);
        } else {
            l = x1;
            x1 = x2;
            f1 = f2;
            x2 = l + g * (r - l);
            f2 = f(x2);
        }
    }
    f(0.0).min(f(1.0)).min(f1).min(f2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactReport {
    pub link: usize,
    pub obstacle: usize,
    /// Signed clearance, m (non-positive).
    pub clearance: f64,
}

/// Link capsules vs obstacles, ordered by (link, obstacle).
pub fn check_collision_fk(chain: &KinematicChain, fk: &ForwardKinematics, obstacles: &[CollisionShape]) -> Vec<ContactReport> {
    let mut out = Vec::new();
    for (link, (a, b)) in fk.link_segments().iter().enumerate() {
        let r = chain.joints()[link].link_radius;
        for (obstacle, shape) in obstacles.iter().enumerate() {
            let clearance = shape.clearance_to_capsule(a, b, r);
            if clearance <= 0.0 {
                out.push(ContactReport { link, obstacle, clearance });
            }
        }
    }
    out
}

pub fn check_collision(
    chain: &KinematicChain,
    q: &JointVector,
    obstacles: &[CollisionShape],
) -> Result<Vec<ContactReport>, KinematicsError> {
    let fk = chain.forward_kinematics(q)?;
    Ok(check_collision_fk(chain, &fk, obstacles))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    /// Base-frame object pose.
    pub pose: RigidTransform,
    /// Object to tag frame.
    #[serde(default)]
    pub tag_offset: RigidTransform,
    /// Tag frame to desired end-effector frame.
    #[serde(default)]
    pub grasp_offset: RigidTransform,
    #[serde(default = "default_true")]
    pub tagged: bool,
}

fn default_true() -> bool {
    true
}

impl ObjectSpec {
    pub fn tag_pose(&self) -> RigidTransform {
        self.pose * self.tag_offset
    }

    /// Ground-truth pose the end-effector must reach to grasp the object.
    pub fn grasp_frame(&self) -> RigidTransform {
        self.pose * self.tag_offset * self.grasp_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripperCommand {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum GripperState {
    Open,
    Closing { remaining: f64 },
    Closed { attached: Option<u32> },
}

impl GripperState {
    pub fn attached(&self) -> Option<u32> {
        match self {
            GripperState::Closed { attached } => *attached,
            _ => None,
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, GripperState::Closed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspTolerance {
    /// m
    pub position: f64,
    /// rad
    pub orientation: f64,
}

impl Default for GraspTolerance {
    fn default() -> Self {
        Self { position: 0.01, orientation: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GripperEvent {
    Attached { object: u32 },
    Missed,
    Released { object: u32 },
}

/// A detection together with the end-effector pose it was captured at.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub detection: TagDetection,
    pub ee_pose: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickReport {
    pub contacts: Vec<ContactReport>,
    pub observation: Option<Observation>,
    pub gripper_event: Option<GripperEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTrajectory {
    pub trajectory: JointTrajectory,
    pub start_time: f64,
}

impl ActiveTrajectory {
    pub fn finished(&self, t: f64) -> bool {
        t - self.start_time >= self.trajectory.duration()
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub tick: u64,
    pub time: f64,
    pub q: JointVector,
    pub qd: JointVector,
    pub ee_pose: RigidTransform,
    pub gripper: GripperState,
    pub objects: Vec<ObjectSpec>,
    /// Object id and its pose relative to the end-effector while attached.
    attachment: Option<(u32, RigidTransform)>,
}

impl WorldState {
    pub fn object(&self, id: u32) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    chain: KinematicChain,
    camera: CameraModel,
    obstacles: Vec<CollisionShape>,
    tolerance: GraspTolerance,
    close_duration: f64,
    dt: f64,
    rng: ChaCha8Rng,
    pending: Option<Observation>,
    world: WorldState,
}

#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub chain: KinematicChain,
    pub camera: CameraModel,
    pub obstacles: Vec<CollisionShape>,
    pub objects: Vec<ObjectSpec>,
    pub initial_q: JointVector,
    pub tolerance: GraspTolerance,
    pub close_duration: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Simulation {
    pub fn new(setup: SimulationSetup) -> Result<Self, KinematicsError> {
        let ee_pose = setup.chain.end_effector_pose(&setup.initial_q)?;
        let n = setup.chain.dof();
        Ok(Self {
            chain: setup.chain,
            camera: setup.camera,
            obstacles: setup.obstacles,
            tolerance: setup.tolerance,
            close_duration: setup.close_duration,
            dt: setup.dt,
            rng: ChaCha8Rng::seed_from_u64(setup.seed),
            pending: None,
            world: WorldState {
                tick: 0,
                time: 0.0,
                q: setup.initial_q,
                qd: JointVector::zeros(n),
                ee_pose,
                gripper: GripperState::Open,
                objects: setup.objects,
                attachment: None,
            },
        })
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn chain(&self) -> &KinematicChain {
        &self.chain
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn obstacles(&self) -> &[CollisionShape] {
        &self.obstacles
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time the next `step` advances to.
    pub fn next_time(&self) -> f64 {
        (self.world.tick + 1) as f64 * self.dt
    }

    pub fn actuate_gripper(&mut self, cmd: GripperCommand) -> Option<GripperEvent> {
        match (cmd, self.world.gripper) {
            (GripperCommand::Close, GripperState::Open) => {
                self.world.gripper = GripperState::Closing { remaining: self.close_duration };
                None
            }
            (GripperCommand::Open, GripperState::Closing { .. }) => {
                self.world.gripper = GripperState::Open;
                None
            }
            (GripperCommand::Open, GripperState::Closed { attached }) => {
                self.world.gripper = GripperState::Open;
                self.world.attachment = None;
                attached.map(|object| GripperEvent::Released { object })
            }
            _ => None,
        }
    }

    /// Advances one tick, executing `active` (or holding still).
    pub fn step(&mut self, active: Option<&ActiveTrajectory>) -> Result<TickReport, KinematicsError> {
        let w = &mut self.world;
        w.tick += 1;
        w.time = w.tick as f64 * self.dt;
        match active {
            Some(a) => {
                let (q, qd) = a.trajectory.sample(w.time - a.start_time);
                self.chain.check_dimension(&q)?;
                w.q = q;
                w.qd = qd;
            }
            None => w.qd.fill(0.0),
        }
        let fk = self.chain.forward_kinematics(&w.q)?;
        w.ee_pose = fk.end_effector;
        if let Some((id, rel)) = w.attachment {
            let pose = w.ee_pose * rel;
            if let Some(o) = w.objects.iter_mut().find(|o| o.id == id) {
                o.pose = pose;
            }
        }

        let mut gripper_event = None;
        if let GripperState::Closing { remaining } = w.gripper {
            let remaining = remaining - self.dt;
            if remaining > 1e-12 {
                w.gripper = GripperState::Closing { remaining };
            } else {
                let hit = w
                    .objects
                    .iter()
                    .map(|o| {
                        let g = o.grasp_frame();
                        (o, position_error(&g.translation, &w.ee_pose.translation), orientation_error(&g.rotation, &w.ee_pose.rotation))
                    })
                    .filter(|(_, ep, er)| *ep <= self.tolerance.position && *er <= self.tolerance.orientation)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(o, _, _)| (o.id, w.ee_pose.inverse() * o.pose));
                match hit {
                    Some((id, rel)) => {
                        w.attachment = Some((id, rel));
                        w.gripper = GripperState::Closed { attached: Some(id) };
                        gripper_event = Some(GripperEvent::Attached { object: id });
                    }
                    None => {
                        w.gripper = GripperState::Closed { attached: None };
                        gripper_event = Some(GripperEvent::Missed);
                    }
                }
            }
        }

        let contacts = check_collision_fk(&self.chain, &fk, &self.obstacles);

        // Detections carry one tick of latency.
        let observation = self.pending.take();
        let tags: Vec<(u32, RigidTransform)> =
            w.objects.iter().filter(|o| o.tagged).map(|o| (o.id, o.tag_pose())).collect();
        let ee = w.ee_pose;
        self.pending = simulate_detection(&tags, &self.camera, &ee, w.time, &mut self.rng)
            .map(|detection| Observation { detection, ee_pose: ee });

        Ok(TickReport { contacts, observation, gripper_event })
    }
}
