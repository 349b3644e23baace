//! Chain and scenario files (TOML) and leader input scripts (NDJSON).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{LeaderTorqueParams, LinkInertia};
use crate::geometry::RigidTransform;
use crate::kinematics::{Joint, JointLimits, JointVector, KinematicChain};
use crate::perception::{CameraModel, ReliabilityPolicy};
use crate::planner::CartesianOptions;
use crate::shared_control::ReconnectTolerance;
use crate::simworld::{CollisionShape, GraspTolerance, ObjectSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl ConfigError {
    pub fn path(&self) -> &Path {
        match self {
            ConfigError::Io { path, .. } | ConfigError::Parse { path, .. } | ConfigError::Invalid { path, .. } => path,
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, column)
}

fn parse_toml<T: serde::de::DeserializeOwned>(src: &str, path: &Path) -> Result<T, ConfigError> {
    toml::from_str(src).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(src, s.start));
        ConfigError::Parse { path: path.to_path_buf(), line, column, message: e.message().to_string() }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InertiaFile {
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 3],
    /// Rows of the inertia tensor about the center of mass.
    #[serde(default)]
    pub inertia: [[f64; 3]; 3],
}

impl Default for InertiaFile {
    fn default() -> Self {
        Self { mass: 0.0, com: [0.0; 3], inertia: [[0.0; 3]; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFile {
    pub name: String,
    #[serde(default)]
    pub origin: RigidTransform,
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    pub velocity: f64,
    pub acceleration: f64,
    #[serde(default)]
    pub link_radius: f64,
    #[serde(default)]
    pub inertia: InertiaFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainFile {
    pub name: String,
    #[serde(default)]
    pub trigger_joint: Option<usize>,
    #[serde(default)]
    pub tool: RigidTransform,
    pub joints: Vec<JointFile>,
}

impl ChainFile {
    pub fn build(&self) -> Result<KinematicChain, String> {
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                origin: j.origin,
                axis: Vector3::from(j.axis),
                limits: JointLimits { lower: j.lower, upper: j.upper, velocity: j.velocity, acceleration: j.acceleration },
                inertia: LinkInertia {
                    mass: j.inertia.mass,
                    com: Vector3::from(j.inertia.com),
                    inertia: Matrix3::from_fn(|r, c| j.inertia.inertia[r][c]),
                },
                link_radius: j.link_radius,
            })
            .collect();
        KinematicChain::new(self.name.clone(), joints, self.tool, self.trigger_joint).map_err(|e| e.to_string())
    }
}

pub fn load_chain(path: &Path) -> Result<KinematicChain, ConfigError> {
    let file: ChainFile = parse_toml(&read(path)?, path)?;
    file.build().map_err(|message| ConfigError::Invalid { path: path.to_path_buf(), message })
}

/// A chain given either inline or as a path relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainSource {
    File(String),
    Inline(ChainFile),
}

fn default_dt() -> f64 {
    0.01
}
fn default_lift() -> f64 {
    0.05
}
fn default_close() -> f64 {
    0.2
}
fn default_resync() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// s; a trial still running at this time ends unsuccessfully.
    pub max_duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub follower: ChainSource,
    pub leader: ChainSource,
    pub initial_q: Vec<f64>,
    pub camera: CameraModel,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub obstacles: Vec<CollisionShape>,
    #[serde(default)]
    pub tolerances: GraspTolerance,
    /// m of lift that confirms a successful pickup.
    #[serde(default = "default_lift")]
    pub lift_height: f64,
    /// s
    #[serde(default = "default_close")]
    pub gripper_close_time: f64,
    pub leader_torque: LeaderTorqueParams,
    #[serde(default)]
    pub planner: CartesianOptions,
    #[serde(default)]
    pub reliability: ReliabilityPolicy,
    #[serde(default)]
    pub reconnect: ReconnectTolerance,
    /// rad; leader and follower must agree this closely before mapping
    /// resumes after a reconnect.
    #[serde(default = "default_resync")]
    pub resync_tolerance: f64,
    /// Default leader script, relative to the scenario file.
    #[serde(default)]
    pub script: Option<String>,
}

/// A validated scenario with its chains built.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub follower: KinematicChain,
    pub leader: KinematicChain,
    pub script_path: Option<PathBuf>,
}

impl Scenario {
    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Poses are stored as matrices but serialized as quaternions, so a
    /// scenario read back from its own JSON can differ in the last bits.
    /// Iterate the JSON round trip to a fixed point so that the embedded
    /// copy in a log rebuilds exactly the same scenario.
    pub fn canonical(self) -> Self {
        let mut cur = self;
        let mut text = serde_json::to_string(&cur).expect("scenario serializes");
        for _ in 0..8 {
            let next: Scenario = serde_json::from_str(&text).expect("scenario round-trips");
            let next_text = serde_json::to_string(&next).expect("scenario serializes");
            cur = next;
            if next_text == text {
                break;
            }
            text = next_text;
        }
        cur
    }

    fn inline_chain(src: &ChainSource, which: &str) -> Result<KinematicChain, String> {
        match src {
            ChainSource::Inline(c) => c.build().map_err(|e| format!("{which} chain: {e}")),
            ChainSource::File(p) => Err(format!("{which} chain `{p}` was not resolved")),
        }
    }

    /// Checks cross-field consistency and builds both chains. All chain
    /// references must already be inline.
    pub fn resolve(self, script_path: Option<PathBuf>) -> Result<LoadedScenario, String> {
        let this = self.canonical();
        let follower = Self::inline_chain(&this.follower, "follower")?;
        let leader = Self::inline_chain(&this.leader, "leader")?;
        let s = this;
        let n = follower.dof();
        if leader.dof() != n {
            return Err(format!("leader has {} joints, follower has {n}", leader.dof()));
        }
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err("dt must be positive".into());
        }
        if !(s.max_duration > 0.0) {
            return Err("max_duration must be positive".into());
        }
        if s.initial_q.len() != n {
            return Err(format!("initial_q has {} values, expected {n}", s.initial_q.len()));
        }
        let q0 = JointVector::from_column_slice(&s.initial_q);
        if !follower.within_limits(&q0) {
            return Err("initial_q is outside the follower joint limits".into());
        }
        s.camera.validate().map_err(|e| format!("camera: {e}"))?;
        for s in &s.obstacles {
            s.validate().map_err(|e| e.to_string())?;
        }
        for (i, o) in s.objects.iter().enumerate() {
            if s.objects[..i].iter().any(|p| p.id == o.id) {
                return Err(format!("duplicate object id {}", o.id));
            }
        }
        let p = &s.leader_torque;
        if p.friction.len() != n {
            return Err(format!("friction has {} entries, expected {n}", p.friction.len()));
        }
        for (what, v) in [("kp", &p.gains.kp), ("kd", &p.gains.kd), ("ki", &p.gains.ki)] {
            if v.len() != n {
                return Err(format!("gains.{what} has {} entries, expected {n}", v.len()));
            }
        }
        if s.reliability.consecutive == 0 || s.reliability.fusion_window == 0 {
            return Err("reliability counts must be at least 1".into());
        }
        Ok(LoadedScenario { scenario: s, follower, leader, script_path })
    }

    pub fn initial_q(&self) -> JointVector {
        JointVector::from_column_slice(&self.initial_q)
    }
}

/// Loads a scenario file, inlining chain files referenced by path.
pub fn load_scenario(path: &Path) -> Result<LoadedScenario, ConfigError> {
    let src = read(path)?;
    let mut scenario: Scenario = parse_toml(&src, path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for source in [&mut scenario.follower, &mut scenario.leader] {
        if let ChainSource::File(rel) = source {
            let chain_path = dir.join(&*rel);
            let file: ChainFile = parse_toml(&read(&chain_path)?, &chain_path)?;
            file.build().map_err(|message| ConfigError::Invalid { path: chain_path.clone(), message })?;
            *source = ChainSource::Inline(file);
        }
    }
    let script_path = scenario.script.as_ref().map(|s| dir.join(s));
    scenario.resolve(script_path).map_err(|message| ConfigError::Invalid { path: path.to_path_buf(), message })
}

/// One leader sample: joint positions and the trigger value in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderSample {
    pub t: f64,
    pub q_leader: Vec<f64>,
    #[serde(default)]
    pub trigger: f64,
}

/// Reads an NDJSON leader script. Blank lines are skipped; samples must
/// have non-decreasing timestamps.
pub fn load_script(path: &Path) -> Result<Vec<LeaderSample>, ConfigError> {
    let src = read(path)?;
    parse_script(&src, path)
}

pub fn parse_script(src: &str, path: &Path) -> Result<Vec<LeaderSample>, ConfigError> {
    let mut out: Vec<LeaderSample> = Vec::new();
    for (i, line) in src.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let s: LeaderSample = serde_json::from_str(line).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        if out.last().is_some_and(|p| s.t < p.t) {
            return Err(ConfigError::Invalid { path: path.to_path_buf(), message: format!("line {}: time goes backwards", i + 1) });
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_script(samples: &[LeaderSample]) -> String {
    let mut s = String::new();
    for x in samples {
        s.push_str(&serde_json::to_string(x).expect("sample serializes"));
        s.push('\n');
    }
    s
}
