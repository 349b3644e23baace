use serde::{Deserialize, Serialize};
use teleop_core::dynamics::TorqueStack;
use teleop_core::geometry::PoseRepr;
use teleop_core::kinematics::JointLimits;
use teleop_core::metrics::ObjectRecord;
use teleop_core::shared_control::StageMode;
use teleop_core::simworld::{ContactReport, GripperCommand, GripperState};

/// Every message the service and its clients exchange. The JSON body carries
/// the variant name in a `"type"` field; field names are snake_case.
///
/// `t` is the sender's clock in seconds and never decreases along one
/// connection. Server-originated messages use simulation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    /// Client to server: claim a role. The first message on a connection.
    Hello { t: f64, role: Role },
    /// Server to client: the role granted and the chain being driven.
    Welcome(Welcome),
    /// Operator to server: leader joint positions, rad, and trigger in [0, 1].
    LeaderJointState { t: f64, q: Vec<f64>, trigger: f64 },
    /// Server to clients, every control tick.
    FollowerJointState { t: f64, q: Vec<f64>, qd: Vec<f64> },
    /// Server to clients: leader torque components, N m.
    TorqueFeedback {
        t: f64,
        #[serde(flatten)]
        stack: TorqueStack,
    },
    /// Operator to server as a request; server to clients when the gripper
    /// is actuated.
    GripperCommand { t: f64, command: GripperCommand },
    /// Operator to server: abort the current autonomous episode.
    Abort { t: f64 },
    /// Server to clients on every stage transition, and with
    /// `reason = "operator_lost"` when the operator disappears.
    StageEvent {
        t: f64,
        mode: StageMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<StageMode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        event: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    WorldSnapshot(WorldSnapshot),
    Heartbeat { t: f64 },
    Error { t: f64, code: ErrorCode, text: String },
}

impl Message {
    pub fn t(&self) -> f64 {
        match self {
            Message::Welcome(w) => w.t,
            Message::WorldSnapshot(s) => s.t,
            Message::Hello { t, .. }
            | Message::LeaderJointState { t, .. }
            | Message::FollowerJointState { t, .. }
            | Message::TorqueFeedback { t, .. }
            | Message::GripperCommand { t, .. }
            | Message::Abort { t }
            | Message::StageEvent { t, .. }
            | Message::Heartbeat { t }
            | Message::Error { t, .. } => *t,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::Welcome(_) => "Welcome",
            Message::LeaderJointState { .. } => "LeaderJointState",
            Message::FollowerJointState { .. } => "FollowerJointState",
            Message::TorqueFeedback { .. } => "TorqueFeedback",
            Message::GripperCommand { .. } => "GripperCommand",
            Message::Abort { .. } => "Abort",
            Message::StageEvent { .. } => "StageEvent",
            Message::WorldSnapshot(_) => "WorldSnapshot",
            Message::Heartbeat { .. } => "Heartbeat",
            Message::Error { .. } => "Error",
        }
    }

    /// Joint arrays that must have the negotiated length.
    pub fn joint_arrays(&self) -> Vec<&[f64]> {
        match self {
            Message::LeaderJointState { q, .. } => vec![q],
            Message::FollowerJointState { q, qd, .. } => vec![q, qd],
            Message::TorqueFeedback { stack, .. } => vec![
                &stack.tau_grav,
                &stack.tau_fric,
                &stack.tau_joint,
                &stack.tau_trig,
                &stack.tau_total,
            ],
            Message::WorldSnapshot(s) => vec![&s.q, &s.qd],
            _ => vec![],
        }
    }

    /// Names of every message type, as they appear in the `"type"` field.
    pub const TYPE_NAMES: [&'static str; 11] = [
        "Hello",
        "Welcome",
        "LeaderJointState",
        "FollowerJointState",
        "TorqueFeedback",
        "GripperCommand",
        "Abort",
        "StageEvent",
        "WorldSnapshot",
        "Heartbeat",
        "Error",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Bad length prefix, invalid JSON, missing fields or wrong joint count.
    MalformedFrame,
    /// Well-formed JSON whose `"type"` is not in the schema.
    UnknownType,
    /// Another client already holds the operator role.
    RoleConflict,
    /// Anything other than Hello before the role handshake.
    HandshakeRequired,
    /// Operator-only message from an observer.
    NotOperator,
    /// Timestamp lower than an earlier one on the same connection.
    NonMonotonicTime,
    /// A server-to-client message sent by a client.
    UnexpectedMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInfo {
    pub name: String,
    pub limits: JointLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Welcome {
    pub t: f64,
    pub role: Role,
    /// Negotiated joint count.
    pub n: usize,
    pub joints: Vec<JointInfo>,
    /// Follower configuration at the time of joining.
    pub q: Vec<f64>,
    pub heartbeat_interval: f64,
    pub heartbeat_timeout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub t: f64,
    pub mode: StageMode,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub gripper: GripperState,
    pub ee_pose: PoseRepr,
    /// Base-frame joint origins followed by the tool point.
    pub link_points: Vec<[f64; 3]>,
    pub objects: Vec<ObjectRecord>,
    pub grasp_target: Option<PoseRepr>,
    /// m, end-effector against the current grasp target
    pub position_error: Option<f64>,
    /// rad, end-effector against the current grasp target
    pub orientation_error: Option<f64>,
    pub contacts: Vec<ContactReport>,
    /// Collision events since the service started.
    pub collisions: u32,
}
