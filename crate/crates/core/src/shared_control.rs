//! Stage I / Stage II orchestration state machine and the joint-space
//! leader-to-follower mapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orientation_error, position_error, RigidTransform};
use crate::kinematics::{JointVector, KinematicsError};
use crate::simworld::GripperCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageMode {
    TeleopCoarse,
    TagAcquired,
    Disconnected,
    Aligning,
    Grasping,
    Returning,
    Reconnected,
}

impl StageMode {
    pub const ALL: [StageMode; 7] = [
        StageMode::TeleopCoarse,
        StageMode::TagAcquired,
        StageMode::Disconnected,
        StageMode::Aligning,
        StageMode::Grasping,
        StageMode::Returning,
        StageMode::Reconnected,
    ];

    /// Leader motion drives the follower only in these modes.
    pub fn mapping_enabled(self) -> bool {
        matches!(self, StageMode::TeleopCoarse | StageMode::TagAcquired | StageMode::Reconnected)
    }

    /// Modes between disconnect and reconnect.
    pub fn is_autonomous(self) -> bool {
        matches!(self, StageMode::Disconnected | StageMode::Aligning | StageMode::Grasping | StageMode::Returning)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    IkFailure,
    GraspFailed,
    Operator,
    OperatorLost,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StageEvent {
    ReliableDetection,
    OperatorConfirm,
    /// The fused object estimate has been turned into a grasp target.
    GraspPoseComputed { target: RigidTransform },
    AlignmentDone,
    GraspClosed,
    ReturnDone,
    Abort { reason: AbortReason },
}

impl StageEvent {
    pub fn name(&self) -> &'static str {
        match self {
            StageEvent::ReliableDetection => "reliable_detection",
            StageEvent::OperatorConfirm => "operator_confirm",
            StageEvent::GraspPoseComputed { .. } => "grasp_pose_computed",
            StageEvent::AlignmentDone => "alignment_done",
            StageEvent::GraspClosed => "grasp_closed",
            StageEvent::ReturnDone => "return_done",
            StageEvent::Abort { .. } => "abort",
        }
    }
}

/// Side effects requested by a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageCommand {
    DisengageMapping,
    ExecuteApproach,
    Gripper(GripperCommand),
    ReturnToDisconnect,
    ReengageMapping,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransitionError {
    #[error("event `{event}` is not valid in mode {mode:?}")]
    InvalidTransition { mode: StageMode, event: &'static str },
    #[error("end-effector is {position} m / {orientation} rad from the disconnect pose")]
    ReconnectMismatch { position: f64, orientation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconnectTolerance {
    pub position: f64,
    pub orientation: f64,
}

impl Default for ReconnectTolerance {
    fn default() -> Self {
        Self { position: 1e-4, orientation: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageMachine {
    mode: StageMode,
    disconnect_pose: Option<RigidTransform>,
    grasp_target: Option<RigidTransform>,
    abort: Option<AbortReason>,
    tolerance: ReconnectTolerance,
}

impl Default for StageMachine {
    fn default() -> Self {
        Self::new(ReconnectTolerance::default())
    }
}

impl StageMachine {
    pub fn new(tolerance: ReconnectTolerance) -> Self {
        Self { mode: StageMode::TeleopCoarse, disconnect_pose: None, grasp_target: None, abort: None, tolerance }
    }

    pub fn mode(&self) -> StageMode {
        self.mode
    }

    pub fn disconnect_pose(&self) -> Option<&RigidTransform> {
        self.disconnect_pose.as_ref()
    }

    pub fn grasp_target(&self) -> Option<&RigidTransform> {
        self.grasp_target.as_ref()
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort
    }

    /// Applies `event` given the current end-effector pose. On error the
    /// machine is left unchanged.
    pub fn step(&mut self, event: StageEvent, ee_pose: &RigidTransform) -> Result<Vec<StageCommand>, TransitionError> {
        use StageMode::*;
        let invalid = TransitionError::InvalidTransition { mode: self.mode, event: event.name() };
        let cmds = match (self.mode, event) {
            (TeleopCoarse | Reconnected, StageEvent::ReliableDetection) => {
                self.mode = TagAcquired;
                vec![]
            }
            (TagAcquired, StageEvent::OperatorConfirm) => {
                self.mode = Disconnected;
                self.disconnect_pose = Some(*ee_pose);
                self.abort = None;
                vec![StageCommand::DisengageMapping]
            }
            (TagAcquired, StageEvent::Abort { .. }) => {
                self.mode = TeleopCoarse;
                vec![]
            }
            (Disconnected, StageEvent::GraspPoseComputed { target }) => {
                self.mode = Aligning;
                self.grasp_target = Some(target);
                vec![StageCommand::ExecuteApproach]
            }
            (Aligning, StageEvent::AlignmentDone) => {
                self.mode = Grasping;
                vec![StageCommand::Gripper(GripperCommand::Close)]
            }
            (Grasping, StageEvent::GraspClosed) => {
                self.mode = Returning;
                vec![StageCommand::ReturnToDisconnect]
            }
            (Disconnected | Aligning | Grasping, StageEvent::Abort { reason }) => {
                let mut cmds = Vec::new();
                if self.mode == Grasping {
                    cmds.push(StageCommand::Gripper(GripperCommand::Open));
                }
                cmds.push(StageCommand::ReturnToDisconnect);
                self.mode = Returning;
                self.abort = Some(reason);
                cmds
            }
            (Returning, StageEvent::Abort { reason }) => {
                self.abort.get_or_insert(reason);
                vec![]
            }
            (Returning, StageEvent::ReturnDone) => {
                let disc = self.disconnect_pose.expect("disconnect pose is set while returning");
                let position = position_error(&disc.translation, &ee_pose.translation);
                let orientation = orientation_error(&disc.rotation, &ee_pose.rotation);
                if !(position <= self.tolerance.position && orientation <= self.tolerance.orientation) {
                    return Err(TransitionError::ReconnectMismatch { position, orientation });
                }
                self.mode = if self.abort.is_some() { TeleopCoarse } else { Reconnected };
                self.disconnect_pose = None;
                self.grasp_target = None;
                vec![StageCommand::ReengageMapping]
            }
            _ => return Err(invalid),
        };
        Ok(cmds)
    }
}

/// Joint-space teleoperation: the leader configuration is the follower
/// target while mapping is enabled.
pub fn teleop_tick(q_leader: &JointVector, mapping_enabled: bool, n: usize) -> Result<Option<JointVector>, KinematicsError> {
    if q_leader.len() != n {
        return Err(KinematicsError::DimensionMismatch { expected: n, got: q_leader.len() });
    }
    Ok(mapping_enabled.then(|| q_leader.clone()))
}

/// Hysteresis on the analog trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerLatch {
    pub close_above: f64,
    pub open_below: f64,
    closed: bool,
}

impl Default for TriggerLatch {
    fn default() -> Self {
        Self { close_above: 0.8, open_below: 0.2, closed: false }
    }
}

impl TriggerLatch {
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Forces the latched state without emitting a command.
    pub fn set(&mut self, closed: bool) {
        self.closed = closed;
    }

    pub fn update(&mut self, value: f64) -> Option<GripperCommand> {
        if !self.closed && value >= self.close_above {
            self.closed = true;
            Some(GripperCommand::Close)
        } else if self.closed && value <= self.open_below {
            self.closed = false;
            Some(GripperCommand::Open)
        } else {
            None
        }
    }
}
