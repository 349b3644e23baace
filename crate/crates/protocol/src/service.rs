//! The live control loop: ticks the controller in real time, feeds it the
//! operator's latest input and publishes state to every session.

use std::time::Duration;

use teleop_core::config::LeaderSample;
use teleop_core::control::{ControlError, ControlInput, Controller};
use teleop_core::geometry::{orientation_error, position_error, PoseRepr, RigidTransform};
use teleop_core::kinematics::{JointVector, KinematicChain};
use teleop_core::metrics::{EndReason, LogEvent, ObjectRecord, TickRecord};
use teleop_core::shared_control::StageMode;
use teleop_core::simworld::GripperCommand;
use tokio::sync::{mpsc::error::TryRecvError, watch};
use tokio::time::{interval, MissedTickBehavior};

use crate::message::{JointInfo, Message, WorldSnapshot};
use crate::registry::SessionId;
use crate::server::{ControlMessage, FollowerStatus, ServiceEnd};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Ticks between periodic snapshots; stage changes always send one.
    pub snapshot_every: u64,
    /// Trial mode: the clock starts when an operator joins and the run ends
    /// when that operator leaves.
    pub trial: bool,
    pub max_ticks: Option<u64>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { snapshot_every: 5, trial: false, max_ticks: None }
    }
}

pub fn joint_info(chain: &KinematicChain) -> Vec<JointInfo> {
    chain.joints().iter().map(|j| JointInfo { name: j.name.clone(), limits: j.limits }).collect()
}

/// Joint origins in the base frame followed by the tool point.
pub fn link_points(chain: &KinematicChain, q: &[f64]) -> Vec<[f64; 3]> {
    let Ok(fk) = chain.forward_kinematics(&JointVector::from_column_slice(q)) else {
        return Vec::new();
    };
    let mut pts: Vec<[f64; 3]> = fk.link_frames.iter().map(|f| f.translation.into()).collect();
    pts.push(fk.end_effector.translation.into());
    pts
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceSummary {
    pub ticks: u64,
    /// Simulation time of the last tick.
    pub t: f64,
    pub reason: EndReason,
}

pub struct LiveService {
    controller: Controller,
    end: ServiceEnd,
    config: ServiceConfig,
    dt: f64,
    operator: Option<SessionId>,
    leader: Option<(Vec<f64>, f64)>,
    gripper: Option<GripperCommand>,
    abort: bool,
    collisions: u32,
    in_contact: bool,
    ticks: u64,
    operator_left: bool,
    /// Messages to publish ahead of the next tick's state.
    notices: Vec<Message>,
}

impl LiveService {
    pub fn new(controller: Controller, end: ServiceEnd, dt: f64, config: ServiceConfig) -> Self {
        let mut s = Self {
            controller,
            end,
            config,
            dt,
            operator: None,
            leader: None,
            gripper: None,
            abort: false,
            collisions: 0,
            in_contact: false,
            ticks: 0,
            operator_left: false,
            notices: Vec::new(),
        };
        // Sessions that join before the first tick still get a snapshot.
        s.publish_snapshot_for(None);
        s
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    /// Starts over with a fresh controller; the connected sessions stay.
    pub fn reset(&mut self, controller: Controller) {
        self.controller = controller;
        self.leader = None;
        self.gripper = None;
        self.abort = false;
        self.collisions = 0;
        self.in_contact = false;
        self.ticks = 0;
        self.operator_left = false;
        self.publish_snapshot_for(None);
    }

    /// Ticks at the scenario rate until `shutdown` turns true (or the trial
    /// ends), handing each record to `sink`.
    pub async fn run(
        &mut self,
        mut shutdown: watch::Receiver<bool>,
        sink: &mut (dyn FnMut(&TickRecord) + Send),
    ) -> Result<ServiceSummary, ControlError> {
        if self.config.trial {
            while self.operator.is_none() {
                tokio::select! {
                    _ = crate::server::stopped(&mut shutdown) => return Ok(self.summary(EndReason::Interrupted)),
                    m = self.end.inbound.recv() => match m {
                        Some(m) => self.apply(m),
                        None => return Ok(self.summary(EndReason::Interrupted)),
                    },
                }
            }
        }
        let mut clock = interval(Duration::from_secs_f64(self.dt));
        clock.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = crate::server::stopped(&mut shutdown) => return Ok(self.summary(EndReason::Interrupted)),
                _ = clock.tick() => {
                    let record = self.step()?;
                    sink(&record);
                    if self.config.trial && self.operator_left {
                        return Ok(self.summary(EndReason::Completed));
                    }
                    if self.config.max_ticks.is_some_and(|m| self.ticks >= m) {
                        return Ok(self.summary(EndReason::Timeout));
                    }
                }
            }
        }
    }

    fn summary(&self, reason: EndReason) -> ServiceSummary {
        ServiceSummary { ticks: self.ticks, t: self.controller.time(), reason }
    }

    /// One control tick: drain session input, tick, publish.
    pub fn step(&mut self) -> Result<TickRecord, ControlError> {
        self.drain();
        let t = self.controller.simulation().next_time();
        let input = ControlInput {
            leader: self.leader.as_ref().map(|(q, trigger)| LeaderSample { t, q_leader: q.clone(), trigger: *trigger }),
            gripper: self.gripper.take(),
            abort: std::mem::take(&mut self.abort),
        };
        let record = self.controller.tick(&input)?;
        self.ticks += 1;
        self.publish(&record);
        Ok(record)
    }

    fn drain(&mut self) {
        loop {
            match self.end.inbound.try_recv() {
                Ok(m) => self.apply(m),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
    }

    fn apply(&mut self, m: ControlMessage) {
        match m {
            ControlMessage::OperatorJoined { session } => {
                self.operator = Some(session);
                self.leader = None;
            }
            ControlMessage::OperatorLost { session } if self.operator == Some(session) => {
                self.operator = None;
                self.operator_left = true;
                self.leader = None;
                self.notices.push(Message::StageEvent {
                    t: self.controller.time(),
                    mode: self.controller.mode(),
                    from: None,
                    event: None,
                    reason: Some("operator_lost".into()),
                });
            }
            ControlMessage::Leader { session, q, trigger } if self.operator == Some(session) => {
                self.leader = Some((q, trigger));
            }
            ControlMessage::Gripper { session, command } if self.operator == Some(session) => {
                self.gripper = Some(command);
            }
            ControlMessage::Abort { session } if self.operator == Some(session) => self.abort = true,
            _ => {}
        }
    }

    fn send(&self, m: Message) {
        // No receivers is not an error: nobody is connected.
        let _ = self.end.broadcast.send(m);
    }

    fn publish(&mut self, r: &TickRecord) {
        for m in std::mem::take(&mut self.notices) {
            self.send(m);
        }
        let t = r.t;
        self.send(Message::FollowerJointState { t, q: r.q_follower.clone(), qd: r.qd_follower.clone() });
        if let Some(stack) = &r.torque {
            self.send(Message::TorqueFeedback { t, stack: stack.clone() });
        }
        let mut abort = None;
        let mut stage_changed = false;
        for ev in &r.events {
            match ev {
                LogEvent::Abort { reason } => abort = Some(snake_case(reason)),
                LogEvent::Gripper { command } => self.send(Message::GripperCommand { t, command: *command }),
                LogEvent::Stage { from, to, event } => {
                    stage_changed = true;
                    self.send(Message::StageEvent {
                        t,
                        mode: *to,
                        from: Some(*from),
                        event: Some(event.clone()),
                        reason: abort.clone(),
                    });
                }
                _ => {}
            }
        }
        let touching = !r.contacts.is_empty();
        if touching && !self.in_contact {
            self.collisions += 1;
        }
        self.in_contact = touching;
        let _ = self.end.follower.send(FollowerStatus { t, q: r.q_follower.clone() });
        if stage_changed || self.ticks % self.config.snapshot_every.max(1) == 0 {
            self.publish_snapshot_for(Some(r));
        }
    }

    fn publish_snapshot_for(&mut self, r: Option<&TickRecord>) {
        let snap = match r {
            Some(r) => snapshot(self.controller.simulation().chain(), r, self.collisions),
            None => initial_snapshot(&self.controller),
        };
        let _ = self.end.snapshot.send(Some(snap.clone()));
        self.send(Message::WorldSnapshot(snap));
    }
}

pub fn snapshot(chain: &KinematicChain, r: &TickRecord, collisions: u32) -> WorldSnapshot {
    let (position_error, orientation_error) = match &r.grasp_target {
        Some(g) => {
            let (ee, target) = (RigidTransform::from(r.ee_pose), RigidTransform::from(*g));
            (Some(position_error(&target.translation, &ee.translation)), Some(orientation_error(&target.rotation, &ee.rotation)))
        }
        None => (None, None),
    };
    WorldSnapshot {
        t: r.t,
        mode: r.mode,
        q: r.q_follower.clone(),
        qd: r.qd_follower.clone(),
        gripper: r.gripper,
        ee_pose: r.ee_pose,
        link_points: link_points(chain, &r.q_follower),
        objects: r.objects.clone(),
        grasp_target: r.grasp_target,
        position_error,
        orientation_error,
        contacts: r.contacts.clone(),
        collisions,
    }
}

fn initial_snapshot(c: &Controller) -> WorldSnapshot {
    let sim = c.simulation();
    let w = sim.world();
    let q: Vec<f64> = w.q.iter().copied().collect();
    WorldSnapshot {
        t: w.time,
        mode: StageMode::TeleopCoarse,
        qd: vec![0.0; q.len()],
        gripper: w.gripper,
        ee_pose: PoseRepr::from(&w.ee_pose),
        link_points: link_points(sim.chain(), &q),
        objects: w.objects.iter().map(|o| ObjectRecord { id: o.id, pose: PoseRepr::from(&o.pose) }).collect(),
        grasp_target: None,
        position_error: None,
        orientation_error: None,
        contacts: Vec::new(),
        collisions: 0,
        q,
    }
}

fn snake_case<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}
