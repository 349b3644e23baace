//! Tick-driven controller shared by batch runs and the live server, plus
//! the trial runner and leader input drivers.
//!
//! One tick, in order: the world advances (executing the active follower
//! trajectory, checking contacts, delivering detections), leader input is
//! differentiated, detections update the reliability filter, operator and
//! stage events are handled, Stage II progresses, teleoperation retargets
//! the follower, and the leader torque stack is computed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{LeaderSample, LoadedScenario, Scenario};
use crate::dynamics::{total_leader_torque, DynamicsError, FeedbackState, LeaderState, TorqueStack, TriggerState};
use crate::geometry::{orientation_error, position_error, PoseRepr, RigidTransform};
use crate::kinematics::{JointVector, KinematicChain, KinematicsError};
use crate::metrics::{evaluate_trial, DemoLog, DetectionRecord, EndReason, EndRecord, LogEvent, ObjectRecord, TickRecord, TrialResult};
use crate::perception::{object_pose_from_detection, DetectionFilter};
use crate::planner::{plan_cartesian_approach, plan_joint_trajectory, rate_limited_retarget, PlanError};
use crate::shared_control::{
    teleop_tick, AbortReason, StageCommand, StageEvent, StageMachine, StageMode, TransitionError, TriggerLatch,
};
use crate::simworld::{ActiveTrajectory, GripperCommand, GripperEvent, Simulation, SimulationSetup};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
}

#[derive(Debug, Error)]
pub enum Stage2Error {
    #[error("stage II needs TagAcquired, mode is {0:?}")]
    NotReady(StageMode),
    #[error("stage II aborted: {reason:?}")]
    Aborted { reason: AbortReason, records: Vec<TickRecord> },
    #[error("stage II did not finish within the scenario duration")]
    Timeout,
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Trigger value past which a pull in TagAcquired confirms the grasp.
pub const CONFIRM_THRESHOLD: f64 = 0.5;

/// Everything the operator side provides for one tick.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub leader: Option<LeaderSample>,
    pub gripper: Option<GripperCommand>,
    pub abort: bool,
}

pub struct Controller {
    scenario: Scenario,
    leader_chain: KinematicChain,
    sim: Simulation,
    stage: StageMachine,
    active: Option<ActiveTrajectory>,
    teleop_goal: Option<JointVector>,
    q_disconnect: Option<JointVector>,
    filter: DetectionFilter,
    last_estimate: Option<(u32, RigidTransform)>,
    latch: TriggerLatch,
    prev_trigger: f64,
    leader_prev: Option<(JointVector, JointVector)>,
    feedback: FeedbackState,
    resync_pending: bool,
}

impl Controller {
    pub fn new(loaded: &LoadedScenario, seed: u64) -> Result<Self, ControlError> {
        let s = &loaded.scenario;
        let sim = Simulation::new(SimulationSetup {
            chain: loaded.follower.clone(),
            camera: s.camera.clone(),
            obstacles: s.obstacles.clone(),
            objects: s.objects.clone(),
            initial_q: s.initial_q(),
            tolerance: s.tolerances,
            close_duration: s.gripper_close_time,
            dt: s.dt,
            seed,
        })?;
        Ok(Self {
            scenario: s.clone(),
            leader_chain: loaded.leader.clone(),
            sim,
            stage: StageMachine::new(s.reconnect),
            active: None,
            teleop_goal: None,
            q_disconnect: None,
            filter: DetectionFilter::new(s.reliability),
            last_estimate: None,
            latch: TriggerLatch::default(),
            prev_trigger: 0.0,
            leader_prev: None,
            feedback: FeedbackState::new(loaded.leader.dof()),
            resync_pending: false,
        })
    }

    pub fn mode(&self) -> StageMode {
        self.stage.mode()
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn time(&self) -> f64 {
        self.sim.world().time
    }

    pub fn dof(&self) -> usize {
        self.sim.chain().dof()
    }

    /// No autonomous phase, no motion in progress and the gripper at rest.
    pub fn is_idle(&self) -> bool {
        let t = self.time();
        self.stage.mode().mapping_enabled()
            && self.active.as_ref().map_or(true, |a| a.finished(t))
            && !matches!(self.sim.world().gripper, crate::simworld::GripperState::Closing { .. })
    }

    fn apply_event(&mut self, event: StageEvent, events: &mut Vec<LogEvent>) -> Result<Vec<StageCommand>, ControlError> {
        let from = self.stage.mode();
        let ee = self.sim.world().ee_pose;
        let cmds = self.stage.step(event, &ee)?;
        if let StageEvent::Abort { reason } = event {
            events.push(LogEvent::Abort { reason });
        }
        events.push(LogEvent::Stage { from, to: self.stage.mode(), event: event.name().to_string() });
        Ok(cmds)
    }

    fn run_commands(&mut self, cmds: Vec<StageCommand>, t: f64, events: &mut Vec<LogEvent>) -> Result<(), ControlError> {
        for c in cmds {
            match c {
                StageCommand::DisengageMapping => {
                    self.teleop_goal = None;
                    self.q_disconnect = Some(self.sim.world().q.clone());
                }
                StageCommand::ExecuteApproach => {
                    let target = *self.stage.grasp_target().expect("grasp target is set while aligning");
                    let q = self.sim.world().q.clone();
                    match plan_cartesian_approach(self.sim.chain(), &q, &target, &self.scenario.planner) {
                        Ok(plan) => self.active = Some(ActiveTrajectory { trajectory: plan.trajectory, start_time: t }),
                        Err(PlanError::IkFailure(_)) | Err(PlanError::GoalOutOfLimits { .. }) => {
                            let more = self.apply_event(StageEvent::Abort { reason: AbortReason::IkFailure }, events)?;
                            self.run_commands(more, t, events)?;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                StageCommand::Gripper(cmd) => {
                    events.push(LogEvent::Gripper { command: cmd });
                    if let Some(ev) = self.sim.actuate_gripper(cmd) {
                        events.push(gripper_log(ev));
                    }
                }
                StageCommand::ReturnToDisconnect => {
                    let goal = self.q_disconnect.clone().expect("disconnect configuration is stored");
                    let q = self.sim.world().q.clone();
                    let traj = plan_joint_trajectory(self.sim.chain(), &q, &goal)?;
                    self.active = Some(ActiveTrajectory { trajectory: traj, start_time: t });
                }
                StageCommand::ReengageMapping => {
                    self.q_disconnect = None;
                    self.resync_pending = true;
                    self.teleop_goal = None;
                    self.latch.set(self.sim.world().gripper.is_closed());
                }
            }
        }
        Ok(())
    }

    fn begin_stage_two(&mut self, t: f64, events: &mut Vec<LogEvent>) -> Result<(), ControlError> {
        let estimate = self
            .filter
            .fused_estimate()
            .map(|e| (self.filter.tag_id().expect("filter has a tag"), e))
            .or(self.last_estimate);
        let Some((tag_id, object_pose)) = estimate else {
            let cmds = self.apply_event(StageEvent::Abort { reason: AbortReason::Operator }, events)?;
            return self.run_commands(cmds, t, events);
        };
        let cmds = self.apply_event(StageEvent::OperatorConfirm, events)?;
        self.run_commands(cmds, t, events)?;
        let grasp_offset = self
            .sim
            .world()
            .object(tag_id)
            .map(|o| o.grasp_offset)
            .unwrap_or_else(RigidTransform::identity);
        let target = object_pose * grasp_offset;
        let cmds = self.apply_event(StageEvent::GraspPoseComputed { target }, events)?;
        self.run_commands(cmds, t, events)
    }

    pub fn tick(&mut self, input: &ControlInput) -> Result<TickRecord, ControlError> {
        let dt = self.scenario.dt;
        let n = self.dof();
        let mut events = Vec::new();

        // 1. world
        let report = self.sim.step(self.active.as_ref())?;
        let t = self.sim.world().time;
        if let Some(ev) = report.gripper_event {
            events.push(gripper_log(ev));
        }

        // 2. leader input
        let leader = match &input.leader {
            Some(s) => {
                if s.q_leader.len() != n {
                    return Err(KinematicsError::DimensionMismatch { expected: n, got: s.q_leader.len() }.into());
                }
                let q = JointVector::from_column_slice(&s.q_leader);
                let (qd, qdd) = match &self.leader_prev {
                    Some((pq, pqd)) => {
                        let qd = (&q - pq) / dt;
                        let qdd = (&qd - pqd) / dt;
                        (qd, qdd)
                    }
                    None => (JointVector::zeros(n), JointVector::zeros(n)),
                };
                self.leader_prev = Some((q.clone(), qd.clone()));
                Some((q, qd, qdd, s.trigger))
            }
            None => {
                self.leader_prev = None;
                None
            }
        };
        let trigger = leader.as_ref().map_or(0.0, |l| l.3);

        // 3. detections
        let mut detections = Vec::new();
        match &report.observation {
            Some(obs) if self.sim.world().gripper.attached() != Some(obs.detection.tag_id) => {
                let estimate = object_pose_from_detection(&obs.ee_pose, self.sim.camera(), &obs.detection);
                self.filter.observe(obs.detection.tag_id, estimate);
                detections.push(DetectionRecord {
                    tag_id: obs.detection.tag_id,
                    pose: PoseRepr::from(&obs.detection.pose),
                    timestamp: obs.detection.timestamp,
                    estimate: PoseRepr::from(&estimate),
                });
            }
            _ => self.filter.miss(),
        }
        if self.filter.is_reliable() {
            if let (Some(id), Some(e)) = (self.filter.tag_id(), self.filter.fused_estimate()) {
                self.last_estimate = Some((id, e));
            }
            if matches!(self.stage.mode(), StageMode::TeleopCoarse | StageMode::Reconnected) {
                let cmds = self.apply_event(StageEvent::ReliableDetection, &mut events)?;
                self.run_commands(cmds, t, &mut events)?;
            }
        }

        // 4. operator requests
        if input.abort && self.stage.mode() != StageMode::TeleopCoarse && self.stage.mode() != StageMode::Reconnected {
            let cmds = self.apply_event(StageEvent::Abort { reason: AbortReason::Operator }, &mut events)?;
            self.run_commands(cmds, t, &mut events)?;
        }
        if self.stage.mode() == StageMode::TagAcquired {
            let pulled = leader.is_some() && self.prev_trigger < CONFIRM_THRESHOLD && trigger >= CONFIRM_THRESHOLD;
            if pulled || input.gripper == Some(GripperCommand::Close) {
                self.begin_stage_two(t, &mut events)?;
            }
        }

        // 5. Stage II
        let finished = self.active.as_ref().map_or(true, |a| a.finished(t));
        match self.stage.mode() {
            StageMode::Aligning if finished => {
                let ee = self.sim.world().ee_pose;
                let target = *self.stage.grasp_target().expect("grasp target is set while aligning");
                events.push(LogEvent::Alignment {
                    position_error: position_error(&target.translation, &ee.translation),
                    orientation_error: orientation_error(&target.rotation, &ee.rotation),
                });
                let cmds = self.apply_event(StageEvent::AlignmentDone, &mut events)?;
                self.run_commands(cmds, t, &mut events)?;
            }
            StageMode::Grasping => match report.gripper_event {
                Some(GripperEvent::Attached { .. }) => {
                    let cmds = self.apply_event(StageEvent::GraspClosed, &mut events)?;
                    self.run_commands(cmds, t, &mut events)?;
                }
                Some(GripperEvent::Missed) => {
                    let cmds = self.apply_event(StageEvent::Abort { reason: AbortReason::GraspFailed }, &mut events)?;
                    self.run_commands(cmds, t, &mut events)?;
                }
                _ => {}
            },
            StageMode::Returning if finished => {
                let cmds = self.apply_event(StageEvent::ReturnDone, &mut events)?;
                self.run_commands(cmds, t, &mut events)?;
            }
            _ => {}
        }

        // 6. teleoperation
        let mut teleop_target = None;
        let mode = self.stage.mode();
        if mode.mapping_enabled() {
            match &leader {
                Some((q_l, ..)) => {
                    if self.resync_pending {
                        let gap = (q_l - &self.sim.world().q).amax();
                        if gap < self.scenario.resync_tolerance {
                            self.resync_pending = false;
                            events.push(LogEvent::Resynced);
                        }
                    }
                    if !self.resync_pending {
                        let target = teleop_tick(q_l, true, n)?.expect("mapping enabled");
                        if self.teleop_goal.as_ref() != Some(&target) {
                            self.retarget(&target, t)?;
                        }
                        teleop_target = Some(target.iter().copied().collect());
                        self.teleop_goal = Some(target);

                        if mode != StageMode::TagAcquired {
                            let cmd = match input.gripper {
                                Some(c) => {
                                    self.latch.set(c == GripperCommand::Close);
                                    Some(c)
                                }
                                None => self.latch.update(trigger),
                            };
                            if let Some(c) = cmd {
                                events.push(LogEvent::Gripper { command: c });
                                if let Some(ev) = self.sim.actuate_gripper(c) {
                                    events.push(gripper_log(ev));
                                }
                            }
                        }
                    }
                }
                None => {
                    // Operator absent: the follower holds where it is.
                    self.teleop_goal = None;
                    self.active = None;
                }
            }
        }
        self.prev_trigger = trigger;

        // 7. leader torque
        let torque = match &leader {
            Some((q, qd, qdd, trig)) => Some(self.leader_torque(q, qd, qdd, *trig, dt)?),
            None => {
                self.feedback = FeedbackState::new(n);
                None
            }
        };

        // 8. record
        let w = self.sim.world();
        Ok(TickRecord {
            t,
            q_leader: input.leader.as_ref().map(|s| s.q_leader.clone()),
            trigger,
            gripper_request: input.gripper,
            abort_request: input.abort,
            q_follower: w.q.iter().copied().collect(),
            qd_follower: w.qd.iter().copied().collect(),
            gripper: w.gripper,
            mode: self.stage.mode(),
            teleop_target,
            detections,
            torque,
            ee_pose: PoseRepr::from(&w.ee_pose),
            grasp_target: self.stage.grasp_target().map(PoseRepr::from),
            objects: w.objects.iter().map(|o| ObjectRecord { id: o.id, pose: PoseRepr::from(&o.pose) }).collect(),
            contacts: report.contacts,
            events,
        })
    }

    /// Confirms the grasp in TagAcquired and ticks without operator input
    /// until the autonomous episode hands control back. Returns the records
    /// produced and the final mode.
    pub fn run_stage2(&mut self) -> Result<(Vec<TickRecord>, StageMode), Stage2Error> {
        if self.stage.mode() != StageMode::TagAcquired {
            return Err(Stage2Error::NotReady(self.stage.mode()));
        }
        let confirm = ControlInput { gripper: Some(GripperCommand::Close), ..Default::default() };
        let mut records = vec![self.tick(&confirm)?];
        let limit = (self.scenario.max_duration / self.scenario.dt).round() as usize;
        while self.stage.mode().is_autonomous() {
            if records.len() > limit {
                return Err(Stage2Error::Timeout);
            }
            records.push(self.tick(&ControlInput::default())?);
        }
        let abort = records.iter().flat_map(|r| &r.events).find_map(|e| match e {
            LogEvent::Abort { reason } => Some(*reason),
            _ => None,
        });
        match abort {
            Some(reason) => Err(Stage2Error::Aborted { reason, records }),
            None => Ok((records, self.stage.mode())),
        }
    }

    fn retarget(&mut self, target: &JointVector, t: f64) -> Result<(), ControlError> {
        let q = self.sim.world().q.clone();
        let current = self.active.as_ref().map(|a| (&a.trajectory, t - a.start_time));
        let traj = rate_limited_retarget(self.sim.chain(), current, &q, target)?;
        self.active = Some(ActiveTrajectory { trajectory: traj, start_time: t });
        Ok(())
    }

    fn leader_torque(
        &mut self,
        q: &JointVector,
        qd: &JointVector,
        qdd: &JointVector,
        trigger: f64,
        dt: f64,
    ) -> Result<TorqueStack, ControlError> {
        let params = &self.scenario.leader_torque;
        let state = LeaderState { q: q.clone(), qd: qd.clone(), qdd: qdd.clone(), q_follower: self.sim.world().q.clone() };
        let trig = TriggerState {
            angle: trigger * params.trigger.full_pull_angle,
            grasp_contact: self.sim.world().gripper.attached().is_some(),
        };
        let (stack, next) = total_leader_torque(&self.leader_chain, &state, params, &self.feedback, &trig, dt)?;
        self.feedback = next;
        Ok(stack)
    }
}

fn gripper_log(ev: GripperEvent) -> LogEvent {
    match ev {
        GripperEvent::Attached { object } => LogEvent::Attached { object },
        GripperEvent::Missed => LogEvent::GraspMissed,
        GripperEvent::Released { object } => LogEvent::Released { object },
    }
}

/// Source of operator input for a batch trial.
pub trait Driver {
    fn input(&mut self, t: f64) -> ControlInput;
    /// Whether the trial should end after the tick at `t`.
    fn end(&self, t: f64, idle: bool) -> Option<EndReason>;
}

/// Plays back a leader script: at each tick the most recent sample at or
/// before the tick time is used.
#[derive(Debug, Clone)]
pub struct ScriptDriver {
    samples: Vec<LeaderSample>,
    next: usize,
}

impl ScriptDriver {
    pub fn new(samples: Vec<LeaderSample>) -> Self {
        Self { samples, next: 0 }
    }
}

const TIME_SLACK: f64 = 1e-9;

impl Driver for ScriptDriver {
    fn input(&mut self, t: f64) -> ControlInput {
        while self.next < self.samples.len() && self.samples[self.next].t <= t + TIME_SLACK {
            self.next += 1;
        }
        ControlInput { leader: self.next.checked_sub(1).map(|i| self.samples[i].clone()), ..Default::default() }
    }

    fn end(&self, t: f64, idle: bool) -> Option<EndReason> {
        let last = self.samples.last().map_or(0.0, |s| s.t);
        (idle && t + TIME_SLACK >= last).then_some(EndReason::Completed)
    }
}

/// Feeds back the inputs recorded in a log, tick for tick.
#[derive(Debug, Clone)]
pub struct ReplayDriver {
    inputs: Vec<ControlInput>,
    next: usize,
    end: EndReason,
}

impl ReplayDriver {
    pub fn from_log(log: &DemoLog) -> Self {
        let inputs = log
            .records
            .iter()
            .map(|r| ControlInput {
                leader: r.q_leader.as_ref().map(|q| LeaderSample { t: r.t, q_leader: q.clone(), trigger: r.trigger }),
                gripper: r.gripper_request,
                abort: r.abort_request,
            })
            .collect();
        Self { inputs, next: 0, end: log.end.as_ref().map_or(EndReason::Interrupted, |e| e.reason) }
    }
}

impl Driver for ReplayDriver {
    fn input(&mut self, _t: f64) -> ControlInput {
        let i = self.next;
        self.next += 1;
        self.inputs.get(i).cloned().unwrap_or_default()
    }

    fn end(&self, _t: f64, _idle: bool) -> Option<EndReason> {
        (self.next >= self.inputs.len()).then_some(self.end)
    }
}

/// Runs one trial to completion, handing every record to `sink` as it is
/// produced. The returned log holds all records and the end record.
pub fn run_trial(
    loaded: &LoadedScenario,
    seed: u64,
    driver: &mut dyn Driver,
    sink: &mut dyn FnMut(&TickRecord),
) -> Result<DemoLog, ControlError> {
    let mut ctl = Controller::new(loaded, seed)?;
    let mut log = DemoLog::new(loaded.scenario.clone(), seed);
    let max_ticks = (loaded.scenario.max_duration / loaded.scenario.dt).round() as u64;
    loop {
        let input = driver.input(ctl.simulation().next_time());
        let record = ctl.tick(&input)?;
        sink(&record);
        let t = record.t;
        log.records.push(record);
        let reason = driver.end(t, ctl.is_idle()).or((ctl.simulation().world().tick >= max_ticks).then_some(EndReason::Timeout));
        if let Some(reason) = reason {
            finish(&mut log, t, reason, None);
            break;
        }
    }
    Ok(log)
}

/// Appends the end record, with the evaluated result embedded.
pub fn finish(log: &mut DemoLog, t: f64, reason: EndReason, message: Option<String>) {
    log.end = Some(EndRecord { t, reason, message: message.clone(), result: None });
    let result = evaluate_trial(log).ok();
    log.end = Some(EndRecord { t, reason, message, result });
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("scenario hash mismatch: header {expected}, embedded scenario {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("embedded scenario is invalid: {0}")]
    Scenario(String),
    #[error("replay diverged at record {index} (t = {t})")]
    Divergence { index: usize, t: f64 },
    #[error("replay produced {replayed} records, log has {recorded}")]
    Length { recorded: usize, replayed: usize },
    #[error("replayed result {replayed:?} differs from recorded {recorded:?}")]
    Result { recorded: Option<TrialResult>, replayed: Option<TrialResult> },
}

/// Re-executes a log from its embedded scenario and recorded inputs and
/// checks every regenerated record is bitwise identical.
pub fn replay(log: &DemoLog) -> Result<DemoLog, ReplayError> {
    replay_with(log, &mut |_| {})
}

/// `replay`, handing each regenerated record to `sink` as it is produced.
pub fn replay_with(log: &DemoLog, sink: &mut dyn FnMut(&TickRecord)) -> Result<DemoLog, ReplayError> {
    let actual = log.header.scenario.hash();
    if actual != log.header.scenario_hash {
        return Err(ReplayError::HashMismatch { expected: log.header.scenario_hash.clone(), actual });
    }
    let loaded = log.header.scenario.clone().resolve(None).map_err(ReplayError::Scenario)?;
    let mut driver = ReplayDriver::from_log(log);
    let out = run_trial(&loaded, log.header.seed, &mut driver, sink)?;
    for (i, (a, b)) in log.records.iter().zip(&out.records).enumerate() {
        let same = serde_json::to_string(a).ok() == serde_json::to_string(b).ok();
        if !same {
            return Err(ReplayError::Divergence { index: i, t: a.t });
        }
    }
    if out.records.len() != log.records.len() {
        return Err(ReplayError::Length { recorded: log.records.len(), replayed: out.records.len() });
    }
    let recorded = log.end.as_ref().and_then(|e| e.result.clone());
    let replayed = out.end.as_ref().and_then(|e| e.result.clone());
    if recorded != replayed {
        return Err(ReplayError::Result { recorded, replayed });
    }
    Ok(out)
}
