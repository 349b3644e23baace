//! Demo log (NDJSON) schema, trial evaluation and aggregate statistics.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Scenario;
use crate::dynamics::TorqueStack;
use crate::geometry::{orientation_error, position_error, PoseRepr, RigidTransform};
use crate::shared_control::{AbortReason, StageMode};
use crate::simworld::{ContactReport, GripperCommand, GripperState};

pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("schema mismatch at line {line}: {message}")]
    SchemaMismatch { line: usize, message: String },
    #[error("incomplete log: {0}")]
    IncompleteLog(String),
    #[error("no trials to aggregate")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub scenario_hash: String,
    pub seed: u64,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub tag_id: u32,
    /// Camera-to-tag pose as detected.
    pub pose: PoseRepr,
    pub timestamp: f64,
    /// Resulting base-frame object estimate.
    pub estimate: PoseRepr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u32,
    pub pose: PoseRepr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    Stage { from: StageMode, to: StageMode, event: String },
    Gripper { command: GripperCommand },
    Attached { object: u32 },
    GraspMissed,
    Released { object: u32 },
    Alignment { position_error: f64, orientation_error: f64 },
    Abort { reason: AbortReason },
    Resynced,
    Rejected { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    /// Leader joint positions used this tick (absent without an operator).
    pub q_leader: Option<Vec<f64>>,
    pub trigger: f64,
    /// Explicit gripper request from the operator console.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gripper_request: Option<GripperCommand>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub abort_request: bool,
    pub q_follower: Vec<f64>,
    pub qd_follower: Vec<f64>,
    pub gripper: GripperState,
    pub mode: StageMode,
    /// Follower target produced by the leader mapping this tick.
    pub teleop_target: Option<Vec<f64>>,
    pub detections: Vec<DetectionRecord>,
    pub torque: Option<TorqueStack>,
    pub ee_pose: PoseRepr,
    pub grasp_target: Option<PoseRepr>,
    pub objects: Vec<ObjectRecord>,
    pub contacts: Vec<ContactReport>,
    pub events: Vec<LogEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Completed,
    Timeout,
    Interrupted,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndRecord {
    pub t: f64,
    pub reason: EndReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TrialResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Tick(TickRecord),
    End(EndRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoLog {
    pub header: LogHeader,
    pub records: Vec<TickRecord>,
    pub end: Option<EndRecord>,
}

impl DemoLog {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let scenario_hash = scenario.hash();
        Self { header: LogHeader { version: LOG_VERSION, scenario_hash, seed, scenario }, records: Vec::new(), end: None }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<(), MetricsError> {
        let mut lw = LogWriter::new(w);
        lw.header(&self.header)?;
        for r in &self.records {
            lw.record(r)?;
        }
        if let Some(e) = &self.end {
            lw.end(e)?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Reads a log. The end record may be absent (a header-only file is an
    /// empty log); `evaluate_trial` rejects such logs as incomplete.
    pub fn read<R: BufRead>(r: R) -> Result<Self, MetricsError> {
        let mut header = None;
        let mut records = Vec::new();
        let mut end = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let v: serde_json::Value = serde_json::from_str(&line)
                    .map_err(|e| MetricsError::SchemaMismatch { line: n, message: e.to_string() })?;
                if v.get("kind").and_then(|k| k.as_str()) != Some("header") {
                    return Err(MetricsError::SchemaMismatch { line: n, message: "first line is not a header".into() });
                }
                let version = v.get("version").and_then(|x| x.as_u64());
                if version != Some(LOG_VERSION as u64) {
                    return Err(MetricsError::SchemaMismatch {
                        line: n,
                        message: format!("unsupported log version {version:?}, expected {LOG_VERSION}"),
                    });
                }
            }
            if end.is_some() {
                return Err(MetricsError::SchemaMismatch { line: n, message: "data after end record".into() });
            }
            let parsed: LogLine =
                serde_json::from_str(&line).map_err(|e| MetricsError::SchemaMismatch { line: n, message: e.to_string() })?;
            match parsed {
                LogLine::Header(h) if header.is_none() => header = Some(h),
                LogLine::Header(_) => {
                    return Err(MetricsError::SchemaMismatch { line: n, message: "duplicate header".into() })
                }
                LogLine::Tick(t) => records.push(t),
                LogLine::End(e) => end = Some(e),
            }
        }
        let header = header.ok_or_else(|| MetricsError::IncompleteLog("empty log".into()))?;
        Ok(Self { header, records, end })
    }
}

/// Line-at-a-time log writer; every line is flushed so an interrupted run
/// leaves a readable prefix.
pub struct LogWriter<W: Write> {
    out: W,
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    fn line<T: Serialize>(&mut self, v: &T) -> Result<(), MetricsError> {
        serde_json::to_writer(&mut self.out, v).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn header(&mut self, h: &LogHeader) -> Result<(), MetricsError> {
        self.line(&LogLine::Header(h.clone()))
    }

    pub fn record(&mut self, r: &TickRecord) -> Result<(), MetricsError> {
        self.line(&LogLine::Tick(r.clone()))
    }

    pub fn end(&mut self, e: &EndRecord) -> Result<(), MetricsError> {
        self.line(&LogLine::End(e.clone()))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub success: bool,
    /// s, first leader command to confirmed lift; successful trials only.
    pub completion_time: Option<f64>,
    /// m, at the grasp instant
    pub position_error: Option<f64>,
    /// rad, at the grasp instant
    pub orientation_error: Option<f64>,
    pub collisions: u32,
    pub abort_reason: Option<String>,
}

/// Number of distinct collision events: ticks where contact begins.
pub fn count_collisions(records: &[TickRecord]) -> u32 {
    let mut prev = false;
    let mut n = 0;
    for r in records {
        let now = !r.contacts.is_empty();
        if now && !prev {
            n += 1;
        }
        prev = now;
    }
    n
}

pub fn evaluate_trial(log: &DemoLog) -> Result<TrialResult, MetricsError> {
    let end = log.end.as_ref().ok_or_else(|| MetricsError::IncompleteLog("missing end record".into()))?;
    let scenario = &log.header.scenario;
    let collisions = count_collisions(&log.records);

    let mut alignment = None;
    let mut attached = None;
    let mut abort = None;
    for r in &log.records {
        for e in &r.events {
            match e {
                LogEvent::Alignment { position_error, orientation_error } => {
                    alignment = Some((*position_error, *orientation_error))
                }
                LogEvent::Attached { object } if attached.is_none() => attached = Some(*object),
                LogEvent::Abort { reason } => abort = Some(*reason),
                _ => {}
            }
        }
    }

    let lift_time = attached.and_then(|id| {
        let z0 = log.records.first()?.objects.iter().find(|o| o.id == id)?.pose.translation[2];
        log.records
            .iter()
            .find(|r| {
                r.gripper.attached() == Some(id)
                    && r.objects.iter().any(|o| o.id == id && o.pose.translation[2] - z0 >= scenario.lift_height)
            })
            .map(|r| r.t)
    });
    let first_command = log.records.iter().find(|r| r.q_leader.is_some()).map_or(0.0, |r| r.t);

    let aligned = alignment.is_some_and(|(ep, er)| ep <= scenario.tolerances.position && er <= scenario.tolerances.orientation);
    let success = collisions == 0 && aligned && lift_time.is_some();
    let abort_reason = match (abort, end.reason) {
        (Some(r), _) => Some(serde_json::to_value(r).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
        (None, EndReason::Completed) => None,
        (None, r) => Some(format!("{r:?}").to_lowercase()),
    };
    Ok(TrialResult {
        success,
        completion_time: if success { lift_time.map(|t| t - first_command) } else { None },
        position_error: alignment.map(|a| a.0),
        orientation_error: alignment.map(|a| a.1),
        collisions,
        abort_reason,
    })
}

/// Alignment error of a logged end-effector pose against a logged target.
pub fn pose_errors(ee: &PoseRepr, target: &PoseRepr) -> (f64, f64) {
    let a = RigidTransform::from(ee);
    let b = RigidTransform::from(target);
    (position_error(&b.translation, &a.translation), orientation_error(&b.rotation, &a.rotation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    /// %
    pub success_rate: f64,
    /// s, over successful trials
    pub mean_completion_time: Option<f64>,
    /// m, over trials that reached the grasp
    pub mean_position_error: Option<f64>,
    /// rad, over trials that reached the grasp
    pub mean_orientation_error: Option<f64>,
    /// % of trials with at least one collision
    pub collision_rate: f64,
}

/// Real-hardware figures reported for the full method in a user study
/// (success %, s, m, rad, collision %). Context for reading a summary, not
/// something a desk-scale simulation is expected to reproduce.
pub const HARDWARE_REFERENCE: Summary = Summary {
    trials: 0,
    success_rate: 80.0,
    mean_completion_time: Some(43.56),
    mean_position_error: Some(0.02),
    mean_orientation_error: Some(0.087),
    collision_rate: 5.0,
};

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn aggregate(results: &[TrialResult]) -> Result<Summary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = results.len() as f64;
    Ok(Summary {
        trials: results.len(),
        success_rate: 100.0 * results.iter().filter(|r| r.success).count() as f64 / n,
        mean_completion_time: mean(results.iter().filter(|r| r.success).filter_map(|r| r.completion_time)),
        mean_position_error: mean(results.iter().filter_map(|r| r.position_error)),
        mean_orientation_error: mean(results.iter().filter_map(|r| r.orientation_error)),
        collision_rate: 100.0 * results.iter().filter(|r| r.collisions > 0).count() as f64 / n,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.prec$}"))
}

impl Summary {
    pub const CSV_HEADER: &'static str =
        "trials,success_rate_pct,mean_completion_time_s,mean_position_error_m,mean_orientation_error_rad,collision_rate_pct";

    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.trials,
            self.success_rate,
            self.mean_completion_time.map_or(String::new(), |x| x.to_string()),
            self.mean_position_error.map_or(String::new(), |x| x.to_string()),
            self.mean_orientation_error.map_or(String::new(), |x| x.to_string()),
            self.collision_rate,
        )
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("trials", self.trials.to_string()),
            ("success rate (%)", format!("{:.1}", self.success_rate)),
            ("mean completion time (s)", opt(self.mean_completion_time, 2)),
            ("mean position error (m)", opt(self.mean_position_error, 4)),
            ("mean orientation error (rad)", opt(self.mean_orientation_error, 4)),
            ("collision rate (%)", format!("{:.1}", self.collision_rate)),
        ];
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter().map(|(k, v)| format!("{k:<w$}  {v:>10}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(success: bool, t: Option<f64>, ep: Option<f64>, collisions: u32) -> TrialResult {
        TrialResult {
            success,
            completion_time: t,
            position_error: ep,
            orientation_error: ep.map(|e| e * 10.0),
            collisions,
            abort_reason: None,
        }
    }

    #[test]
    fn aggregate_means() {
        let rs = [
            result(true, Some(10.0), Some(0.002), 0),
            result(true, Some(20.0), Some(0.004), 0),
            result(false, None, None, 2),
            result(false, None, Some(0.03), 0),
        ];
        let s = aggregate(&rs).unwrap();
        assert_eq!(s.trials, 4);
        assert_eq!(s.success_rate, 50.0);
        assert_eq!(s.mean_completion_time, Some(15.0));
        assert!((s.mean_position_error.unwrap() - 0.012).abs() < 1e-15);
        assert_eq!(s.collision_rate, 25.0);
        assert!(s.to_csv().starts_with(Summary::CSV_HEADER));
        assert!(s.to_table().contains("success rate (%)"));
    }

    #[test]
    fn aggregate_empty() {
        assert!(matches!(aggregate(&[]), Err(MetricsError::EmptyInput)));
    }

    #[test]
    fn collision_edges() {
        let base: TickRecord = serde_json::from_value(serde_json::json!({
            "t": 0.0, "q_leader": null, "trigger": 0.0, "q_follower": [], "qd_follower": [],
            "gripper": {"state": "open"}, "mode": "teleop_coarse", "teleop_target": null,
            "detections": [], "torque": null, "ee_pose": {}, "grasp_target": null,
            "objects": [], "contacts": [], "events": []
        }))
        .unwrap();
        let hit = TickRecord { contacts: vec![ContactReport { link: 0, obstacle: 0, clearance: -0.01 }], ..base.clone() };
        let seq = [base.clone(), hit.clone(), hit.clone(), base.clone(), hit.clone(), base];
        assert_eq!(count_collisions(&seq), 2);
    }
}
