use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use teleop_core::config::Scenario;
use teleop_core::control::finish;
use teleop_core::metrics::{evaluate_trial, DemoLog, EndReason, LogWriter, TickRecord, TrialResult};

use crate::error::CliError;

/// A log being written as the trial runs, kept in memory for evaluation.
pub struct TrialLog {
    pub path: PathBuf,
    writer: LogWriter<BufWriter<File>>,
    log: DemoLog,
    failed: Option<String>,
}

impl TrialLog {
    pub fn create(path: PathBuf, scenario: Scenario, seed: u64) -> Result<Self, CliError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut writer = LogWriter::new(BufWriter::new(file));
        let log = DemoLog::new(scenario, seed);
        writer.header(&log.header).map_err(|e| CliError::io(&path, e))?;
        Ok(Self { path, writer, log, failed: None })
    }

    pub fn push(&mut self, r: &TickRecord) {
        if self.failed.is_none() {
            if let Err(e) = self.writer.record(r) {
                self.failed = Some(e.to_string());
            }
        }
        self.log.records.push(r.clone());
    }

    /// Writes the end record and returns the evaluated result.
    pub fn finish(mut self, reason: EndReason, message: Option<String>) -> Result<(PathBuf, Option<TrialResult>), CliError> {
        let t = self.log.records.last().map_or(0.0, |r| r.t);
        finish(&mut self.log, t, reason, message);
        if let Some(e) = self.failed {
            return Err(CliError::io(&self.path, e));
        }
        let end = self.log.end.as_ref().expect("finish sets the end record");
        self.writer.end(end).map_err(|e| CliError::io(&self.path, e))?;
        Ok((self.path, evaluate_trial(&self.log).ok()))
    }
}

pub fn trial_log_path(dir: &Path, scenario: &Scenario, seed: u64, trial: u64) -> PathBuf {
    dir.join(format!("{}-seed{seed}-trial{trial}.ndjson", scenario.name))
}
