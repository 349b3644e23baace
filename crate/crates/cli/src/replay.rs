use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Args;
use teleop_core::control::replay_with;
use teleop_core::metrics::{DemoLog, MetricsError};

use crate::error::CliError;

fn positive_speed(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err("speed must be a positive finite factor".into()),
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
    /// Pace the replay at this multiple of real time. Without it the replay
    /// runs as fast as possible.
    #[arg(long, value_name = "FACTOR", value_parser = positive_speed)]
    pub speed: Option<f64>,
}

pub fn cmd_replay(args: ReplayArgs) -> Result<ExitCode, CliError> {
    let file = File::open(&args.log).map_err(|e| CliError::io(&args.log, e))?;
    let log = DemoLog::read(BufReader::new(file)).map_err(|source| CliError::Log { path: args.log.clone(), source })?;
    let Some(recorded) = log.end.as_ref() else {
        return Err(CliError::Log { path: args.log, source: MetricsError::IncompleteLog("missing end record".into()) });
    };
    let dt = log.header.scenario.dt;
    let start = Instant::now();
    let mut pace = |r: &teleop_core::metrics::TickRecord| {
        if let Some(speed) = args.speed {
            let due = Duration::from_secs_f64(r.t / speed);
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
    };
    let out = replay_with(&log, &mut pace)?;
    let result = out.end.as_ref().and_then(|e| e.result.clone());
    println!(
        "replay ok: {} records, dt {dt}, end {:?} at t={}, result identical",
        out.records.len(),
        recorded.reason,
        recorded.t
    );
    if let Some(r) = result {
        println!("result: {}", result_line(&r));
    }
    Ok(ExitCode::SUCCESS)
}

fn result_line(r: &teleop_core::metrics::TrialResult) -> String {
    format!(
        "success={} time={} e_p={} e_R={} collisions={} abort={}",
        r.success,
        r.completion_time.map_or("-".into(), |x| x.to_string()),
        r.position_error.map_or("-".into(), |x| x.to_string()),
        r.orientation_error.map_or("-".into(), |x| x.to_string()),
        r.collisions,
        r.abort_reason.as_deref().unwrap_or("-"),
    )
}
