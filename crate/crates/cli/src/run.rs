use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::Args;
use teleop_core::config::{load_scenario, load_script, LoadedScenario};
use teleop_core::control::{run_trial, Controller, ScriptDriver};
use teleop_core::metrics::{aggregate, EndReason, TrialResult};
use teleop_protocol::service::joint_info;
use teleop_protocol::{link, BoundServer, LiveService, ServiceConfig};

use crate::error::{error_line, CliError};
use crate::logs::{trial_log_path, TrialLog};
use crate::serve::{runtime, shutdown_on_signal, NetArgs};

#[derive(Debug, Clone, PartialEq)]
pub enum DriverSpec {
    /// The scenario's own script, or the one given.
    Scripted(Option<PathBuf>),
    Network,
}

impl FromStr for DriverSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scripted" => Ok(DriverSpec::Scripted(None)),
            "network" => Ok(DriverSpec::Network),
            _ => match s.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(DriverSpec::Scripted(Some(PathBuf::from(p)))),
                _ => Err(format!("expected `scripted`, `scripted:<path>` or `network`, got `{s}`")),
            },
        }
    }
}

/// Camera noise override, `POSITION,ROTATION` in m and rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub position: f64,
    pub rotation: f64,
}

impl FromStr for Noise {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').collect();
        let [p, r] = parts.as_slice() else {
            return Err(format!("expected POSITION,ROTATION, got `{s}`"));
        };
        let parse = |v: &str| match v.trim().parse::<f64>() {
            Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
            _ => Err(format!("`{v}` is not a non-negative number")),
        };
        Ok(Noise { position: parse(p)?, rotation: parse(r)? })
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Seed of the first trial; trial k uses seed + k. Defaults to the
    /// scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// `scripted`, `scripted:<path>` or `network`.
    #[arg(long, default_value = "scripted")]
    pub driver: DriverSpec,
    #[arg(long, env = "TELEOP_LOG_DIR", default_value = "logs")]
    pub log_dir: PathBuf,
    /// Print the per-trial rows and the summary as CSV.
    #[arg(long)]
    pub csv: bool,
    /// Override the camera noise, `POSITION,ROTATION` (m, rad).
    #[arg(long, value_name = "POS,ROT")]
    pub noise: Option<Noise>,
    /// Override the detection fusion window.
    #[arg(long)]
    pub fusion_window: Option<usize>,
    #[command(flatten)]
    pub net: NetArgs,
}

pub struct TrialRow {
    pub trial: u64,
    pub seed: u64,
    pub log: PathBuf,
    pub reason: EndReason,
    pub result: Option<TrialResult>,
}

pub fn cmd_run(args: RunArgs) -> Result<ExitCode, CliError> {
    let mut loaded = load_scenario(&args.scenario)?;
    if let Some(n) = args.noise {
        loaded.scenario.camera.sigma_position = n.position;
        loaded.scenario.camera.sigma_rotation = n.rotation;
    }
    if let Some(w) = args.fusion_window {
        if w == 0 {
            return Err(CliError::Usage("--fusion-window must be at least 1".into()));
        }
        loaded.scenario.reliability.fusion_window = w;
    }
    let base = args.seed.unwrap_or(loaded.scenario.seed);
    let (rows, errored) = match &args.driver {
        DriverSpec::Scripted(path) => run_scripted(&args, &loaded, path.clone(), base)?,
        DriverSpec::Network => runtime()?.block_on(run_network(&args, &loaded, base))?,
    };
    print!("{}", if args.csv { rows_csv(&rows) } else { rows_table(&rows) });
    let results: Vec<TrialResult> = rows.iter().filter_map(|r| r.result.clone()).collect();
    if let Ok(summary) = aggregate(&results) {
        println!();
        print!("{}", if args.csv { summary.to_csv() } else { summary.to_table() });
    }
    Ok(if errored { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn run_scripted(
    args: &RunArgs,
    loaded: &LoadedScenario,
    path: Option<PathBuf>,
    base: u64,
) -> Result<(Vec<TrialRow>, bool), CliError> {
    let path = path.or_else(|| loaded.script_path.clone()).ok_or_else(|| {
        CliError::Usage("the scenario names no script; use --driver scripted:<path>".into())
    })?;
    let script = load_script(&path)?;
    let mut rows = Vec::new();
    let mut errored = false;
    for trial in 0..args.trials {
        let seed = base + trial;
        let mut log = TrialLog::create(trial_log_path(&args.log_dir, &loaded.scenario, seed, trial), loaded.scenario.clone(), seed)?;
        let mut driver = ScriptDriver::new(script.clone());
        let outcome = run_trial(loaded, seed, &mut driver, &mut |r| log.push(r));
        let (reason, message) = match outcome {
            Ok(done) => (done.end.expect("run_trial ends the log").reason, None),
            Err(e) => {
                errored = true;
                eprintln!("{}", error_line("trial", &format!("trial {trial} (seed {seed}): {e}")));
                (EndReason::Error, Some(e.to_string()))
            }
        };
        let (log, result) = log.finish(reason, message)?;
        rows.push(TrialRow { trial, seed, log, reason, result });
    }
    Ok((rows, errored))
}

async fn run_network(args: &RunArgs, loaded: &LoadedScenario, base: u64) -> Result<(Vec<TrialRow>, bool), CliError> {
    let server = BoundServer::bind(args.net.server_config()?).await?;
    println!("listening tcp={} ws=ws://{}/ws", server.tcp_addr(), server.ws_addr());
    let q0: Vec<f64> = loaded.scenario.initial_q().iter().copied().collect();
    let (shared, end) = link(joint_info(&loaded.follower), q0, 4096);
    let stop = shutdown_on_signal();
    let server_task = tokio::spawn(server.run(shared, stop.subscribe()));
    let s = &loaded.scenario;
    let config = ServiceConfig { trial: true, max_ticks: Some((s.max_duration / s.dt).round() as u64), ..ServiceConfig::default() };
    let controller = |seed| Controller::new(loaded, seed).map_err(|e| CliError::Runtime(e.to_string()));
    let mut service = LiveService::new(controller(base)?, end, s.dt, config);
    let mut rows = Vec::new();
    let mut errored = false;
    for trial in 0..args.trials {
        let seed = base + trial;
        if trial > 0 {
            service.reset(controller(seed)?);
        }
        eprintln!("trial {trial} (seed {seed}): waiting for an operator");
        let mut log = TrialLog::create(trial_log_path(&args.log_dir, s, seed, trial), s.clone(), seed)?;
        let (reason, message) = match service.run(stop.subscribe(), &mut |r| log.push(r)).await {
            Ok(summary) => (summary.reason, None),
            Err(e) => {
                errored = true;
                eprintln!("{}", error_line("trial", &format!("trial {trial} (seed {seed}): {e}")));
                (EndReason::Error, Some(e.to_string()))
            }
        };
        let (path, result) = log.finish(reason, message)?;
        rows.push(TrialRow { trial, seed, log: path, reason, result });
        if reason == EndReason::Interrupted {
            break;
        }
    }
    let _ = stop.send(true);
    server_task.await.map_err(|e| CliError::Runtime(e.to_string()))?.map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((rows, errored))
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.6}"))
}

pub const ROW_CSV_HEADER: &str =
    "trial,seed,end,success,completion_time_s,position_error_m,orientation_error_rad,collisions,abort_reason,log";

fn rows_csv(rows: &[TrialRow]) -> String {
    let mut out = format!("{ROW_CSV_HEADER}\n");
    for r in rows {
        let res = r.result.as_ref();
        let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.trial,
            r.seed,
            format!("{:?}", r.reason).to_lowercase(),
            res.map_or(String::new(), |x| x.success.to_string()),
            f(res.and_then(|x| x.completion_time)),
            f(res.and_then(|x| x.position_error)),
            f(res.and_then(|x| x.orientation_error)),
            res.map_or(String::new(), |x| x.collisions.to_string()),
            res.and_then(|x| x.abort_reason.clone()).unwrap_or_default(),
            r.log.display(),
        ));
    }
    out
}

fn rows_table(rows: &[TrialRow]) -> String {
    let mut out = format!(
        "{:>5} {:>6} {:>11} {:>7} {:>10} {:>10} {:>10} {:>10} {:<12} {}\n",
        "trial", "seed", "end", "success", "time (s)", "e_p (m)", "e_R (rad)", "collisions", "abort", "log"
    );
    for r in rows {
        let res = r.result.as_ref();
        out.push_str(&format!(
            "{:>5} {:>6} {:>11} {:>7} {:>10} {:>10} {:>10} {:>10} {:<12} {}\n",
            r.trial,
            r.seed,
            format!("{:?}", r.reason).to_lowercase(),
            res.map_or("-".into(), |x| x.success.to_string()),
            opt(res.and_then(|x| x.completion_time)),
            opt(res.and_then(|x| x.position_error)),
            opt(res.and_then(|x| x.orientation_error)),
            res.map_or("-".into(), |x| x.collisions.to_string()),
            res.and_then(|x| x.abort_reason.clone()).unwrap_or_else(|| "-".into()),
            r.log.display(),
        ));
    }
    out
}
