use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::Args;
use teleop_core::config::load_scenario;
use teleop_core::control::Controller;
use teleop_protocol::server::{DEFAULT_TCP_PORT, DEFAULT_WS_PORT};
use teleop_protocol::service::joint_info;
use teleop_protocol::{link, BoundServer, LiveService, ServerConfig, ServiceConfig};
use tokio::sync::watch;

use crate::error::{error_line, CliError};
use crate::logs::TrialLog;

#[derive(Debug, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = DEFAULT_TCP_PORT)]
    pub tcp_port: u16,
    #[arg(long, default_value_t = DEFAULT_WS_PORT)]
    pub ws_port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    /// Seconds between server heartbeats.
    #[arg(long, default_value_t = 1.0)]
    pub heartbeat_interval: f64,
    /// Seconds of client silence before the session is dropped.
    #[arg(long, default_value_t = 3.0)]
    pub heartbeat_timeout: f64,
}

impl NetArgs {
    pub fn server_config(&self) -> Result<ServerConfig, CliError> {
        let secs = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(Duration::from_secs_f64(v))
            } else {
                Err(CliError::Usage(format!("--{name} must be a positive number of seconds, got {v}")))
            }
        };
        Ok(ServerConfig {
            tcp_addr: SocketAddr::new(self.bind, self.tcp_port),
            ws_addr: SocketAddr::new(self.bind, self.ws_port),
            heartbeat_interval: secs("heartbeat-interval", self.heartbeat_interval)?,
            heartbeat_timeout: secs("heartbeat-timeout", self.heartbeat_timeout)?,
        })
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "TELEOP_LOG_DIR", default_value = "logs")]
    pub log_dir: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
}

pub fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| CliError::Runtime(e.to_string()))
}

/// A shutdown flag raised by SIGINT or SIGTERM. Must be called inside the
/// runtime.
pub fn shutdown_on_signal() -> watch::Sender<bool> {
    let (tx, _) = watch::channel(false);
    let flag = tx.clone();
    tokio::spawn(async move {
        #[cfg(unix)]
        {
            use tokio::signal::unix::{signal, SignalKind};
            let mut term = match signal(SignalKind::terminate()) {
                Ok(s) => s,
                Err(_) => {
                    let _ = tokio::signal::ctrl_c().await;
                    let _ = flag.send(true);
                    return;
                }
            };
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = term.recv() => {}
            }
        }
        #[cfg(not(unix))]
        let _ = tokio::signal::ctrl_c().await;
        let _ = flag.send(true);
    });
    tx
}

pub fn cmd_serve(args: ServeArgs) -> Result<ExitCode, CliError> {
    let loaded = load_scenario(&args.scenario)?;
    let config = args.net.server_config()?;
    runtime()?.block_on(async move {
        let server = BoundServer::bind(config).await?;
        let s = &loaded.scenario;
        let seed = args.seed.unwrap_or(s.seed);
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        let path = args.log_dir.join(format!("{}-seed{seed}-serve-{stamp}.ndjson", s.name));
        let mut log = TrialLog::create(path.clone(), s.clone(), seed)?;
        println!("listening tcp={} ws=ws://{}/ws log={}", server.tcp_addr(), server.ws_addr(), path.display());

        let controller = Controller::new(&loaded, seed).map_err(|e| CliError::Runtime(e.to_string()))?;
        let q0: Vec<f64> = controller.simulation().world().q.iter().copied().collect();
        let (shared, end) = link(joint_info(&loaded.follower), q0, 4096);
        let stop = shutdown_on_signal();
        let server_task = tokio::spawn(server.run(shared, stop.subscribe()));
        let mut service = LiveService::new(controller, end, s.dt, ServiceConfig::default());
        let outcome = service.run(stop.subscribe(), &mut |r| log.push(r)).await;
        let _ = stop.send(true);
        let (reason, message, failure) = match outcome {
            Ok(summary) => (summary.reason, None, None),
            Err(e) => (teleop_core::metrics::EndReason::Error, Some(e.to_string()), Some(e.to_string())),
        };
        let (path, _) = log.finish(reason, message)?;
        let _ = server_task.await;
        println!("stopped t={:.2} log={}", service.controller().time(), path.display());
        match failure {
            Some(e) => {
                eprintln!("{}", error_line("runtime", &e));
                Ok(ExitCode::from(1))
            }
            None => Ok(ExitCode::SUCCESS),
        }
    })
}
