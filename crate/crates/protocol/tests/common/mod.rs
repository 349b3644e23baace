#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use teleop_core::config::{load_scenario, LoadedScenario};
use teleop_core::control::Controller;
use teleop_core::metrics::TickRecord;
use teleop_protocol::service::joint_info;
use teleop_protocol::{link, BoundServer, FrameCodec, LiveService, Message, Role, ServerConfig, ServiceConfig, ServiceSummary, Welcome};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio::time::{timeout, Instant};
use tokio_util::codec::Framed;

pub fn scenario() -> LoadedScenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/pickup.toml");
    load_scenario(&path).unwrap()
}

pub struct Harness {
    pub tcp: SocketAddr,
    pub ws: SocketAddr,
    pub loaded: LoadedScenario,
    pub seed: u64,
    pub q0: Vec<f64>,
    stop: watch::Sender<bool>,
    service: JoinHandle<ServiceSummary>,
    server: JoinHandle<std::io::Result<()>>,
    records: Arc<Mutex<Vec<TickRecord>>>,
}

pub async fn start(heartbeat_interval: Duration, heartbeat_timeout: Duration) -> Harness {
    let loaded = scenario();
    let seed = loaded.scenario.seed;
    let controller = Controller::new(&loaded, seed).unwrap();
    let q0: Vec<f64> = controller.simulation().world().q.iter().copied().collect();
    let config = ServerConfig {
        tcp_addr: "127.0.0.1:0".parse().unwrap(),
        ws_addr: "127.0.0.1:0".parse().unwrap(),
        heartbeat_interval,
        heartbeat_timeout,
    };
    let server = BoundServer::bind(config).await.unwrap();
    let (tcp, ws) = (server.tcp_addr(), server.ws_addr());
    let (shared, end) = link(joint_info(&loaded.follower), q0.clone(), 4096);
    let (stop, stopped) = watch::channel(false);
    let records = Arc::new(Mutex::new(Vec::new()));
    let sink_records = records.clone();
    let mut service = LiveService::new(controller, end, loaded.scenario.dt, ServiceConfig::default());
    let service_stop = stopped.clone();
    let service = tokio::spawn(async move {
        let mut sink = move |r: &TickRecord| sink_records.lock().unwrap().push(r.clone());
        service.run(service_stop, &mut sink).await.unwrap()
    });
    let server = tokio::spawn(server.run(shared, stopped));
    Harness { tcp, ws, loaded, seed, q0, stop, service, server, records }
}

pub async fn start_default() -> Harness {
    start(Duration::from_millis(100), Duration::from_secs(3)).await
}

impl Harness {
    pub fn records(&self) -> Vec<TickRecord> {
        self.records.lock().unwrap().clone()
    }

    pub async fn stop(self) -> (ServiceSummary, Vec<TickRecord>) {
        self.stop.send(true).unwrap();
        let summary = timeout(Duration::from_secs(5), self.service).await.expect("service stops").unwrap();
        timeout(Duration::from_secs(5), self.server).await.expect("server stops").unwrap().unwrap();
        let records = self.records.lock().unwrap().clone();
        (summary, records)
    }
}

pub struct Client {
    pub framed: Framed<TcpStream, FrameCodec>,
    pub t: f64,
}

impl Client {
    pub async fn connect(addr: SocketAddr) -> Self {
        let stream = TcpStream::connect(addr).await.unwrap();
        Self { framed: Framed::new(stream, FrameCodec::default()), t: 0.0 }
    }

    pub async fn send(&mut self, m: &Message) {
        self.framed.send(m).await.unwrap();
    }

    pub async fn send_raw(&mut self, bytes: &[u8]) {
        self.framed.get_mut().write_all(bytes).await.unwrap();
    }

    /// Next message, or None on close, a stream error or `wait` elapsing.
    pub async fn recv(&mut self, wait: Duration) -> Option<Message> {
        match timeout(wait, self.framed.next()).await {
            Ok(Some(Ok(Ok(m)))) => Some(m),
            _ => None,
        }
    }

    /// Skips messages until one satisfies `pred`.
    pub async fn recv_until(&mut self, wait: Duration, mut pred: impl FnMut(&Message) -> bool) -> Option<Message> {
        let deadline = Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let m = self.recv(left).await?;
            if pred(&m) {
                return Some(m);
            }
        }
    }

    /// Waits for the connection to close, discarding messages.
    pub async fn closed_within(&mut self, wait: Duration) -> bool {
        let deadline = Instant::now() + wait;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match timeout(left, self.framed.next()).await {
                Err(_) => return false,
                Ok(None) | Ok(Some(Err(_))) => return true,
                Ok(Some(Ok(_))) => {}
            }
        }
    }

    pub fn tick(&mut self) -> f64 {
        self.t += 0.01;
        self.t
    }

    /// Hello and everything up to the Welcome.
    pub async fn hello(&mut self, role: Role) -> (Vec<Message>, Welcome) {
        let t = self.tick();
        self.send(&Message::Hello { t, role }).await;
        let mut before = Vec::new();
        loop {
            match self.recv(Duration::from_secs(2)).await.expect("welcome") {
                Message::Welcome(w) => return (before, w),
                m => before.push(m),
            }
        }
    }

    pub async fn leader(&mut self, q: &[f64], trigger: f64) {
        let t = self.tick();
        self.send(&Message::LeaderJointState { t, q: q.to_vec(), trigger }).await;
    }
}

pub fn is_error(m: &Message) -> bool {
    matches!(m, Message::Error { .. })
}
