use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message as WsMessage, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::stream::{SplitSink, SplitStream};
use futures::{SinkExt, Stream, StreamExt};
use thiserror::Error;
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::time::{interval_at, Instant, MissedTickBehavior};
use tokio_util::codec::{FramedRead, FramedWrite};

use crate::codec::{check_arity, encode_body, CodecError, FrameCodec, Inbound};
use crate::message::{ErrorCode, JointInfo, Message, Role, Welcome, WorldSnapshot};
use crate::registry::{Claim, SessionId, SessionRegistry};

pub const DEFAULT_TCP_PORT: u16 = 7450;
pub const DEFAULT_WS_PORT: u16 = 7451;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub tcp_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    pub heartbeat_interval: Duration,
    pub heartbeat_timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            tcp_addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_TCP_PORT)),
            ws_addr: SocketAddr::from(([127, 0, 0, 1], DEFAULT_WS_PORT)),
            heartbeat_interval: Duration::from_secs(1),
            heartbeat_timeout: Duration::from_secs(3),
        }
    }
}

#[derive(Debug, Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindError {
    pub addr: SocketAddr,
    #[source]
    pub source: io::Error,
}

/// Operator input forwarded to the control loop, in per-connection order.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlMessage {
    OperatorJoined { session: SessionId },
    OperatorLost { session: SessionId },
    Leader { session: SessionId, q: Vec<f64>, trigger: f64 },
    Gripper { session: SessionId, command: teleop_core::simworld::GripperCommand },
    Abort { session: SessionId },
}

/// Follower state the sessions need without waiting for a broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerStatus {
    pub t: f64,
    pub q: Vec<f64>,
}

/// Session side of the channels between the server and the control loop.
#[derive(Debug)]
pub struct Link {
    pub registry: SessionRegistry,
    pub joints: Vec<JointInfo>,
    to_control: mpsc::Sender<ControlMessage>,
    broadcast: broadcast::Sender<Message>,
    snapshot: watch::Receiver<Option<WorldSnapshot>>,
    follower: watch::Receiver<FollowerStatus>,
}

/// Control-loop side of the channels.
#[derive(Debug)]
pub struct ServiceEnd {
    pub inbound: mpsc::Receiver<ControlMessage>,
    pub broadcast: broadcast::Sender<Message>,
    pub snapshot: watch::Sender<Option<WorldSnapshot>>,
    pub follower: watch::Sender<FollowerStatus>,
}

/// `capacity` bounds the fan-out queue; a session that falls further
/// behind than that is disconnected if it is an observer.
pub fn link(joints: Vec<JointInfo>, q0: Vec<f64>, capacity: usize) -> (Arc<Link>, ServiceEnd) {
    let (to_control, inbound) = mpsc::channel(1024);
    let (broadcast, _) = broadcast::channel(capacity);
    let (snapshot_tx, snapshot) = watch::channel(None);
    let (follower_tx, follower) = watch::channel(FollowerStatus { t: 0.0, q: q0 });
    let link = Link { registry: SessionRegistry::new(), joints, to_control, broadcast: broadcast.clone(), snapshot, follower };
    (Arc::new(link), ServiceEnd { inbound, broadcast, snapshot: snapshot_tx, follower: follower_tx })
}

impl Link {
    fn now(&self) -> f64 {
        self.follower.borrow().t
    }

    fn error(&self, code: ErrorCode, text: impl Into<String>) -> Message {
        Message::Error { t: self.now(), code, text: text.into() }
    }
}

/// Both listeners, bound up front so that a port conflict is reported
/// before anything runs.
pub struct BoundServer {
    tcp: TcpListener,
    ws: TcpListener,
    config: ServerConfig,
}

impl BoundServer {
    pub async fn bind(config: ServerConfig) -> Result<Self, BindError> {
        let tcp = TcpListener::bind(config.tcp_addr).await.map_err(|source| BindError { addr: config.tcp_addr, source })?;
        let ws = TcpListener::bind(config.ws_addr).await.map_err(|source| BindError { addr: config.ws_addr, source })?;
        Ok(Self { tcp, ws, config })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp.local_addr().expect("bound listener has an address")
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws.local_addr().expect("bound listener has an address")
    }

    /// Serves until `shutdown` turns true.
    pub async fn run(self, link: Arc<Link>, shutdown: watch::Receiver<bool>) -> io::Result<()> {
        let cfg = Arc::new(self.config);
        let tcp = tokio::spawn(accept_tcp(self.tcp, link.clone(), cfg.clone(), shutdown.clone()));
        let app = Router::new().route("/ws", get(ws_upgrade)).with_state(WsState { link, cfg, shutdown: shutdown.clone() });
        let mut stop = shutdown;
        axum::serve(self.ws, app)
            .with_graceful_shutdown(async move { stopped(&mut stop).await })
            .await?;
        tcp.await.map_err(io::Error::other)?
    }
}

async fn accept_tcp(
    listener: TcpListener,
    link: Arc<Link>,
    cfg: Arc<ServerConfig>,
    mut shutdown: watch::Receiver<bool>,
) -> io::Result<()> {
    loop {
        tokio::select! {
            _ = stopped(&mut shutdown) => return Ok(()),
            accepted = listener.accept() => {
                let (socket, _) = accepted?;
                let _ = socket.set_nodelay(true);
                tokio::spawn(tcp_session(socket, link.clone(), cfg.clone(), shutdown.clone()));
            }
        }
    }
}

async fn tcp_session(socket: TcpStream, link: Arc<Link>, cfg: Arc<ServerConfig>, shutdown: watch::Receiver<bool>) {
    let (r, w) = socket.into_split();
    let stream = FramedRead::new(r, FrameCodec::default());
    let sink = TcpSink(FramedWrite::new(w, FrameCodec::default()));
    run_session(link, cfg, stream, sink, shutdown).await;
}

#[derive(Clone)]
struct WsState {
    link: Arc<Link>,
    cfg: Arc<ServerConfig>,
    shutdown: watch::Receiver<bool>,
}

async fn ws_upgrade(State(s): State<WsState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket: WebSocket| async move {
        let (sink, stream) = socket.split();
        run_session(s.link, s.cfg, ws_inbound(stream), WsSink(sink), s.shutdown).await;
    })
}

/// Resolves once shutdown is requested or the sender is gone.
pub(crate) async fn stopped(rx: &mut watch::Receiver<bool>) {
    let _ = rx.wait_for(|s| *s).await;
}

fn ws_inbound(stream: SplitStream<WebSocket>) -> impl Stream<Item = io::Result<Inbound>> + Unpin + Send {
    stream.filter_map(|m| async move {
        match m {
            Ok(WsMessage::Text(text)) => Some(Ok(crate::codec::decode_body(text.as_str().as_bytes()))),
            Ok(WsMessage::Binary(bytes)) => Some(Ok(crate::codec::decode_body(&bytes))),
            Ok(WsMessage::Close(_)) => Some(Err(io::Error::new(io::ErrorKind::ConnectionAborted, "closed"))),
            Ok(_) => None,
            Err(e) => Some(Err(io::Error::other(e))),
        }
    })
    .boxed()
}

trait MessageSink: Send {
    fn send_msg(&mut self, m: &Message) -> impl Future<Output = io::Result<()>> + Send;
}

struct TcpSink(FramedWrite<OwnedWriteHalf, FrameCodec>);

impl MessageSink for TcpSink {
    async fn send_msg(&mut self, m: &Message) -> io::Result<()> {
        self.0.send(m).await
    }
}

struct WsSink(SplitSink<WebSocket, WsMessage>);

impl MessageSink for WsSink {
    async fn send_msg(&mut self, m: &Message) -> io::Result<()> {
        let body = encode_body(m).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.0.send(WsMessage::Text(body.into())).await.map_err(io::Error::other)
    }
}

struct Session {
    id: SessionId,
    role: Option<Role>,
    last_t: f64,
}

enum Next {
    Continue,
    Close,
}

async fn run_session<S, K>(
    link: Arc<Link>,
    cfg: Arc<ServerConfig>,
    mut stream: S,
    mut sink: K,
    mut shutdown: watch::Receiver<bool>,
) where
    S: Stream<Item = io::Result<Inbound>> + Unpin,
    K: MessageSink,
{
    let mut session = Session { id: link.registry.open(), role: None, last_t: f64::NEG_INFINITY };
    let mut fanout = link.broadcast.subscribe();
    let mut heartbeat = interval_at(Instant::now() + cfg.heartbeat_interval, cfg.heartbeat_interval);
    heartbeat.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut last_seen = Instant::now();

    loop {
        let next = tokio::select! {
            _ = stopped(&mut shutdown) => Next::Close,
            item = stream.next() => match item {
                Some(Ok(inbound)) => {
                    last_seen = Instant::now();
                    handle(&link, &cfg, &mut session, inbound, &mut sink).await
                }
                _ => Next::Close,
            },
            msg = fanout.recv(), if session.role.is_some() => match msg {
                Ok(m) => send(&mut sink, &m).await,
                Err(broadcast::error::RecvError::Lagged(_)) if session.role == Some(Role::Observer) => Next::Close,
                Err(broadcast::error::RecvError::Lagged(_)) => Next::Continue,
                Err(broadcast::error::RecvError::Closed) => Next::Close,
            },
            _ = heartbeat.tick() => {
                if last_seen.elapsed() > cfg.heartbeat_timeout {
                    Next::Close
                } else if session.role.is_none() {
                    Next::Continue
                } else {
                    send(&mut sink, &Message::Heartbeat { t: link.now() }).await
                }
            }
        };
        if let Next::Close = next {
            break;
        }
    }
    if link.registry.close(session.id) {
        let _ = link.to_control.send(ControlMessage::OperatorLost { session: session.id }).await;
    }
}

async fn send<K: MessageSink>(sink: &mut K, m: &Message) -> Next {
    match sink.send_msg(m).await {
        Ok(()) => Next::Continue,
        Err(_) => Next::Close,
    }
}

async fn handle<K: MessageSink>(
    link: &Link,
    cfg: &ServerConfig,
    session: &mut Session,
    inbound: Inbound,
    sink: &mut K,
) -> Next {
    let msg = match inbound {
        Ok(m) => m,
        Err(CodecError::UnknownType(ty)) => {
            return send(sink, &link.error(ErrorCode::UnknownType, format!("unknown message type `{ty}`"))).await
        }
        Err(e) => return send(sink, &link.error(ErrorCode::MalformedFrame, e.to_string())).await,
    };
    if msg.t() < session.last_t {
        let text = format!("t = {} after t = {}", msg.t(), session.last_t);
        return send(sink, &link.error(ErrorCode::NonMonotonicTime, text)).await;
    }
    session.last_t = msg.t();

    match msg {
        Message::Hello { role, .. } => hello(link, cfg, session, role, sink).await,
        _ if session.role.is_none() => send(sink, &link.error(ErrorCode::HandshakeRequired, "send Hello first")).await,
        Message::Heartbeat { .. } => Next::Continue,
        Message::LeaderJointState { .. } | Message::GripperCommand { .. } | Message::Abort { .. }
            if session.role != Some(Role::Operator) =>
        {
            let text = format!("{} requires the operator role", msg.type_name());
            send(sink, &link.error(ErrorCode::NotOperator, text)).await
        }
        Message::LeaderJointState { q, trigger, .. } => {
            let m = Message::LeaderJointState { t: 0.0, q, trigger };
            if let Err(e) = check_arity(&m, link.joints.len()) {
                return send(sink, &link.error(ErrorCode::MalformedFrame, e.to_string())).await;
            }
            let Message::LeaderJointState { q, trigger, .. } = m else { unreachable!() };
            if !(0.0..=1.0).contains(&trigger) {
                return send(sink, &link.error(ErrorCode::MalformedFrame, format!("trigger {trigger} outside [0, 1]"))).await;
            }
            forward(link, ControlMessage::Leader { session: session.id, q, trigger }).await
        }
        Message::GripperCommand { command, .. } => {
            forward(link, ControlMessage::Gripper { session: session.id, command }).await
        }
        Message::Abort { .. } => forward(link, ControlMessage::Abort { session: session.id }).await,
        other => {
            let text = format!("{} is not accepted from clients", other.type_name());
            send(sink, &link.error(ErrorCode::UnexpectedMessage, text)).await
        }
    }
}

async fn forward(link: &Link, m: ControlMessage) -> Next {
    match link.to_control.send(m).await {
        Ok(()) => Next::Continue,
        Err(_) => Next::Close,
    }
}

async fn hello<K: MessageSink>(link: &Link, cfg: &ServerConfig, session: &mut Session, role: Role, sink: &mut K) -> Next {
    let was_operator = session.role == Some(Role::Operator);
    let granted = match link.registry.claim(session.id, role) {
        Claim::Granted(r) => r,
        Claim::Conflict { holder } => {
            let text = format!("session {holder} holds the operator role; joined as observer");
            if let Next::Close = send(sink, &link.error(ErrorCode::RoleConflict, text)).await {
                return Next::Close;
            }
            Role::Observer
        }
    };
    session.role = Some(granted);
    let control = match (was_operator, granted) {
        (false, Role::Operator) => Some(ControlMessage::OperatorJoined { session: session.id }),
        (true, Role::Observer) => Some(ControlMessage::OperatorLost { session: session.id }),
        _ => None,
    };
    if let Some(c) = control {
        if let Next::Close = forward(link, c).await {
            return Next::Close;
        }
    }
    let status = link.follower.borrow().clone();
    let welcome = Message::Welcome(Welcome {
        t: status.t,
        role: granted,
        n: link.joints.len(),
        joints: link.joints.clone(),
        q: status.q,
        heartbeat_interval: cfg.heartbeat_interval.as_secs_f64(),
        heartbeat_timeout: cfg.heartbeat_timeout.as_secs_f64(),
    });
    if let Next::Close = send(sink, &welcome).await {
        return Next::Close;
    }
    let snapshot = link.snapshot.borrow().clone();
    match snapshot {
        Some(s) => send(sink, &Message::WorldSnapshot(s)).await,
        None => Next::Continue,
    }
}
