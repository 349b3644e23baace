mod common;

use std::time::Duration;

use common::{is_error, start, start_default, Client};
use futures::{SinkExt, StreamExt};
use teleop_core::control::{finish, replay};
use teleop_core::metrics::{DemoLog, EndReason};
use teleop_core::planner::Profile1d;
use teleop_protocol::{ErrorCode, Message, Role};
use tokio::time::{sleep, Instant};
use tokio_tungstenite::tungstenite::Message as WsMessage;

const WAIT: Duration = Duration::from_secs(2);

fn error_code(m: &Message) -> Option<ErrorCode> {
    match m {
        Message::Error { code, .. } => Some(*code),
        _ => None,
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn operator_handshake_and_snapshot() {
    let h = start_default().await;
    let mut c = Client::connect(h.tcp).await;
    let (before, w) = c.hello(Role::Operator).await;
    assert!(before.is_empty());
    assert_eq!(w.role, Role::Operator);
    assert_eq!(w.n, 6);
    assert_eq!(w.joints.len(), 6);
    assert_eq!(w.q.len(), 6);
    match c.recv(WAIT).await.unwrap() {
        Message::WorldSnapshot(s) => {
            assert_eq!(s.link_points.len(), 7);
            assert_eq!(s.q.len(), 6);
        }
        m => panic!("expected a snapshot, got {m:?}"),
    }
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn observer_gets_latest_snapshot_on_join() {
    let h = start_default().await;
    sleep(Duration::from_millis(300)).await;
    let mut c = Client::connect(h.tcp).await;
    let (_, w) = c.hello(Role::Observer).await;
    assert_eq!(w.role, Role::Observer);
    let Some(Message::WorldSnapshot(s)) = c.recv(WAIT).await else { panic!("no snapshot") };
    assert!(s.t > 0.0, "snapshot should be from a running loop, t = {}", s.t);
    assert!(c.recv_until(WAIT, |m| matches!(m, Message::FollowerJointState { .. })).await.is_some());
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn second_operator_is_demoted() {
    let h = start_default().await;
    let mut a = Client::connect(h.tcp).await;
    let mut b = Client::connect(h.tcp).await;
    assert_eq!(a.hello(Role::Operator).await.1.role, Role::Operator);
    let (before, w) = b.hello(Role::Operator).await;
    assert_eq!(before.len(), 1);
    assert_eq!(error_code(&before[0]), Some(ErrorCode::RoleConflict));
    assert_eq!(w.role, Role::Observer);

    let t = b.tick();
    b.send(&Message::Abort { t }).await;
    let e = b.recv_until(WAIT, is_error).await.unwrap();
    assert_eq!(error_code(&e), Some(ErrorCode::NotOperator));

    // Once the operator leaves, the role is free again.
    drop(a);
    sleep(Duration::from_millis(200)).await;
    let mut c = Client::connect(h.tcp).await;
    assert_eq!(c.hello(Role::Operator).await.1.role, Role::Operator);
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn connect_storm_grants_one_operator() {
    let h = start_default().await;
    let tasks: Vec<_> = (0..24)
        .map(|_| {
            let addr = h.tcp;
            tokio::spawn(async move {
                let mut c = Client::connect(addr).await;
                let (before, w) = c.hello(Role::Operator).await;
                (before, w.role, c)
            })
        })
        .collect();
    let mut operators = 0;
    let mut conflicts = 0;
    let mut clients = Vec::new();
    for t in tasks {
        let (before, role, c) = t.await.unwrap();
        operators += usize::from(role == Role::Operator);
        conflicts += before.iter().filter(|m| error_code(m) == Some(ErrorCode::RoleConflict)).count();
        clients.push(c);
    }
    assert_eq!(operators, 1);
    assert_eq!(conflicts, 23);
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn protocol_violations_get_errors_and_keep_the_connection() {
    let h = start_default().await;
    let mut c = Client::connect(h.tcp).await;

    c.leader(&h.q0, 0.0).await;
    assert_eq!(error_code(&c.recv_until(WAIT, is_error).await.unwrap()), Some(ErrorCode::HandshakeRequired));

    let body = br#"{"type":"Teleport","t":0.5}"#;
    let mut frame = (body.len() as u32).to_be_bytes().to_vec();
    frame.extend_from_slice(body);
    c.send_raw(&frame).await;
    assert_eq!(error_code(&c.recv_until(WAIT, is_error).await.unwrap()), Some(ErrorCode::UnknownType));

    let body = br#"{"type":"Heartbeat","t":"soon"}"#;
    let mut frame = (body.len() as u32).to_be_bytes().to_vec();
    frame.extend_from_slice(body);
    c.send_raw(&frame).await;
    assert_eq!(error_code(&c.recv_until(WAIT, is_error).await.unwrap()), Some(ErrorCode::MalformedFrame));

    c.t = 1.0;
    assert_eq!(c.hello(Role::Operator).await.1.role, Role::Operator);

    c.leader(&h.q0[..5], 0.0).await;
    assert_eq!(error_code(&c.recv_until(WAIT, is_error).await.unwrap()), Some(ErrorCode::MalformedFrame));

    c.leader(&h.q0, 1.5).await;
    assert_eq!(error_code(&c.recv_until(WAIT, is_error).await.unwrap()), Some(ErrorCode::MalformedFrame));

    c.send(&Message::Heartbeat { t: 0.2 }).await;
    assert_eq!(error_code(&c.recv_until(WAIT, is_error).await.unwrap()), Some(ErrorCode::NonMonotonicTime));

    let t = c.tick();
    c.send(&Message::FollowerJointState { t, q: h.q0.clone(), qd: vec![0.0; 6] }).await;
    assert_eq!(error_code(&c.recv_until(WAIT, is_error).await.unwrap()), Some(ErrorCode::UnexpectedMessage));

    // Still served.
    assert!(c.recv_until(WAIT, |m| matches!(m, Message::FollowerJointState { .. })).await.is_some());
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn truncated_frame_closes_the_stream() {
    let h = start_default().await;
    let mut c = Client::connect(h.tcp).await;
    let mut frame = 100u32.to_be_bytes().to_vec();
    frame.extend_from_slice(br#"{"type":"H"#);
    c.send_raw(&frame).await;
    tokio::io::AsyncWriteExt::shutdown(c.framed.get_mut()).await.unwrap();
    assert!(c.closed_within(WAIT).await);

    let mut d = Client::connect(h.tcp).await;
    let mut huge = u32::MAX.to_be_bytes().to_vec();
    huge.extend_from_slice(b"{}");
    d.send_raw(&huge).await;
    assert!(d.closed_within(WAIT).await);
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn follower_holds_without_an_operator() {
    let h = start_default().await;
    sleep(Duration::from_millis(500)).await;
    let (_, records) = h.stop().await;
    assert!(records.len() > 10);
    for r in &records {
        assert!(r.q_leader.is_none());
        assert_eq!(r.q_follower, records[0].q_follower);
        assert!(r.qd_follower.iter().all(|v| *v == 0.0));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn jog_converges_within_the_planned_time() {
    let h = start_default().await;
    let mut c = Client::connect(h.tcp).await;
    let (_, w) = c.hello(Role::Operator).await;
    let q0 = w.q.clone();
    for _ in 0..10 {
        c.leader(&q0, 0.0).await;
        sleep(Duration::from_millis(10)).await;
    }
    let mut goal = q0.clone();
    goal[0] += 0.1;
    let limits = w.joints[0].limits;
    let planned = Profile1d::rest_to_rest(0.1, limits.velocity, limits.acceleration).duration();
    let budget = Duration::from_secs_f64(planned) + Duration::from_millis(200);

    let start = Instant::now();
    let mut reached = None;
    while start.elapsed() < budget + Duration::from_secs(1) {
        c.leader(&goal, 0.0).await;
        while let Some(m) = c.recv(Duration::from_millis(1)).await {
            if let Message::FollowerJointState { q, .. } = m {
                if reached.is_none() && (q[0] - goal[0]).abs() < 1e-3 {
                    reached = Some(start.elapsed());
                }
            }
        }
        if reached.is_some() {
            break;
        }
        sleep(Duration::from_millis(10)).await;
    }
    let reached = reached.expect("follower never reached the jog target");
    assert!(reached <= budget, "reached after {reached:?}, budget {budget:?} (plan {planned:.3} s)");
    drop(c);

    // The served session replays bit for bit from its log.
    let (scenario, seed) = (h.loaded.scenario.clone(), h.seed);
    let (_, records) = h.stop().await;
    let mut log = DemoLog::new(scenario, seed);
    log.records = records;
    let t = log.records.last().unwrap().t;
    finish(&mut log, t, EndReason::Interrupted, None);
    replay(&log).expect("live session replays");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn silent_operator_times_out_and_the_follower_holds() {
    let h = start(Duration::from_millis(50), Duration::from_millis(300)).await;
    let mut obs = Client::connect(h.tcp).await;
    obs.hello(Role::Observer).await;
    let mut op = Client::connect(h.tcp).await;
    op.hello(Role::Operator).await;
    for _ in 0..5 {
        op.leader(&h.q0, 0.0).await;
        sleep(Duration::from_millis(10)).await;
    }
    let mut goal = h.q0.clone();
    goal[0] += 0.3;
    op.leader(&goal, 0.0).await;
    let silent_from = Instant::now();

    // The observer keeps itself alive while waiting.
    let lost = loop {
        let m = obs.recv(Duration::from_secs(2)).await.expect("observer stream ended");
        if let Message::Heartbeat { t } = m {
            obs.send(&Message::Heartbeat { t }).await;
        }
        if let Message::StageEvent { reason: Some(r), .. } = &m {
            assert_eq!(r, "operator_lost");
            break silent_from.elapsed();
        }
    };
    assert!(lost >= Duration::from_millis(300), "{lost:?}");
    assert!(lost < Duration::from_millis(1000), "{lost:?}");
    assert!(op.closed_within(WAIT).await);

    let mut seen = Vec::new();
    while seen.len() < 20 {
        match obs.recv(WAIT).await.unwrap() {
            Message::FollowerJointState { q, qd, .. } => seen.push((q, qd)),
            Message::Heartbeat { t } => obs.send(&Message::Heartbeat { t }).await,
            _ => {}
        }
    }
    // At most one tick in flight when the loss was applied.
    for (q, qd) in &seen[1..] {
        assert_eq!(q, &seen[1].0);
        assert!(qd.iter().all(|v| *v == 0.0));
    }
    assert!(seen[1].0[0] < goal[0] - 1e-3, "the jog should have been cut short");
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn websocket_clients_speak_the_same_schema() {
    let h = start_default().await;
    let url = format!("ws://{}/ws", h.ws);
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    ws.send(WsMessage::text(r#"{"type":"Hello","t":0.0,"role":"observer"}"#)).await.unwrap();
    let mut texts = Vec::new();
    while texts.len() < 3 {
        match tokio::time::timeout(WAIT, ws.next()).await.unwrap().unwrap().unwrap() {
            WsMessage::Text(t) => texts.push(teleop_protocol::decode_body(t.as_bytes()).unwrap()),
            _ => {}
        }
    }
    assert!(matches!(&texts[0], Message::Welcome(w) if w.role == Role::Observer && w.n == 6));
    assert!(matches!(&texts[1], Message::WorldSnapshot(_)));

    ws.send(WsMessage::text(r#"{"type":"Nope","t":1.0}"#)).await.unwrap();
    let code = loop {
        if let WsMessage::Text(t) = ws.next().await.unwrap().unwrap() {
            if let Message::Error { code, .. } = teleop_protocol::decode_body(t.as_bytes()).unwrap() {
                break code;
            }
        }
    };
    assert_eq!(code, ErrorCode::UnknownType);
    ws.close(None).await.unwrap();
    h.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn shutdown_stops_sessions_and_the_loop() {
    let h = start_default().await;
    let mut c = Client::connect(h.tcp).await;
    c.hello(Role::Observer).await;
    sleep(Duration::from_millis(100)).await;
    let (summary, records) = h.stop().await;
    assert_eq!(summary.ticks as usize, records.len());
    assert!((summary.t - records.last().unwrap().t).abs() < 1e-12);
    assert!(c.closed_within(WAIT).await);
}
