use teleop_core::shared_control::{
    teleop_tick, AbortReason, StageCommand, StageEvent, StageMachine, StageMode, TransitionError,
};
use teleop_core::simworld::GripperCommand;
use teleop_core::{JointVector, RigidTransform};

use StageMode::*;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Detect,
    Confirm,
    Computed,
    Aligned,
    Closed,
    ReturnNear,
    ReturnFar,
    Abort,
}

const ALPHABET: [Ev; 8] =
    [Ev::Detect, Ev::Confirm, Ev::Computed, Ev::Aligned, Ev::Closed, Ev::ReturnNear, Ev::ReturnFar, Ev::Abort];

/// Reference transition table, written independently of the implementation:
/// (next mode, commands) or None when the event must be rejected.
fn model(mode: StageMode, aborted: bool, ev: Ev) -> Option<(StageMode, Vec<StageCommand>)> {
    use StageCommand::*;
    Some(match (mode, ev) {
        (TeleopCoarse | Reconnected, Ev::Detect) => (TagAcquired, vec![]),
        (TagAcquired, Ev::Confirm) => (Disconnected, vec![DisengageMapping]),
        (TagAcquired, Ev::Abort) => (TeleopCoarse, vec![]),
        (Disconnected, Ev::Computed) => (Aligning, vec![ExecuteApproach]),
        (Aligning, Ev::Aligned) => (Grasping, vec![Gripper(GripperCommand::Close)]),
        (Grasping, Ev::Closed) => (Returning, vec![ReturnToDisconnect]),
        (Disconnected | Aligning, Ev::Abort) => (Returning, vec![ReturnToDisconnect]),
        (Grasping, Ev::Abort) => (Returning, vec![Gripper(GripperCommand::Open), ReturnToDisconnect]),
        (Returning, Ev::Abort) => (Returning, vec![]),
        (Returning, Ev::ReturnNear) => (if aborted { TeleopCoarse } else { Reconnected }, vec![ReengageMapping]),
        _ => return None,
    })
}

fn step_index(m: StageMode) -> usize {
    StageMode::ALL.iter().position(|x| *x == m).unwrap()
}

struct Walk {
    machine: StageMachine,
    aborted: bool,
    modes: Vec<StageMode>,
    events: Vec<Ev>,
    disc: Option<RigidTransform>,
}

struct Stats {
    sequences: usize,
    terminal: usize,
    aborted_terminal: usize,
}

fn pose_at(depth: usize) -> RigidTransform {
    RigidTransform::from_translation(0.1 * depth as f64, 0.05, -0.02 * depth as f64)
}

fn explore(w: &mut Walk, depth: usize, stats: &mut Stats) {
    stats.sequences += 1;
    if depth == 8 {
        return;
    }
    for ev in ALPHABET {
        let mode = w.machine.mode();
        let ee = match ev {
            Ev::ReturnNear => w.machine.disconnect_pose().copied().unwrap_or_else(|| pose_at(depth)),
            Ev::ReturnFar => {
                let d = w.machine.disconnect_pose().copied().unwrap_or_else(|| pose_at(depth));
                d * RigidTransform::from_translation(1e-3, 0.0, 0.0)
            }
            _ => pose_at(depth),
        };
        let event = match ev {
            Ev::Detect => StageEvent::ReliableDetection,
            Ev::Confirm => StageEvent::OperatorConfirm,
            Ev::Computed => StageEvent::GraspPoseComputed { target: pose_at(100) },
            Ev::Aligned => StageEvent::AlignmentDone,
            Ev::Closed => StageEvent::GraspClosed,
            Ev::ReturnNear | Ev::ReturnFar => StageEvent::ReturnDone,
            Ev::Abort => StageEvent::Abort { reason: AbortReason::Operator },
        };
        let before = w.machine.clone();
        let got = w.machine.step(event, &ee);
        let expected = model(mode, w.aborted, ev);
        match (got, expected) {
            (Err(e), None) => {
                assert_eq!(w.machine, before, "rejected event must not change the machine");
                match (ev, e) {
                    (Ev::ReturnFar, TransitionError::ReconnectMismatch { .. }) if mode == Returning => {}
                    (_, TransitionError::InvalidTransition { mode: m, .. }) => assert_eq!(m, mode),
                    (ev, e) => panic!("{ev:?} in {mode:?}: unexpected error {e:?}"),
                }
            }
            (Ok(cmds), Some((next, expected_cmds))) => {
                assert_eq!(w.machine.mode(), next, "{:?} + {ev:?}", w.events);
                assert_eq!(cmds, expected_cmds);
                let saved = (w.aborted, w.disc);
                check_transition(w, mode, ev, &ee);
                w.modes.push(next);
                w.events.push(ev);
                if matches!(next, Reconnected) || (next == TeleopCoarse && mode == Returning) {
                    stats.terminal += 1;
                    if w.aborted {
                        stats.aborted_terminal += 1;
                    }
                    check_terminal_path(&w.modes, &w.events);
                }
                if mode == Returning && ev == Ev::ReturnNear {
                    w.aborted = false;
                    w.disc = None;
                }
                explore(w, depth + 1, stats);
                w.modes.pop();
                w.events.pop();
                w.machine = before;
                w.aborted = saved.0;
                w.disc = saved.1;
            }
            (got, expected) => panic!("{:?} + {ev:?} in {mode:?}: got {got:?}, model {expected:?}", w.events),
        }
    }
}

fn check_transition(w: &mut Walk, from: StageMode, ev: Ev, ee: &RigidTransform) {
    let to = w.machine.mode();
    match (from, ev) {
        (TagAcquired, Ev::Confirm) => {
            assert!(w.disc.is_none(), "one disconnect pose per episode");
            assert_eq!(w.machine.disconnect_pose(), Some(ee));
            w.disc = Some(*ee);
        }
        (_, Ev::Abort) if from != TagAcquired => w.aborted = true,
        _ => {}
    }
    if to.is_autonomous() {
        assert_eq!(w.machine.disconnect_pose(), w.disc.as_ref(), "disconnect pose is immutable until reconnect");
    }
    if matches!(to, Reconnected) || (from == Returning && to == TeleopCoarse) {
        assert!(w.machine.disconnect_pose().is_none());
        assert!(w.machine.grasp_target().is_none());
    }
}

/// Within the last episode, modes advance in Step order; the only skip is
/// an Abort straight to Returning.
fn check_terminal_path(modes: &[StageMode], events: &[Ev]) {
    let start = modes.iter().rposition(|m| *m == TagAcquired).expect("episode starts from TagAcquired");
    for k in start..modes.len() - 1 {
        let (a, b) = (modes[k], modes[k + 1]);
        let ev = events[k];
        let (ia, ib) = (step_index(a), step_index(b));
        let ordered = ib == ia + 1 || (a == Returning && b == Returning);
        let abort_skip = ev == Ev::Abort && b == Returning && ib > ia;
        let abort_exit = a == Returning && b == TeleopCoarse;
        assert!(ordered || abort_skip || abort_exit, "out-of-order {a:?} -> {b:?} via {ev:?} in {modes:?}");
        if abort_exit {
            assert!(events[start..k].contains(&Ev::Abort));
        }
    }
}

#[test]
fn exhaustive_sequences_to_depth_eight() {
    let mut w = Walk {
        machine: StageMachine::default(),
        aborted: false,
        modes: vec![TeleopCoarse],
        events: vec![],
        disc: None,
    };
    let mut stats = Stats { sequences: 0, terminal: 0, aborted_terminal: 0 };
    explore(&mut w, 0, &mut stats);
    assert!(stats.terminal > 0 && stats.aborted_terminal > 0);
    assert!(stats.terminal > stats.aborted_terminal, "the full Step path must also terminate");
    println!("{} accepted sequences, {} reach a terminal state", stats.sequences, stats.terminal);
}

#[test]
fn mapping_output_suppressed_in_autonomous_modes() {
    let q = JointVector::from_column_slice(&[0.1, -0.2, 0.3]);
    for mode in StageMode::ALL {
        let out = teleop_tick(&q, mode.mapping_enabled(), 3).unwrap();
        assert_eq!(out.is_some(), !mode.is_autonomous(), "{mode:?}");
        if let Some(target) = out {
            assert_eq!(target, q);
        }
    }
    assert!(teleop_tick(&q, true, 4).is_err());
}
