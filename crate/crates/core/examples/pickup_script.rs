//! Regenerates `scenarios/pickup_script.ndjson`: a scripted operator that
//! steers over the wall to a pre-grasp pose above the tag, pulls the
//! trigger, holds through the autonomous stage and then lifts away.
//!
//! cargo run -p teleop-core --example pickup_script -- scenarios/pickup.toml

use std::path::PathBuf;

use teleop_core::config::{load_scenario, write_script, LeaderSample};
use teleop_core::control::{run_trial, ScriptDriver};
use teleop_core::kinematics::{IkOptions, JointVector, KinematicChain};
use teleop_core::metrics::evaluate_trial;
use teleop_core::simworld::{check_collision_fk, CollisionShape};
use teleop_core::RigidTransform;

const RATE: f64 = 100.0;
/// Pre-grasp standoff above the grasp frame, m.
const STANDOFF: f64 = 0.25;

fn smoothstep(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

struct Builder<'a> {
    chain: &'a KinematicChain,
    samples: Vec<LeaderSample>,
    q: JointVector,
    trigger: f64,
    t: f64,
}

impl Builder<'_> {
    fn push(&mut self) {
        let q = self.q.iter().map(|v| (v * 1e6).round() / 1e6).collect();
        self.samples.push(LeaderSample { t: (self.t * RATE).round() / RATE, q_leader: q, trigger: self.trigger });
        self.t += 1.0 / RATE;
    }

    fn hold(&mut self, duration: f64) {
        for _ in 0..(duration * RATE).round() as usize {
            self.push();
        }
    }

    /// Smooth joint-space move, paced to stay well under the follower's
    /// velocity limits.
    fn move_to(&mut self, goal: &JointVector) {
        let start = self.q.clone();
        let duration = self
            .chain
            .limits()
            .zip((goal - &start).iter())
            .map(|(l, d)| 1.5 * d.abs() / (0.5 * l.velocity))
            .fold(0.5, f64::max);
        let steps = (duration * RATE).ceil() as usize;
        for k in 1..=steps {
            let s = smoothstep(k as f64 / steps as f64);
            self.q = &start + (goal - &start) * s;
            self.push();
        }
    }

    fn ramp_trigger(&mut self, to: f64, duration: f64) {
        let from = self.trigger;
        let steps = (duration * RATE).round() as usize;
        for k in 1..=steps {
            self.trigger = from + (to - from) * k as f64 / steps as f64;
            self.push();
        }
    }
}

fn path_clearance(chain: &KinematicChain, q: &JointVector, obstacles: &[CollisionShape]) -> f64 {
    let fk = chain.forward_kinematics(q).unwrap();
    let mut c = f64::INFINITY;
    for (link, (a, b)) in fk.link_segments().iter().enumerate() {
        for o in obstacles {
            c = c.min(o.clearance_to_capsule(a, b, chain.joints()[link].link_radius));
        }
    }
    c
}

fn main() {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "scenarios/pickup.toml".into()));
    let loaded = load_scenario(&path).unwrap_or_else(|e| panic!("{e}"));
    let s = &loaded.scenario;
    let chain = &loaded.follower;
    let object = &s.objects[0];
    let grasp = object.grasp_frame();
    let pre = grasp * RigidTransform::from_translation(0.0, 0.0, -STANDOFF);

    let ik = IkOptions { max_iterations: 2000, ..IkOptions::default() };
    let seed = JointVector::from_vec(vec![0.28, 0.2, 1.1, 0.0, 0.27, 0.0]);
    let q_pre = chain.solve_ik(&pre, &seed, &ik).unwrap_or_else(|e| panic!("pre-grasp IK: {e}")).q;
    let q0 = s.initial_q();
    let mut q_via = (&q0 + &q_pre) / 2.0;
    q_via[1] -= 0.5;
    q_via[2] -= 0.4;
    let mut q_lift = q_pre.clone();
    q_lift[1] -= 0.2;
    println!("q_pre = {:?}", q_pre.as_slice());
    println!("q_via = {:?}", q_via.as_slice());

    let direct = (0..=200)
        .map(|k| {
            let q = &q0 + (&q_pre - &q0) * (k as f64 / 200.0);
            path_clearance(chain, &q, &s.obstacles)
        })
        .fold(f64::INFINITY, f64::min);
    println!("direct path clearance = {direct:.3} m");

    let mut b = Builder { chain, samples: Vec::new(), q: q0, trigger: 0.0, t: 0.0 };
    b.hold(0.5);
    b.move_to(&q_via);
    b.move_to(&q_pre);
    b.hold(1.5);
    b.ramp_trigger(0.9, 0.3);
    b.hold(14.0);
    b.move_to(&q_lift);
    b.hold(0.5);

    let mut min_clearance = f64::INFINITY;
    for smp in &b.samples {
        let q = JointVector::from_column_slice(&smp.q_leader);
        let fk = chain.forward_kinematics(&q).unwrap();
        assert!(check_collision_fk(chain, &fk, &s.obstacles).is_empty(), "leader path collides at t = {}", smp.t);
        min_clearance = min_clearance.min(path_clearance(chain, &q, &s.obstacles));
    }
    println!("samples = {}, duration = {:.2} s, min clearance = {min_clearance:.3} m", b.samples.len(), b.t);

    let out = path.parent().unwrap().join(s.script.as_deref().unwrap_or("pickup_script.ndjson"));
    std::fs::write(&out, write_script(&b.samples)).unwrap();
    println!("wrote {}", out.display());

    let mut driver = ScriptDriver::new(b.samples);
    let log = run_trial(&loaded, s.seed, &mut driver, &mut |_| {}).unwrap();
    let modes: Vec<_> = log.records.iter().map(|r| r.mode).collect::<Vec<_>>();
    let mut seen = vec![modes[0]];
    for m in modes {
        if *seen.last().unwrap() != m {
            seen.push(m);
        }
    }
    println!("modes: {seen:?}");
    println!("result: {:?}", evaluate_trial(&log).unwrap());
}
