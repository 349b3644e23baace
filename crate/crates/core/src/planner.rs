//! Time-parameterized joint trajectories.
//!
//! Every trajectory is built from constant-acceleration segments and stored
//! as waypoints on a fixed sampling grid plus every segment breakpoint.
//! Sampling interpolates linearly between waypoints, which keeps sampled
//! speeds within the per-joint limits.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orientation_error, position_error, RigidTransform};
use crate::kinematics::{IkError, IkOptions, JointLimits, JointVector, KinematicChain, KinematicsError};

/// Waypoint spacing on the sampling grid, s. Matches the 100 Hz control tick.
pub const SAMPLE_PERIOD: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("joint {joint} value {value} lies outside [{lower}, {upper}]")]
    GoalOutOfLimits { joint: usize, value: f64, lower: f64, upper: f64 },
    #[error("inverse kinematics failed along the Cartesian path: {0}")]
    IkFailure(IkError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub time: f64,
    pub positions: JointVector,
    pub velocities: JointVector,
}

/// Waypoints with strictly increasing times, the first at t = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    waypoints: Vec<Waypoint>,
}

impl JointTrajectory {
    /// Stay at `q`.
    pub fn hold(q: JointVector) -> Self {
        let n = q.len();
        Self { waypoints: vec![Waypoint { time: 0.0, positions: q, velocities: JointVector::zeros(n) }] }
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.time)
    }

    pub fn start(&self) -> &JointVector {
        &self.waypoints[0].positions
    }

    pub fn end(&self) -> &JointVector {
        &self.waypoints[self.waypoints.len() - 1].positions
    }

    /// Positions and velocities at `t`, clamped to the trajectory's span.
    /// Past the end the trajectory holds its final position at rest.
    pub fn sample(&self, t: f64) -> (JointVector, JointVector) {
        let wps = &self.waypoints;
        let last = &wps[wps.len() - 1];
        if t >= last.time {
            let v = if wps.len() == 1 || t > last.time {
                JointVector::zeros(last.positions.len())
            } else {
                last.velocities.clone()
            };
            return (last.positions.clone(), v);
        }
        if t <= 0.0 {
            return (wps[0].positions.clone(), wps[0].velocities.clone());
        }
        let k = wps.partition_point(|w| w.time <= t) - 1;
        let (a, b) = (&wps[k], &wps[k + 1]);
        let s = (t - a.time) / (b.time - a.time);
        (
            &a.positions + (&b.positions - &a.positions) * s,
            &a.velocities + (&b.velocities - &a.velocities) * s,
        )
    }

    /// Largest finite-difference speed per joint across consecutive waypoints.
    pub fn max_waypoint_speeds(&self) -> Vec<f64> {
        let n = self.waypoints[0].positions.len();
        let mut out = vec![0.0_f64; n];
        for pair in self.waypoints.windows(2) {
            let dt = pair[1].time - pair[0].time;
            for (i, o) in out.iter_mut().enumerate() {
                *o = o.max((pair[1].positions[i] - pair[0].positions[i]).abs() / dt);
            }
        }
        out
    }
}

/// One-dimensional motion made of constant-acceleration segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile1d {
    x0: f64,
    v0: f64,
    /// (duration, acceleration)
    segments: Vec<(f64, f64)>,
}

impl Profile1d {
    /// Rest-to-rest trapezoid (or triangle) covering `distance` in the
    /// positive direction.
    pub fn rest_to_rest(distance: f64, v_max: f64, a_max: f64) -> Self {
        let mut p = Self { x0: 0.0, v0: 0.0, segments: Vec::new() };
        p.push_rest_to_rest(distance, v_max, a_max);
        p
    }

    fn push_rest_to_rest(&mut self, signed_distance: f64, v_max: f64, a_max: f64) {
        let d = signed_distance.abs();
        if d == 0.0 {
            return;
        }
        let dir = signed_distance.signum();
        let ramp = v_max * v_max / a_max;
        if ramp >= d {
            let t = (d / a_max).sqrt();
            self.push(t, dir * a_max);
            self.push(t, -dir * a_max);
        } else {
            let t = v_max / a_max;
            self.push(t, dir * a_max);
            self.push((d - ramp) / v_max, 0.0);
            self.push(t, -dir * a_max);
        }
    }

    /// Time-optimal-ish move from (x0, v0) to rest at `goal`: brake first if
    /// the current velocity points away from the goal or would overshoot it,
    /// otherwise accelerate, cruise and decelerate.
    pub fn to_rest_at(x0: f64, v0: f64, goal: f64, v_max: f64, a_max: f64) -> Self {
        let v0 = v0.clamp(-v_max, v_max);
        let mut p = Self { x0, v0, segments: Vec::new() };
        let d = goal - x0;
        if d == 0.0 && v0 == 0.0 {
            return p;
        }
        let dir = if d != 0.0 { d.signum() } else { v0.signum() };
        let toward = v0 * dir;
        let dist = d.abs();
        if toward < 0.0 || toward * toward / (2.0 * a_max) > dist {
            let t_stop = v0.abs() / a_max;
            p.push(t_stop, -v0.signum() * a_max);
            let x1 = x0 + 0.5 * v0 * t_stop;
            p.push_rest_to_rest(goal - x1, v_max, a_max);
            return p;
        }
        let peak2 = a_max * dist + 0.5 * toward * toward;
        if peak2 <= v_max * v_max {
            let peak = peak2.sqrt();
            p.push((peak - toward) / a_max, dir * a_max);
            p.push(peak / a_max, -dir * a_max);
        } else {
            let d_up = (v_max * v_max - toward * toward) / (2.0 * a_max);
            let d_down = v_max * v_max / (2.0 * a_max);
            p.push((v_max - toward) / a_max, dir * a_max);
            p.push((dist - d_up - d_down) / v_max, 0.0);
            p.push(v_max / a_max, -dir * a_max);
        }
        p
    }

    fn push(&mut self, duration: f64, accel: f64) {
        if duration > 0.0 {
            self.segments.push((duration, accel));
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.0).sum()
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                t += s.0;
                t
            })
            .collect()
    }

    /// Position and velocity at `t`; holds the final state afterwards.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (mut x, mut v) = (self.x0, self.v0);
        let mut remaining = t.max(0.0);
        for &(dur, acc) in &self.segments {
            let h = remaining.min(dur);
            x += v * h + 0.5 * acc * h * h;
            v += acc * h;
            remaining -= h;
            if remaining <= 0.0 {
                return (x, v);
            }
        }
        (x, if self.segments.is_empty() { self.v0 } else { 0.0 })
    }

    /// Smallest t with eval(t).0 reaching `x` on a monotone increasing profile.
    fn time_at(&self, x: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, self.duration());
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid).0 < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Sampling times on the fixed grid, merged with `extra` breakpoints, ending
/// exactly at `duration`.
fn sample_times(duration: f64, extra: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut times: Vec<f64> = (0..)
        .map(|k| k as f64 * SAMPLE_PERIOD)
        .take_while(|&t| t < duration)
        .chain(extra.into_iter().filter(|&t| t > 0.0 && t < duration))
        .collect();
    times.push(duration);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    times
}

fn check_within(chain: &KinematicChain, q: &JointVector) -> Result<(), PlanError> {
    chain.check_dimension(q)?;
    for (joint, (l, &value)) in chain.limits().zip(q.iter()).enumerate() {
        if !l.contains(value) {
            return Err(PlanError::GoalOutOfLimits { joint, value, lower: l.lower, upper: l.upper });
        }
    }
    Ok(())
}

/// Common-time scale factors so that moving along `delta` at unit path speed
/// respects every joint's limits.
fn path_limits(limits: &[JointLimits], delta: &JointVector) -> (f64, f64) {
    let mut v = f64::INFINITY;
    let mut a = f64::INFINITY;
    for (l, &d) in limits.iter().zip(delta.iter()) {
        if d != 0.0 {
            v = v.min(l.velocity / d.abs());
            a = a.min(l.acceleration / d.abs());
        }
    }
    (v, a)
}

/// Synchronized trapezoidal move: all joints start and stop together,
/// scaled so that the most constrained joint rides its limits.
pub fn plan_joint_trajectory(
    chain: &KinematicChain,
    q_start: &JointVector,
    q_goal: &JointVector,
) -> Result<JointTrajectory, PlanError> {
    check_within(chain, q_start)?;
    check_within(chain, q_goal)?;
    let delta = q_goal - q_start;
    if delta.iter().all(|&d| d == 0.0) {
        return Ok(JointTrajectory::hold(q_goal.clone()));
    }
    let limits: Vec<JointLimits> = chain.limits().copied().collect();
    let (v_s, a_s) = path_limits(&limits, &delta);
    let profile = Profile1d::rest_to_rest(1.0, v_s, a_s);
    let duration = profile.duration();
    let times = sample_times(duration, profile.breakpoints());
    let last = times.len() - 1;
    let waypoints = times
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            if k == last {
                return Waypoint {
                    time: t,
                    positions: q_goal.clone(),
                    velocities: JointVector::zeros(q_goal.len()),
                };
            }
            let (s, sd) = profile.eval(t);
            Waypoint { time: t, positions: q_start + &delta * s, velocities: &delta * sd }
        })
        .collect();
    Ok(JointTrajectory { waypoints })
}

/// Replaces the active trajectory with a fresh plan from the current state
/// toward `q_des` (clamped into the joint limits).
///
/// Each joint gets its own profile that starts from its current velocity,
/// so preemption never introduces a velocity jump.
pub fn rate_limited_retarget(
    chain: &KinematicChain,
    current: Option<(&JointTrajectory, f64)>,
    q_now: &JointVector,
    q_des: &JointVector,
) -> Result<JointTrajectory, PlanError> {
    chain.check_dimension(q_now)?;
    chain.check_dimension(q_des)?;
    let goal = chain.clamp_to_limits(q_des);
    let v_now = match current {
        Some((traj, elapsed)) => traj.sample(elapsed).1,
        None => JointVector::zeros(chain.dof()),
    };
    let profiles: Vec<Profile1d> = chain
        .limits()
        .enumerate()
        .map(|(i, l)| Profile1d::to_rest_at(q_now[i], v_now[i], goal[i], l.velocity, l.acceleration))
        .collect();
    let duration = profiles.iter().map(Profile1d::duration).fold(0.0, f64::max);
    if duration == 0.0 {
        return Ok(JointTrajectory::hold(goal));
    }
    let times = sample_times(duration, profiles.iter().flat_map(Profile1d::breakpoints));
    let n = chain.dof();
    let waypoints = times
        .iter()
        .map(|&t| {
            let mut positions = JointVector::zeros(n);
            let mut velocities = JointVector::zeros(n);
            for (i, p) in profiles.iter().enumerate() {
                let (x, v) = if t >= p.duration() { (goal[i], 0.0) } else { p.eval(t) };
                positions[i] = x;
                velocities[i] = v;
            }
            Waypoint { time: t, positions, velocities }
        })
        .collect();
    Ok(JointTrajectory { waypoints })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartesianOptions {
    /// Translation step between IK waypoints, m.
    pub step_position: f64,
    /// Rotation step between IK waypoints, rad.
    pub step_rotation: f64,
    pub ik: IkOptions,
}

impl Default for CartesianOptions {
    fn default() -> Self {
        Self { step_position: 0.005, step_rotation: 0.02, ik: IkOptions::default() }
    }
}

/// Intermediate poses from `start` to `target` (excluding `start`, ending
/// exactly at `target`), no further apart than the given steps.
pub fn cartesian_waypoints(
    start: &RigidTransform,
    target: &RigidTransform,
    step_position: f64,
    step_rotation: f64,
) -> Vec<RigidTransform> {
    let dist = position_error(&start.translation, &target.translation);
    let angle = orientation_error(&start.rotation, &target.rotation);
    let steps = ((dist / step_position).ceil().max((angle / step_rotation).ceil()) as usize).max(1);
    (1..=steps).map(|k| start.interpolate(target, k as f64 / steps as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartesianPlan {
    pub trajectory: JointTrajectory,
    /// Pose waypoints along the straight line/slerp path.
    pub poses: Vec<RigidTransform>,
    /// IK solution for each pose waypoint.
    pub joint_path: Vec<JointVector>,
}

/// Straight-line approach to `target`: each pose waypoint is solved by IK
/// seeded from the previous solution, then the joint path is retimed under
/// the chain's velocity and acceleration limits.
pub fn plan_cartesian_approach(
    chain: &KinematicChain,
    q_start: &JointVector,
    target: &RigidTransform,
    options: &CartesianOptions,
) -> Result<CartesianPlan, PlanError> {
    check_within(chain, q_start)?;
    let start = chain.end_effector_pose(q_start)?;
    if position_error(&start.translation, &target.translation) <= options.ik.position_tolerance
        && orientation_error(&start.rotation, &target.rotation) <= options.ik.orientation_tolerance
    {
        return Ok(CartesianPlan {
            trajectory: JointTrajectory::hold(q_start.clone()),
            poses: vec![],
            joint_path: vec![],
        });
    }
    let poses = cartesian_waypoints(&start, target, options.step_position, options.step_rotation);
    let mut joint_path = Vec::with_capacity(poses.len());
    let mut seed = q_start.clone();
    for pose in &poses {
        let sol = chain.solve_ik(pose, &seed, &options.ik).map_err(PlanError::IkFailure)?;
        seed = sol.q.clone();
        joint_path.push(sol.q);
    }
    let trajectory = retime_path(chain, q_start, &joint_path);
    Ok(CartesianPlan { trajectory, poses, joint_path })
}

/// Retimes a piecewise-linear joint path with one trapezoidal profile over
/// a normalized path length in which unit speed saturates the slowest joint
/// of each segment.
fn retime_path(chain: &KinematicChain, q_start: &JointVector, path: &[JointVector]) -> JointTrajectory {
    let limits: Vec<JointLimits> = chain.limits().copied().collect();
    let mut nodes = vec![q_start.clone()];
    let mut cumulative = vec![0.0];
    for q in path {
        let delta = q - nodes.last().unwrap();
        let len = limits
            .iter()
            .zip(delta.iter())
            .map(|(l, d)| d.abs() / l.velocity)
            .fold(0.0, f64::max);
        if len > 0.0 {
            cumulative.push(cumulative.last().unwrap() + len);
            nodes.push(q.clone());
        }
    }
    let total = *cumulative.last().unwrap();
    if total == 0.0 {
        return JointTrajectory::hold(q_start.clone());
    }
    let accel = limits.iter().map(|l| l.acceleration / l.velocity).fold(f64::INFINITY, f64::min);
    let profile = Profile1d::rest_to_rest(total, 1.0, accel);
    let duration = profile.duration();
    let corner_times: Vec<f64> = cumulative[1..cumulative.len() - 1].iter().map(|&u| profile.time_at(u)).collect();
    let times = sample_times(duration, profile.breakpoints().into_iter().chain(corner_times.iter().copied()));

    let last_node = nodes.len() - 1;
    let last = times.len() - 1;
    let mut corner = 0;
    let waypoints = times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if k == last {
                return Waypoint {
                    time: t,
                    positions: nodes[last_node].clone(),
                    velocities: JointVector::zeros(q_start.len()),
                };
            }
            let (u, ud) = profile.eval(t);
            while corner + 1 < last_node && cumulative[corner + 1] <= u {
                corner += 1;
            }
            let seg_len = cumulative[corner + 1] - cumulative[corner];
            let s = ((u - cumulative[corner]) / seg_len).clamp(0.0, 1.0);
            let dir = (&nodes[corner + 1] - &nodes[corner]) / seg_len;
            Waypoint {
                time: t,
                positions: &nodes[corner] + (&nodes[corner + 1] - &nodes[corner]) * s,
                velocities: dir * ud,
            }
        })
        .collect();
    JointTrajectory { waypoints }
}

/// Position of the end-effector along a trajectory's waypoints.
pub fn waypoint_positions(chain: &KinematicChain, traj: &JointTrajectory) -> Vec<Vector3<f64>> {
    traj.waypoints()
        .iter()
        .filter_map(|w| chain.end_effector_pose(&w.positions).ok())
        .map(|p| p.translation)
        .collect()
}
