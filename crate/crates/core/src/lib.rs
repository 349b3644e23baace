//! Simulation-backed shared-control teleoperation.
//!
//! A leader arm (or a scripted stand-in) drives a simulated follower
//! manipulator through a one-to-one joint mapping. When a fiducial tag on
//! the target is reliably in view and the operator confirms, an autonomous
//! episode takes over: it estimates the object pose from the tag, aligns
//! and grasps, returns to the pose where teleoperation was disengaged and
//! hands control back.

pub mod config;
pub mod control;
pub mod dynamics;
pub mod geometry;
pub mod kinematics;
pub mod metrics;
pub mod perception;
pub mod planner;
pub mod shared_control;
pub mod simworld;

pub use geometry::{RigidTransform, Rotation, UnitQuaternion};
pub use kinematics::{JointVector, KinematicChain};
