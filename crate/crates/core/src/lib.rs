//! Constrained velocity-space motion model for heterogeneous urban traffic.
//!
//! Each agent picks the velocity closest to its preferred velocity inside the
//! intersection of three convex sets: the velocities its low-level controller
//! can track ([`kinematics`]), the collision-avoiding half-planes induced by
//! attended neighbours ([`gamma`]), and lateral-speed limits from the road
//! ([`road`]). On top of the motion model sit a histogram filter over hidden
//! agent inner states ([`inference`]), a crowd simulator ([`simulator`]), a
//! trajectory-prediction harness ([`eval`]) and a belief-tree driving planner
//! ([`planner`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod gamma;
pub mod geometry;
pub mod inference;
pub mod kinematics;
pub mod planner;
pub mod road;
pub mod simulator;

pub use gamma::{AgentId, AgentState, GammaParams, InnerState, IntentionHypothesis};
pub use geometry::{ConvexPolygon, GeometryError, HalfPlane, Vec2, VelocityObstacle};
pub use kinematics::{AgentProfile, CalibratedProfile, KinematicsKind, ProfileRef, TrackableSet};
pub use road::{RoadContext, RoutePath};
