//! Planar geometry in position and velocity space.

mod lp;
mod polygon;
mod vec2;
mod vo;

pub use lp::{solve_closest_feasible, solve_min_penetration, LpOutcome, SOLVER_SLACK};
pub use polygon::{convex_hull, minkowski_difference, minkowski_sum, ConvexPolygon};
pub use vec2::{wrap_angle, Vec2};
pub use vo::{velocity_obstacle, velocity_obstacle_with_step, VelocityObstacle, DEFAULT_OVERLAP_STEP};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for geometric predicates, in meters.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("polygon is degenerate (fewer than 3 non-collinear vertices)")]
    Degenerate,
    #[error("vertices are not in strictly convex counter-clockwise order")]
    NotConvex,
    #[error("time horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("half-plane normal has zero length")]
    ZeroNormal,
}

/// Velocity-space constraint: feasible where `(v - point) · normal >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub point: Vec2,
    pub normal: Vec2,
}

impl HalfPlane {
    /// Normalises `normal`; fails for a zero or non-finite normal.
    pub fn new(point: Vec2, normal: Vec2) -> Result<Self, GeometryError> {
        if !point.is_finite() || !normal.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        let normal = normal.normalized().ok_or(GeometryError::ZeroNormal)?;
        Ok(HalfPlane { point, normal })
    }

    /// Signed distance of `v` into the feasible side.
    #[inline]
    pub fn signed_distance(&self, v: Vec2) -> f64 {
        (v - self.point).dot(self.normal)
    }

    #[inline]
    pub fn contains(&self, v: Vec2, slack: f64) -> bool {
        self.signed_distance(v) >= -slack
    }

    /// One inward-facing half-plane per polygon edge.
    pub fn from_polygon(poly: &ConvexPolygon) -> Vec<HalfPlane> {
        (0..poly.len()).map(|i| HalfPlane { point: poly.vertices()[i], normal: -poly.edge_normal(i) }).collect()
    }
}
