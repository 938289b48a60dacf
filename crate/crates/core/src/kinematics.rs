//! Agent kinematic models, their low-level tracking controllers, and offline
//! estimation of the velocity set each controller can follow.
//!
//! A trackable set is estimated per profile by commanding a constant velocity
//! at deviation angle `φ` from the heading, simulating the controller for `τ`
//! seconds and measuring how far the agent strays from the ideal straight
//! trajectory `v·t`. Along each direction the largest speed with error at most
//! `eps_max` is kept, and the convex hull of those boundary velocities (plus
//! the origin) is the set.
//!
//! Tracking runs start with the agent already moving at the commanded speed
//! along its heading, so `φ = 0` tracks perfectly for every profile.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{convex_hull, wrap_angle, ConvexPolygon, GeometryError, Vec2};

/// Integration step of [`simulate_tracking`] during estimation, seconds.
pub const TRACKING_DT: f64 = 0.02;

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("invalid profile `{name}`: {reason}")]
    InvalidProfile { name: String, reason: String },
    #[error("invalid estimation grid: {0}")]
    InvalidGrid(String),
    #[error("profile `{0}` cannot track any non-zero velocity")]
    Degenerate(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("cache line {line}: {reason}")]
    Cache { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KinematicsKind {
    Holonomic,
    CarLike { wheelbase: f64, max_steer: f64 },
}

impl KinematicsKind {
    pub fn is_car_like(&self) -> bool {
        matches!(self, KinematicsKind::CarLike { .. })
    }
}

/// Pure-pursuit lookahead parameters (ignored by holonomic agents).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    /// Lookahead distance per unit speed, seconds.
    pub lookahead_time: f64,
    /// Lower bound on the lookahead distance, meters.
    pub min_lookahead: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains { lookahead_time: 0.8, min_lookahead: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub name: String,
    /// Body-frame footprint, heading along +x.
    pub footprint: ConvexPolygon,
    pub kind: KinematicsKind,
    pub s_max: f64,
    pub a_max: f64,
    pub r_front: f64,
    pub r_rear: f64,
    #[serde(default)]
    pub gains: ControllerGains,
}

impl AgentProfile {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let fail =
            |reason: &str| Err(KinematicsError::InvalidProfile { name: self.name.clone(), reason: reason.to_string() });
        if !(self.s_max > 0.0 && self.s_max.is_finite()) {
            return fail("s_max must be positive");
        }
        if !(self.a_max > 0.0) {
            return fail("a_max must be positive");
        }
        if !(self.r_rear >= 0.0 && self.r_rear <= self.r_front) {
            return fail("attention radii must satisfy 0 <= r_rear <= r_front");
        }
        if let KinematicsKind::CarLike { wheelbase, max_steer } = self.kind {
            if !(wheelbase > 0.0) {
                return fail("wheelbase must be positive");
            }
            if !(max_steer > 0.0 && max_steer < PI / 2.0) {
                return fail("max_steer must lie in (0, pi/2)");
            }
        }
        if !(self.gains.lookahead_time >= 0.0 && self.gains.min_lookahead > 0.0) {
            return fail("controller lookahead must be positive");
        }
        Ok(())
    }

    pub fn pedestrian() -> Self {
        AgentProfile {
            name: "pedestrian".into(),
            footprint: ConvexPolygon::regular(8, 0.3).expect("valid octagon"),
            kind: KinematicsKind::Holonomic,
            s_max: 2.0,
            a_max: 6.0,
            r_front: 15.0,
            r_rear: 5.0,
            gains: ControllerGains::default(),
        }
    }

    pub fn bicycle() -> Self {
        car_like("bicycle", 1.8, 0.6, 1.0, 0.7, 5.0, 2.5)
    }

    pub fn car() -> Self {
        car_like("car", 4.5, 1.8, 2.7, 0.6, 8.0, 3.0)
    }

    pub fn van() -> Self {
        car_like("van", 5.0, 2.0, 3.2, 0.6, 7.0, 2.5)
    }

    pub fn bus() -> Self {
        car_like("bus", 12.0, 2.5, 6.0, 0.55, 6.0, 1.5)
    }

    /// Footprint in world orientation for an agent with `heading`. Holonomic
    /// bodies are treated as orientation-free and never rotate.
    pub fn oriented_footprint(&self, heading: f64) -> ConvexPolygon {
        match self.kind {
            KinematicsKind::Holonomic => self.footprint.clone(),
            KinematicsKind::CarLike { .. } => self.footprint.rotate(heading),
        }
    }

    pub fn builtin() -> Vec<AgentProfile> {
        vec![Self::pedestrian(), Self::bicycle(), Self::car(), Self::van(), Self::bus()]
    }

    pub fn builtin_by_name(name: &str) -> Option<AgentProfile> {
        Self::builtin().into_iter().find(|p| p.name == name)
    }
}

fn car_like(
    name: &str,
    length: f64,
    width: f64,
    wheelbase: f64,
    max_steer: f64,
    s_max: f64,
    a_max: f64,
) -> AgentProfile {
    AgentProfile {
        name: name.into(),
        footprint: ConvexPolygon::rectangle(length, width).expect("valid rectangle"),
        kind: KinematicsKind::CarLike { wheelbase, max_steer },
        s_max,
        a_max,
        r_front: 15.0,
        r_rear: 5.0,
        gains: ControllerGains::default(),
    }
}

/// Position, heading and velocity of a moving agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
}

impl MotionState {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Advances `state` by one step of the profile's controller tracking `v_cmd`.
///
/// Holonomic agents blend their velocity toward the command with the change
/// capped at `a_max·dt`. Car-like agents steer by pure pursuit toward a point
/// ahead along the commanded direction and adjust speed toward `|v_cmd|` at
/// most `a_max·dt` per step, integrated on the kinematic bicycle model.
pub fn controller_step(profile: &AgentProfile, state: &MotionState, v_cmd: Vec2, dt: f64) -> MotionState {
    match profile.kind {
        KinematicsKind::Holonomic => {
            let velocity = state.velocity + (v_cmd - state.velocity).clamp_norm(profile.a_max * dt);
            let heading = if velocity.norm() > 1e-3 { velocity.angle() } else { state.heading };
            MotionState { position: state.position + velocity * dt, heading, velocity }
        }
        KinematicsKind::CarLike { wheelbase, max_steer } => {
            let speed = state.speed();
            let target_speed = v_cmd.norm().min(profile.s_max);
            let new_speed = (speed + (target_speed - speed).clamp(-profile.a_max * dt, profile.a_max * dt)).max(0.0);

            let steer = if target_speed > 1e-9 {
                let alpha = wrap_angle(v_cmd.angle() - state.heading);
                if alpha.abs() >= PI / 2.0 {
                    max_steer.copysign(alpha)
                } else {
                    let lookahead = (profile.gains.lookahead_time * speed).max(profile.gains.min_lookahead);
                    (2.0 * wheelbase * alpha.sin() / lookahead).atan().clamp(-max_steer, max_steer)
                }
            } else {
                0.0
            };

            let heading_change = new_speed * steer.tan() / wheelbase * dt;
            let mid_heading = state.heading + 0.5 * heading_change;
            let heading = wrap_angle(state.heading + heading_change);
            MotionState {
                position: state.position + Vec2::from_angle(mid_heading) * (new_speed * dt),
                heading,
                velocity: Vec2::from_angle(heading) * new_speed,
            }
        }
    }
}

/// Simulates tracking a constant body-frame command `v_target` for
/// `duration` seconds, starting at the origin with heading +x and speed
/// `|v_target|`. Returns `(t, position)` samples including `t = 0`.
pub fn simulate_tracking(profile: &AgentProfile, v_target: Vec2, duration: f64, dt: f64) -> Vec<(f64, Vec2)> {
    let steps = (duration / dt).round().max(1.0) as usize;
    let mut state = MotionState { position: Vec2::ZERO, heading: 0.0, velocity: Vec2::X * v_target.norm() };
    let mut out = Vec::with_capacity(steps + 1);
    out.push((0.0, state.position));
    for k in 1..=steps {
        state = controller_step(profile, &state, v_target, dt);
        out.push((k as f64 * dt, state.position));
    }
    out
}

/// Largest deviation from the ideal trajectory `v·t` over `[0, tau]`.
pub fn tracking_error(profile: &AgentProfile, v: Vec2, tau: f64) -> f64 {
    simulate_tracking(profile, v, tau, TRACKING_DT).iter().map(|&(t, p)| (v * t).distance(p)).fold(0.0, f64::max)
}

/// Estimation grid for [`estimate_trackable_set`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationGrid {
    pub tau: f64,
    pub eps_max: f64,
    pub ds: f64,
    pub dphi: f64,
    pub phi_max: f64,
}

impl EstimationGrid {
    /// Default grid for `kind`: 0.1 m/s, 3°, τ = 3 s, 0.3 m, sweeping 90°
    /// for car-like agents and the full circle for holonomic ones.
    pub fn for_kind(kind: &KinematicsKind) -> Self {
        EstimationGrid {
            tau: 3.0,
            eps_max: 0.3,
            ds: 0.1,
            dphi: 3f64.to_radians(),
            phi_max: if kind.is_car_like() { PI / 2.0 } else { PI },
        }
    }
}

/// Convex set of body-frame velocities the controller can track.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackableSet {
    pub hull: ConvexPolygon,
    pub tau: f64,
    pub eps_max: f64,
    /// Boundary velocities before hulling, ordered by deviation angle from
    /// `-phi_max` to `phi_max`.
    pub boundary: Vec<Vec2>,
}

impl TrackableSet {
    /// The hull rotated into the world frame for an agent with `heading`.
    pub fn world_hull(&self, heading: f64) -> ConvexPolygon {
        self.hull.rotate(heading)
    }
}

/// Deviation angles `0, dphi, 2·dphi, ...` up to `phi_max` (inclusive within
/// rounding).
fn angle_grid(dphi: f64, phi_max: f64) -> Vec<f64> {
    let n = (phi_max / dphi + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * dphi).collect()
}

/// Largest grid speed along deviation `phi` with tracking error within
/// `eps_max`.
pub fn max_trackable_speed(profile: &AgentProfile, phi: f64, tau: f64, eps_max: f64, ds: f64) -> f64 {
    let steps = (profile.s_max / ds + 1e-9).floor() as usize;
    let dir = Vec2::from_angle(phi);
    (1..=steps).rev().map(|k| k as f64 * ds).find(|&s| tracking_error(profile, dir * s, tau) <= eps_max).unwrap_or(0.0)
}

pub fn estimate_trackable_set(profile: &AgentProfile, grid: &EstimationGrid) -> Result<TrackableSet, KinematicsError> {
    profile.validate()?;
    if !(grid.ds > 0.0 && grid.dphi > 0.0 && grid.phi_max > 0.0 && grid.phi_max <= PI + 1e-12) {
        return Err(KinematicsError::InvalidGrid(format!(
            "need ds > 0, dphi > 0, 0 < phi_max <= pi (got ds={}, dphi={}, phi_max={})",
            grid.ds, grid.dphi, grid.phi_max
        )));
    }
    if !(grid.tau > 0.0 && grid.eps_max > 0.0) {
        return Err(KinematicsError::InvalidGrid("tau and eps_max must be positive".into()));
    }

    let phis = angle_grid(grid.dphi, grid.phi_max);
    let speeds: Vec<f64> =
        phis.iter().map(|&phi| max_trackable_speed(profile, phi, grid.tau, grid.eps_max, grid.ds)).collect();
    if speeds.iter().all(|&s| s == 0.0) {
        return Err(KinematicsError::Degenerate(profile.name.clone()));
    }

    // Mirror to negative angles; φ = 0 and φ = π map onto themselves.
    let mut boundary = Vec::with_capacity(2 * phis.len());
    for (&phi, &s) in phis.iter().zip(&speeds).rev() {
        if phi > 0.0 && (PI - phi).abs() > 1e-9 {
            let v = Vec2::from_angle(-phi) * s;
            boundary.push(v);
        }
    }
    for (&phi, &s) in phis.iter().zip(&speeds) {
        boundary.push(Vec2::from_angle(phi) * s);
    }
    let mut points = boundary.clone();
    points.push(Vec2::ZERO);
    let hull = convex_hull(&points)?;
    Ok(TrackableSet { hull, tau: grid.tau, eps_max: grid.eps_max, boundary })
}

/// A profile together with its estimated trackable set.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibratedProfile {
    pub profile: AgentProfile,
    pub trackable: TrackableSet,
}

pub type ProfileRef = Arc<CalibratedProfile>;

impl CalibratedProfile {
    pub fn calibrate(profile: AgentProfile) -> Result<ProfileRef, KinematicsError> {
        let grid = EstimationGrid::for_kind(&profile.kind);
        let trackable = estimate_trackable_set(&profile, &grid)?;
        Ok(Arc::new(CalibratedProfile { profile, trackable }))
    }

    pub fn name(&self) -> &str {
        &self.profile.name
    }
}

/// Calibrates every built-in profile with default grids.
pub fn builtin_calibrated() -> Vec<ProfileRef> {
    AgentProfile::builtin()
        .into_iter()
        .map(|p| CalibratedProfile::calibrate(p).expect("built-in profiles are trackable"))
        .collect()
}

/// One cache record: `profile tau eps vx1 vy1 vx2 vy2 ...`.
pub fn format_cache_record(name: &str, set: &TrackableSet) -> String {
    let mut line = format!("{} {} {}", name, set.tau, set.eps_max);
    for v in set.hull.vertices() {
        let _ = write!(line, " {} {}", v.x, v.y);
    }
    line
}

/// Parses a cache file. Blank lines and lines starting with `#` are skipped.
/// Returned sets carry no pre-hull boundary samples.
pub fn parse_cache(text: &str) -> Result<Vec<(String, TrackableSet)>, KinematicsError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| KinematicsError::Cache { line: idx + 1, reason: reason.to_string() };
        let mut fields = line.split_whitespace();
        let name = fields.next().ok_or_else(|| err("missing profile name"))?.to_string();
        let nums: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| err(&format!("not a number: {f}"))))
            .collect::<Result<_, _>>()?;
        if nums.len() < 8 || !nums.len().is_multiple_of(2) {
            return Err(err("expected tau, eps and at least three vertex pairs"));
        }
        let verts: Vec<Vec2> = nums[2..].chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
        let hull = ConvexPolygon::new(verts).map_err(|e| err(&e.to_string()))?;
        out.push((name, TrackableSet { hull, tau: nums[0], eps_max: nums[1], boundary: Vec::new() }));
    }
    Ok(out)
}
