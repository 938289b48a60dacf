//! The constrained velocity update.
//!
//! Each agent chooses the velocity closest to its preferred velocity inside
//! the intersection of
//!
//! * its kinematically trackable set, rotated to the current heading,
//! * one half-plane per attended neighbour whose velocity obstacle is within
//!   reach, shifted by the agent's responsibility share of the escape vector,
//! * lateral-speed half-planes from the lane it drives on (car-like agents
//!   only).
//!
//! When that set is empty the contextual half-planes are dropped first; if
//! it is still empty the agent minimises the largest violation of the
//! neighbour half-planes while staying inside its trackable set.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    minkowski_difference, solve_closest_feasible, solve_min_penetration, ConvexPolygon, HalfPlane, LpOutcome, Vec2,
    VelocityObstacle,
};
use crate::kinematics::{controller_step, CalibratedProfile, MotionState, ProfileRef};
use crate::road::{lookahead_waypoint, LaneId, RoadContext, RoutePath};

pub type AgentId = u64;

/// Sides of the polygon standing in for a disk footprint.
const DISK_SIDES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub enum IntentionHypothesis {
    Path(Arc<RoutePath>),
    KeepVelocity,
    KeepAcceleration,
}

impl IntentionHypothesis {
    pub fn label(&self) -> String {
        match self {
            IntentionHypothesis::Path(p) => format!("path{}", p.id),
            IntentionHypothesis::KeepVelocity => "keep_velocity".into(),
            IntentionHypothesis::KeepAcceleration => "keep_acceleration".into(),
        }
    }
}

/// Hidden per-agent variables.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerState {
    pub intention: IntentionHypothesis,
    /// Distracted agents ignore their neighbours.
    pub attentive: bool,
    /// Share of the escape vector this agent absorbs, in `[0, 1]`.
    pub responsibility: f64,
    pub r_front: f64,
    pub r_rear: f64,
}

impl InnerState {
    pub fn new(
        intention: IntentionHypothesis,
        attentive: bool,
        responsibility: f64,
        r_front: f64,
        r_rear: f64,
    ) -> Self {
        InnerState { intention, attentive, responsibility: responsibility.clamp(0.0, 1.0), r_front, r_rear }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub id: AgentId,
    pub profile: ProfileRef,
    pub position: Vec2,
    pub heading: f64,
    pub velocity: Vec2,
    /// Finite-difference acceleration from the last two velocities.
    pub acceleration: Vec2,
    pub inner: InnerState,
    /// Cruise speed for path intentions, m/s.
    pub desired_speed: f64,
}

impl AgentState {
    /// Agent at rest-or-moving with default inner state (keep velocity,
    /// attentive, responsibility 0.5, profile attention radii).
    pub fn new(id: AgentId, profile: ProfileRef, position: Vec2, heading: f64, velocity: Vec2) -> Self {
        let inner = InnerState::new(
            IntentionHypothesis::KeepVelocity,
            true,
            0.5,
            profile.profile.r_front,
            profile.profile.r_rear,
        );
        let desired_speed = profile.profile.s_max;
        AgentState { id, profile, position, heading, velocity, acceleration: Vec2::ZERO, inner, desired_speed }
    }

    pub fn motion(&self) -> MotionState {
        MotionState { position: self.position, heading: self.heading, velocity: self.velocity }
    }

    /// Footprint in world orientation, relative to `position`.
    pub fn oriented_footprint(&self, params: &GammaParams) -> ConvexPolygon {
        if params.disk_footprints {
            let r = self.profile.profile.footprint.circumradius();
            ConvexPolygon::circumscribing_disk(DISK_SIDES, r).expect("positive radius")
        } else {
            self.profile.profile.oriented_footprint(self.heading)
        }
    }

    /// Footprint placed in the world.
    pub fn world_footprint(&self) -> ConvexPolygon {
        self.profile.profile.oriented_footprint(self.heading).translate(self.position)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaParams {
    /// Collision horizon for velocity obstacles, seconds.
    pub tau: f64,
    /// Horizon for lateral road constraints, seconds.
    pub tau1: f64,
    /// Time step used to turn an existing overlap into an escape velocity.
    pub overlap_step: f64,
    /// Responsibility given to agents that do not specify one.
    pub responsibility: f64,
    pub r_front: f64,
    pub r_rear: f64,
    /// Waypoint lookahead is `max(lookahead_min, lookahead_time · speed)`.
    pub lookahead_min: f64,
    pub lookahead_time: f64,
    /// Replace every footprint by a 16-gon around its circumscribed circle.
    pub disk_footprints: bool,
    /// Clearance kept between footprints: the relative-position obstacle is
    /// grown by this much on every side, meters.
    pub safety_margin: f64,
}

impl Default for GammaParams {
    fn default() -> Self {
        GammaParams {
            tau: 3.0,
            tau1: 2.0,
            overlap_step: 0.1,
            responsibility: 0.5,
            r_front: 15.0,
            r_rear: 5.0,
            lookahead_min: 3.0,
            lookahead_time: 1.0,
            disk_footprints: false,
            safety_margin: 0.15,
        }
    }
}

/// Velocity the agent would choose with no one around.
pub fn preferred_velocity(agent: &AgentState, params: &GammaParams, dt: f64) -> Vec2 {
    match &agent.inner.intention {
        IntentionHypothesis::Path(path) => {
            path_velocity(path, agent.position, agent.velocity.norm(), agent.desired_speed, params)
        }
        IntentionHypothesis::KeepVelocity => agent.velocity,
        IntentionHypothesis::KeepAcceleration => {
            // Braking ends at rest instead of reversing.
            let next = agent.velocity + agent.acceleration * dt;
            if next.dot(agent.velocity) < 0.0 {
                Vec2::ZERO
            } else {
                next
            }
        }
    }
}

/// Unit vector toward the lookahead waypoint scaled by `desired_speed`;
/// zero once past the end of `path`.
pub fn path_velocity(path: &RoutePath, position: Vec2, speed: f64, desired_speed: f64, params: &GammaParams) -> Vec2 {
    if path.points().len() < 2 || path.is_past_end(position) {
        return Vec2::ZERO;
    }
    let dist = params.lookahead_min.max(params.lookahead_time * speed);
    let waypoint = lookahead_waypoint(path, position, dist);
    (waypoint - position).normalized().map_or(Vec2::ZERO, |d| d * desired_speed)
}

/// Keeps neighbours within `r_front` in the frontal half-plane of `a`'s
/// heading (perpendicular counts as frontal) or within `r_rear` behind.
pub fn attention_filter<'a>(a: &AgentState, others: &'a [AgentState]) -> Vec<&'a AgentState> {
    let heading = Vec2::from_angle(a.heading);
    others.iter().filter(|b| b.id != a.id && attends(a, heading, b.position)).collect()
}

fn attends(a: &AgentState, heading: Vec2, target: Vec2) -> bool {
    let d = target - a.position;
    let radius = if d.dot(heading) >= 0.0 { a.inner.r_front } else { a.inner.r_rear };
    d.norm_sq() <= radius * radius
}

/// Half-plane in `a`'s velocity space keeping the pair out of collision
/// within `tau`, or `None` when the velocity obstacle cannot be reached by
/// any pair of velocities within the agents' speed limits.
pub fn geometric_constraint(a: &AgentState, b: &AgentState, params: &GammaParams) -> Option<HalfPlane> {
    if out_of_reach(a, b, params) {
        return None;
    }
    constraint_from_region(a, b, &overlap_region(a, b, params), params)
}

fn reach(a: &AgentState, b: &AgentState) -> f64 {
    (a.profile.profile.s_max + b.profile.profile.s_max).max((a.velocity - b.velocity).norm())
}

/// Cheap bound: every velocity in the obstacle is at least as long as the
/// footprint clearance over the horizon.
fn out_of_reach(a: &AgentState, b: &AgentState, params: &GammaParams) -> bool {
    let ra = body_radius(a, params);
    let rb = body_radius(b, params);
    let clearance = a.position.distance(b.position) - ra - rb - params.safety_margin;
    clearance / params.tau > reach(a, b)
}

/// Circumradius of the footprint used in constraints.
fn body_radius(agent: &AgentState, params: &GammaParams) -> f64 {
    let r = agent.profile.profile.footprint.circumradius();
    if params.disk_footprints {
        r / (std::f64::consts::PI / DISK_SIDES as f64).cos()
    } else {
        r
    }
}

/// `B ⊖ A` grown by the safety margin, relative to `b.position - a.position`.
fn overlap_region(a: &AgentState, b: &AgentState, params: &GammaParams) -> ConvexPolygon {
    let base = minkowski_difference(&b.oriented_footprint(params), &a.oriented_footprint(params));
    if params.safety_margin > 0.0 {
        base.offset(params.safety_margin)
    } else {
        base
    }
}

/// Footprints that keep their world orientation whatever the heading.
fn fixed_orientation(agent: &AgentState, params: &GammaParams) -> bool {
    params.disk_footprints || !agent.profile.profile.kind.is_car_like()
}

fn constraint_from_region(
    a: &AgentState,
    b: &AgentState,
    region: &ConvexPolygon,
    params: &GammaParams,
) -> Option<HalfPlane> {
    let v_rel = a.velocity - b.velocity;
    let reach = reach(a, b);
    let vo = VelocityObstacle::from_base(region.translate(b.position - a.position), params.tau, params.overlap_step);
    if !vo.contains(v_rel) {
        let (to_vo, _) = vo.closest_boundary_escape(Vec2::ZERO);
        if !vo.contains(Vec2::ZERO) && to_vo.norm() > reach {
            return None;
        }
    }
    let (u, n) = vo.closest_boundary_escape(v_rel);
    Some(HalfPlane { point: a.velocity + u * a.inner.responsibility, normal: n })
}

/// Lateral-speed constraints from the lane under a car-like agent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ContextualConstraints {
    pub halfplanes: Vec<HalfPlane>,
    /// Set when the agent could not be placed on the lane network.
    pub off_road: bool,
}

pub fn contextual_constraints(agent: &AgentState, context: &RoadContext, tau1: f64) -> ContextualConstraints {
    if !agent.profile.profile.kind.is_car_like() {
        return ContextualConstraints::default();
    }
    let lane_id = route_lane(agent).or_else(|| context.locate(agent.position).map(|l| l.lane));
    let Some(lane) = lane_id.and_then(|id| context.lane(id)) else {
        return ContextualConstraints { halfplanes: Vec::new(), off_road: true };
    };
    let proj = lane.centerline.project(agent.position);
    if proj.distance > crate::road::OFF_ROAD_DISTANCE {
        return ContextualConstraints { halfplanes: Vec::new(), off_road: true };
    }
    let left = proj.tangent.perp();
    let half = 0.5 * lane.width;
    let mut halfplanes = Vec::with_capacity(2);
    if lane.left_boundary.constrains() {
        let d = half - proj.lateral;
        halfplanes.push(HalfPlane { point: left * (d / tau1), normal: -left });
    }
    if lane.right_boundary.constrains() {
        let d = half + proj.lateral;
        halfplanes.push(HalfPlane { point: -left * (d / tau1), normal: left });
    }
    ContextualConstraints { halfplanes, off_road: false }
}

/// Lane under the agent according to its own route, if it follows one.
fn route_lane(agent: &AgentState) -> Option<LaneId> {
    match &agent.inner.intention {
        IntentionHypothesis::Path(path) => {
            let (s, _) = path.project(agent.position);
            path.lane_at(s)
        }
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relaxation {
    None,
    DroppedContext,
    MinPenetration,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityDecision {
    pub velocity: Vec2,
    pub preferred: Vec2,
    pub relaxation: Relaxation,
    pub off_road: bool,
}

/// Geometric half-planes from attended neighbours, in ascending id order.
pub fn neighbor_constraints(agent: &AgentState, neighbors: &[AgentState], params: &GammaParams) -> Vec<HalfPlane> {
    if !agent.inner.attentive {
        return Vec::new();
    }
    let mut attended = attention_filter(agent, neighbors);
    attended.sort_by_key(|b| b.id);
    // Regions between fixed-orientation footprints depend only on the two
    // profiles, so they are built once per neighbour profile.
    let mut shared: Vec<(*const CalibratedProfile, ConvexPolygon)> = Vec::new();
    let own_fixed = fixed_orientation(agent, params);
    let mut out = Vec::with_capacity(attended.len());
    for b in attended {
        if out_of_reach(agent, b, params) {
            continue;
        }
        let c = if own_fixed && fixed_orientation(b, params) {
            let key = Arc::as_ptr(&b.profile);
            let idx = match shared.iter().position(|(k, _)| *k == key) {
                Some(i) => i,
                None => {
                    shared.push((key, overlap_region(agent, b, params)));
                    shared.len() - 1
                }
            };
            constraint_from_region(agent, b, &shared[idx].1, params)
        } else {
            constraint_from_region(agent, b, &overlap_region(agent, b, params), params)
        };
        out.extend(c);
    }
    out
}

/// Chooses the new tracking velocity of `agent`.
pub fn gamma_new_velocity(
    agent: &AgentState,
    neighbors: &[AgentState],
    context: Option<&RoadContext>,
    params: &GammaParams,
    dt: f64,
) -> VelocityDecision {
    let preferred = preferred_velocity(agent, params, dt);
    let geometric = neighbor_constraints(agent, neighbors, params);
    let contextual = match context {
        Some(ctx) => contextual_constraints(agent, ctx, params.tau1),
        None => ContextualConstraints::default(),
    };
    select_velocity(agent, preferred, &geometric, &contextual.halfplanes, contextual.off_road)
}

/// Solves the velocity-selection program for explicit constraint sets.
pub fn select_velocity(
    agent: &AgentState,
    preferred: Vec2,
    geometric: &[HalfPlane],
    contextual: &[HalfPlane],
    off_road: bool,
) -> VelocityDecision {
    let cap = agent.profile.trackable.world_hull(agent.heading);
    let decision = |velocity, relaxation| VelocityDecision { velocity, preferred, relaxation, off_road };

    if !contextual.is_empty() {
        let mut all = Vec::with_capacity(geometric.len() + contextual.len());
        all.extend_from_slice(geometric);
        all.extend_from_slice(contextual);
        if let LpOutcome::Feasible(v) = solve_closest_feasible(preferred, &all, Some(&cap)) {
            return decision(v, Relaxation::None);
        }
        if let LpOutcome::Feasible(v) = solve_closest_feasible(preferred, geometric, Some(&cap)) {
            return decision(v, Relaxation::DroppedContext);
        }
    } else if let LpOutcome::Feasible(v) = solve_closest_feasible(preferred, geometric, Some(&cap)) {
        return decision(v, Relaxation::None);
    }
    let hard = HalfPlane::from_polygon(&cap);
    let (v, _) = solve_min_penetration(preferred, &hard, geometric);
    decision(v, Relaxation::MinPenetration)
}

/// Two-phase update: every agent picks a velocity from the frozen world,
/// then every agent takes one controller step toward it. The result keeps
/// the input order and does not depend on it.
pub fn gamma_step(
    agents: &[AgentState],
    context: Option<&RoadContext>,
    params: &GammaParams,
    dt: f64,
) -> Vec<AgentState> {
    gamma_step_with(agents, &[], context, params, dt)
}

/// As [`gamma_step`], with `visible` agents that others react to but that
/// are not advanced (an externally controlled vehicle, for instance).
pub fn gamma_step_with(
    agents: &[AgentState],
    visible: &[AgentState],
    context: Option<&RoadContext>,
    params: &GammaParams,
    dt: f64,
) -> Vec<AgentState> {
    let joined;
    let everyone = if visible.is_empty() {
        agents
    } else {
        joined = agents.iter().chain(visible).cloned().collect::<Vec<_>>();
        &joined[..]
    };
    let commands: Vec<Vec2> =
        agents.par_iter().map(|a| gamma_new_velocity(a, everyone, context, params, dt).velocity).collect();
    agents.par_iter().zip(commands.par_iter()).map(|(a, &cmd)| advance(a, cmd, dt)).collect()
}

/// One controller step toward `command`, updating the acceleration estimate.
pub fn advance(agent: &AgentState, command: Vec2, dt: f64) -> AgentState {
    let next = controller_step(&agent.profile.profile, &agent.motion(), command, dt);
    let mut out = agent.clone();
    out.acceleration = (next.velocity - agent.velocity) / dt;
    out.position = next.position;
    out.heading = next.heading;
    out.velocity = next.velocity;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{AgentProfile, CalibratedProfile};
    use crate::road::PathSource;

    fn pedestrian() -> ProfileRef {
        CalibratedProfile::calibrate(AgentProfile::pedestrian()).unwrap()
    }

    fn agent(id: AgentId, p: ProfileRef, pos: Vec2, vel: Vec2) -> AgentState {
        let heading = if vel.norm() > 0.0 { vel.angle() } else { 0.0 };
        AgentState::new(id, p, pos, heading, vel)
    }

    #[test]
    fn keep_velocity_returns_current_velocity() {
        let a = agent(1, pedestrian(), Vec2::ZERO, Vec2::new(2.0, 1.0));
        assert_eq!(preferred_velocity(&a, &GammaParams::default(), 0.1), Vec2::new(2.0, 1.0));
    }

    #[test]
    fn keep_acceleration_extrapolates() {
        // Velocities (1, 0) then (2, 0) observed 0.4 s apart.
        let mut a = agent(1, pedestrian(), Vec2::ZERO, Vec2::new(2.0, 0.0));
        a.acceleration = (Vec2::new(2.0, 0.0) - Vec2::new(1.0, 0.0)) / 0.4;
        a.inner.intention = IntentionHypothesis::KeepAcceleration;
        let v = preferred_velocity(&a, &GammaParams::default(), 0.4);
        assert!((v - Vec2::new(3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn straight_path_gives_desired_speed_along_it() {
        let path = Arc::new(RoutePath::from_polyline(0, PathSource::Lane, &[Vec2::ZERO, Vec2::new(50.0, 0.0)]));
        let mut a = agent(1, pedestrian(), Vec2::new(5.0, 0.0), Vec2::ZERO);
        a.inner.intention = IntentionHypothesis::Path(path);
        a.desired_speed = 4.0;
        let v = preferred_velocity(&a, &GammaParams::default(), 0.1);
        assert!((v - Vec2::new(4.0, 0.0)).norm() < 1e-12);
        a.position = Vec2::new(51.0, 0.0);
        assert_eq!(preferred_velocity(&a, &GammaParams::default(), 0.1), Vec2::ZERO);
    }

    #[test]
    fn attention_half_circles() {
        let p = pedestrian();
        let mut a = agent(1, p.clone(), Vec2::ZERO, Vec2::new(1.0, 0.0));
        a.inner.r_front = 10.0;
        a.inner.r_rear = 2.0;
        let ahead = agent(2, p.clone(), Vec2::new(3.0, 0.0), Vec2::ZERO);
        let behind = agent(3, p.clone(), Vec2::new(-3.0, 0.0), Vec2::ZERO);
        let side = agent(4, p, Vec2::new(0.0, 5.0), Vec2::ZERO);
        let others = [ahead, behind, side];
        let ids: Vec<AgentId> = attention_filter(&a, &others).iter().map(|b| b.id).collect();
        assert_eq!(ids, vec![2, 4]);
    }

    #[test]
    fn far_agents_moving_apart_are_unconstrained() {
        let p = pedestrian();
        let a = agent(1, p.clone(), Vec2::ZERO, Vec2::new(-1.0, 0.0));
        let b = agent(2, p, Vec2::new(14.0, 0.0), Vec2::new(1.0, 0.0));
        assert!(geometric_constraint(&a, &b, &GammaParams::default()).is_none());
    }

    #[test]
    fn zero_responsibility_passes_through_current_velocity() {
        let p = pedestrian();
        let mut a = agent(1, p.clone(), Vec2::ZERO, Vec2::new(1.5, 0.0));
        a.inner.responsibility = 0.0;
        let b = agent(2, p, Vec2::new(4.0, 0.0), Vec2::new(-1.5, 0.0));
        let h = geometric_constraint(&a, &b, &GammaParams::default()).unwrap();
        assert!(h.signed_distance(a.velocity).abs() < 1e-12);
    }

    #[test]
    fn head_on_constraints_are_mirror_images() {
        let p = pedestrian();
        let a = agent(1, p.clone(), Vec2::new(-3.0, 0.0), Vec2::new(1.5, 0.0));
        let b = agent(2, p, Vec2::new(3.0, 0.0), Vec2::new(-1.5, 0.0));
        let params = GammaParams::default();
        let ha = geometric_constraint(&a, &b, &params).unwrap();
        let hb = geometric_constraint(&b, &a, &params).unwrap();
        // Point reflection through the origin maps one onto the other.
        assert!((ha.point + hb.point).norm() < 1e-6);
        assert!((ha.normal + hb.normal).norm() < 1e-6);
    }

    #[test]
    fn lone_agent_gets_preferred_velocity_when_trackable() {
        let a = agent(1, pedestrian(), Vec2::ZERO, Vec2::new(1.0, 0.2));
        let d = gamma_new_velocity(&a, &[], None, &GammaParams::default(), 0.1);
        assert!((d.velocity - Vec2::new(1.0, 0.2)).norm() < 1e-9);
        assert_eq!(d.relaxation, Relaxation::None);
    }

    #[test]
    fn empty_world_is_unchanged() {
        assert!(gamma_step(&[], None, &GammaParams::default(), 0.1).is_empty());
    }
}
