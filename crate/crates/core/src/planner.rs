//! Belief-tree driving along a fixed route.
//!
//! The ego vehicle only chooses a longitudinal acceleration; steering
//! follows its route by pure pursuit. Inside the search, exo agents move
//! under sampled inner states: distracted ones keep their current speed
//! along their intended path, attentive ones pick GAMMA velocities with the
//! ego among their neighbours.
//!
//! The search fixes a set of sampled scenarios (one inner state per exo
//! agent plus a noise stream) and grows a tree of belief nodes. A belief
//! node holds the scenarios that agree on every discretised observation
//! so far. Each node keeps a lower bound, the rollout-policy return until it is expanded
//! and the best action value afterwards, and an upper bound, the speed cost
//! under full acceleration with no collision. Trials descend along the
//! largest upper bound and the widest weighted gap, expand one leaf and
//! back up both bounds. The root action with the best lower bound is
//! returned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::gamma::{gamma_new_velocity, AgentId, AgentState, GammaParams, InnerState, IntentionHypothesis};
use crate::geometry::{wrap_angle, ConvexPolygon, Vec2};
use crate::inference::{
    belief_update, integrate, Belief, HypothesisSpace, InferenceError, Observation, SIMULATION_SIGMA,
};
use crate::kinematics::{KinematicsKind, ProfileRef};
use crate::road::{lookahead_waypoint, LaneId, RoadContext, RoutePath};
use crate::simulator::{step_with, ScenarioConfig, SimError, World};

pub const MAX_EGO_SPEED: f64 = 6.0;
/// Magnitude of the ACC and DEC accelerations, m/s².
pub const ACCELERATION: f64 = 3.0;
pub const COLLISION_PENALTY: f64 = 3000.0;
pub const DECELERATION_PENALTY: f64 = 0.1;
/// Id the ego carries when it appears as a neighbour of exo agents.
pub const EGO_ID: AgentId = 0;
/// Collision checks per transition.
pub const COLLISION_SUBSTEPS: usize = 2;
/// Rollout policy distance bands, meters.
pub const CAUTION_FAR: f64 = 4.0;
pub const CAUTION_NEAR: f64 = 2.0;
/// Half width of the corridor in which the rollout policy looks for
/// frontal agents, added to each agent's radius, meters.
pub const CORRIDOR_HALF_WIDTH: f64 = 1.75;
/// Speed band around the caution speed inside which the rollout policy
/// keeps its speed, m/s.
const CAUTION_BAND: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("no route from lane {from} to lane {to}")]
    Route { from: LaneId, to: LaneId },
    #[error("cannot parse drive scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> PlannerError {
    PlannerError::Invalid { field, reason: reason.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DrivingAction {
    Acc,
    Maintain,
    Dec,
}

impl DrivingAction {
    /// Tie-breaking order of the search.
    pub const ALL: [DrivingAction; 3] = [DrivingAction::Acc, DrivingAction::Maintain, DrivingAction::Dec];

    pub fn acceleration(self) -> f64 {
        match self {
            DrivingAction::Acc => ACCELERATION,
            DrivingAction::Maintain => 0.0,
            DrivingAction::Dec => -ACCELERATION,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DrivingAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DrivingAction::Acc => "ACC",
            DrivingAction::Maintain => "MAINTAIN",
            DrivingAction::Dec => "DEC",
        })
    }
}

/// The controlled vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct EgoState {
    pub position: Vec2,
    pub heading: f64,
    pub path: Arc<RoutePath>,
    /// In `[0, MAX_EGO_SPEED]`.
    pub speed: f64,
    pub profile: ProfileRef,
}

impl EgoState {
    /// On `path` at arclength `s`, heading along it.
    pub fn on_path(profile: ProfileRef, path: Arc<RoutePath>, s: f64, speed: f64) -> Self {
        EgoState {
            position: path.point_at(s),
            heading: path.tangent_at(s).angle(),
            path,
            speed: speed.clamp(0.0, MAX_EGO_SPEED),
            profile,
        }
    }

    pub fn footprint(&self) -> ConvexPolygon {
        self.profile.profile.oriented_footprint(self.heading).translate(self.position)
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    pub fn progress(&self) -> f64 {
        self.path.project(self.position).0
    }

    pub fn finished(&self) -> bool {
        self.path.is_past_end(self.position)
    }

    /// The ego as exo agents see it: a distracted agent on its route.
    pub fn as_agent(&self) -> AgentState {
        let mut a = AgentState::new(EGO_ID, self.profile.clone(), self.position, self.heading, self.velocity());
        a.inner = InnerState::new(
            IntentionHypothesis::Path(self.path.clone()),
            false,
            0.5,
            self.profile.profile.r_front,
            self.profile.profile.r_rear,
        );
        a.desired_speed = MAX_EGO_SPEED;
        a
    }

    /// Moves for `dt` under constant `acceleration`, steering by pure pursuit
    /// on the route. Speed saturates at 0 and [`MAX_EGO_SPEED`].
    pub fn advance(&self, acceleration: f64, dt: f64) -> EgoState {
        let v0 = self.speed;
        let v1 = (v0 + acceleration * dt).clamp(0.0, MAX_EGO_SPEED);
        let distance = if acceleration == 0.0 {
            v0 * dt
        } else {
            let ramp = ((v1 - v0) / acceleration).clamp(0.0, dt);
            0.5 * (v0 + v1) * ramp + v1 * (dt - ramp)
        };
        let gains = self.profile.profile.gains;
        let lookahead = gains.min_lookahead.max(gains.lookahead_time * v0);
        let target = lookahead_waypoint(&self.path, self.position, lookahead) - self.position;
        let forward = Vec2::from_angle(self.heading);
        let curvature = if target.norm() > 1e-9 && target.dot(forward) > 0.0 {
            let alpha = wrap_angle(target.angle() - self.heading);
            let k = 2.0 * alpha.sin() / target.norm();
            match self.profile.profile.kind {
                KinematicsKind::CarLike { wheelbase, max_steer } => {
                    let k_max = max_steer.tan() / wheelbase;
                    k.clamp(-k_max, k_max)
                }
                KinematicsKind::Holonomic => k,
            }
        } else {
            0.0
        };
        let turn = curvature * distance;
        let mut next = self.clone();
        next.position = self.position + Vec2::from_angle(self.heading + 0.5 * turn) * distance;
        next.heading = wrap_angle(self.heading + turn);
        next.speed = v1;
        next
    }
}

/// Ego plus the exo agents the planner reasons about. Exo inner states are
/// the ones being simulated.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannerState {
    pub ego: EgoState,
    pub exos: Vec<AgentState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: PlannerState,
    /// Ego speed at the first collision check that found an overlap.
    pub impact_speed: Option<f64>,
}

/// Advances the model by `dt`. `noise` holds one displacement per exo,
/// added at the end of the step; missing entries count as zero.
pub fn transition(
    state: &PlannerState,
    action: DrivingAction,
    noise: &[Vec2],
    dt: f64,
    context: Option<&RoadContext>,
    params: &GammaParams,
) -> StepOutcome {
    transition_with_margin(state, action, noise, dt, context, params, 0.0)
}

/// As [`transition`], with the ego footprint grown by `margin` meters for
/// the collision checks.
pub fn transition_with_margin(
    state: &PlannerState,
    action: DrivingAction,
    noise: &[Vec2],
    dt: f64,
    context: Option<&RoadContext>,
    params: &GammaParams,
    margin: f64,
) -> StepOutcome {
    assert!(dt > 0.0, "transition needs a positive step");
    let mut everyone = state.exos.clone();
    everyone.push(state.ego.as_agent());
    let commands: Vec<Option<Vec2>> = state
        .exos
        .iter()
        .map(|e| e.inner.attentive.then(|| gamma_new_velocity(e, &everyone, context, params, dt).velocity))
        .collect();

    let h = dt / COLLISION_SUBSTEPS as f64;
    let mut ego = state.ego.clone();
    let mut exos = state.exos.clone();
    let mut impact_speed = None;
    for _ in 0..COLLISION_SUBSTEPS {
        ego = ego.advance(action.acceleration(), h);
        for (e, cmd) in exos.iter_mut().zip(&commands) {
            *e = match cmd {
                Some(c) => integrate(e, *c, h),
                None => follow_intention(e, h),
            };
        }
        if impact_speed.is_none() {
            let fp = if margin > 0.0 { ego.footprint().offset(margin) } else { ego.footprint() };
            if exos.iter().any(|e| fp.intersects(&e.world_footprint())) {
                impact_speed = Some(ego.speed);
            }
        }
    }
    for (e, n) in exos.iter_mut().zip(noise) {
        e.position += *n;
    }
    StepOutcome { state: PlannerState { ego, exos }, impact_speed }
}

/// Distracted motion: along the intended path at the current speed, keeping
/// the lateral offset; otherwise by the intention's own extrapolation.
pub fn follow_intention(agent: &AgentState, dt: f64) -> AgentState {
    let speed = agent.velocity.norm();
    let mut out = agent.clone();
    match &agent.inner.intention {
        IntentionHypothesis::Path(path) => {
            let (s, _) = path.project(agent.position);
            let lateral = path.tangent_at(s).cross(agent.position - path.point_at(s));
            let (point, tangent) = extend(path, s + speed * dt);
            out.position = point + tangent.perp() * lateral;
            out.velocity = tangent * speed;
            if speed > 0.0 {
                out.heading = tangent.angle();
            }
        }
        IntentionHypothesis::KeepVelocity => out.position = agent.position + agent.velocity * dt,
        IntentionHypothesis::KeepAcceleration => {
            out.velocity = agent.velocity + agent.acceleration * dt;
            out.position = agent.position + (agent.velocity + out.velocity) * (0.5 * dt);
        }
    }
    out.acceleration = (out.velocity - agent.velocity) / dt;
    out
}

/// Point and tangent at arclength `s`, continuing straight past the end.
fn extend(path: &RoutePath, s: f64) -> (Vec2, Vec2) {
    let len = path.length();
    if s <= len {
        (path.point_at(s), path.tangent_at(s))
    } else {
        let t = path.tangent_at(len);
        (path.point_at(len) + t * (s - len), t)
    }
}

/// Per-step reward given the action and the ego speed after the step.
pub fn reward(action: DrivingAction, speed: f64, impact_speed: Option<f64>) -> f64 {
    let mut r = (speed - MAX_EGO_SPEED) / MAX_EGO_SPEED;
    if let Some(v) = impact_speed {
        r -= COLLISION_PENALTY * (v * v + 0.5);
    }
    if action == DrivingAction::Dec {
        r -= DECELERATION_PENALTY;
    }
    r
}

/// Footprint gap to the nearest exo ahead of the ego and inside the
/// corridor around its route.
pub fn frontal_gap(ego: &EgoState, exos: &[AgentState]) -> Option<f64> {
    let s_ego = ego.progress();
    let fp = ego.footprint();
    exos.iter()
        .filter(|e| {
            let (s, off) = ego.path.project(e.position);
            s > s_ego && off <= CORRIDOR_HALF_WIDTH + e.profile.profile.footprint.circumradius()
        })
        .map(|e| fp.separation(&e.world_footprint()).max(0.0))
        .min_by(f64::total_cmp)
}

/// Reference policy: full speed when the way is clear, half speed in the
/// caution band, braking when close.
pub fn rollout_policy(ego: &EgoState, exos: &[AgentState]) -> DrivingAction {
    match frontal_gap(ego, exos) {
        None => DrivingAction::Acc,
        Some(d) if d > CAUTION_FAR => DrivingAction::Acc,
        Some(d) if d >= CAUTION_NEAR => {
            let target = 0.5 * MAX_EGO_SPEED;
            if ego.speed > target + CAUTION_BAND {
                DrivingAction::Dec
            } else if ego.speed < target - CAUTION_BAND {
                DrivingAction::Acc
            } else {
                DrivingAction::Maintain
            }
        }
        Some(_) => DrivingAction::Dec,
    }
}

/// Search settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Number of sampled scenarios.
    pub scenarios: usize,
    /// Tree depth in decision steps.
    pub depth: usize,
    pub discount: f64,
    /// Standard deviation of the per-step exo displacement noise, meters.
    pub noise: f64,
    /// Node expansions per decision.
    pub max_expansions: usize,
    /// Optional wall-clock cap per decision, seconds. Makes the result
    /// depend on machine speed.
    pub time_budget: Option<f64>,
    /// Grid size used to merge scenarios by observed exo positions, meters.
    pub observation_resolution: f64,
    /// Growth of the ego footprint in the search's collision checks, meters.
    pub collision_margin: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            scenarios: 20,
            depth: 9,
            discount: 0.95,
            noise: 0.05,
            max_expansions: 10_000,
            time_budget: Some(0.25),
            observation_resolution: 1.0,
            collision_margin: 0.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        if self.scenarios == 0 {
            return Err(invalid("search.scenarios", "must be at least 1"));
        }
        if self.depth == 0 {
            return Err(invalid("search.depth", "must be at least 1"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(invalid("search.discount", format!("must lie in (0, 1), got {}", self.discount)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("search.noise", "must be non-negative"));
        }
        if self.max_expansions == 0 {
            return Err(invalid("search.max_expansions", "must be at least 1"));
        }
        if let Some(t) = self.time_budget {
            if !(t > 0.0) {
                return Err(invalid("search.time_budget", "must be positive"));
            }
        }
        if !(self.observation_resolution > 0.0) {
            return Err(invalid("search.observation_resolution", "must be positive"));
        }
        if !(self.collision_margin >= 0.0 && self.collision_margin.is_finite()) {
            return Err(invalid("search.collision_margin", "must be non-negative"));
        }
        Ok(())
    }
}

/// One sampled world: an inner state per exo (in snapshot order) and the
/// seed of its noise stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub inner: Vec<InnerState>,
    pub seed: u64,
    pub weight: f64,
}

impl Scenario {
    /// Noise displacements for tree level `depth`; the same for every node
    /// at that level.
    pub fn noise(&self, depth: usize, n: usize, sigma: f64) -> Vec<Vec2> {
        if sigma == 0.0 {
            return vec![Vec2::ZERO; n];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(depth as u64);
        (0..n)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                Vec2::new(x, y) * sigma
            })
            .collect()
    }
}

/// `k` equally weighted scenarios. Exos with a belief get a posterior draw;
/// the others keep the inner state they carry.
pub fn sample_scenarios<R: Rng + ?Sized>(belief: &Belief, exos: &[AgentState], k: usize, rng: &mut R) -> Vec<Scenario> {
    (0..k)
        .map(|_| {
            let inner = exos
                .iter()
                .map(|e| match belief.get(e.id) {
                    Some(b) => b.space().get(b.sample_indices(1, rng)[0]).inner_state(),
                    None => e.inner.clone(),
                })
                .collect();
            Scenario { inner, seed: rng.random(), weight: 1.0 / k as f64 }
        })
        .collect()
}

/// What the search needs besides the belief.
#[derive(Clone, Copy, Debug)]
pub struct PlanModel<'a> {
    pub context: Option<&'a RoadContext>,
    pub params: &'a GammaParams,
    /// Duration of one decision step, seconds.
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub action: DrivingAction,
    /// Lower bounds of the root action values, in [`DrivingAction::ALL`] order.
    pub values: [f64; 3],
    pub upper: [f64; 3],
    pub expansions: usize,
}

impl PlanOutcome {
    pub fn value(&self) -> f64 {
        self.values[self.action.index()]
    }
}

/// Chooses the next ego action from `snapshot` and the belief over its exo
/// agents.
pub fn plan<R: Rng + ?Sized>(
    belief: &Belief,
    snapshot: &PlannerState,
    model: &PlanModel,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<PlanOutcome, PlannerError> {
    config.validate()?;
    if !(model.dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let scenarios = sample_scenarios(belief, &snapshot.exos, config.scenarios, rng);
    let mut tree = Tree::new(&scenarios, model, config);
    let particles = scenarios
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            let mut state = snapshot.clone();
            for (e, inner) in state.exos.iter_mut().zip(&sc.inner) {
                e.inner = inner.clone();
            }
            Particle { scenario: i, state }
        })
        .collect();
    let root = tree.add_node(0, particles);
    let started = Instant::now();
    tree.expand(root);
    let mut expansions = 1;
    while expansions < config.max_expansions {
        if config.time_budget.is_some_and(|t| started.elapsed().as_secs_f64() >= t) {
            break;
        }
        if !tree.trial(root) {
            break;
        }
        expansions += 1;
    }
    let actions = tree.nodes[root].actions.expect("root expanded");
    let values = actions.map(|a| tree.actions[a].lower);
    let upper = actions.map(|a| tree.actions[a].upper);
    let mut best = 0;
    for i in 1..3 {
        if values[i] > values[best] {
            best = i;
        }
    }
    Ok(PlanOutcome { action: DrivingAction::ALL[best], values, upper, expansions })
}

struct Particle {
    scenario: usize,
    state: PlannerState,
}

struct BeliefNode {
    depth: usize,
    particles: Vec<Particle>,
    weight: f64,
    lower: f64,
    upper: f64,
    actions: Option<[usize; 3]>,
}

struct ActionNode {
    /// Weighted mean immediate reward.
    reward: f64,
    /// Belief nodes with the weight share of their scenarios; collided
    /// scenarios have no child.
    children: Vec<(usize, f64)>,
    lower: f64,
    upper: f64,
}

struct Tree<'a> {
    scenarios: &'a [Scenario],
    model: &'a PlanModel<'a>,
    config: &'a SearchConfig,
    nodes: Vec<BeliefNode>,
    actions: Vec<ActionNode>,
}

fn gap_eps(upper: f64) -> f64 {
    1e-9 * (1.0 + upper.abs())
}

impl<'a> Tree<'a> {
    fn new(scenarios: &'a [Scenario], model: &'a PlanModel<'a>, config: &'a SearchConfig) -> Self {
        Tree { scenarios, model, config, nodes: Vec::new(), actions: Vec::new() }
    }

    fn step(&self, p: &Particle, action: DrivingAction, depth: usize) -> (f64, StepOutcome) {
        let noise = self.scenarios[p.scenario].noise(depth, p.state.exos.len(), self.config.noise);
        let out = transition_with_margin(
            &p.state,
            action,
            &noise,
            self.model.dt,
            self.model.context,
            self.model.params,
            self.config.collision_margin,
        );
        (reward(action, out.state.ego.speed, out.impact_speed), out)
    }

    /// Discounted return of the rollout policy from `depth` to the horizon.
    fn rollout(&self, p: &Particle, depth: usize) -> f64 {
        let mut total = 0.0;
        let mut discount = 1.0;
        let mut current = Particle { scenario: p.scenario, state: p.state.clone() };
        for d in depth..self.config.depth {
            let action = rollout_policy(&current.state.ego, &current.state.exos);
            let (r, out) = self.step(&current, action, d);
            total += discount * r;
            if out.impact_speed.is_some() {
                break;
            }
            discount *= self.config.discount;
            current.state = out.state;
        }
        total
    }

    /// Return with full acceleration and no collision or braking, which
    /// bounds every achievable return from a node.
    fn speed_bound(&self, speed: f64, depth: usize) -> f64 {
        let mut total = 0.0;
        let mut discount = 1.0;
        for k in 1..=self.config.depth.saturating_sub(depth) {
            let v = (speed + ACCELERATION * self.model.dt * k as f64).min(MAX_EGO_SPEED);
            total += discount * (v - MAX_EGO_SPEED) / MAX_EGO_SPEED;
            discount *= self.config.discount;
        }
        total
    }

    fn add_node(&mut self, depth: usize, particles: Vec<Particle>) -> usize {
        let weight: f64 = particles.iter().map(|p| self.scenarios[p.scenario].weight).sum();
        let (lower, upper) = if depth >= self.config.depth {
            (0.0, 0.0)
        } else {
            let lower =
                particles.iter().map(|p| self.scenarios[p.scenario].weight * self.rollout(p, depth)).sum::<f64>()
                    / weight;
            let upper = self.speed_bound(particles[0].state.ego.speed, depth);
            (lower, upper.max(lower))
        };
        self.nodes.push(BeliefNode { depth, particles, weight, lower, upper, actions: None });
        self.nodes.len() - 1
    }

    fn observation_key(&self, state: &PlannerState) -> Vec<i64> {
        let res = self.config.observation_resolution;
        state
            .exos
            .iter()
            .flat_map(|e| [(e.position.x / res).floor() as i64, (e.position.y / res).floor() as i64])
            .collect()
    }

    fn expand(&mut self, node: usize) {
        let depth = self.nodes[node].depth;
        let weight = self.nodes[node].weight;
        let particles = std::mem::take(&mut self.nodes[node].particles);
        let mut ids = [0; 3];
        for (k, &action) in DrivingAction::ALL.iter().enumerate() {
            let mut reward = 0.0;
            let mut groups: BTreeMap<Vec<i64>, Vec<Particle>> = BTreeMap::new();
            for p in &particles {
                let (r, out) = self.step(p, action, depth);
                reward += self.scenarios[p.scenario].weight * r;
                if out.impact_speed.is_none() {
                    let key = self.observation_key(&out.state);
                    groups.entry(key).or_default().push(Particle { scenario: p.scenario, state: out.state });
                }
            }
            let children = groups
                .into_values()
                .map(|ps| {
                    let id = self.add_node(depth + 1, ps);
                    (id, self.nodes[id].weight / weight)
                })
                .collect();
            self.actions.push(ActionNode { reward: reward / weight, children, lower: 0.0, upper: 0.0 });
            ids[k] = self.actions.len() - 1;
            self.update_action(ids[k]);
        }
        self.nodes[node].particles = particles;
        self.nodes[node].actions = Some(ids);
        self.update_node(node);
    }

    fn update_action(&mut self, a: usize) {
        let gamma = self.config.discount;
        let act = &self.actions[a];
        let lower = act.reward + gamma * act.children.iter().map(|&(c, w)| w * self.nodes[c].lower).sum::<f64>();
        let upper = act.reward + gamma * act.children.iter().map(|&(c, w)| w * self.nodes[c].upper).sum::<f64>();
        let act = &mut self.actions[a];
        act.lower = lower;
        act.upper = upper.max(lower);
    }

    fn update_node(&mut self, node: usize) {
        let Some(ids) = self.nodes[node].actions else { return };
        let best_lower = ids.iter().map(|&a| self.actions[a].lower).fold(f64::NEG_INFINITY, f64::max);
        let best_upper = ids.iter().map(|&a| self.actions[a].upper).fold(f64::NEG_INFINITY, f64::max);
        let n = &mut self.nodes[node];
        n.lower = n.lower.max(best_lower);
        n.upper = n.upper.min(best_upper).max(n.lower);
    }

    /// One descent, expansion and backup. False once every root action has
    /// a closed gap.
    fn trial(&mut self, root: usize) -> bool {
        let root_actions = self.nodes[root].actions.expect("root expanded");
        // Every root action is refined until its own gap closes, so all
        // three root values become exact given enough budget.
        let Some(&first) = root_actions
            .iter()
            .filter(|&&a| self.actions[a].upper - self.actions[a].lower > gap_eps(self.actions[a].upper))
            .max_by(|&&x, &&y| self.actions[x].upper.total_cmp(&self.actions[y].upper).then(y.cmp(&x)))
        else {
            return false;
        };
        let mut path = vec![(root, first)];
        let mut action = first;
        while let Some(child) = self.widest_child(action) {
            match self.nodes[child].actions {
                None => {
                    self.expand(child);
                    break;
                }
                Some(ids) => {
                    action = *ids
                        .iter()
                        .max_by(|&&x, &&y| self.actions[x].upper.total_cmp(&self.actions[y].upper).then(y.cmp(&x)))
                        .expect("three actions");
                    path.push((child, action));
                }
            }
        }
        for &(node, a) in path.iter().rev() {
            self.update_action(a);
            self.update_node(node);
        }
        true
    }

    /// Child with the largest weighted bound gap, if any gap is open.
    fn widest_child(&self, action: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &(c, w) in &self.actions[action].children {
            let n = &self.nodes[c];
            let gap = n.upper - n.lower;
            if gap <= gap_eps(n.upper) || n.depth >= self.config.depth {
                continue;
            }
            if best.is_none_or(|(_, g)| w * gap > g) {
                best = Some((c, w * gap));
            }
        }
        best.map(|(c, _)| c)
    }
}

/// Drives the ego in the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// Belief-tree search over inferred inner states.
    ContextPomdp,
    /// The rollout policy alone.
    Rollout,
    /// The ego's own GAMMA velocity, followed by its controller.
    GammaControl,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::ContextPomdp => "pomdp",
            Controller::Rollout => "rollout",
            Controller::GammaControl => "gamma",
        }
    }
}

impl FromStr for Controller {
    type Err = PlannerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pomdp" => Ok(Controller::ContextPomdp),
            "rollout" => Ok(Controller::Rollout),
            "gamma" => Ok(Controller::GammaControl),
            other => Err(invalid("controller", format!("expected pomdp, rollout or gamma, got {other:?}"))),
        }
    }
}

/// Ego route and perception settings of a driving episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoConfig {
    pub profile: String,
    pub start_lane: LaneId,
    pub goal_lane: LaneId,
    /// Start arclength on the start lane, meters.
    pub start_s: f64,
    pub start_speed: f64,
    /// Episode length cap in decisions.
    pub max_decisions: u64,
    /// Exo agents farther than this from the ego are ignored by the
    /// controllers, meters.
    pub perception_range: f64,
    /// At most this many nearest exo agents enter the search.
    pub max_exos: usize,
    /// Observation noise of the belief filter, meters.
    pub sigma: f64,
    /// Length of the candidate paths hypothesised for each exo agent, meters.
    pub hypothesis_path_length: f64,
    /// Assumed cruise speed of exo agents as a fraction of their top speed.
    pub assumed_speed_factor: f64,
    /// A GAMMA-controlled decision counts as a deceleration below this
    /// mean longitudinal acceleration, m/s².
    pub decel_threshold: f64,
}

impl Default for EgoConfig {
    fn default() -> Self {
        EgoConfig {
            profile: "car".into(),
            start_lane: 1,
            goal_lane: 8,
            start_s: 20.0,
            start_speed: 0.0,
            max_decisions: 400,
            perception_range: 25.0,
            max_exos: 8,
            sigma: SIMULATION_SIGMA,
            hypothesis_path_length: 100.0,
            assumed_speed_factor: 0.8,
            decel_threshold: -1.0,
        }
    }
}

/// A driving scenario: the exo crowd (`[sim]`), the ego (`[ego]`) and the
/// search (`[search]`). The planner decides every `steps_per_decision`
/// simulation steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveConfig {
    pub sim: ScenarioConfig,
    pub ego: EgoConfig,
    pub search: SearchConfig,
    pub steps_per_decision: usize,
}

impl Default for DriveConfig {
    fn default() -> Self {
        let search = SearchConfig { time_budget: None, max_expansions: 300, ..SearchConfig::default() };
        DriveConfig { sim: ScenarioConfig::default(), ego: EgoConfig::default(), search, steps_per_decision: 3 }
    }
}

impl DriveConfig {
    pub fn from_toml(text: &str) -> Result<Self, PlannerError> {
        let config: DriveConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PlannerError> {
        DriveConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        self.sim.validate()?;
        self.search.validate()?;
        if self.steps_per_decision == 0 {
            return Err(invalid("steps_per_decision", "must be at least 1"));
        }
        let e = &self.ego;
        if !(e.start_s >= 0.0) {
            return Err(invalid("ego.start_s", "must be non-negative"));
        }
        if !(0.0..=MAX_EGO_SPEED).contains(&e.start_speed) {
            return Err(invalid("ego.start_speed", format!("must lie in [0, {MAX_EGO_SPEED}]")));
        }
        if !(e.perception_range > 0.0) {
            return Err(invalid("ego.perception_range", "must be positive"));
        }
        if !(e.sigma > 0.0) {
            return Err(invalid("ego.sigma", "must be positive"));
        }
        if !(e.hypothesis_path_length > 0.0) {
            return Err(invalid("ego.hypothesis_path_length", "must be positive"));
        }
        if !(e.assumed_speed_factor > 0.0 && e.assumed_speed_factor <= 1.0) {
            return Err(invalid("ego.assumed_speed_factor", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Seconds between decisions.
    pub fn decision_period(&self) -> f64 {
        self.sim.dt * self.steps_per_decision as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode: u64,
    pub seed: u64,
    /// Decisions taken.
    pub steps: u64,
    /// Contacts begun between the ego and any exo agent.
    pub collisions: u64,
    /// Mean ego speed over decisions, m/s.
    pub avg_speed: f64,
    pub decel_count: u64,
    pub reached_goal: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriveReport {
    pub controller: Option<Controller>,
    pub rows: Vec<EpisodeResult>,
}

impl DriveReport {
    pub fn total_steps(&self) -> u64 {
        self.rows.iter().map(|r| r.steps).sum()
    }

    pub fn collisions_per_step(&self) -> f64 {
        ratio(self.rows.iter().map(|r| r.collisions).sum::<u64>() as f64, self.total_steps())
    }

    pub fn decels_per_step(&self) -> f64 {
        ratio(self.rows.iter().map(|r| r.decel_count).sum::<u64>() as f64, self.total_steps())
    }

    /// Ego speed averaged over every decision of every episode.
    pub fn avg_speed(&self) -> f64 {
        ratio(self.rows.iter().map(|r| r.avg_speed * r.steps as f64).sum(), self.total_steps())
    }
}

fn ratio(num: f64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num / den as f64
    }
}

/// Seed of the exo world for one episode.
pub fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode
}

/// Runs `episodes` episodes for each seed, in seed-major order.
pub fn drive_benchmark(
    config: &DriveConfig,
    road: Arc<RoadContext>,
    profiles: &[ProfileRef],
    controller: Controller,
    episodes: u64,
    seeds: &[u64],
) -> Result<DriveReport, PlannerError> {
    let mut rows = Vec::new();
    for &seed in seeds {
        for episode in 0..episodes {
            rows.push(drive_episode(config, road.clone(), profiles, controller, episode, seed)?);
        }
    }
    Ok(DriveReport { controller: Some(controller), rows })
}

/// One closed-loop episode: the ego drives its route through a GAMMA crowd
/// until it passes the route end or runs out of decisions.
pub fn drive_episode(
    config: &DriveConfig,
    road: Arc<RoadContext>,
    profiles: &[ProfileRef],
    controller: Controller,
    episode: u64,
    seed: u64,
) -> Result<EpisodeResult, PlannerError> {
    drive_episode_traced(config, road, profiles, controller, episode, seed, None)
}

/// As [`drive_episode`], also writing the ego's belief over every tracked
/// exo after each decision (`step,agent_id,hypothesis_index,probability`,
/// without header) to `trace`.
pub fn drive_episode_traced(
    config: &DriveConfig,
    road: Arc<RoadContext>,
    profiles: &[ProfileRef],
    controller: Controller,
    episode: u64,
    seed: u64,
    mut trace: Option<&mut dyn Write>,
) -> Result<EpisodeResult, PlannerError> {
    config.validate()?;
    let mut sim = config.sim.clone();
    sim.seed = episode_seed(seed, episode);
    let mut world = World::new(&sim, road.clone(), profiles)?;
    let ego_profile = profiles
        .iter()
        .find(|p| p.name() == config.ego.profile)
        .cloned()
        .ok_or_else(|| SimError::UnknownProfile(config.ego.profile.clone()))?;
    let (from, to) = (config.ego.start_lane, config.ego.goal_lane);
    let lanes = road.shortest_route(from, to).ok_or(PlannerError::Route { from, to })?;
    let start_lane = road.lane(from).ok_or(PlannerError::Route { from, to })?;
    let start = start_lane.centerline.point_at(config.ego.start_s);
    let path = road.route_path(0, start, &lanes).ok_or(PlannerError::Route { from, to })?;
    let mut ego = EgoState::on_path(ego_profile, Arc::new(path), 0.0, config.ego.start_speed);

    let mut driver = Driver::new(config, road.clone(), controller, sim.seed);
    let mut touching: BTreeSet<AgentId> = BTreeSet::new();
    let mut result =
        EpisodeResult { episode, seed, steps: 0, collisions: 0, avg_speed: 0.0, decel_count: 0, reached_goal: false };
    let mut speed_sum = 0.0;
    crate::simulator::spawn_agents_avoiding(&mut world, &sim, &[ego.as_agent()]);
    while result.steps < config.ego.max_decisions {
        if ego.finished() {
            result.reached_goal = true;
            break;
        }
        let command = driver.decide(&world, &ego)?;
        for _ in 0..config.steps_per_decision {
            ego = match command {
                Command::Action(a) => ego.advance(a.acceleration(), sim.dt),
                Command::Accel(a) => ego.advance(a, sim.dt),
            };
            step_with(&mut world, &sim, &[ego.as_agent()]);
            let fp = ego.footprint();
            let now: BTreeSet<AgentId> =
                world.agents.iter().filter(|a| fp.intersects(&a.world_footprint())).map(|a| a.id).collect();
            result.collisions += now.difference(&touching).count() as u64;
            touching = now;
        }
        let decelerated = match command {
            Command::Action(a) => a == DrivingAction::Dec,
            Command::Accel(a) => a < config.ego.decel_threshold,
        };
        result.decel_count += u64::from(decelerated);
        if let Some(out) = trace.as_deref_mut() {
            driver.belief.write_trace(result.steps, out)?;
        }
        result.steps += 1;
        speed_sum += ego.speed;
    }
    result.avg_speed = ratio(speed_sum, result.steps);
    Ok(result)
}

#[derive(Clone, Copy, Debug)]
enum Command {
    Action(DrivingAction),
    Accel(f64),
}

/// Controller state carried across the decisions of one episode.
struct Driver<'a> {
    config: &'a DriveConfig,
    road: Arc<RoadContext>,
    controller: Controller,
    belief: Belief,
    /// Perceived exos and ego at the previous decision.
    previous: Option<Vec<AgentState>>,
    rng: ChaCha8Rng,
}

impl<'a> Driver<'a> {
    fn new(config: &'a DriveConfig, road: Arc<RoadContext>, controller: Controller, seed: u64) -> Self {
        Driver {
            config,
            road,
            controller,
            belief: Belief::new(None),
            previous: None,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5EED),
        }
    }

    /// Exo agents within perception range, nearest first, as the ego sees
    /// them: inner states unknown, cruise speed assumed.
    fn perceive(&self, world: &World, ego: &EgoState, limit: usize) -> Vec<AgentState> {
        let range = self.config.ego.perception_range;
        let mut seen: Vec<(f64, AgentState)> = world
            .agents
            .iter()
            .map(|a| (a.position.distance(ego.position), a))
            .filter(|(d, _)| *d <= range)
            .map(|(d, a)| {
                let mut a = a.clone();
                let factor = self.config.ego.assumed_speed_factor;
                a.desired_speed = (factor * a.profile.profile.s_max).max(a.velocity.norm());
                a.inner =
                    InnerState::new(IntentionHypothesis::KeepVelocity, true, 0.5, a.inner.r_front, a.inner.r_rear);
                (d, a)
            })
            .collect();
        seen.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.id.cmp(&y.1.id)));
        seen.truncate(limit);
        let mut out: Vec<AgentState> = seen.into_iter().map(|(_, a)| a).collect();
        out.sort_by_key(|a| a.id);
        out
    }

    fn hypothesis_space(&self, agent: &AgentState) -> Result<Arc<HypothesisSpace>, InferenceError> {
        let len = self.config.ego.hypothesis_path_length;
        let max_paths = self.config.sim.spawn.max_paths;
        let paths = match agent.profile.profile.kind {
            KinematicsKind::Holonomic if !self.road.sidewalks().is_empty() => {
                let mut p = self.road.sidewalk_paths(agent.position, len);
                p.truncate(max_paths);
                p
            }
            _ => self.road.candidate_paths(agent.position, len, max_paths),
        };
        let paths: Vec<Arc<RoutePath>> = paths.into_iter().filter(|p| p.points().len() >= 2).map(Arc::new).collect();
        let params = &self.config.sim.gamma;
        let space = if paths.is_empty() {
            HypothesisSpace::new(
                vec![IntentionHypothesis::KeepVelocity],
                vec![true, false],
                vec![params.responsibility],
                vec![(params.r_front, params.r_rear)],
            )?
        } else {
            HypothesisSpace::with_paths(&paths, params)?
        };
        Ok(Arc::new(space))
    }

    fn decide(&mut self, world: &World, ego: &EgoState) -> Result<Command, PlannerError> {
        let params = &self.config.sim.gamma;
        let period = self.config.decision_period();
        match self.controller {
            Controller::Rollout => {
                // Root expansion only: each first action scored by rollouts.
                let search = SearchConfig { max_expansions: 1, ..self.config.search };
                self.search(world, ego, &search)
            }
            Controller::GammaControl => {
                let exos = self.perceive(world, ego, usize::MAX);
                let mut me = ego.as_agent();
                me.inner.attentive = true;
                me.inner.responsibility = params.responsibility;
                let v = gamma_new_velocity(&me, &exos, Some(&self.road), params, period).velocity;
                // The forward part of the chosen velocity becomes the speed
                // target; steering stays with the route follower.
                let target = v.dot(Vec2::from_angle(ego.heading)).clamp(0.0, MAX_EGO_SPEED);
                Ok(Command::Accel(((target - ego.speed) / period).clamp(-ACCELERATION, ACCELERATION)))
            }
            Controller::ContextPomdp => {
                let search = self.config.search;
                self.search(world, ego, &search)
            }
        }
    }

    fn search(&mut self, world: &World, ego: &EgoState, search: &SearchConfig) -> Result<Command, PlannerError> {
        let exos = self.perceive(world, ego, self.config.ego.max_exos);
        self.track(&exos, ego)?;
        let snapshot = PlannerState { ego: ego.clone(), exos };
        let model =
            PlanModel { context: Some(&self.road), params: &self.config.sim.gamma, dt: self.config.decision_period() };
        let outcome = plan(&self.belief, &snapshot, &model, search, &mut self.rng)?;
        Ok(Command::Action(outcome.action))
    }

    /// Belief update from the previous decision to the current perception.
    fn track(&mut self, exos: &[AgentState], ego: &EgoState) -> Result<(), PlannerError> {
        let current: BTreeSet<AgentId> = exos.iter().map(|e| e.id).collect();
        let stale: Vec<AgentId> = self.belief.ids().filter(|id| !current.contains(id)).collect();
        for id in stale {
            self.belief.remove(id);
        }
        if let Some(prev) = &self.previous {
            let observation = Observation {
                timestamp: 0.0,
                positions: exos.iter().filter(|e| self.belief.contains(e.id)).map(|e| (e.id, e.position)).collect(),
            };
            self.belief = belief_update(
                &self.belief,
                prev,
                &observation,
                Some(&self.road),
                &self.config.sim.gamma,
                self.config.ego.sigma,
                self.config.decision_period(),
            )?;
        }
        for e in exos {
            if !self.belief.contains(e.id) {
                let space = self.hypothesis_space(e)?;
                self.belief.insert_uniform(e.id, space);
            }
        }
        let mut prev = exos.to_vec();
        prev.push(ego.as_agent());
        self.previous = Some(prev);
        Ok(())
    }
}

pub const DRIVE_HEADER: &str = "episode,seed,steps,collisions,avg_speed,decel_count";

/// One row per episode, then a `mean,mean,...` row averaging every column
/// over the episode rows (omitted when there are none).
pub fn write_drive_csv<W: Write>(out: &mut W, report: &DriveReport) -> io::Result<()> {
    writeln!(out, "{DRIVE_HEADER}")?;
    for r in &report.rows {
        writeln!(out, "{},{},{},{},{:.6},{}", r.episode, r.seed, r.steps, r.collisions, r.avg_speed, r.decel_count)?;
    }
    if !report.rows.is_empty() {
        let n = report.rows.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeResult) -> f64| report.rows.iter().map(f).sum::<f64>() / n;
        writeln!(
            out,
            "mean,mean,{:.6},{:.6},{:.6},{:.6}",
            mean(&|r| r.steps as f64),
            mean(&|r| r.collisions as f64),
            mean(&|r| r.avg_speed),
            mean(&|r| r.decel_count as f64)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{AgentProfile, CalibratedProfile};
    use crate::road::PathSource;

    fn car() -> ProfileRef {
        CalibratedProfile::calibrate(AgentProfile::car()).unwrap()
    }

    fn straight(len: f64) -> Arc<RoutePath> {
        Arc::new(RoutePath::from_polyline(0, PathSource::Lane, &[Vec2::ZERO, Vec2::new(len, 0.0)]))
    }

    #[test]
    fn maintain_on_straight_route() {
        let ego = EgoState::on_path(car(), straight(100.0), 10.0, 4.0);
        let state = PlannerState { ego, exos: vec![] };
        let out = transition(&state, DrivingAction::Maintain, &[], 1.0 / 3.0, None, &GammaParams::default());
        assert!((out.state.ego.position.x - (10.0 + 4.0 / 3.0)).abs() < 1e-12);
        assert_eq!(out.state.ego.position.y, 0.0);
        assert_eq!(out.state.ego.speed, 4.0);
        assert!(out.impact_speed.is_none());
    }

    #[test]
    fn acceleration_saturates_at_top_speed() {
        let ego = EgoState::on_path(car(), straight(100.0), 10.0, 5.5);
        let next = ego.advance(ACCELERATION, 1.0 / 3.0);
        assert_eq!(next.speed, 6.0);
        // 1/6 s ramping from 5.5 to 6, then 1/6 s at 6.
        assert!((next.position.x - (10.0 + 5.75 / 6.0 + 1.0)).abs() < 1e-12);
        let stopped = EgoState::on_path(car(), straight(100.0), 10.0, 0.5).advance(-ACCELERATION, 1.0 / 3.0);
        assert_eq!(stopped.speed, 0.0);
    }

    #[test]
    fn reward_terms() {
        assert_eq!(reward(DrivingAction::Maintain, 6.0, None), 0.0);
        assert_eq!(reward(DrivingAction::Maintain, 0.0, None), -1.0);
        assert!((reward(DrivingAction::Dec, 3.0, Some(3.0)) + 28500.6).abs() < 1e-9);
    }

    #[test]
    fn controller_names_round_trip() {
        for c in [Controller::ContextPomdp, Controller::Rollout, Controller::GammaControl] {
            assert_eq!(c.name().parse::<Controller>().unwrap(), c);
        }
        assert!("fast".parse::<Controller>().is_err());
    }

    #[test]
    fn noise_streams_are_fixed_per_depth() {
        let sc = Scenario { inner: vec![], seed: 7, weight: 1.0 };
        assert_eq!(sc.noise(2, 3, 0.05), sc.noise(2, 3, 0.05));
        assert_ne!(sc.noise(2, 3, 0.05), sc.noise(3, 3, 0.05));
        assert_eq!(sc.noise(0, 2, 0.0), vec![Vec2::ZERO; 2]);
    }
}
