//! Crowd lifecycle: spawning on the road network, stepping with GAMMA or the
//! time-to-collision baseline, jam removal, traffic metrics and CSV logs.
//!
//! Scenario files are TOML. Every key is optional:
//!
//! ```toml
//! map = "builtin:intersection"   # or a path to a map file
//! seed = 1
//! dt = 0.1
//! duration = 60.0
//! behavior = "gamma"             # or "ttc"
//!
//! [counts]                       # target number of live agents per profile
//! car = 10
//! pedestrian = 20
//!
//! [gamma]                        # see GammaParams
//! tau = 3.0
//!
//! [jam]
//! speed = 0.2
//! dwell = 5.0
//! remove = true
//!
//! [ttc]
//! ttc_safe = 4.0
//! horizon = 10.0
//!
//! [spawn]
//! clearance = 5.0
//! tries = 100
//! attentive_probability = 0.8
//! responsibility_values = [0.25, 0.5, 0.75]
//! speed_factor = [0.6, 1.0]
//! path_length = 100.0
//! max_paths = 5
//! lanes = []                     # lane ids vehicles may spawn on; empty = all
//! sidewalks = []                 # sidewalk ids pedestrians may spawn on
//! ```

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gamma::{
    advance, gamma_step_with, path_velocity, AgentId, AgentState, GammaParams, InnerState, IntentionHypothesis,
};
use crate::geometry::{minkowski_difference, Vec2};
use crate::kinematics::{KinematicsKind, ProfileRef};
use crate::road::{fixtures, LaneId, RoadContext, RoadError, RoutePath};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario: {0}")]
    Parse(String),
    #[error("scenario field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error(transparent)]
    Road(#[from] RoadError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Behavior {
    Gamma,
    Ttc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JamRule {
    /// Agents slower than this, m/s ...
    pub speed: f64,
    /// ... for at least this long, seconds, count as jammed.
    pub dwell: f64,
    /// Remove jammed agents from the world.
    pub remove: bool,
}

impl Default for JamRule {
    fn default() -> Self {
        JamRule { speed: 0.2, dwell: 5.0, remove: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtcParams {
    /// Time to collision at which the baseline starts slowing down, seconds.
    pub ttc_safe: f64,
    /// Collisions further out than this are ignored, seconds.
    pub horizon: f64,
}

impl Default for TtcParams {
    fn default() -> Self {
        TtcParams { ttc_safe: 4.0, horizon: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpawnConfig {
    /// Minimum footprint gap to every existing agent, meters.
    pub clearance: f64,
    pub tries: usize,
    pub attentive_probability: f64,
    pub responsibility_values: Vec<f64>,
    /// Desired speed is `s_max` times a factor drawn from this range.
    pub speed_factor: [f64; 2],
    pub path_length: f64,
    pub max_paths: usize,
    pub lanes: Vec<LaneId>,
    pub sidewalks: Vec<u32>,
}

impl Default for SpawnConfig {
    fn default() -> Self {
        SpawnConfig {
            clearance: 5.0,
            tries: 100,
            attentive_probability: 0.8,
            responsibility_values: vec![0.25, 0.5, 0.75],
            speed_factor: [0.6, 1.0],
            path_length: 100.0,
            max_paths: 5,
            lanes: Vec::new(),
            sidewalks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub map: String,
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    pub dt: f64,
    pub duration: f64,
    pub behavior: Behavior,
    pub gamma: GammaParams,
    pub jam: JamRule,
    pub ttc: TtcParams,
    pub spawn: SpawnConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            map: "builtin:intersection".into(),
            seed: 0,
            counts: BTreeMap::new(),
            dt: 0.1,
            duration: 60.0,
            behavior: Behavior::Gamma,
            gamma: GammaParams::default(),
            jam: JamRule::default(),
            ttc: TtcParams::default(),
            spawn: SpawnConfig::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> SimError {
    SimError::Invalid { field: field.into(), reason: reason.into() }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Parse(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io { path: path.into(), source })?;
        ScenarioConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt", "must be positive"));
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            return Err(invalid("duration", "must be non-negative"));
        }
        let g = &self.gamma;
        if !(g.tau > 0.0) {
            return Err(invalid("gamma.tau", "must be positive"));
        }
        if !(g.tau1 > 0.0) {
            return Err(invalid("gamma.tau1", "must be positive"));
        }
        if !(g.overlap_step > 0.0) {
            return Err(invalid("gamma.overlap_step", "must be positive"));
        }
        if !(0.0..=1.0).contains(&g.responsibility) {
            return Err(invalid("gamma.responsibility", "must lie in [0, 1]"));
        }
        if !(g.r_rear >= 0.0 && g.r_rear <= g.r_front) {
            return Err(invalid("gamma.r_rear", "need 0 <= r_rear <= r_front"));
        }
        if !(g.safety_margin >= 0.0) {
            return Err(invalid("gamma.safety_margin", "must be non-negative"));
        }
        if !(self.jam.speed >= 0.0 && self.jam.dwell >= 0.0) {
            return Err(invalid("jam", "speed and dwell must be non-negative"));
        }
        if !(self.ttc.ttc_safe > 0.0 && self.ttc.horizon > 0.0) {
            return Err(invalid("ttc", "ttc_safe and horizon must be positive"));
        }
        let s = &self.spawn;
        if !(s.clearance >= 0.0) {
            return Err(invalid("spawn.clearance", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&s.attentive_probability) {
            return Err(invalid("spawn.attentive_probability", "must lie in [0, 1]"));
        }
        if s.responsibility_values.is_empty() || s.responsibility_values.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(invalid("spawn.responsibility_values", "need at least one value in [0, 1]"));
        }
        let [lo, hi] = s.speed_factor;
        if !(lo > 0.0 && lo <= hi) {
            return Err(invalid("spawn.speed_factor", "need 0 < low <= high"));
        }
        if !(s.path_length >= 2.0) {
            return Err(invalid("spawn.path_length", "must be at least 2 m"));
        }
        if s.max_paths == 0 {
            return Err(invalid("spawn.max_paths", "must be at least 1"));
        }
        Ok(())
    }

    /// Loads the map named by `map`: `builtin:<name>` or a file path,
    /// resolved against `base_dir` when relative.
    pub fn load_map(&self, base_dir: Option<&Path>) -> Result<RoadContext, SimError> {
        load_map(&self.map, base_dir)
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.dt + 1e-9).floor() as u64
    }
}

/// Resolves `builtin:<name>` or a file path (relative to `base_dir`).
pub fn load_map(spec: &str, base_dir: Option<&Path>) -> Result<RoadContext, SimError> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        return fixtures::by_name(name).ok_or_else(|| invalid("map", format!("no built-in map `{name}`")));
    }
    let path = match base_dir {
        Some(dir) if Path::new(spec).is_relative() => dir.join(spec),
        _ => PathBuf::from(spec),
    };
    Ok(RoadContext::load(&path)?)
}

/// Per-step traffic measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficMetrics {
    pub step: u64,
    pub time: f64,
    /// Mean speed of live agents of each configured profile, `None` when
    /// there are none.
    pub avg_speed: BTreeMap<String, Option<f64>>,
    pub avg_speed_all: Option<f64>,
    pub congestion: f64,
    pub alive: usize,
    pub spawned: u64,
    pub removed_jammed: u64,
    pub removed_finished: u64,
}

/// `(jammed alive + removed jammed) / spawned`, 0 before anything spawned.
pub fn congestion_factor(jammed_alive: usize, removed_jammed: u64, spawned: u64) -> f64 {
    if spawned == 0 {
        return 0.0;
    }
    ((jammed_alive as u64 + removed_jammed) as f64 / spawned as f64).min(1.0)
}

/// Simulation state. Ground-truth inner states live in `agents[i].inner`.
#[derive(Clone, Debug)]
pub struct World {
    pub time: f64,
    pub step: u64,
    pub agents: Vec<AgentState>,
    road: Arc<RoadContext>,
    rng: ChaCha8Rng,
    next_id: AgentId,
    /// Time each agent has spent below the jam speed.
    slow_time: BTreeMap<AgentId, f64>,
    profiles: BTreeMap<String, ProfileRef>,
    pub spawned: u64,
    pub removed_jammed: u64,
    pub removed_finished: u64,
}

impl World {
    /// Empty world at time zero. Every profile named in `config.counts`
    /// must be among `profiles`.
    pub fn new(config: &ScenarioConfig, road: Arc<RoadContext>, profiles: &[ProfileRef]) -> Result<Self, SimError> {
        let by_name: BTreeMap<String, ProfileRef> =
            profiles.iter().map(|p| (p.name().to_string(), p.clone())).collect();
        if let Some(name) = config.counts.keys().find(|n| !by_name.contains_key(*n)) {
            return Err(SimError::UnknownProfile(name.clone()));
        }
        Ok(World {
            time: 0.0,
            step: 0,
            agents: Vec::new(),
            road,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            next_id: 1,
            slow_time: BTreeMap::new(),
            profiles: by_name,
            spawned: 0,
            removed_jammed: 0,
            removed_finished: 0,
        })
    }

    pub fn road(&self) -> &Arc<RoadContext> {
        &self.road
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn profile(&self, name: &str) -> Option<&ProfileRef> {
        self.profiles.get(name)
    }

    /// Agents currently counted as jammed.
    pub fn jammed_alive(&self, jam: &JamRule) -> usize {
        self.slow_time.values().filter(|&&t| t >= jam.dwell - 1e-9).count()
    }

    /// Adds an agent built elsewhere, assigning it a fresh id.
    pub fn insert(&mut self, mut agent: AgentState) -> AgentId {
        agent.id = self.next_id;
        self.next_id += 1;
        self.spawned += 1;
        self.slow_time.insert(agent.id, 0.0);
        let id = agent.id;
        self.agents.push(agent);
        id
    }
}

/// Tops every profile up to its target count. Returns the number spawned.
pub fn spawn_agents(world: &mut World, config: &ScenarioConfig) -> usize {
    spawn_agents_avoiding(world, config, &[])
}

/// As [`spawn_agents`], also keeping clear of `visible` agents.
pub fn spawn_agents_avoiding(world: &mut World, config: &ScenarioConfig, visible: &[AgentState]) -> usize {
    let mut spawned = 0;
    for (name, &target) in &config.counts {
        let profile = world.profiles[name].clone();
        let alive = world.agents.iter().filter(|a| a.profile.name() == name.as_str()).count();
        for _ in alive..target {
            match sample_spawn(world, config, &profile, visible) {
                Some(agent) => {
                    world.insert(agent);
                    spawned += 1;
                }
                None => {
                    log::debug!("no free spawn pose for {name} at step {}", world.step);
                    break;
                }
            }
        }
    }
    spawned
}

fn sample_spawn(
    world: &mut World,
    config: &ScenarioConfig,
    profile: &ProfileRef,
    visible: &[AgentState],
) -> Option<AgentState> {
    let sc = &config.spawn;
    let on_sidewalk = matches!(profile.profile.kind, KinematicsKind::Holonomic) && !world.road.sidewalks().is_empty();
    for _ in 0..sc.tries {
        let Some(path) = sample_path(world, sc, on_sidewalk) else { continue };
        let start = path.point_at(0.0);
        let heading = path.tangent_at(0.0).angle();
        let footprint = profile.profile.oriented_footprint(heading).translate(start);
        let clear =
            world.agents.iter().chain(visible).all(|b| footprint.separation(&b.world_footprint()) >= sc.clearance);
        if !clear {
            continue;
        }
        let rng = &mut world.rng;
        let attentive = rng.random::<f64>() < sc.attentive_probability;
        let responsibility = sc.responsibility_values[rng.random_range(0..sc.responsibility_values.len())];
        let factor = if sc.speed_factor[1] > sc.speed_factor[0] {
            rng.random_range(sc.speed_factor[0]..sc.speed_factor[1])
        } else {
            sc.speed_factor[0]
        };
        let mut agent = AgentState::new(0, profile.clone(), start, heading, Vec2::ZERO);
        agent.inner = InnerState::new(
            IntentionHypothesis::Path(Arc::new(path)),
            attentive,
            responsibility,
            config.gamma.r_front,
            config.gamma.r_rear,
        );
        agent.desired_speed = profile.profile.s_max * factor;
        return Some(agent);
    }
    None
}

fn sample_path(world: &mut World, sc: &SpawnConfig, on_sidewalk: bool) -> Option<RoutePath> {
    let road = world.road.clone();
    let rng = &mut world.rng;
    if on_sidewalk {
        let pool: Vec<_> =
            road.sidewalks().iter().filter(|s| sc.sidewalks.is_empty() || sc.sidewalks.contains(&s.id)).collect();
        let lengths: Vec<f64> = pool.iter().map(|s| s.line.length()).collect();
        let i = pick_by_length(rng, &lengths)?;
        let p = pool[i].line.point_at(rng.random_range(0.0..lengths[i]));
        let mut paths = road.sidewalk_paths(p, sc.path_length);
        paths.truncate(sc.max_paths);
        pick(rng, paths)
    } else {
        let pool: Vec<_> = road.lanes().iter().filter(|l| sc.lanes.is_empty() || sc.lanes.contains(&l.id)).collect();
        let lengths: Vec<f64> = pool.iter().map(|l| l.centerline.length()).collect();
        let i = pick_by_length(rng, &lengths)?;
        let s = rng.random_range(0.0..lengths[i]);
        let paths = road.candidate_paths_from(pool[i].id, s, sc.path_length, sc.max_paths);
        pick(rng, paths)
    }
}

fn pick_by_length(rng: &mut ChaCha8Rng, lengths: &[f64]) -> Option<usize> {
    let total: f64 = lengths.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut x = rng.random_range(0.0..total);
    for (i, &l) in lengths.iter().enumerate() {
        if x < l {
            return Some(i);
        }
        x -= l;
    }
    Some(lengths.len() - 1)
}

fn pick(rng: &mut ChaCha8Rng, mut paths: Vec<RoutePath>) -> Option<RoutePath> {
    paths.retain(|p| p.points().len() >= 2);
    if paths.is_empty() {
        return None;
    }
    let i = rng.random_range(0..paths.len());
    Some(paths.swap_remove(i))
}

/// Earliest time in `[0, horizon]` at which the footprints of `a` and `b`
/// touch if both keep their current velocities.
pub fn time_to_collision(a: &AgentState, b: &AgentState, horizon: f64) -> Option<f64> {
    let fa = a.profile.profile.oriented_footprint(a.heading);
    let fb = b.profile.profile.oriented_footprint(b.heading);
    let region = minkowski_difference(&fb, &fa).translate(b.position - a.position);
    region.ray_entry_time(a.velocity - b.velocity, horizon)
}

/// Speed scale of the baseline: `clamp(ttc / ttc_safe, 0, 1)`, 1 without a
/// predicted collision.
pub fn ttc_speed_factor(ttc: Option<f64>, ttc_safe: f64) -> f64 {
    ttc.map_or(1.0, |t| (t / ttc_safe).clamp(0.0, 1.0))
}

/// Baseline update: follow the path at the desired speed scaled by the time
/// to the earliest predicted collision with an agent ahead. No steering
/// around others.
pub fn ttc_step(
    agents: &[AgentState],
    visible: &[AgentState],
    params: &GammaParams,
    ttc: &TtcParams,
    dt: f64,
) -> Vec<AgentState> {
    agents
        .par_iter()
        .map(|a| {
            let preferred = match &a.inner.intention {
                IntentionHypothesis::Path(path) => {
                    path_velocity(path, a.position, a.velocity.norm(), a.desired_speed, params)
                }
                IntentionHypothesis::KeepVelocity => a.velocity,
                IntentionHypothesis::KeepAcceleration => a.velocity + a.acceleration * dt,
            };
            let forward = Vec2::from_angle(a.heading);
            let earliest = agents
                .iter()
                .chain(visible)
                .filter(|b| b.id != a.id && (b.position - a.position).dot(forward) > 0.0)
                .filter_map(|b| time_to_collision(a, b, ttc.horizon))
                .min_by(f64::total_cmp);
            advance(a, preferred * ttc_speed_factor(earliest, ttc.ttc_safe), dt)
        })
        .collect()
}

/// One simulation step.
pub fn step(world: &mut World, config: &ScenarioConfig) -> TrafficMetrics {
    step_with(world, config, &[])
}

/// One simulation step in which `visible` agents are seen by the crowd but
/// are moved by the caller.
pub fn step_with(world: &mut World, config: &ScenarioConfig, visible: &[AgentState]) -> TrafficMetrics {
    let dt = config.dt;
    world.agents = match config.behavior {
        Behavior::Gamma => gamma_step_with(&world.agents, visible, Some(&world.road), &config.gamma, dt),
        Behavior::Ttc => ttc_step(&world.agents, visible, &config.gamma, &config.ttc, dt),
    };
    world.step += 1;
    world.time = world.step as f64 * dt;

    let jam = config.jam;
    let mut keep = Vec::with_capacity(world.agents.len());
    for agent in std::mem::take(&mut world.agents) {
        let slow = world.slow_time.entry(agent.id).or_insert(0.0);
        if agent.velocity.norm() < jam.speed {
            *slow += dt;
        } else {
            *slow = 0.0;
        }
        let jammed = *slow >= jam.dwell - 1e-9;
        let finished = match &agent.inner.intention {
            IntentionHypothesis::Path(path) => path.is_past_end(agent.position),
            _ => false,
        };
        if finished {
            world.removed_finished += 1;
            world.slow_time.remove(&agent.id);
        } else if jammed && jam.remove {
            world.removed_jammed += 1;
            world.slow_time.remove(&agent.id);
        } else {
            keep.push(agent);
        }
    }
    world.agents = keep;
    spawn_agents_avoiding(world, config, visible);
    metrics(world, config)
}

fn metrics(world: &World, config: &ScenarioConfig) -> TrafficMetrics {
    let mut avg_speed = BTreeMap::new();
    for name in config.counts.keys() {
        let speeds: Vec<f64> =
            world.agents.iter().filter(|a| a.profile.name() == name.as_str()).map(|a| a.velocity.norm()).collect();
        avg_speed.insert(name.clone(), mean(&speeds));
    }
    let all: Vec<f64> = world.agents.iter().map(|a| a.velocity.norm()).collect();
    TrafficMetrics {
        step: world.step,
        time: world.time,
        avg_speed,
        avg_speed_all: mean(&all),
        congestion: congestion_factor(world.jammed_alive(&config.jam), world.removed_jammed, world.spawned),
        alive: world.agents.len(),
        spawned: world.spawned,
        removed_jammed: world.removed_jammed,
        removed_finished: world.removed_finished,
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub const TRAJECTORY_HEADER: &str = "step,time,agent_id,profile,x,y,heading,speed";

pub fn metrics_header(config: &ScenarioConfig) -> String {
    let mut cols = vec!["step".to_string(), "time".to_string()];
    cols.extend(config.counts.keys().map(|n| format!("avg_speed_{n}")));
    cols.push("avg_speed_all".into());
    cols.push("congestion_factor".into());
    cols.join(",")
}

pub fn write_trajectory_rows<W: Write>(out: &mut W, world: &World) -> io::Result<()> {
    for a in &world.agents {
        writeln!(
            out,
            "{},{:.3},{},{},{:.4},{:.4},{:.5},{:.4}",
            world.step,
            world.time,
            a.id,
            a.profile.name(),
            a.position.x,
            a.position.y,
            a.heading,
            a.velocity.norm()
        )?;
    }
    Ok(())
}

pub fn write_metrics_row<W: Write>(out: &mut W, m: &TrafficMetrics) -> io::Result<()> {
    let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    let mut cols = vec![m.step.to_string(), format!("{:.3}", m.time)];
    cols.extend(m.avg_speed.values().map(|v| fmt(*v)));
    cols.push(fmt(m.avg_speed_all));
    cols.push(format!("{:.6}", m.congestion));
    writeln!(out, "{}", cols.join(","))
}

/// Aggregates of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    /// Mean over steps of the all-agent average speed.
    pub mean_speed: f64,
    pub final_congestion: f64,
    pub spawned: u64,
    pub removed_jammed: u64,
    pub removed_finished: u64,
}

/// Runs `config.duration` seconds, streaming both CSVs (headers included).
pub fn run<T: Write, M: Write>(
    config: &ScenarioConfig,
    road: Arc<RoadContext>,
    profiles: &[ProfileRef],
    trajectory: &mut T,
    metrics_out: &mut M,
) -> Result<RunSummary, SimError> {
    let io_err = |source| SimError::Io { path: PathBuf::from("<output>"), source };
    let mut world = World::new(config, road, profiles)?;
    spawn_agents(&mut world, config);
    writeln!(trajectory, "{TRAJECTORY_HEADER}").map_err(io_err)?;
    writeln!(metrics_out, "{}", metrics_header(config)).map_err(io_err)?;
    let steps = config.steps();
    let mut speed_sum = 0.0;
    let mut speed_n = 0u64;
    let mut last = metrics(&world, config);
    for _ in 0..steps {
        last = step(&mut world, config);
        if let Some(v) = last.avg_speed_all {
            speed_sum += v;
            speed_n += 1;
        }
        write_trajectory_rows(trajectory, &world).map_err(io_err)?;
        write_metrics_row(metrics_out, &last).map_err(io_err)?;
    }
    Ok(RunSummary {
        steps,
        mean_speed: if speed_n > 0 { speed_sum / speed_n as f64 } else { 0.0 },
        final_congestion: last.congestion,
        spawned: world.spawned,
        removed_jammed: world.removed_jammed,
        removed_finished: world.removed_finished,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::builtin_calibrated;

    #[test]
    fn congestion_counting() {
        assert_eq!(congestion_factor(0, 0, 10), 0.0);
        assert_eq!(congestion_factor(2, 0, 10), 0.2);
        assert_eq!(congestion_factor(4, 6, 10), 1.0);
        assert_eq!(congestion_factor(0, 0, 0), 0.0);
    }

    #[test]
    fn ttc_factor_arithmetic() {
        assert_eq!(ttc_speed_factor(None, 4.0), 1.0);
        assert_eq!(ttc_speed_factor(Some(1.0), 4.0), 0.25);
        assert_eq!(ttc_speed_factor(Some(9.0), 4.0), 1.0);
    }

    #[test]
    fn config_rejects_bad_fields() {
        assert!(ScenarioConfig::from_toml("dt = 0.0").unwrap_err().to_string().contains("dt"));
        assert!(ScenarioConfig::from_toml("spawn = { max_paths = 0 }").unwrap_err().to_string().contains("max_paths"));
        assert!(ScenarioConfig::from_toml("bogus = 1").unwrap_err().to_string().contains("bogus"));
        let ok = ScenarioConfig::from_toml("behavior = \"ttc\"\n[counts]\ncar = 3\n").unwrap();
        assert_eq!(ok.behavior, Behavior::Ttc);
        assert_eq!(ok.counts["car"], 3);
    }

    #[test]
    fn unknown_profile_is_an_error() {
        let mut config = ScenarioConfig::default();
        config.counts.insert("tram".into(), 1);
        let err = World::new(&config, Arc::new(fixtures::straight()), &builtin_calibrated()).unwrap_err();
        assert!(matches!(err, SimError::UnknownProfile(n) if n == "tram"));
    }
}
