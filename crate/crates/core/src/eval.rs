//! Trajectory-prediction benchmark: dataset loading, windowed prediction with
//! GAMMA, its sampled variant and a constant-velocity baseline, ADE/FDE and
//! runtime measurement.
//!
//! Two text layouts are read, both in world meters:
//!
//! ```text
//! # source_fps = 25        optional `# key = value` header lines
//! # rows = 4
//! 780 1 8.46 3.59          plain: frame id x y
//! 790 1 8.99 3.62
//! ```
//!
//! The typed layout appends a `type` column (`pedestrian`, `car`, ...).
//! Fields may be separated by whitespace or commas, and a leading column-name
//! row is skipped. The frame period is the most common frame-index step
//! divided by `source_fps` (default 25).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::gamma::{gamma_new_velocity, gamma_step, AgentId, AgentState, GammaParams, IntentionHypothesis};
use crate::geometry::Vec2;
use crate::inference::{belief_update, integrate, Belief, HypothesisSpace, InferenceError, Observation, DATASET_SIGMA};
use crate::kinematics::{AgentProfile, CalibratedProfile, KinematicsError, KinematicsKind, ProfileRef};
use crate::road::RoadContext;
use crate::simulator::{self, ScenarioConfig, SimError, World};

pub const DEFAULT_SOURCE_FPS: f64 = 25.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: duplicate row for frame {frame}, agent {id}")]
    Duplicate { line: usize, frame: i64, id: AgentId },
    #[error("line {line}: frame {frame} of agent {id} is not after its previous frame {previous}")]
    NonMonotone { line: usize, frame: i64, id: AgentId, previous: i64 },
    #[error("line {line}: unknown agent type {label:?}")]
    UnknownType { line: usize, label: String },
    #[error("header declares {declared} rows, found {found}")]
    RowCount { declared: usize, found: usize },
    #[error("frame {frame} is off the {step}-frame grid starting at {first}")]
    IrregularFrame { frame: i64, first: i64, step: i64 },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("no calibrated profile named {0:?}")]
    MissingProfile(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    Plain,
    Typed,
}

impl FromStr for DataFormat {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "plain" => Ok(DataFormat::Plain),
            "typed" => Ok(DataFormat::Typed),
            _ => Err(EvalError::Invalid { field: "format", reason: format!("{s:?} (expected plain or typed)") }),
        }
    }
}

/// Maps a dataset type label to a built-in profile name.
pub fn canonical_type(label: &str) -> Option<&'static str> {
    match label.to_ascii_lowercase().as_str() {
        "pedestrian" | "ped" | "person" | "walker" => Some("pedestrian"),
        "bicycle" | "bike" | "cyclist" => Some("bicycle"),
        "car" | "vehicle" => Some("car"),
        "van" => Some("van"),
        "bus" | "truck" => Some("bus"),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub name: String,
    /// Every frame on the regular grid between the first and last row.
    pub frames: Vec<(i64, f64)>,
    pub tracks: BTreeMap<AgentId, Vec<(i64, Vec2)>>,
    /// Profile name per agent; agents missing here are pedestrians.
    pub agent_type: BTreeMap<AgentId, String>,
    pub frame_step: i64,
    pub source_fps: f64,
    pub frame_period: f64,
    /// `key = value` pairs from the comment header.
    pub header: BTreeMap<String, String>,
}

impl TrajectoryDataset {
    pub fn rows(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    pub fn type_of(&self, id: AgentId) -> &str {
        self.agent_type.get(&id).map_or("pedestrian", String::as_str)
    }

    /// Builds a dataset from already assembled tracks (strictly increasing
    /// frames per track).
    pub fn from_tracks(
        name: &str,
        tracks: BTreeMap<AgentId, Vec<(i64, Vec2)>>,
        agent_type: BTreeMap<AgentId, String>,
        source_fps: f64,
    ) -> Result<Self, EvalError> {
        if !(source_fps > 0.0 && source_fps.is_finite()) {
            return Err(EvalError::Invalid { field: "source_fps", reason: source_fps.to_string() });
        }
        let distinct: BTreeSet<i64> = tracks.values().flatten().map(|&(f, _)| f).collect();
        let sorted: Vec<i64> = distinct.into_iter().collect();
        let step = frame_step(&sorted);
        let mut frames = Vec::new();
        if let (Some(&first), Some(&last)) = (sorted.first(), sorted.last()) {
            if let Some(&frame) = sorted.iter().find(|&&f| (f - first) % step != 0) {
                return Err(EvalError::IrregularFrame { frame, first, step });
            }
            let mut f = first;
            while f <= last {
                frames.push((f, f as f64 / source_fps));
                f += step;
            }
        }
        Ok(TrajectoryDataset {
            name: name.to_string(),
            frames,
            tracks,
            agent_type,
            frame_step: step,
            source_fps,
            frame_period: step as f64 / source_fps,
            header: BTreeMap::new(),
        })
    }
}

/// Most common positive gap between consecutive distinct frames, smallest on
/// ties; 1 for fewer than two frames.
fn frame_step(sorted: &[i64]) -> i64 {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for w in sorted.windows(2) {
        *counts.entry(w[1] - w[0]).or_insert(0) += 1;
    }
    let mut best = (1, 0);
    for (&gap, &n) in &counts {
        if n > best.1 {
            best = (gap, n);
        }
    }
    best.0
}

pub fn load_trajectories(path: &Path, format: DataFormat) -> Result<TrajectoryDataset, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let name = path.file_stem().map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned());
    parse_trajectories(&text, format, &name)
}

fn parse_number(field: &str, line: usize, what: &str) -> Result<f64, EvalError> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| EvalError::Parse { line, reason: format!("{what} {field:?} is not a finite number") })
}

fn parse_integer(field: &str, line: usize, what: &str) -> Result<f64, EvalError> {
    let v = parse_number(field, line, what)?;
    if v.fract() != 0.0 {
        return Err(EvalError::Parse { line, reason: format!("{what} {field:?} is not an integer") });
    }
    Ok(v)
}

pub fn parse_trajectories(text: &str, format: DataFormat, name: &str) -> Result<TrajectoryDataset, EvalError> {
    let columns = match format {
        DataFormat::Plain => 4,
        DataFormat::Typed => 5,
    };
    let mut header = BTreeMap::new();
    let mut tracks: BTreeMap<AgentId, Vec<(i64, Vec2)>> = BTreeMap::new();
    let mut agent_type: BTreeMap<AgentId, String> = BTreeMap::new();
    let mut seen: BTreeSet<(i64, AgentId)> = BTreeSet::new();
    let mut rows = 0usize;
    let mut first_data = true;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                header.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> =
            trimmed.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if first_data {
            first_data = false;
            if fields.first().is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
        }
        if fields.len() != columns {
            return Err(EvalError::Parse {
                line,
                reason: format!("expected {columns} fields, found {}", fields.len()),
            });
        }
        let frame = parse_integer(fields[0], line, "frame")? as i64;
        let id_value = parse_integer(fields[1], line, "agent id")?;
        if id_value < 0.0 {
            return Err(EvalError::Parse { line, reason: format!("negative agent id {}", fields[1]) });
        }
        let id = id_value as AgentId;
        let position = Vec2::new(parse_number(fields[2], line, "x")?, parse_number(fields[3], line, "y")?);
        if format == DataFormat::Typed {
            let label = fields[4];
            let canonical =
                canonical_type(label).ok_or_else(|| EvalError::UnknownType { line, label: label.to_string() })?;
            match agent_type.get(&id) {
                Some(existing) if existing != canonical => {
                    return Err(EvalError::Parse {
                        line,
                        reason: format!("agent {id} changes type from {existing} to {canonical}"),
                    })
                }
                _ => {
                    agent_type.insert(id, canonical.to_string());
                }
            }
        }
        if !seen.insert((frame, id)) {
            return Err(EvalError::Duplicate { line, frame, id });
        }
        let track = tracks.entry(id).or_default();
        if let Some(&(previous, _)) = track.last() {
            if frame <= previous {
                return Err(EvalError::NonMonotone { line, frame, id, previous });
            }
        }
        track.push((frame, position));
        rows += 1;
    }

    if let Some(declared) = header.get("rows") {
        let declared: usize = declared
            .parse()
            .map_err(|_| EvalError::Invalid { field: "rows", reason: format!("{declared:?} is not a count") })?;
        if declared != rows {
            return Err(EvalError::RowCount { declared, found: rows });
        }
    }
    let source_fps = match header.get("source_fps") {
        Some(v) => v
            .parse::<f64>()
            .map_err(|_| EvalError::Invalid { field: "source_fps", reason: format!("{v:?} is not a number") })?,
        None => DEFAULT_SOURCE_FPS,
    };
    let mut dataset = TrajectoryDataset::from_tracks(name, tracks, agent_type, source_fps)?;
    dataset.header = header;
    Ok(dataset)
}

/// Writes `dataset` with `source_fps` and `rows` header keys, rows ordered by
/// frame then id.
pub fn write_trajectories<W: Write>(out: &mut W, dataset: &TrajectoryDataset, format: DataFormat) -> io::Result<()> {
    writeln!(out, "# source_fps = {}", dataset.source_fps)?;
    writeln!(out, "# rows = {}", dataset.rows())?;
    let mut rows: Vec<(i64, AgentId, Vec2)> =
        dataset.tracks.iter().flat_map(|(&id, t)| t.iter().map(move |&(f, p)| (f, id, p))).collect();
    rows.sort_by_key(|&(f, id, _)| (f, id));
    match format {
        DataFormat::Plain => {
            for (f, id, p) in rows {
                writeln!(out, "{f}\t{id}\t{:.4}\t{:.4}", p.x, p.y)?;
            }
        }
        DataFormat::Typed => {
            writeln!(out, "frame,id,x,y,type")?;
            for (f, id, p) in rows {
                writeln!(out, "{f},{id},{:.4},{:.4},{}", p.x, p.y, dataset.type_of(id))?;
            }
        }
    }
    Ok(())
}

/// Records a crowd simulation every `record_every` steps as a typed dataset
/// (frame index = step, so `source_fps = 1 / dt`).
pub fn simulated_dataset(
    name: &str,
    config: &ScenarioConfig,
    road: Arc<RoadContext>,
    profiles: &[ProfileRef],
    record_every: u64,
) -> Result<TrajectoryDataset, EvalError> {
    if record_every == 0 {
        return Err(EvalError::Invalid { field: "record_every", reason: "must be positive".into() });
    }
    config.validate()?;
    let mut world = World::new(config, road, profiles)?;
    simulator::spawn_agents(&mut world, config);
    let mut tracks: BTreeMap<AgentId, Vec<(i64, Vec2)>> = BTreeMap::new();
    let mut types = BTreeMap::new();
    let mut record = |world: &World| {
        for a in &world.agents {
            tracks.entry(a.id).or_default().push((world.step as i64, a.position));
            types.insert(a.id, a.profile.name().to_string());
        }
    };
    record(&world);
    for _ in 0..config.steps() {
        simulator::step(&mut world, config);
        if world.step % record_every == 0 {
            record(&world);
        }
    }
    TrajectoryDataset::from_tracks(name, tracks, types, 1.0 / config.dt)
}

/// Open-plaza scene whose agents move by GAMMA with inner states drawn from
/// the context-free hypothesis grid, so that the predictor's model class
/// contains the generating process.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlazaScene {
    pub seed: u64,
    /// Live agents kept per profile name.
    pub counts: BTreeMap<String, usize>,
    pub duration: f64,
    /// Agents spawn on the border of `[-half_size, half_size]²`.
    pub half_size: f64,
    /// Initial speed is `s_max` times a factor from this range.
    pub speed_factor: [f64; 2],
    /// Initial tangential acceleration of keep-acceleration agents, m/s².
    pub acceleration: [f64; 2],
    pub dt: f64,
    pub record_every: u64,
}

impl Default for PlazaScene {
    fn default() -> Self {
        PlazaScene {
            seed: 0,
            counts: BTreeMap::new(),
            duration: 60.0,
            half_size: 40.0,
            speed_factor: [0.3, 0.8],
            acceleration: [-0.4, 0.8],
            dt: 0.1,
            record_every: 4,
        }
    }
}

impl PlazaScene {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        toml::from_str(text).map_err(|e| EvalError::Invalid { field: "plaza", reason: e.to_string() })
    }
}

/// Seconds below 0.1 m/s after which a plaza agent is dropped.
const PLAZA_STALL: f64 = 5.0;
const PLAZA_CLEARANCE: f64 = 3.0;

pub fn plaza_dataset(name: &str, scene: &PlazaScene, profiles: &[ProfileRef]) -> Result<TrajectoryDataset, EvalError> {
    if !(scene.dt > 0.0 && scene.half_size > 0.0 && scene.duration >= 0.0) || scene.record_every == 0 {
        return Err(EvalError::Invalid {
            field: "plaza",
            reason: "dt, half_size, record_every must be positive".into(),
        });
    }
    let mut kinds = Vec::new();
    for (n, &count) in &scene.counts {
        let p = profiles.iter().find(|p| p.name() == n).cloned().ok_or_else(|| EvalError::MissingProfile(n.clone()))?;
        kinds.push((p, count));
    }
    let space = HypothesisSpace::dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let mut agents: Vec<AgentState> = Vec::new();
    let mut stalled: BTreeMap<AgentId, f64> = BTreeMap::new();
    let mut next_id: AgentId = 1;
    let mut tracks: BTreeMap<AgentId, Vec<(i64, Vec2)>> = BTreeMap::new();
    let mut types = BTreeMap::new();
    let steps = (scene.duration / scene.dt).round() as u64;
    let h = scene.half_size;

    for step in 0..=steps {
        if step > 0 {
            agents = gamma_step(&agents, None, &GammaParams::default(), scene.dt);
            agents.retain(|a| {
                let slow = stalled.entry(a.id).or_insert(0.0);
                *slow = if a.velocity.norm() < 0.1 { *slow + scene.dt } else { 0.0 };
                a.position.x.abs() <= h + 2.0 && a.position.y.abs() <= h + 2.0 && *slow < PLAZA_STALL
            });
        }
        for (profile, count) in &kinds {
            let alive = agents.iter().filter(|a| Arc::ptr_eq(&a.profile, profile)).count();
            for _ in alive..*count {
                for _ in 0..50 {
                    let t = rng.random_range(-h..h);
                    let start = match rng.random_range(0..4) {
                        0 => Vec2::new(-h, t),
                        1 => Vec2::new(h, t),
                        2 => Vec2::new(t, -h),
                        _ => Vec2::new(t, h),
                    };
                    let radius = profile.profile.footprint.circumradius();
                    if agents.iter().any(|a| {
                        a.position.distance(start) - radius - a.profile.profile.footprint.circumradius()
                            < PLAZA_CLEARANCE
                    }) {
                        continue;
                    }
                    let target =
                        Vec2::new(rng.random_range(-0.25 * h..0.25 * h), rng.random_range(-0.25 * h..0.25 * h));
                    let heading = (target - start).angle();
                    let speed = profile.profile.s_max * rng.random_range(scene.speed_factor[0]..=scene.speed_factor[1]);
                    let dir = Vec2::from_angle(heading);
                    let mut agent = AgentState::new(next_id, profile.clone(), start, heading, dir * speed);
                    let hyp = space.get(rng.random_range(0..space.len()));
                    agent.inner = hyp.inner_state();
                    if matches!(hyp.intention, IntentionHypothesis::KeepAcceleration) {
                        agent.acceleration = dir * rng.random_range(scene.acceleration[0]..=scene.acceleration[1]);
                    }
                    types.insert(next_id, profile.name().to_string());
                    next_id += 1;
                    agents.push(agent);
                    break;
                }
            }
        }
        if step % scene.record_every == 0 {
            for a in &agents {
                tracks.entry(a.id).or_default().push((step as i64, a.position));
            }
        }
    }
    TrajectoryDataset::from_tracks(name, tracks, types, 1.0 / scene.dt)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictionTask {
    pub obs_len: usize,
    pub pred_len: usize,
    pub stride: usize,
    pub samples: usize,
}

impl Default for PredictionTask {
    fn default() -> Self {
        PredictionTask { obs_len: 8, pred_len: 12, stride: 1, samples: 20 }
    }
}

impl PredictionTask {
    pub fn validate(&self) -> Result<(), EvalError> {
        let check = |ok: bool, field, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(EvalError::Invalid { field, reason: reason.to_string() })
            }
        };
        check(self.obs_len >= 2, "obs_len", "need at least 2 observed frames")?;
        check(self.pred_len >= 1, "pred_len", "must be at least 1")?;
        check(self.stride >= 1, "stride", "must be at least 1")?;
        check(self.samples >= 1, "samples", "must be at least 1")
    }

    pub fn window_len(&self) -> usize {
        self.obs_len + self.pred_len
    }
}

/// Evaluation window: `task.window_len()` consecutive grid frames starting at
/// `dataset.frames[start]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Window {
    pub index: usize,
    pub start: usize,
    /// Agents present in every frame of the window.
    pub evaluated: Vec<AgentId>,
}

/// Windows with at least one evaluated agent. Depends only on the dataset and
/// the task.
pub fn windows(dataset: &TrajectoryDataset, task: &PredictionTask) -> Vec<Window> {
    let len = task.window_len();
    if dataset.frames.len() < len || task.stride == 0 {
        return Vec::new();
    }
    let first = dataset.frames[0].0;
    let step = dataset.frame_step;
    // Per track: grid index of its first frame and the run lengths of
    // consecutive frames, to test full coverage quickly.
    let spans: Vec<(AgentId, Vec<(usize, usize)>)> = dataset
        .tracks
        .iter()
        .map(|(&id, track)| {
            let mut runs: Vec<(usize, usize)> = Vec::new();
            for &(f, _) in track {
                let g = ((f - first) / step) as usize;
                match runs.last_mut() {
                    Some((s, n)) if *s + *n == g => *n += 1,
                    _ => runs.push((g, 1)),
                }
            }
            (id, runs)
        })
        .collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= dataset.frames.len() {
        let evaluated: Vec<AgentId> = spans
            .iter()
            .filter(|(_, runs)| runs.iter().any(|&(s, n)| s <= start && start + len <= s + n))
            .map(|(id, _)| *id)
            .collect();
        if !evaluated.is_empty() {
            out.push(Window { index: out.len(), start, evaluated });
        }
        start += task.stride;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    GammaDet,
    GammaStochastic,
    Linear,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GammaDet => "gamma",
            ModelKind::GammaStochastic => "gamma-s",
            ModelKind::Linear => "linear",
        }
    }
}

impl FromStr for ModelKind {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, EvalError> {
        match s {
            "gamma" => Ok(ModelKind::GammaDet),
            "gamma-s" => Ok(ModelKind::GammaStochastic),
            "linear" => Ok(ModelKind::Linear),
            _ => {
                Err(EvalError::Invalid { field: "model", reason: format!("{s:?} (expected gamma, gamma-s or linear)") })
            }
        }
    }
}

/// Components removed from the GAMMA model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Holonomic kinematics for every agent (footprint frozen at its heading
    /// when prediction starts).
    pub kinematics: bool,
    /// Footprints replaced by their circumscribed disk.
    pub polygon: bool,
    /// Only the keep-velocity intention is considered.
    pub intention: bool,
}

impl Ablation {
    pub fn is_empty(&self) -> bool {
        !(self.kinematics || self.polygon || self.intention)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.kinematics {
            out.push("kinematics");
        }
        if self.polygon {
            out.push("polygon");
        }
        if self.intention {
            out.push("intention");
        }
        out
    }

    /// Sets the flag called `name`.
    pub fn with(mut self, name: &str) -> Result<Self, EvalError> {
        match name {
            "kinematics" => self.kinematics = true,
            "polygon" => self.polygon = true,
            "intention" => self.intention = true,
            _ => {
                return Err(EvalError::Invalid {
                    field: "ablate",
                    reason: format!("{name:?} (expected kinematics, polygon or intention)"),
                })
            }
        }
        Ok(self)
    }
}

#[derive(Clone, Debug)]
pub struct PredictionModel {
    pub kind: ModelKind,
    pub ablation: Ablation,
    pub params: GammaParams,
    pub sigma: f64,
    /// Predict non-evaluated neighbours with the model instead of replaying
    /// them from ground truth.
    pub closed_loop_neighbors: bool,
    pub seed: u64,
    pub profiles: Vec<ProfileRef>,
}

impl PredictionModel {
    pub fn new(kind: ModelKind, profiles: Vec<ProfileRef>) -> Self {
        PredictionModel {
            kind,
            ablation: Ablation::default(),
            params: GammaParams::default(),
            sigma: DATASET_SIGMA,
            closed_loop_neighbors: false,
            seed: 0,
            profiles,
        }
    }

    /// `gamma`, `gamma-s`, `linear`, with `-no-<part>` per ablated part.
    pub fn label(&self) -> String {
        let mut label = self.kind.name().to_string();
        if self.kind != ModelKind::Linear {
            for n in self.ablation.names() {
                label.push_str("-no-");
                label.push_str(n);
            }
        }
        label
    }
}

/// Predicted futures of one agent in one window.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentPrediction {
    pub window: usize,
    pub agent: AgentId,
    /// One trajectory per sample, each `pred_len` positions long.
    pub samples: Vec<Vec<Vec2>>,
    pub truth: Vec<Vec2>,
}

/// Positions of every agent that appears in a window, per window frame.
struct Scene {
    ids: Vec<AgentId>,
    points: Vec<Vec<Option<Vec2>>>,
    profiles: Vec<ProfileRef>,
    period: f64,
}

impl Scene {
    fn build(
        dataset: &TrajectoryDataset,
        window: &Window,
        len: usize,
        obs_len: usize,
        profile_of: &dyn Fn(&str, f64) -> Result<ProfileRef, EvalError>,
    ) -> Result<Scene, EvalError> {
        let first = dataset.frames[window.start].0;
        let last = dataset.frames[window.start + len - 1].0;
        let step = dataset.frame_step;
        let mut scene =
            Scene { ids: Vec::new(), points: Vec::new(), profiles: Vec::new(), period: dataset.frame_period };
        for (&id, track) in &dataset.tracks {
            let lo = track.partition_point(|&(f, _)| f < first);
            let hi = track.partition_point(|&(f, _)| f <= last);
            if lo == hi {
                continue;
            }
            let mut pts = vec![None; len];
            for &(f, p) in &track[lo..hi] {
                pts[((f - first) / step) as usize] = Some(p);
            }
            let reference = (0..obs_len).rev().find(|&j| pts[j].is_some()).unwrap_or(len - 1);
            let heading = heading_estimate(&pts, reference, scene.period).unwrap_or(0.0);
            scene.profiles.push(profile_of(dataset.type_of(id), heading)?);
            scene.ids.push(id);
            scene.points.push(pts);
        }
        Ok(scene)
    }

    /// State of agent `k` at window frame `j` from finite differences over
    /// frames up to `j`.
    fn state(&self, k: usize, j: usize) -> Option<AgentState> {
        let pts = &self.points[k];
        let p = pts[j]?;
        let back = |i: usize| if i <= j { j.checked_sub(i).and_then(|m| pts[m]) } else { None };
        let velocity = back(1).map_or(Vec2::ZERO, |q| (p - q) / self.period);
        let acceleration = match (back(1), back(2)) {
            (Some(q), Some(r)) => ((p - q) - (q - r)) / (self.period * self.period),
            _ => Vec2::ZERO,
        };
        let heading = heading_estimate(pts, j, self.period).unwrap_or(0.0);
        let mut agent = AgentState::new(self.ids[k], self.profiles[k].clone(), p, heading, velocity);
        agent.acceleration = acceleration;
        Some(agent)
    }

    fn world(&self, j: usize, skip: &BTreeSet<usize>) -> Vec<AgentState> {
        (0..self.ids.len()).filter(|k| !skip.contains(k)).filter_map(|k| self.state(k, j)).collect()
    }
}

/// Direction of the latest displacement at or before frame `j` that is long
/// enough to carry a heading.
fn heading_estimate(pts: &[Option<Vec2>], j: usize, period: f64) -> Option<f64> {
    let min_step = 0.2 * period;
    (1..=j).rev().find_map(|i| match (pts[i], pts[i - 1]) {
        (Some(p), Some(q)) if p.distance(q) > min_step => Some((p - q).angle()),
        _ => None,
    })
}

fn holonomic_variant(profile: &ProfileRef) -> Result<ProfileRef, EvalError> {
    let mut p: AgentProfile = profile.profile.clone();
    if !p.kind.is_car_like() {
        return Ok(profile.clone());
    }
    p.kind = KinematicsKind::Holonomic;
    p.name = format!("{}-holonomic", p.name);
    Ok(CalibratedProfile::calibrate(p)?)
}

/// Per-window predictions in window order, then agent id order.
pub fn predict(
    dataset: &TrajectoryDataset,
    task: &PredictionTask,
    model: &PredictionModel,
) -> Result<Vec<AgentPrediction>, EvalError> {
    task.validate()?;
    let wins = windows(dataset, task);
    if wins.is_empty() {
        return Ok(Vec::new());
    }
    if !(model.sigma > 0.0) {
        return Err(EvalError::Invalid { field: "sigma", reason: model.sigma.to_string() });
    }

    let used: BTreeSet<&str> = dataset.tracks.keys().map(|&id| dataset.type_of(id)).collect();
    let mut base: BTreeMap<String, (ProfileRef, Option<ProfileRef>)> = BTreeMap::new();
    for name in used {
        let profile = model
            .profiles
            .iter()
            .find(|p| p.name() == name)
            .cloned()
            .ok_or_else(|| EvalError::MissingProfile(name.to_string()))?;
        let holonomic = if model.ablation.kinematics && model.kind != ModelKind::Linear {
            Some(holonomic_variant(&profile)?)
        } else {
            None
        };
        base.insert(name.to_string(), (profile, holonomic));
    }
    let profile_of = |name: &str, heading: f64| -> Result<ProfileRef, EvalError> {
        let (profile, holonomic) = &base[name];
        match holonomic {
            Some(h) if h.profile.name != profile.profile.name => {
                let mut p = h.profile.clone();
                p.footprint = profile.profile.footprint.rotate(heading);
                Ok(Arc::new(CalibratedProfile { profile: p, trackable: h.trackable.clone() }))
            }
            _ => Ok(profile.clone()),
        }
    };

    let mut params = model.params;
    params.disk_footprints = model.ablation.polygon;
    let space = Arc::new(if model.ablation.intention {
        HypothesisSpace::new(
            vec![IntentionHypothesis::KeepVelocity],
            vec![true, false],
            vec![0.25, 0.5, 0.75],
            vec![(15.0, 5.0), (8.0, 3.0)],
        )?
    } else {
        HypothesisSpace::dataset()
    });

    let per_window: Vec<Result<Vec<AgentPrediction>, EvalError>> = wins
        .par_iter()
        .map(|w| {
            let scene = Scene::build(dataset, w, task.window_len(), task.obs_len, &profile_of)?;
            predict_window(&scene, w, task, model, &params, &space)
        })
        .collect();
    let mut out = Vec::new();
    for r in per_window {
        out.extend(r?);
    }
    Ok(out)
}

fn predict_window(
    scene: &Scene,
    window: &Window,
    task: &PredictionTask,
    model: &PredictionModel,
    params: &GammaParams,
    space: &Arc<HypothesisSpace>,
) -> Result<Vec<AgentPrediction>, EvalError> {
    let obs = task.obs_len;
    let last = obs - 1;
    let index_of = |id: AgentId| scene.ids.binary_search(&id).expect("evaluated agents are in the scene");
    let evaluated: Vec<usize> = window.evaluated.iter().map(|&id| index_of(id)).collect();
    let truth_of =
        |k: usize| -> Vec<Vec2> { (obs..task.window_len()).map(|j| scene.points[k][j].expect("full track")).collect() };

    if model.kind == ModelKind::Linear {
        return Ok(evaluated
            .iter()
            .map(|&k| {
                let p = scene.points[k][last].expect("full track");
                let d = p - scene.points[k][last - 1].expect("full track");
                let path = (1..=task.pred_len).map(|i| p + d * i as f64).collect();
                AgentPrediction { window: window.index, agent: scene.ids[k], samples: vec![path], truth: truth_of(k) }
            })
            .collect());
    }

    // Agents rolled out by the model: evaluated ones, plus neighbours with
    // two trailing observed frames in closed-loop mode.
    let mut predicted: BTreeSet<usize> = evaluated.iter().copied().collect();
    if model.closed_loop_neighbors {
        for k in 0..scene.ids.len() {
            if scene.points[k][last].is_some() && scene.points[k][last - 1].is_some() {
                predicted.insert(k);
            }
        }
    }

    let mut belief = Belief::new(Some(space.clone()));
    for t in 2..obs {
        let prev = scene.world(t - 1, &BTreeSet::new());
        let mut observation = Observation { timestamp: t as f64 * scene.period, positions: BTreeMap::new() };
        for &k in &predicted {
            if let Some(p) = scene.points[k][t] {
                observation.positions.insert(scene.ids[k], p);
            }
        }
        belief = belief_update(&belief, &prev, &observation, None, params, model.sigma, scene.period)?;
    }

    let order: Vec<usize> = predicted.iter().copied().collect();
    let start: Vec<AgentState> = order.iter().map(|&k| scene.state(k, last).expect("present at last frame")).collect();
    let ml: Vec<usize> = order.iter().map(|&k| belief.get(scene.ids[k]).map_or(0, |b| b.most_likely_index())).collect();
    let mut assignments = vec![ml];
    if model.kind == ModelKind::GammaStochastic {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(window.start as u64);
        for _ in 1..task.samples {
            assignments.push(
                order
                    .iter()
                    .map(|&k| match belief.get(scene.ids[k]) {
                        Some(b) => b.sample_indices(1, &mut rng)[0],
                        None => rng.random_range(0..space.len()),
                    })
                    .collect(),
            );
        }
    }

    let rollouts: Vec<Vec<Vec<Vec2>>> = assignments
        .iter()
        .map(|hyps| {
            let agents: Vec<AgentState> = start.iter().zip(hyps).map(|(a, &h)| space.get(h).apply(a)).collect();
            rollout(scene, agents, &predicted, last, task.pred_len, params)
        })
        .collect();

    Ok(evaluated
        .iter()
        .map(|&k| {
            let slot = order.iter().position(|&o| o == k).expect("evaluated agents are predicted");
            AgentPrediction {
                window: window.index,
                agent: scene.ids[k],
                samples: rollouts.iter().map(|r| r[slot].clone()).collect(),
                truth: truth_of(k),
            }
        })
        .collect())
}

/// Joint GAMMA rollout of `agents` from window frame `from`; everyone else is
/// replayed from the scene.
fn rollout(
    scene: &Scene,
    mut agents: Vec<AgentState>,
    predicted: &BTreeSet<usize>,
    from: usize,
    steps: usize,
    params: &GammaParams,
) -> Vec<Vec<Vec2>> {
    let mut paths = vec![Vec::with_capacity(steps); agents.len()];
    for i in 0..steps {
        let mut everyone = agents.clone();
        everyone.extend(scene.world(from + i, predicted));
        let commands: Vec<Vec2> =
            agents.iter().map(|a| gamma_new_velocity(a, &everyone, None, params, scene.period).velocity).collect();
        agents = agents.iter().zip(commands).map(|(a, c)| integrate(a, c, scene.period)).collect();
        for (path, a) in paths.iter_mut().zip(&agents) {
            path.push(a.position);
        }
    }
    paths
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricMode {
    Deterministic,
    BestOfN,
    AverageSample,
}

impl fmt::Display for MetricMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricMode::Deterministic => "deterministic",
            MetricMode::BestOfN => "best_of_n",
            MetricMode::AverageSample => "average_sample",
        })
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub ade: f64,
    pub fde: f64,
    /// Agent-windows scored.
    pub count: usize,
}

fn errors(path: &[Vec2], truth: &[Vec2]) -> (f64, f64) {
    let mut sum = CompensatedSum::default();
    for (p, t) in path.iter().zip(truth) {
        sum.add(p.distance(*t));
    }
    let last = path.last().zip(truth.last()).map_or(0.0, |(p, t)| p.distance(*t));
    (sum.value() / truth.len() as f64, last)
}

/// ADE and FDE over all agent-windows; NaN when there are none. Every sample
/// must have the same length as its truth.
pub fn ade_fde(predictions: &[AgentPrediction], mode: MetricMode) -> Metrics {
    let mut ade = CompensatedSum::default();
    let mut fde = CompensatedSum::default();
    for p in predictions {
        assert!(!p.samples.is_empty() && !p.truth.is_empty(), "prediction without samples or truth");
        for s in &p.samples {
            assert_eq!(s.len(), p.truth.len(), "prediction and truth lengths differ");
        }
        let (a, f) = match mode {
            MetricMode::Deterministic => errors(&p.samples[0], &p.truth),
            MetricMode::BestOfN => p
                .samples
                .iter()
                .map(|s| errors(s, &p.truth))
                .fold((f64::INFINITY, f64::INFINITY), |best, e| if e.0 < best.0 { e } else { best }),
            MetricMode::AverageSample => {
                let n = p.samples.len() as f64;
                let mean: Vec<Vec2> =
                    (0..p.truth.len()).map(|i| p.samples.iter().fold(Vec2::ZERO, |acc, s| acc + s[i]) / n).collect();
                errors(&mean, &p.truth)
            }
        };
        ade.add(a);
        fde.add(f);
    }
    let n = predictions.len();
    if n == 0 {
        return Metrics { ade: f64::NAN, fde: f64::NAN, count: 0 };
    }
    Metrics { ade: ade.value() / n as f64, fde: fde.value() / n as f64, count: n }
}

/// Metric mode matching the model: best-of-n for the sampled variant.
pub fn default_metric(kind: ModelKind) -> MetricMode {
    match kind {
        ModelKind::GammaStochastic => MetricMode::BestOfN,
        _ => MetricMode::Deterministic,
    }
}

/// Pedestrians with random velocities at `density` agents per square meter,
/// on a jittered grid so that no two bodies overlap.
pub fn synthetic_crowd(n: usize, density: f64, profile: &ProfileRef, seed: u64) -> Vec<AgentState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let spacing = (1.0 / density).sqrt();
    let jitter = (spacing - 2.0 * profile.profile.footprint.circumradius()).max(0.0) * 0.4;
    (0..n)
        .map(|i| {
            let cell = Vec2::new((i % cols) as f64, (i / cols) as f64) * spacing;
            let offset = Vec2::new(rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter));
            let speed = rng.random_range(0.5..1.5);
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            AgentState::new(
                i as AgentId + 1,
                profile.clone(),
                cell + offset,
                heading,
                Vec2::from_angle(heading) * speed,
            )
        })
        .collect()
}

/// Median wall time in seconds of one full-crowd prediction step of `model`
/// over `crowd`, after discarding `max(2, repetitions / 10)` warm-up runs.
pub fn measure_runtime(
    model: &PredictionModel,
    crowd: &[AgentState],
    dt: f64,
    repetitions: usize,
) -> Result<f64, EvalError> {
    if repetitions < 10 {
        return Err(EvalError::Invalid { field: "repetitions", reason: format!("{repetitions} (need at least 10)") });
    }
    let mut params = model.params;
    params.disk_footprints = model.ablation.polygon;
    let run = || -> usize {
        match model.kind {
            ModelKind::Linear => crowd.iter().map(|a| a.position + a.velocity * dt).filter(|p| p.is_finite()).count(),
            _ => gamma_step(crowd, None, &params, dt).len(),
        }
    };
    for _ in 0..(repetitions / 10).max(2) {
        std::hint::black_box(run());
    }
    let mut times: Vec<f64> = (0..repetitions)
        .map(|_| {
            let t0 = Instant::now();
            std::hint::black_box(run());
            t0.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let mid = times.len() / 2;
    Ok(if times.len() % 2 == 1 { times[mid] } else { 0.5 * (times[mid - 1] + times[mid]) })
}

pub const RESULTS_HEADER: &str = "dataset,model,ade,fde,windows,runtime_s";

/// One results row; `runtime` is left empty when not measured.
pub fn write_results_row<W: Write>(
    out: &mut W,
    dataset: &str,
    model: &str,
    metrics: &Metrics,
    windows: usize,
    runtime: Option<f64>,
) -> io::Result<()> {
    let runtime = runtime.map_or_else(String::new, |r| format!("{r:.6e}"));
    writeln!(out, "{dataset},{model},{:.6},{:.6},{windows},{runtime}", metrics.ade, metrics.fde)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_step_takes_most_common_gap() {
        assert_eq!(frame_step(&[0, 10, 20, 30, 50]), 10);
        assert_eq!(frame_step(&[5]), 1);
        assert_eq!(frame_step(&[0, 2, 4, 7, 10]), 2);
    }

    #[test]
    fn compensated_sum_keeps_small_terms() {
        let mut s = CompensatedSum::default();
        for x in [1e16, 1.0, -1e16, 1.0] {
            s.add(x);
        }
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn labels() {
        let mut m = PredictionModel::new(ModelKind::GammaDet, Vec::new());
        assert_eq!(m.label(), "gamma");
        m.ablation = Ablation::default().with("polygon").unwrap().with("intention").unwrap();
        assert_eq!(m.label(), "gamma-no-polygon-no-intention");
        assert!(Ablation::default().with("wheels").is_err());
        assert_eq!("gamma-s".parse::<ModelKind>().unwrap(), ModelKind::GammaStochastic);
    }
}
