//! Lane and sidewalk networks with locate, path and drivable-area queries.
//!
//! Networks are read from a TOML document:
//!
//! ```toml
//! [[lane]]
//! id = 1                                   # unique, non-negative
//! centerline = [[0.0, 0.0], [100.0, 0.0]]  # travel direction, >= 2 points
//! width = 3.5                              # meters, > 0
//! successors = [2]                         # lanes continuing from the end
//! left_neighbor = 3                        # optional adjacent lane ids
//! right_neighbor = 4
//! left_boundary = "oncoming"               # open | edge | oncoming
//! right_boundary = "edge"
//!
//! [[sidewalk]]
//! id = 1
//! points = [[0.0, 3.5], [200.0, 3.5]]
//!
//! [[crossing]]                             # joins two sidewalk points
//! from = [1, 0]                            # [sidewalk id, point index]
//! to = [2, 0]
//! ```
//!
//! Boundary kinds default to `open` on a side with a neighbour lane and
//! `edge` otherwise. `open` boundaries do not constrain lateral motion.
//! Lateral offsets are positive to the left of the travel direction.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};

pub type LaneId = u32;

/// Distance beyond which a position is considered off the network.
pub const OFF_ROAD_DISTANCE: f64 = 50.0;
/// Maximum gap between a lane end and the start of each successor.
pub const SUCCESSOR_GAP: f64 = 0.5;
const TIE_EPS: f64 = 1e-9;
const CELL: f64 = 10.0;

#[derive(Debug, Error)]
pub enum RoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("network schema: {0}")]
    Parse(String),
    #[error("{record}: field `{field}`: {reason}")]
    Invalid { record: String, field: &'static str, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    /// Same-direction neighbour or intersection interior; no constraint.
    Open,
    /// Road edge.
    Edge,
    /// Lane carrying opposite-direction traffic.
    Oncoming,
}

impl BoundaryKind {
    pub fn constrains(self) -> bool {
        !matches!(self, BoundaryKind::Open)
    }
}

/// Polyline with cumulative arclength.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

/// Projection of a point onto a polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub point: Vec2,
    pub distance: f64,
    /// Positive when the point lies to the left of the travel direction.
    pub lateral: f64,
    pub tangent: Vec2,
}

impl Polyline {
    /// Consecutive duplicate points are dropped.
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q| q.distance(p) > 1e-9) {
                pts.push(p);
            }
        }
        let mut cum = Vec::with_capacity(pts.len());
        let mut acc = 0.0;
        for (i, p) in pts.iter().enumerate() {
            if i > 0 {
                acc += p.distance(pts[i - 1]);
            }
            cum.push(acc);
        }
        Polyline { points: pts, cum }
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }

    fn tangent(&self, edge: usize) -> Vec2 {
        (self.points[edge + 1] - self.points[edge]).normalized().unwrap_or(Vec2::X)
    }

    fn edge_at(&self, s: f64) -> usize {
        let n = self.points.len();
        match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Point at arclength `s`, clamped to the polyline.
    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let s = s.clamp(0.0, self.length());
        let i = self.edge_at(s);
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        self.points[i].lerp(self.points[i + 1], t)
    }

    pub fn tangent_at(&self, s: f64) -> Vec2 {
        if self.points.len() < 2 {
            return Vec2::X;
        }
        self.tangent(self.edge_at(s.clamp(0.0, self.length())))
    }

    /// Nearest point; ties go to the earliest edge.
    pub fn project(&self, p: Vec2) -> Projection {
        if self.points.len() == 1 {
            let d = p.distance(self.points[0]);
            return Projection { s: 0.0, point: self.points[0], distance: d, lateral: d, tangent: Vec2::X };
        }
        let mut best = (f64::INFINITY, 0usize, 0.0);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let ab = self.points[i + 1] - a;
            let len_sq = ab.norm_sq();
            let t = if len_sq > 0.0 { ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0) } else { 0.0 };
            let d = p.distance(a + ab * t);
            if d < best.0 - TIE_EPS {
                best = (d, i, t);
            }
        }
        let (distance, i, t) = best;
        let point = self.points[i].lerp(self.points[i + 1], t);
        let tangent = self.tangent(i);
        let side = tangent.cross(p - point);
        let lateral = if side < 0.0 { -distance } else { distance };
        let s = self.cum[i] + t * (self.cum[i + 1] - self.cum[i]);
        Projection { s, point, distance, lateral, tangent }
    }

    /// Sub-polyline between arclengths `from` and `to`.
    fn slice(&self, from: f64, to: f64) -> Vec<Vec2> {
        let mut out = vec![self.point_at(from)];
        for (p, &c) in self.points.iter().zip(&self.cum) {
            if c > from + 1e-9 && c < to - 1e-9 {
                out.push(*p);
            }
        }
        out.push(self.point_at(to));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaneSegment {
    pub id: LaneId,
    pub centerline: Polyline,
    pub width: f64,
    pub successors: Vec<LaneId>,
    pub left_neighbor: Option<LaneId>,
    pub right_neighbor: Option<LaneId>,
    pub left_boundary: BoundaryKind,
    pub right_boundary: BoundaryKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sidewalk {
    pub id: u32,
    pub line: Polyline,
}

/// Walkable link between point `from.1` of sidewalk `from.0` and point `to.1`
/// of sidewalk `to.0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crossing {
    pub from: (u32, usize),
    pub to: (u32, usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaneLocation {
    pub lane: LaneId,
    pub s: f64,
    pub lateral: f64,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathSource {
    Lane,
    Sidewalk,
}

/// A route resampled at 1 m arclength spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutePath {
    pub id: usize,
    pub source: PathSource,
    points: Vec<Vec2>,
    /// Lane under each point (empty for sidewalk paths).
    lanes: Vec<LaneId>,
    crosses_road: bool,
}

impl RoutePath {
    /// Resamples `polyline` at 1 m; a trailing remainder shorter than 1 m is
    /// dropped. `marks` lists `(start arclength, lane)` pairs in order.
    fn resample(id: usize, source: PathSource, raw: &[Vec2], marks: &[(f64, LaneId)], crosses_road: bool) -> Self {
        let line = Polyline::new(raw.to_vec());
        let n = line.length().floor() as usize;
        let points: Vec<Vec2> = (0..=n).map(|k| line.point_at(k as f64)).collect();
        let lanes = if marks.is_empty() {
            Vec::new()
        } else {
            (0..=n)
                .map(|k| {
                    let s = k as f64;
                    marks.iter().rev().find(|(start, _)| *start <= s + 1e-9).map_or(marks[0].1, |m| m.1)
                })
                .collect()
        };
        RoutePath { id, source, points, lanes, crosses_road }
    }

    /// Builds a path from an explicit polyline (resampled at 1 m).
    pub fn from_polyline(id: usize, source: PathSource, points: &[Vec2]) -> Self {
        Self::resample(id, source, points, &[], false)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn lanes(&self) -> &[LaneId] {
        &self.lanes
    }

    pub fn crosses_road(&self) -> bool {
        self.crosses_road
    }

    pub fn length(&self) -> f64 {
        self.points.len().saturating_sub(1) as f64
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let s = s.clamp(0.0, self.length());
        let i = (s.floor() as usize).min(self.points.len() - 2);
        self.points[i].lerp(self.points[i + 1], s - i as f64)
    }

    pub fn tangent_at(&self, s: f64) -> Vec2 {
        if self.points.len() < 2 {
            return Vec2::X;
        }
        let i = (s.clamp(0.0, self.length()).floor() as usize).min(self.points.len() - 2);
        (self.points[i + 1] - self.points[i]).normalized().unwrap_or(Vec2::X)
    }

    /// Arclength of the nearest point and the distance to it.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        if self.points.len() == 1 {
            return (0.0, p.distance(self.points[0]));
        }
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let ab = self.points[i + 1] - a;
            let t = ((p - a).dot(ab) / ab.norm_sq().max(1e-18)).clamp(0.0, 1.0);
            let d = p.distance(a + ab * t);
            if d < best.0 - TIE_EPS {
                best = (d, i as f64 + t);
            }
        }
        (best.1, best.0)
    }

    /// Lane under arclength `s`, if this is a lane path.
    pub fn lane_at(&self, s: f64) -> Option<LaneId> {
        if self.lanes.is_empty() {
            return None;
        }
        let i = (s.clamp(0.0, self.length()).round() as usize).min(self.lanes.len() - 1);
        Some(self.lanes[i])
    }

    /// True once `p` has passed the final point along the final direction.
    pub fn is_past_end(&self, p: Vec2) -> bool {
        let last = *self.points.last().expect("path has points");
        (p - last).dot(self.tangent_at(self.length())) >= 0.0
    }

    /// Sum of absolute heading changes along the path, radians.
    pub fn total_turning(&self) -> f64 {
        let dirs: Vec<f64> = self.points.windows(2).map(|w| (w[1] - w[0]).angle()).collect();
        dirs.windows(2).map(|w| wrap_angle(w[1] - w[0]).abs()).sum()
    }
}

/// Point at arclength (projection of `position` onto `path`) + `dist`,
/// clamped to the path end.
pub fn lookahead_waypoint(path: &RoutePath, position: Vec2, dist: f64) -> Vec2 {
    let (s, _) = path.project(position);
    path.point_at(s + dist)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LaneRecord {
    id: LaneId,
    centerline: Vec<[f64; 2]>,
    width: f64,
    #[serde(default)]
    successors: Vec<LaneId>,
    left_neighbor: Option<LaneId>,
    right_neighbor: Option<LaneId>,
    left_boundary: Option<BoundaryKind>,
    right_boundary: Option<BoundaryKind>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SidewalkRecord {
    id: u32,
    points: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CrossingRecord {
    from: (u32, usize),
    to: (u32, usize),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    lane: Vec<LaneRecord>,
    #[serde(default)]
    sidewalk: Vec<SidewalkRecord>,
    #[serde(default)]
    crossing: Vec<CrossingRecord>,
}

/// Uniform grid over lane geometry.
#[derive(Clone, Debug, Default)]
struct GridIndex {
    cells: HashMap<(i64, i64), Vec<usize>>,
}

fn cell_of(p: Vec2) -> (i64, i64) {
    ((p.x / CELL).floor() as i64, (p.y / CELL).floor() as i64)
}

impl GridIndex {
    fn build(lanes: &[LaneSegment]) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (idx, lane) in lanes.iter().enumerate() {
            for w in lane.centerline.points().windows(2) {
                let (lo, hi) = (
                    cell_of(Vec2::new(w[0].x.min(w[1].x), w[0].y.min(w[1].y))),
                    cell_of(Vec2::new(w[0].x.max(w[1].x), w[0].y.max(w[1].y))),
                );
                for cx in lo.0..=hi.0 {
                    for cy in lo.1..=hi.1 {
                        let v = cells.entry((cx, cy)).or_default();
                        if v.last() != Some(&idx) {
                            v.push(idx);
                        }
                    }
                }
            }
        }
        GridIndex { cells }
    }
}

/// Immutable lane and sidewalk networks.
#[derive(Clone, Debug)]
pub struct RoadContext {
    lanes: Vec<LaneSegment>,
    by_id: HashMap<LaneId, usize>,
    sidewalks: Vec<Sidewalk>,
    crossings: Vec<Crossing>,
    index: GridIndex,
}

/// Polyline points and `(arc length, lane)` marks of a path under construction.
type RawPath = (Vec<Vec2>, Vec<(f64, LaneId)>);

impl RoadContext {
    pub fn load(path: &Path) -> Result<Self, RoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| RoadError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, RoadError> {
        let file: NetworkFile = toml::from_str(text).map_err(|e| RoadError::Parse(e.to_string()))?;
        let to_vec = |pts: &[[f64; 2]]| pts.iter().map(|p| Vec2::new(p[0], p[1])).collect::<Vec<_>>();

        let mut lanes = Vec::with_capacity(file.lane.len());
        for rec in &file.lane {
            let record = format!("lane {}", rec.id);
            let pts = to_vec(&rec.centerline);
            if pts.iter().any(|p| !p.is_finite()) {
                return Err(RoadError::Invalid { record, field: "centerline", reason: "non-finite coordinate".into() });
            }
            let centerline = Polyline::new(pts);
            if centerline.points().len() < 2 {
                return Err(RoadError::Invalid {
                    record,
                    field: "centerline",
                    reason: "needs at least two distinct points".into(),
                });
            }
            if !(rec.width > 0.0 && rec.width.is_finite()) {
                return Err(RoadError::Invalid { record, field: "width", reason: "must be positive".into() });
            }
            let default_kind = |n: Option<LaneId>| if n.is_some() { BoundaryKind::Open } else { BoundaryKind::Edge };
            lanes.push(LaneSegment {
                id: rec.id,
                centerline,
                width: rec.width,
                successors: rec.successors.clone(),
                left_neighbor: rec.left_neighbor,
                right_neighbor: rec.right_neighbor,
                left_boundary: rec.left_boundary.unwrap_or(default_kind(rec.left_neighbor)),
                right_boundary: rec.right_boundary.unwrap_or(default_kind(rec.right_neighbor)),
            });
        }
        lanes.sort_by_key(|l| l.id);
        let mut by_id = HashMap::new();
        for (i, l) in lanes.iter().enumerate() {
            if by_id.insert(l.id, i).is_some() {
                return Err(RoadError::Invalid {
                    record: format!("lane {}", l.id),
                    field: "id",
                    reason: "duplicate id".into(),
                });
            }
        }
        for l in &lanes {
            let record = format!("lane {}", l.id);
            let end = *l.centerline.points().last().unwrap();
            for s in &l.successors {
                let Some(&j) = by_id.get(s) else {
                    return Err(RoadError::Invalid {
                        record,
                        field: "successors",
                        reason: format!("unknown lane {s}"),
                    });
                };
                let gap = lanes[j].centerline.points()[0].distance(end);
                if gap > SUCCESSOR_GAP {
                    return Err(RoadError::Invalid {
                        record,
                        field: "successors",
                        reason: format!("lane {s} starts {gap:.3} m from the end (limit {SUCCESSOR_GAP} m)"),
                    });
                }
            }
            for (field, n) in [("left_neighbor", l.left_neighbor), ("right_neighbor", l.right_neighbor)] {
                if let Some(n) = n {
                    if !by_id.contains_key(&n) {
                        return Err(RoadError::Invalid {
                            record: record.clone(),
                            field,
                            reason: format!("unknown lane {n}"),
                        });
                    }
                }
            }
        }

        let mut sidewalks: Vec<Sidewalk> = Vec::with_capacity(file.sidewalk.len());
        for rec in &file.sidewalk {
            let line = Polyline::new(to_vec(&rec.points));
            if line.points().len() < 2 {
                return Err(RoadError::Invalid {
                    record: format!("sidewalk {}", rec.id),
                    field: "points",
                    reason: "needs at least two distinct points".into(),
                });
            }
            if sidewalks.iter().any(|s| s.id == rec.id) {
                return Err(RoadError::Invalid {
                    record: format!("sidewalk {}", rec.id),
                    field: "id",
                    reason: "duplicate id".into(),
                });
            }
            sidewalks.push(Sidewalk { id: rec.id, line });
        }
        sidewalks.sort_by_key(|s| s.id);
        let mut crossings = Vec::with_capacity(file.crossing.len());
        for (k, rec) in file.crossing.iter().enumerate() {
            for (field, (sid, idx)) in [("from", rec.from), ("to", rec.to)] {
                let ok = sidewalks.iter().any(|s| s.id == sid && idx < s.line.points().len());
                if !ok {
                    return Err(RoadError::Invalid {
                        record: format!("crossing #{}", k + 1),
                        field,
                        reason: format!("no point {idx} on sidewalk {sid}"),
                    });
                }
            }
            crossings.push(Crossing { from: rec.from, to: rec.to });
        }

        let index = GridIndex::build(&lanes);
        Ok(RoadContext { lanes, by_id, sidewalks, crossings, index })
    }

    pub fn lanes(&self) -> &[LaneSegment] {
        &self.lanes
    }

    pub fn lane(&self, id: LaneId) -> Option<&LaneSegment> {
        self.by_id.get(&id).map(|&i| &self.lanes[i])
    }

    pub fn sidewalks(&self) -> &[Sidewalk] {
        &self.sidewalks
    }

    pub fn crossings(&self) -> &[Crossing] {
        &self.crossings
    }

    pub fn successor_link_count(&self) -> usize {
        self.lanes.iter().map(|l| l.successors.len()).sum()
    }

    /// Nearest lane by distance to its centerline; ties go to the lower id.
    /// `None` when nothing lies within [`OFF_ROAD_DISTANCE`].
    pub fn locate(&self, p: Vec2) -> Option<LaneLocation> {
        let (cx, cy) = cell_of(p);
        let mut best: Option<(f64, LaneId, Projection)> = None;
        let mut seen = vec![false; self.lanes.len()];
        let max_ring = (OFF_ROAD_DISTANCE / CELL).ceil() as i64 + 1;
        for ring in 0..=max_ring {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let Some(items) = self.index.cells.get(&(cx + dx, cy + dy)) else { continue };
                    for &i in items {
                        if std::mem::replace(&mut seen[i], true) {
                            continue;
                        }
                        let lane = &self.lanes[i];
                        let proj = lane.centerline.project(p);
                        let better = match &best {
                            None => true,
                            Some((d, id, _)) => {
                                proj.distance < d - TIE_EPS || ((proj.distance - d).abs() <= TIE_EPS && lane.id < *id)
                            }
                        };
                        if better {
                            best = Some((proj.distance, lane.id, proj));
                        }
                    }
                }
            }
            if let Some((d, _, _)) = best {
                if d + TIE_EPS < ring as f64 * CELL {
                    break;
                }
            }
        }
        let (d, lane, proj) = best?;
        if d > OFF_ROAD_DISTANCE {
            return None;
        }
        Some(LaneLocation { lane, s: proj.s, lateral: proj.lateral, distance: d })
    }

    /// Closed test `|lateral| <= width / 2` on the located lane.
    pub fn in_drivable_region(&self, p: Vec2) -> bool {
        match self.locate(p) {
            Some(loc) => loc.lateral.abs() <= 0.5 * self.lane(loc.lane).unwrap().width + TIE_EPS,
            None => false,
        }
    }

    /// Successor chains from the located lane up to `horizon` meters,
    /// ordered by total turning (straightest first), at most `max_paths`.
    pub fn candidate_paths(&self, p: Vec2, horizon: f64, max_paths: usize) -> Vec<RoutePath> {
        let Some(loc) = self.locate(p) else { return Vec::new() };
        self.candidate_paths_from(loc.lane, loc.s, horizon, max_paths)
    }

    pub fn candidate_paths_from(&self, lane: LaneId, s: f64, horizon: f64, max_paths: usize) -> Vec<RoutePath> {
        let mut raw: Vec<RawPath> = Vec::new();
        let mut pts = Vec::new();
        let mut marks = Vec::new();
        self.extend_paths(lane, s, horizon, 0.0, &mut pts, &mut marks, &mut raw);
        let mut paths: Vec<RoutePath> =
            raw.iter().map(|(pts, marks)| RoutePath::resample(0, PathSource::Lane, pts, marks, false)).collect();
        let turning: Vec<f64> = paths.iter().map(|p| p.total_turning()).collect();
        let mut order: Vec<usize> = (0..paths.len()).collect();
        order.sort_by(|&a, &b| turning[a].total_cmp(&turning[b]).then(a.cmp(&b)));
        order.truncate(max_paths);
        let mut out = Vec::with_capacity(order.len());
        for (rank, &i) in order.iter().enumerate() {
            let mut path =
                std::mem::replace(&mut paths[i], RoutePath::from_polyline(0, PathSource::Lane, &[Vec2::ZERO]));
            path.id = rank;
            out.push(path);
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn extend_paths(
        &self,
        lane: LaneId,
        s: f64,
        horizon: f64,
        travelled: f64,
        pts: &mut Vec<Vec2>,
        marks: &mut Vec<(f64, LaneId)>,
        out: &mut Vec<RawPath>,
    ) {
        let seg = self.lane(lane).expect("validated successor");
        let len = seg.centerline.length();
        let remaining = horizon - travelled;
        let end = (s + remaining).min(len);
        let before = (pts.len(), marks.len());
        let piece = seg.centerline.slice(s, end);
        let skip = usize::from(!pts.is_empty());
        marks.push((travelled, lane));
        pts.extend(piece.into_iter().skip(skip));
        let travelled = travelled + (end - s);
        if travelled >= horizon - 1e-9 || seg.successors.is_empty() {
            out.push((pts.clone(), marks.clone()));
        } else {
            for &next in &seg.successors {
                self.extend_paths(next, 0.0, horizon, travelled, pts, marks, out);
            }
        }
        pts.truncate(before.0);
        marks.truncate(before.1);
    }

    /// Walking routes from the nearest sidewalk point, in both directions,
    /// optionally taking at most one crossing.
    pub fn sidewalk_paths(&self, p: Vec2, horizon: f64) -> Vec<RoutePath> {
        let mut best: Option<(f64, usize, Projection)> = None;
        for (i, sw) in self.sidewalks.iter().enumerate() {
            let proj = sw.line.project(p);
            if best.as_ref().is_none_or(|(d, _, _)| proj.distance < d - TIE_EPS) {
                best = Some((proj.distance, i, proj));
            }
        }
        let Some((_, sw, proj)) = best else { return Vec::new() };
        let mut raw = Vec::new();
        for forward in [true, false] {
            self.walk(sw, proj.s, forward, horizon, vec![proj.point], false, &mut raw);
        }
        raw.into_iter()
            .enumerate()
            .map(|(i, (pts, crossed))| RoutePath::resample(i, PathSource::Sidewalk, &pts, &[], crossed))
            .filter(|r| r.points().len() >= 2)
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        &self,
        sw: usize,
        s: f64,
        forward: bool,
        budget: f64,
        mut pts: Vec<Vec2>,
        crossed: bool,
        out: &mut Vec<(Vec<Vec2>, bool)>,
    ) {
        let line = &self.sidewalks[sw].line;
        let id = self.sidewalks[sw].id;
        let n = line.points().len();
        let mut here = s;
        let mut budget = budget;
        // Vertices ahead in walking order.
        let ahead: Vec<usize> = if forward {
            (0..n).filter(|&k| line.cum[k] > s + 1e-9).collect()
        } else {
            (0..n).rev().filter(|&k| line.cum[k] < s - 1e-9).collect()
        };
        for k in ahead {
            let step = (line.cum[k] - here).abs();
            if step >= budget {
                let target = if forward { here + budget } else { here - budget };
                pts.push(line.point_at(target));
                out.push((pts, crossed));
                return;
            }
            budget -= step;
            here = line.cum[k];
            pts.push(line.points()[k]);
            if !crossed {
                for c in &self.crossings {
                    let other = if c.from == (id, k) {
                        Some(c.to)
                    } else if c.to == (id, k) {
                        Some(c.from)
                    } else {
                        None
                    };
                    let Some((oid, oidx)) = other else { continue };
                    let oi = self.sidewalks.iter().position(|w| w.id == oid).expect("validated crossing");
                    let oline = &self.sidewalks[oi].line;
                    let target = oline.points()[oidx];
                    let span = target.distance(line.points()[k]);
                    if span >= budget {
                        continue;
                    }
                    for dir in [true, false] {
                        let mut branch = pts.clone();
                        branch.push(target);
                        self.walk(oi, oline.cum[oidx], dir, budget - span, branch, true, out);
                    }
                }
            }
        }
        if pts.len() >= 2 {
            out.push((pts, crossed));
        }
    }

    /// Shortest lane sequence from `from` to `to` by centerline length.
    pub fn shortest_route(&self, from: LaneId, to: LaneId) -> Option<Vec<LaneId>> {
        let mut graph: DiGraph<LaneId, f64> = DiGraph::new();
        let nodes: BTreeMap<LaneId, NodeIndex> = self.lanes.iter().map(|l| (l.id, graph.add_node(l.id))).collect();
        for l in &self.lanes {
            for s in &l.successors {
                graph.add_edge(nodes[&l.id], nodes[s], self.lane(*s).unwrap().centerline.length());
            }
        }
        let goal_end = *self.lane(to)?.centerline.points().last().unwrap();
        let (_, route) = petgraph::algo::astar(
            &graph,
            *nodes.get(&from)?,
            |n| graph[n] == to,
            |e| *e.weight(),
            |n| self.lane(graph[n]).unwrap().centerline.points().last().unwrap().distance(goal_end),
        )?;
        Some(route.into_iter().map(|n| graph[n]).collect())
    }

    /// Path along `lanes` starting at the projection of `start` on the
    /// first lane.
    pub fn route_path(&self, id: usize, start: Vec2, lanes: &[LaneId]) -> Option<RoutePath> {
        let first = self.lane(*lanes.first()?)?;
        let s0 = first.centerline.project(start).s;
        let mut pts = Vec::new();
        let mut marks = Vec::new();
        let mut travelled = 0.0;
        for (k, &l) in lanes.iter().enumerate() {
            let seg = self.lane(l)?;
            let from = if k == 0 { s0 } else { 0.0 };
            marks.push((travelled, l));
            let piece = seg.centerline.slice(from, seg.centerline.length());
            let skip = usize::from(!pts.is_empty());
            pts.extend(piece.into_iter().skip(skip));
            travelled += seg.centerline.length() - from;
        }
        let mut path = RoutePath::resample(id, PathSource::Lane, &pts, &marks, false);
        path.id = id;
        Some(path)
    }
}

/// Maps shipped with the library.
pub mod fixtures {
    use super::RoadContext;

    pub const STRAIGHT: &str = include_str!("../fixtures/maps/straight.toml");
    pub const T_JUNCTION: &str = include_str!("../fixtures/maps/t_junction.toml");
    pub const INTERSECTION: &str = include_str!("../fixtures/maps/intersection.toml");

    pub fn straight() -> RoadContext {
        RoadContext::from_toml(STRAIGHT).expect("shipped fixture is valid")
    }

    pub fn t_junction() -> RoadContext {
        RoadContext::from_toml(T_JUNCTION).expect("shipped fixture is valid")
    }

    pub fn intersection() -> RoadContext {
        RoadContext::from_toml(INTERSECTION).expect("shipped fixture is valid")
    }

    /// Looks up a shipped map by name (`straight`, `t_junction`, `intersection`).
    pub fn by_name(name: &str) -> Option<RoadContext> {
        match name {
            "straight" => Some(straight()),
            "t_junction" | "t-junction" => Some(t_junction()),
            "intersection" => Some(intersection()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_fixture_has_one_link() {
        let road = fixtures::straight();
        assert_eq!(road.lanes().len(), 2);
        assert_eq!(road.successor_link_count(), 1);
    }

    #[test]
    fn successor_gap_is_rejected() {
        let text = r#"
[[lane]]
id = 1
centerline = [[0.0, 0.0], [10.0, 0.0]]
width = 3.5
successors = [2]

[[lane]]
id = 2
centerline = [[12.0, 0.0], [20.0, 0.0]]
width = 3.5
"#;
        let err = RoadContext::from_toml(text).unwrap_err().to_string();
        assert!(err.contains("lane 1") && err.contains("successors"), "{err}");
    }

    #[test]
    fn dangling_successor_and_bad_width_are_named() {
        let text = "[[lane]]\nid = 1\ncenterline = [[0.0, 0.0], [1.0, 0.0]]\nwidth = 3.0\nsuccessors = [9]\n";
        assert!(RoadContext::from_toml(text).unwrap_err().to_string().contains("unknown lane 9"));
        let text = "[[lane]]\nid = 1\ncenterline = [[0.0, 0.0], [1.0, 0.0]]\nwidth = 0.0\n";
        assert!(RoadContext::from_toml(text).unwrap_err().to_string().contains("width"));
        let text = "[[lane]]\nid = 1\ncenterline = [[0.0, 0.0], [1.0, 0.0]]\n";
        assert!(RoadContext::from_toml(text).unwrap_err().to_string().contains("width"));
    }

    #[test]
    fn locate_signs_lateral_offset_left_positive() {
        let road = fixtures::straight();
        let on = road.locate(Vec2::new(30.0, 0.0)).unwrap();
        assert_eq!(on.lane, 1);
        assert!(on.lateral.abs() < 1e-12);
        let left = road.locate(Vec2::new(30.0, 1.5)).unwrap();
        assert!((left.lateral - 1.5).abs() < 1e-12);
        assert!(road.locate(Vec2::new(30.0, 80.0)).is_none());
    }

    #[test]
    fn equidistant_point_goes_to_lower_id() {
        let text = r#"
[[lane]]
id = 7
centerline = [[0.0, 2.0], [10.0, 2.0]]
width = 3.0

[[lane]]
id = 4
centerline = [[0.0, -2.0], [10.0, -2.0]]
width = 3.0
"#;
        let road = RoadContext::from_toml(text).unwrap();
        assert_eq!(road.locate(Vec2::new(5.0, 0.0)).unwrap().lane, 4);
    }

    #[test]
    fn drivable_boundary_is_closed() {
        let road = fixtures::straight();
        assert!(road.in_drivable_region(Vec2::new(50.0, 0.0)));
        assert!(road.in_drivable_region(Vec2::new(50.0, 1.75)));
        assert!(!road.in_drivable_region(Vec2::new(50.0, 1.85)));
    }

    #[test]
    fn straight_road_gives_one_twenty_meter_path() {
        let road = fixtures::straight();
        let paths = road.candidate_paths(Vec2::new(10.0, 0.0), 20.0, 5);
        assert_eq!(paths.len(), 1);
        assert!((paths[0].length() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn lookahead_on_straight_and_clamped() {
        let path = RoutePath::from_polyline(0, PathSource::Lane, &[Vec2::ZERO, Vec2::new(10.0, 0.0)]);
        assert!((lookahead_waypoint(&path, Vec2::ZERO, 5.0) - Vec2::new(5.0, 0.0)).norm() < 1e-12);
        assert!((lookahead_waypoint(&path, Vec2::ZERO, 50.0) - Vec2::new(10.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lookahead_turns_the_corner() {
        // Bend 3 m ahead: 2 m of the 5 m lookahead lie on the cross leg.
        let path =
            RoutePath::from_polyline(0, PathSource::Lane, &[Vec2::ZERO, Vec2::new(3.0, 0.0), Vec2::new(3.0, 10.0)]);
        let w = lookahead_waypoint(&path, Vec2::ZERO, 5.0);
        assert!((w - Vec2::new(3.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn shortest_route_through_intersection() {
        let road = fixtures::intersection();
        // West approach (1) to east exit (7) goes straight through connector 10.
        assert_eq!(road.shortest_route(1, 7), Some(vec![1, 10, 7]));
        assert_eq!(road.shortest_route(7, 1), None);
    }
}
