//! Closest-point linear programming in the plane.
//!
//! Incremental (Seidel-style) two-dimensional LP with a quadratic
//! closest-point objective. Half-planes are processed in a pseudo-random
//! order with a fixed seed, giving expected linear time while keeping results
//! reproducible. The minimum-penetration fallback follows the usual
//! three-dimensional reduction: it minimises the largest violation among soft
//! constraints while the hard ones stay satisfied.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConvexPolygon, HalfPlane, Vec2};

/// Feasibility slack accepted on returned solutions, m/s.
pub const SOLVER_SLACK: f64 = 1e-6;

const PARALLEL_EPS: f64 = 1e-12;
const VIOLATION_EPS: f64 = 1e-12;
const SHUFFLE_SEED: u64 = 0x5eed_1a7e;

/// Result of [`solve_closest_feasible`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LpOutcome {
    Feasible(Vec2),
    /// The intersection is empty. `partial` is the best point found before
    /// the failing constraint was reached.
    Infeasible {
        partial: Vec2,
    },
}

impl LpOutcome {
    pub fn feasible(self) -> Option<Vec2> {
        match self {
            LpOutcome::Feasible(v) => Some(v),
            LpOutcome::Infeasible { .. } => None,
        }
    }
}

/// Directed line; the feasible side is to the left of `dir`.
#[derive(Clone, Copy, Debug)]
struct Line {
    point: Vec2,
    dir: Vec2,
}

impl From<&HalfPlane> for Line {
    fn from(h: &HalfPlane) -> Self {
        // cross(dir, w) == normal · w
        Line { point: h.point, dir: Vec2::new(h.normal.y, -h.normal.x) }
    }
}

#[derive(Clone, Copy)]
enum Objective {
    Point(Vec2),
    Direction(Vec2),
}

/// Returns the point closest to `v_pref` inside every half-plane and, when
/// given, inside `convex_cap`.
pub fn solve_closest_feasible(v_pref: Vec2, halfplanes: &[HalfPlane], convex_cap: Option<&ConvexPolygon>) -> LpOutcome {
    let hard: Vec<HalfPlane> = convex_cap.map(HalfPlane::from_polygon).unwrap_or_default();
    let lines = ordered_lines(&hard, halfplanes);
    match lp2(&lines, f64::INFINITY, Objective::Point(v_pref)) {
        Ok(v) => LpOutcome::Feasible(v),
        Err((_, partial)) => LpOutcome::Infeasible { partial },
    }
}

/// Closest point to `v_pref` satisfying `hard ∪ soft`; when that set is
/// empty, the point inside `hard` minimising the largest violation of any
/// soft constraint. `hard` must have a non-empty, bounded intersection.
///
/// The second tuple field is `true` when the soft constraints could all be
/// met.
pub fn solve_min_penetration(v_pref: Vec2, hard: &[HalfPlane], soft: &[HalfPlane]) -> (Vec2, bool) {
    let lines = ordered_lines(hard, soft);
    let radius = bounding_radius(hard, v_pref);
    match lp2(&lines, radius, Objective::Point(v_pref)) {
        Ok(v) => (v, true),
        Err((failed, partial)) => {
            if failed < hard.len() {
                // Hard set infeasible: nothing sensible to return but the
                // partial solution.
                return (partial, false);
            }
            (lp3(&lines, hard.len(), failed, radius, partial), false)
        }
    }
}

fn bounding_radius(hard: &[HalfPlane], v_pref: Vec2) -> f64 {
    let r = hard.iter().map(|h| h.point.norm()).fold(v_pref.norm(), f64::max);
    4.0 * r + 10.0
}

fn ordered_lines(hard: &[HalfPlane], soft: &[HalfPlane]) -> Vec<Line> {
    let mut rng = ChaCha8Rng::seed_from_u64(SHUFFLE_SEED ^ ((hard.len() as u64) << 32) ^ soft.len() as u64);
    let mut h: Vec<Line> = hard.iter().map(Line::from).collect();
    let mut s: Vec<Line> = soft.iter().map(Line::from).collect();
    h.shuffle(&mut rng);
    s.shuffle(&mut rng);
    h.extend(s);
    h
}

/// Optimises along `lines[idx]` subject to `lines[..idx]` and the disk of
/// `radius`.
fn lp1(lines: &[Line], idx: usize, radius: f64, objective: Objective) -> Option<Vec2> {
    let line = lines[idx];
    let (mut t_left, mut t_right) = if radius.is_finite() {
        let dot = line.point.dot(line.dir);
        let disc = dot * dot + radius * radius - line.point.norm_sq();
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        (-dot - s, -dot + s)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };

    for other in &lines[..idx] {
        let denom = line.dir.cross(other.dir);
        let numer = other.dir.cross(line.point - other.point);
        if denom.abs() <= PARALLEL_EPS {
            if numer < -VIOLATION_EPS {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = match objective {
        Objective::Direction(d) => {
            if d.dot(line.dir) > 0.0 {
                t_right
            } else {
                t_left
            }
        }
        Objective::Point(p) => line.dir.dot(p - line.point).clamp(t_left, t_right),
    };
    Some(line.point + line.dir * t)
}

/// Returns the optimum, or the index of the first constraint that made the
/// program infeasible together with the solution just before it.
fn lp2(lines: &[Line], radius: f64, objective: Objective) -> Result<Vec2, (usize, Vec2)> {
    let mut result = match objective {
        Objective::Point(p) => {
            if radius.is_finite() && p.norm_sq() > radius * radius {
                p.normalized().unwrap_or(Vec2::ZERO) * radius
            } else {
                p
            }
        }
        Objective::Direction(d) => d * radius,
    };
    for i in 0..lines.len() {
        if lines[i].dir.cross(lines[i].point - result) > VIOLATION_EPS {
            match lp1(lines, i, radius, objective) {
                Some(v) => result = v,
                None => return Err((i, result)),
            }
        }
    }
    Ok(result)
}

fn lp3(lines: &[Line], num_hard: usize, start: usize, radius: f64, mut result: Vec2) -> Vec2 {
    let mut distance = 0.0;
    for i in start..lines.len() {
        if lines[i].dir.cross(lines[i].point - result) <= distance {
            continue;
        }
        let mut projected: Vec<Line> = lines[..num_hard].to_vec();
        for j in num_hard..i {
            let det = lines[i].dir.cross(lines[j].dir);
            let point = if det.abs() <= PARALLEL_EPS {
                if lines[i].dir.dot(lines[j].dir) > 0.0 {
                    continue;
                }
                (lines[i].point + lines[j].point) * 0.5
            } else {
                lines[i].point + lines[i].dir * (lines[j].dir.cross(lines[i].point - lines[j].point) / det)
            };
            let Some(dir) = (lines[j].dir - lines[i].dir).normalized() else {
                continue;
            };
            projected.push(Line { point, dir });
        }
        let previous = result;
        let into_feasible = lines[i].dir.perp();
        result = lp2(&projected, radius, Objective::Direction(into_feasible)).unwrap_or(previous);
        distance = lines[i].dir.cross(lines[i].point - result);
    }
    result
}
