use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{GeometryError, Vec2, GEOM_EPS};

/// A strictly convex polygon with counter-clockwise vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct ConvexPolygon {
    vertices: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for ConvexPolygon {
    type Error = GeometryError;

    fn try_from(vertices: Vec<Vec2>) -> Result<Self, Self::Error> {
        ConvexPolygon::new(vertices)
    }
}

impl From<ConvexPolygon> for Vec<Vec2> {
    fn from(p: ConvexPolygon) -> Self {
        p.vertices
    }
}

impl ConvexPolygon {
    /// Validates an explicit vertex list. Duplicate and collinear vertices are
    /// dropped; the remainder must be counter-clockwise and strictly convex.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self, GeometryError> {
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let cleaned = remove_collinear(&vertices);
        if cleaned.len() < 3 {
            return Err(GeometryError::Degenerate);
        }
        let n = cleaned.len();
        for i in 0..n {
            let a = cleaned[i];
            let b = cleaned[(i + 1) % n];
            let c = cleaned[(i + 2) % n];
            if (b - a).cross(c - b) <= 0.0 {
                return Err(GeometryError::NotConvex);
            }
        }
        // A star-shaped but self-overlapping vertex loop passes the local turn
        // test; the total turning must be exactly one revolution.
        if signed_area(&cleaned) <= 0.0 || winding_turns(&cleaned) > 1 {
            return Err(GeometryError::NotConvex);
        }
        Ok(ConvexPolygon { vertices: cleaned })
    }

    /// Builds a polygon without validation. Callers guarantee the invariants.
    pub(crate) fn from_vertices_unchecked(vertices: Vec<Vec2>) -> Self {
        debug_assert!(vertices.len() >= 3);
        ConvexPolygon { vertices }
    }

    /// Axis-aligned rectangle centred at the origin, `length` along x.
    pub fn rectangle(length: f64, width: f64) -> Result<Self, GeometryError> {
        let (hl, hw) = (length / 2.0, width / 2.0);
        ConvexPolygon::new(vec![Vec2::new(-hl, -hw), Vec2::new(hl, -hw), Vec2::new(hl, hw), Vec2::new(-hl, hw)])
    }

    /// Regular `n`-gon centred at the origin with the given circumradius.
    pub fn regular(n: usize, circumradius: f64) -> Result<Self, GeometryError> {
        if n < 3 {
            return Err(GeometryError::Degenerate);
        }
        let verts =
            (0..n).map(|i| Vec2::from_angle(std::f64::consts::TAU * i as f64 / n as f64) * circumradius).collect();
        ConvexPolygon::new(verts)
    }

    /// Regular `n`-gon whose inscribed circle has radius `radius`, so the
    /// polygon contains the disk.
    pub fn circumscribing_disk(n: usize, radius: f64) -> Result<Self, GeometryError> {
        let circumradius = radius / (std::f64::consts::PI / n as f64).cos();
        ConvexPolygon::regular(n, circumradius)
    }

    #[inline]
    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Edges as `(start, end)` pairs in counter-clockwise order.
    pub fn edges(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Unit outward normal of edge `i` (from vertex `i` to `i + 1`).
    pub fn edge_normal(&self, i: usize) -> Vec2 {
        let n = self.vertices.len();
        let e = self.vertices[(i + 1) % n] - self.vertices[i];
        Vec2::new(e.y, -e.x).normalized().unwrap_or(Vec2::X)
    }

    pub fn translate(&self, offset: Vec2) -> ConvexPolygon {
        ConvexPolygon::from_vertices_unchecked(self.vertices.iter().map(|&v| v + offset).collect())
    }

    pub fn rotate(&self, angle: f64) -> ConvexPolygon {
        let (s, c) = angle.sin_cos();
        ConvexPolygon::from_vertices_unchecked(
            self.vertices.iter().map(|v| Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)).collect(),
        )
    }

    /// Rotates about the origin, then translates: body frame to world frame.
    pub fn to_world(&self, position: Vec2, heading: f64) -> ConvexPolygon {
        let (s, c) = heading.sin_cos();
        ConvexPolygon::from_vertices_unchecked(
            self.vertices
                .iter()
                .map(|v| Vec2::new(c * v.x - s * v.y + position.x, s * v.x + c * v.y + position.y))
                .collect(),
        )
    }

    /// Uniform scaling about the origin. `factor` must be positive.
    pub fn scale(&self, factor: f64) -> ConvexPolygon {
        debug_assert!(factor > 0.0);
        ConvexPolygon::from_vertices_unchecked(self.vertices.iter().map(|&v| v * factor).collect())
    }

    /// Pushes every edge outward by `margin` (mitred corners), so the result
    /// contains every point within `margin` of `self`.
    pub fn offset(&self, margin: f64) -> ConvexPolygon {
        debug_assert!(margin >= 0.0);
        let n = self.vertices.len();
        let verts = (0..n)
            .map(|i| {
                let n1 = self.edge_normal((i + n - 1) % n);
                let n2 = self.edge_normal(i);
                self.vertices[i] + (n1 + n2) * (margin / (1.0 + n1.dot(n2)))
            })
            .collect();
        ConvexPolygon::from_vertices_unchecked(verts)
    }

    /// Point reflection through the origin, `{-p : p ∈ self}`.
    pub fn reflect(&self) -> ConvexPolygon {
        // Negation is a rotation by π, so orientation is preserved.
        ConvexPolygon::from_vertices_unchecked(self.vertices.iter().map(|&v| -v).collect())
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let mut a = 0.0;
        let mut c = Vec2::ZERO;
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            a += w;
            c += (p + q) * w;
        }
        if a.abs() < 1e-300 {
            return self.vertices.iter().fold(Vec2::ZERO, |acc, &v| acc + v) / n as f64;
        }
        c / (3.0 * a)
    }

    /// Largest vertex distance from the origin.
    pub fn circumradius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest signed distance of `p` beyond any edge line; negative inside.
    pub fn signed_distance_bound(&self, p: Vec2) -> f64 {
        (0..self.vertices.len())
            .map(|i| (p - self.vertices[i]).dot(self.edge_normal(i)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Closed containment test with absolute tolerance `eps`.
    pub fn contains(&self, p: Vec2, eps: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let e = b - a;
            let len = e.norm();
            len <= 0.0 || e.cross(p - a) / len >= -eps
        })
    }

    /// Separating-axis overlap test; touching counts as overlap.
    pub fn intersects(&self, other: &ConvexPolygon) -> bool {
        !has_separating_axis(self, other, GEOM_EPS) && !has_separating_axis(other, self, GEOM_EPS)
    }

    /// Largest gap along any edge normal of either polygon: positive when
    /// the polygons are apart, zero when touching, and minus the penetration
    /// depth when they overlap.
    pub fn separation(&self, other: &ConvexPolygon) -> f64 {
        axis_gap(self, other).max(axis_gap(other, self))
    }

    /// Closest point on the boundary to `p`, with the outward normal of the
    /// edge it lies on.
    pub fn closest_boundary_point(&self, p: Vec2) -> (Vec2, Vec2) {
        let mut best = (f64::INFINITY, Vec2::ZERO, Vec2::X);
        for (i, (a, b)) in self.edges().enumerate() {
            let q = closest_point_on_segment(p, a, b);
            let d = (q - p).norm_sq();
            if d < best.0 {
                best = (d, q, self.edge_normal(i));
            }
        }
        (best.1, best.2)
    }

    /// Exact Hausdorff distance between two convex polygons.
    pub fn hausdorff(&self, other: &ConvexPolygon) -> f64 {
        fn one_sided(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
            // For convex sets the farthest point of `a` from `b` is a vertex.
            a.vertices
                .iter()
                .map(|&v| if b.contains(v, 0.0) { 0.0 } else { b.closest_boundary_point(v).0.distance(v) })
                .fold(0.0, f64::max)
        }
        one_sided(self, other).max(one_sided(other, self))
    }

    /// Entry time of the moving point `t * velocity` (starting at the origin)
    /// into the polygon, for `t` in `[0, t_max]`. Returns `Some(0.0)` when the
    /// origin is already inside.
    pub fn ray_entry_time(&self, velocity: Vec2, t_max: f64) -> Option<f64> {
        let mut t_enter = 0.0f64;
        let mut t_exit = t_max;
        for (i, (a, _)) in self.edges().enumerate() {
            let n = self.edge_normal(i);
            // Inside means (x - a)·n <= 0, with x = t * velocity.
            let num = (Vec2::ZERO - a).dot(n);
            let den = velocity.dot(n);
            if den.abs() < 1e-15 {
                if num > GEOM_EPS {
                    return None;
                }
                continue;
            }
            let t = -num / den;
            if den < 0.0 {
                t_enter = t_enter.max(t);
            } else {
                t_exit = t_exit.min(t);
            }
            if t_enter > t_exit {
                return None;
            }
        }
        Some(t_enter)
    }
}

fn axis_gap(a: &ConvexPolygon, b: &ConvexPolygon) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for (i, (p, _)) in a.edges().enumerate() {
        let n = a.edge_normal(i);
        let min_b = b.vertices.iter().map(|&v| (v - p).dot(n)).fold(f64::INFINITY, f64::min);
        best = best.max(min_b);
    }
    best
}

fn has_separating_axis(a: &ConvexPolygon, b: &ConvexPolygon, eps: f64) -> bool {
    for (i, (p, _)) in a.edges().enumerate() {
        let n = a.edge_normal(i);
        let min_b = b.vertices.iter().map(|&v| (v - p).dot(n)).fold(f64::INFINITY, f64::min);
        if min_b > eps {
            return true;
        }
    }
    false
}

pub(crate) fn closest_point_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq <= 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    a + ab * t
}

fn signed_area(vertices: &[Vec2]) -> f64 {
    let n = vertices.len();
    0.5 * (0..n).map(|i| vertices[i].cross(vertices[(i + 1) % n])).sum::<f64>()
}

fn winding_turns(vertices: &[Vec2]) -> usize {
    let n = vertices.len();
    let mut total = 0.0;
    for i in 0..n {
        let e0 = vertices[(i + 1) % n] - vertices[i];
        let e1 = vertices[(i + 2) % n] - vertices[(i + 1) % n];
        total += e0.cross(e1).atan2(e0.dot(e1));
    }
    (total / std::f64::consts::TAU).round() as usize
}

/// Drops consecutive duplicates and vertices lying on the segment between
/// their neighbours.
fn remove_collinear(vertices: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = Vec::with_capacity(vertices.len());
    for &v in vertices {
        if pts.last().is_none_or(|&l: &Vec2| (l - v).norm_sq() > GEOM_EPS * GEOM_EPS) {
            pts.push(v);
        }
    }
    while pts.len() > 1 && (pts[0] - pts[pts.len() - 1]).norm_sq() <= GEOM_EPS * GEOM_EPS {
        pts.pop();
    }
    let mut changed = true;
    while changed && pts.len() >= 3 {
        changed = false;
        let n = pts.len();
        for i in 0..n {
            let a = pts[(i + n - 1) % n];
            let b = pts[i];
            let c = pts[(i + 1) % n];
            let ac = c - a;
            let len = ac.norm();
            if len <= GEOM_EPS || (ac.cross(b - a) / len).abs() <= GEOM_EPS {
                // `b` is collinear with its neighbours. Only drop it when it
                // lies between them; otherwise the loop folds back on itself.
                if (b - a).dot(c - b) >= 0.0 || len <= GEOM_EPS {
                    pts.remove(i);
                    changed = true;
                    break;
                }
            }
        }
    }
    pts
}

/// Counter-clockwise convex hull (Andrew's monotone chain). Interior and
/// collinear boundary points are dropped.
pub fn convex_hull(points: &[Vec2]) -> Result<ConvexPolygon, GeometryError> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x.partial_cmp(&b.x).unwrap_or(Ordering::Equal).then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
    });
    pts.dedup_by(|a, b| a.distance(*b) <= GEOM_EPS);
    if pts.len() < 3 {
        return Err(GeometryError::Degenerate);
    }
    let turn = |o: Vec2, a: Vec2, b: Vec2| (a - o).cross(b - o);
    let mut hull: Vec<Vec2> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    let hull = remove_collinear(&hull);
    if hull.len() < 3 || signed_area(&hull) <= GEOM_EPS * GEOM_EPS {
        return Err(GeometryError::Degenerate);
    }
    Ok(ConvexPolygon::from_vertices_unchecked(hull))
}

/// Minkowski sum of two convex polygons by merging edge sequences in angular
/// order, `O(n + m)`.
pub fn minkowski_sum(p: &ConvexPolygon, q: &ConvexPolygon) -> ConvexPolygon {
    fn from_lowest(poly: &ConvexPolygon) -> Vec<Vec2> {
        let v = poly.vertices();
        let start = (0..v.len())
            .min_by(|&i, &j| {
                v[i].y
                    .partial_cmp(&v[j].y)
                    .unwrap_or(Ordering::Equal)
                    .then(v[i].x.partial_cmp(&v[j].x).unwrap_or(Ordering::Equal))
            })
            .unwrap_or(0);
        let mut out: Vec<Vec2> = v[start..].iter().chain(v[..start].iter()).copied().collect();
        out.push(out[0]);
        out.push(out[1]);
        out
    }
    let a = from_lowest(p);
    let b = from_lowest(q);
    let (n, m) = (p.len(), q.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n + m);
    while i < n || j < m {
        out.push(a[i] + b[j]);
        let c = (a[i + 1] - a[i]).cross(b[j + 1] - b[j]);
        if c >= 0.0 && i < n {
            i += 1;
        }
        if c <= 0.0 && j < m {
            j += 1;
        }
    }
    let cleaned = remove_collinear(&out);
    if cleaned.len() >= 3 {
        ConvexPolygon::from_vertices_unchecked(cleaned)
    } else {
        // Only reachable through extreme cancellation; fall back to the hull.
        convex_hull(&out).unwrap_or_else(|_| p.clone())
    }
}

/// `B ⊖ A = {b - a : b ∈ B, a ∈ A}`, the region of relative positions at
/// which the two footprints overlap.
pub fn minkowski_difference(b: &ConvexPolygon, a: &ConvexPolygon) -> ConvexPolygon {
    minkowski_sum(b, &a.reflect())
}
