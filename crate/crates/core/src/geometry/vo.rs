use super::polygon::{closest_point_on_segment, minkowski_difference};
use super::{ConvexPolygon, GeometryError, Vec2, GEOM_EPS};

/// Step length used to turn an existing overlap into an escape velocity when
/// the caller does not supply one.
pub const DEFAULT_OVERLAP_STEP: f64 = 0.1;

/// Set of relative velocities of A with respect to B that bring the two
/// footprints into contact within `horizon` seconds.
///
/// For disjoint footprints this is the cone from the origin over
/// `base_polygon`, truncated by `base_polygon / horizon`. It is convex: the
/// intersection of the two leg half-planes and the half-planes of the
/// polygon edges facing the origin.
///
/// When the footprints already overlap, the obstacle is `base_polygon /
/// overlap_step`: relative velocities that leave the agents overlapping
/// after one step.
#[derive(Clone, Debug)]
pub struct VelocityObstacle {
    /// Origin of relative-velocity space.
    pub apex: Vec2,
    /// `B ⊖ A` translated by `p_B - p_A`.
    pub base_polygon: ConvexPolygon,
    pub horizon: f64,
    region: Region,
}

#[derive(Clone, Debug)]
enum Region {
    Cone(Vec<Feature>),
    Overlap { escape: ConvexPolygon },
}

/// One straight piece of the obstacle boundary with its outward normal.
#[derive(Clone, Copy, Debug)]
enum Feature {
    Segment { a: Vec2, b: Vec2, normal: Vec2 },
    Ray { origin: Vec2, dir: Vec2, normal: Vec2 },
}

impl Feature {
    fn closest(&self, p: Vec2) -> Vec2 {
        match *self {
            Feature::Segment { a, b, .. } => closest_point_on_segment(p, a, b),
            Feature::Ray { origin, dir, .. } => origin + dir * (p - origin).dot(dir).max(0.0),
        }
    }

    fn normal(&self) -> Vec2 {
        match *self {
            Feature::Segment { normal, .. } | Feature::Ray { normal, .. } => normal,
        }
    }

    fn anchor(&self) -> Vec2 {
        match *self {
            Feature::Segment { a, .. } => a,
            Feature::Ray { origin, .. } => origin,
        }
    }
}

/// Builds the obstacle induced on agent A (footprint `poly_a` at `pos_a`) by
/// agent B. Both footprints are in world orientation, relative to their
/// reference positions.
pub fn velocity_obstacle(
    poly_a: &ConvexPolygon,
    pos_a: Vec2,
    poly_b: &ConvexPolygon,
    pos_b: Vec2,
    tau: f64,
) -> Result<VelocityObstacle, GeometryError> {
    velocity_obstacle_with_step(poly_a, pos_a, poly_b, pos_b, tau, DEFAULT_OVERLAP_STEP)
}

/// As [`velocity_obstacle`], with an explicit step length for the overlapping
/// case.
pub fn velocity_obstacle_with_step(
    poly_a: &ConvexPolygon,
    pos_a: Vec2,
    poly_b: &ConvexPolygon,
    pos_b: Vec2,
    tau: f64,
    overlap_step: f64,
) -> Result<VelocityObstacle, GeometryError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(GeometryError::InvalidHorizon(tau));
    }
    if !(overlap_step > 0.0) {
        return Err(GeometryError::InvalidHorizon(overlap_step));
    }
    let base = minkowski_difference(poly_b, poly_a).translate(pos_b - pos_a);
    Ok(VelocityObstacle::from_base(base, tau, overlap_step))
}

impl VelocityObstacle {
    /// Builds the obstacle directly from the relative-position region.
    pub fn from_base(base_polygon: ConvexPolygon, horizon: f64, overlap_step: f64) -> Self {
        let region = if base_polygon.contains(Vec2::ZERO, GEOM_EPS) {
            Region::Overlap { escape: base_polygon.scale(1.0 / overlap_step) }
        } else {
            Region::Cone(cone_features(&base_polygon.scale(1.0 / horizon)))
        };
        VelocityObstacle { apex: Vec2::ZERO, base_polygon, horizon, region }
    }

    /// True when the footprints already overlap.
    pub fn is_overlapping(&self) -> bool {
        matches!(self.region, Region::Overlap { .. })
    }

    /// Closed membership test (boundary counts as inside, within 1e-9).
    pub fn contains(&self, v_rel: Vec2) -> bool {
        match &self.region {
            Region::Cone(features) => features.iter().all(|f| (v_rel - f.anchor()).dot(f.normal()) <= GEOM_EPS),
            Region::Overlap { escape } => escape.contains(v_rel, GEOM_EPS),
        }
    }

    /// Smallest change `u` that moves `v_rel` onto the obstacle boundary, and
    /// the outward boundary normal `n` at `v_rel + u`.
    pub fn closest_boundary_escape(&self, v_rel: Vec2) -> (Vec2, Vec2) {
        let (point, feature_normal) = match &self.region {
            Region::Cone(features) => {
                let mut best = (f64::INFINITY, v_rel, Vec2::X);
                for f in features {
                    let q = f.closest(v_rel);
                    let d = (q - v_rel).norm_sq();
                    if d < best.0 {
                        best = (d, q, f.normal());
                    }
                }
                (best.1, best.2)
            }
            Region::Overlap { escape } => escape.closest_boundary_point(v_rel),
        };
        let u = point - v_rel;
        let n = if !self.contains(v_rel) {
            // Outside a convex set the projection direction is a valid
            // outward normal even when the closest point is a vertex.
            (-u).normalized().unwrap_or(feature_normal)
        } else {
            feature_normal
        };
        (u, n)
    }
}

/// Boundary features of the truncated cone whose cap is `cap` (the base
/// polygon already divided by the horizon). The origin lies outside `cap`.
fn cone_features(cap: &ConvexPolygon) -> Vec<Feature> {
    let verts = cap.vertices();
    let n = verts.len();
    let visible: Vec<bool> = (0..n).map(|i| (Vec2::ZERO - verts[i]).dot(cap.edge_normal(i)) > GEOM_EPS).collect();
    // The visible edges form one contiguous chain; find where it starts.
    let start = (0..n).find(|&i| visible[i] && !visible[(i + n - 1) % n]).unwrap_or(0);
    let mut features = Vec::with_capacity(n + 2);
    let mut i = start;
    while visible[i] {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        features.push(Feature::Segment { a, b, normal: cap.edge_normal(i) });
        i = (i + 1) % n;
        if i == start {
            break;
        }
    }
    let end = i;
    let centroid = cap.centroid();
    for &tangent in &[verts[start], verts[end]] {
        let dir = tangent.normalized().unwrap_or(Vec2::X);
        let mut normal = dir.perp();
        if (centroid - tangent).dot(normal) > 0.0 {
            normal = -normal;
        }
        features.push(Feature::Ray { origin: tangent, dir, normal });
    }
    features
}
