//! Planar convex shapes, rigid poses, and contact queries.
//!
//! Shapes are circles and strictly convex counter-clockwise polygons. All
//! queries report a witness pair and a unit normal pointing from body `b`
//! into body `a`; the signed distance is negative iff the shapes overlap.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;

/// Largest polygon vertex count accepted by validation. Queries use fixed
/// stack buffers sized by this.
pub const MAX_POLYGON_VERTICES: usize = 16;

/// Rotate a vector by +90 degrees.
#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

#[inline]
fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[derive(Debug, Error, PartialEq)]
pub enum ShapeError {
    #[error("circle radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("polygon limited to {MAX_POLYGON_VERTICES} vertices, got {0}")]
    TooManyVertices(usize),
    #[error("polygon must be strictly convex and counter-clockwise (violated at vertex {0})")]
    NotConvexCcw(usize),
    #[error("polygon edge {0} is degenerate")]
    DegenerateEdge(usize),
}

/// Planar rigid pose. `theta` is an unbounded accumulator in radians and is
/// wrapped only for rendering.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 { x, y, theta }
    }

    #[inline]
    pub fn translation(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    #[inline]
    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// Body frame to world frame.
    #[inline]
    pub fn transform(&self, p: Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(c * p.x - s * p.y + self.x, s * p.x + c * p.y + self.y)
    }

    /// Rotate a body-frame direction into the world frame.
    #[inline]
    pub fn rotate(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    /// Rotate a world-frame direction into the body frame.
    #[inline]
    pub fn rotate_inverse(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.theta.sin_cos();
        Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }

    /// World frame to body frame.
    #[inline]
    pub fn inverse_transform(&self, p: Vec2) -> Vec2 {
        let d = p - self.translation();
        let (s, c) = self.theta.sin_cos();
        Vec2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
    }

    /// Theta wrapped to (-pi, pi].
    pub fn wrapped_theta(&self) -> f64 {
        wrap_angle(self.theta)
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = theta % two_pi;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    } else if t > std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

/// Convex shape in its body frame. Polygon vertices wind counter-clockwise;
/// the body origin is the center of mass for dynamic bodies.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Circle { radius: f64 },
    Polygon { vertices: Vec<Vec2> },
}

impl Shape {
    pub fn circle(radius: f64) -> Shape {
        Shape::Circle { radius }
    }

    /// Axis-aligned rectangle centered on the origin.
    pub fn rect(half_x: f64, half_y: f64) -> Shape {
        Shape::Polygon {
            vertices: vec![
                Vec2::new(-half_x, -half_y),
                Vec2::new(half_x, -half_y),
                Vec2::new(half_x, half_y),
                Vec2::new(-half_x, half_y),
            ],
        }
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        match self {
            Shape::Circle { radius } => {
                if !(*radius > 0.0) {
                    return Err(ShapeError::NonPositiveRadius(*radius));
                }
                Ok(())
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                if n < 3 {
                    return Err(ShapeError::TooFewVertices(n));
                }
                if n > MAX_POLYGON_VERTICES {
                    return Err(ShapeError::TooManyVertices(n));
                }
                let scale = vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
                let edge_eps = 1e-12 * scale.max(1.0);
                for i in 0..n {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    if (b - a).norm() <= edge_eps {
                        return Err(ShapeError::DegenerateEdge(i));
                    }
                    // Strict convexity: every consecutive turn is a left turn.
                    if cross(b - a, c - b) <= edge_eps * edge_eps {
                        return Err(ShapeError::NotConvexCcw((i + 1) % n));
                    }
                }
                Ok(())
            }
        }
    }

    /// Radius of the smallest origin-centered disc containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        match self {
            Shape::Circle { radius } => *radius,
            Shape::Polygon { vertices } => vertices.iter().map(|v| v.norm()).fold(0.0, f64::max),
        }
    }

    /// Perimeter point and outward unit normal for u in [0, 1), parameterized
    /// by arc length. Points on a polygon carry the normal of their edge.
    pub fn surface_sample(&self, u: f64) -> (Vec2, Vec2) {
        let u = u.rem_euclid(1.0);
        match self {
            Shape::Circle { radius } => {
                let a = 2.0 * std::f64::consts::PI * u;
                let n = Vec2::new(a.cos(), a.sin());
                (n * *radius, n)
            }
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                let mut lens = [0.0f64; MAX_POLYGON_VERTICES];
                let mut total = 0.0;
                for i in 0..n {
                    let l = (vertices[(i + 1) % n] - vertices[i]).norm();
                    lens[i] = l;
                    total += l;
                }
                let mut s = u * total;
                for i in 0..n {
                    if s <= lens[i] || i == n - 1 {
                        let a = vertices[i];
                        let b = vertices[(i + 1) % n];
                        let t = (s / lens[i]).min(1.0);
                        let e = b - a;
                        let normal = Vec2::new(e.y, -e.x).normalize();
                        return (a + e * t, normal);
                    }
                    s -= lens[i];
                }
                unreachable!()
            }
        }
    }
}

/// Witness pair for a shape pair query. `normal` is unit length and points
/// from body `b` into body `a`; `distance` is negative iff penetrating, and
/// `|point_a - point_b| == |distance|`.
#[derive(Clone, Copy, Debug)]
pub struct ContactQuery {
    pub point_a: Vec2,
    pub point_b: Vec2,
    pub normal: Vec2,
    pub distance: f64,
}

/// Up to two contact points sharing one normal; face-face overlaps report
/// both clipped corners so resting contact carries a torque-balancing couple.
#[derive(Clone, Copy, Debug)]
pub struct Manifold {
    points: [ContactQuery; 2],
    len: usize,
}

impl Manifold {
    const EMPTY_POINT: ContactQuery = ContactQuery {
        point_a: Vec2::new(0.0, 0.0),
        point_b: Vec2::new(0.0, 0.0),
        normal: Vec2::new(1.0, 0.0),
        distance: f64::INFINITY,
    };

    fn one(q: ContactQuery) -> Manifold {
        Manifold { points: [q, Self::EMPTY_POINT], len: 1 }
    }

    fn two(a: ContactQuery, b: ContactQuery) -> Manifold {
        Manifold { points: [a, b], len: 2 }
    }

    pub fn as_slice(&self) -> &[ContactQuery] {
        &self.points[..self.len]
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// World-frame axis-aligned bounding box `(min, max)`.
pub fn aabb(shape: &Shape, pose: &Pose2) -> (Vec2, Vec2) {
    match shape {
        Shape::Circle { radius } => {
            let c = pose.translation();
            let r = Vec2::new(*radius, *radius);
            (c - r, c + r)
        }
        Shape::Polygon { vertices } => {
            let mut lo = Vec2::new(f64::INFINITY, f64::INFINITY);
            let mut hi = -lo;
            for v in vertices {
                let w = pose.transform(*v);
                lo.x = lo.x.min(w.x);
                lo.y = lo.y.min(w.y);
                hi.x = hi.x.max(w.x);
                hi.y = hi.y.max(w.y);
            }
            (lo, hi)
        }
    }
}

/// True when the two boxes, each inflated by `margin`, overlap.
pub fn aabb_overlap(a: (Vec2, Vec2), b: (Vec2, Vec2), margin: f64) -> bool {
    a.0.x - margin <= b.1.x
        && b.0.x - margin <= a.1.x
        && a.0.y - margin <= b.1.y
        && b.0.y - margin <= a.1.y
}

struct WorldPoly {
    v: [Vec2; MAX_POLYGON_VERTICES],
    n: usize,
}

impl WorldPoly {
    fn new(vertices: &[Vec2], pose: &Pose2) -> WorldPoly {
        let mut v = [Vec2::new(0.0, 0.0); MAX_POLYGON_VERTICES];
        for (i, p) in vertices.iter().enumerate() {
            v[i] = pose.transform(*p);
        }
        WorldPoly { v, n: vertices.len() }
    }

    fn verts(&self) -> &[Vec2] {
        &self.v[..self.n]
    }

    /// Outward normal and one vertex of face i (from vertex i to i+1).
    fn face(&self, i: usize) -> (Vec2, Vec2, Vec2) {
        let a = self.v[i];
        let b = self.v[(i + 1) % self.n];
        let e = b - a;
        (Vec2::new(e.y, -e.x).normalize(), a, b)
    }
}

/// Minimum distance between two shapes with a witness pair.
pub fn signed_distance(a: &Shape, pa: &Pose2, b: &Shape, pb: &Pose2) -> ContactQuery {
    match (a, b) {
        (Shape::Circle { radius: ra }, Shape::Circle { radius: rb }) => {
            circle_circle(pa.translation(), *ra, pb.translation(), *rb)
        }
        (Shape::Circle { radius }, Shape::Polygon { vertices }) => {
            circle_polygon(pa.translation(), *radius, &WorldPoly::new(vertices, pb))
        }
        (Shape::Polygon { vertices }, Shape::Circle { radius }) => {
            flip(circle_polygon(pb.translation(), *radius, &WorldPoly::new(vertices, pa)))
        }
        (Shape::Polygon { vertices: va }, Shape::Polygon { vertices: vb }) => {
            polygon_polygon(&WorldPoly::new(va, pa), &WorldPoly::new(vb, pb)).0
        }
    }
}

/// Contact points for force generation. Penetrating face-face pairs yield two
/// points; everything else yields the single closest pair.
pub fn contact_manifold(a: &Shape, pa: &Pose2, b: &Shape, pb: &Pose2) -> Manifold {
    match (a, b) {
        (Shape::Polygon { vertices: va }, Shape::Polygon { vertices: vb }) => {
            let wa = WorldPoly::new(va, pa);
            let wb = WorldPoly::new(vb, pb);
            let (query, sat) = polygon_polygon(&wa, &wb);
            match sat {
                Some(axis) if query.distance < 0.0 => clip_manifold(&wa, &wb, &axis, query),
                _ => Manifold::one(query),
            }
        }
        _ => Manifold::one(signed_distance(a, pa, b, pb)),
    }
}

fn flip(q: ContactQuery) -> ContactQuery {
    ContactQuery { point_a: q.point_b, point_b: q.point_a, normal: -q.normal, distance: q.distance }
}

fn circle_circle(ca: Vec2, ra: f64, cb: Vec2, rb: f64) -> ContactQuery {
    let d = ca - cb;
    let len = d.norm();
    // Coincident centers: any direction works; pick +x deterministically.
    let normal = if len > 1e-12 { d / len } else { Vec2::new(1.0, 0.0) };
    ContactQuery {
        point_a: ca - normal * ra,
        point_b: cb + normal * rb,
        normal,
        distance: len - ra - rb,
    }
}

/// Signed distance from a point to a convex polygon boundary (negative
/// inside), with the closest boundary point and outward normal there.
fn point_polygon(p: Vec2, poly: &WorldPoly) -> (f64, Vec2, Vec2) {
    let n = poly.n;
    let mut inside = true;
    let mut best_plane = f64::NEG_INFINITY;
    let mut best_plane_idx = 0;
    for i in 0..n {
        let (normal, a, _) = poly.face(i);
        let s = normal.dot(&(p - a));
        if s > 0.0 {
            inside = false;
        }
        if s > best_plane {
            best_plane = s;
            best_plane_idx = i;
        }
    }
    if inside {
        let (normal, a, _) = poly.face(best_plane_idx);
        let s = normal.dot(&(p - a));
        // Interior points project onto the nearest face within its segment.
        return (s, p - normal * s, normal);
    }
    let mut best_d2 = f64::INFINITY;
    let mut best_point = p;
    for i in 0..n {
        let a = poly.v[i];
        let b = poly.v[(i + 1) % n];
        let c = closest_on_segment(p, a, b);
        let d2 = (p - c).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best_point = c;
        }
    }
    let d = best_d2.sqrt();
    let normal = if d > 1e-12 {
        (p - best_point) / d
    } else {
        poly.face(best_plane_idx).0
    };
    (d, best_point, normal)
}

fn circle_polygon(center: Vec2, radius: f64, poly: &WorldPoly) -> ContactQuery {
    let (d, boundary, normal) = point_polygon(center, poly);
    ContactQuery {
        point_a: center - normal * radius,
        point_b: boundary,
        normal,
        distance: d - radius,
    }
}

#[inline]
fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let e = b - a;
    let t = (p - a).dot(&e) / e.norm_squared();
    a + e * t.clamp(0.0, 1.0)
}

struct SatAxis {
    /// Unit normal pointing from b into a.
    normal: Vec2,
    /// True when the reference face belongs to a.
    reference_on_a: bool,
    face: usize,
    depth: f64,
}

/// Returns the closest-pair query plus the minimum-translation axis when
/// penetrating.
fn polygon_polygon(a: &WorldPoly, b: &WorldPoly) -> (ContactQuery, Option<SatAxis>) {
    let mut best: Option<SatAxis> = None;
    for (poly, other, on_a) in [(a, b, true), (b, a, false)] {
        for i in 0..poly.n {
            let (normal, va, _) = poly.face(i);
            let offset = normal.dot(&va);
            let mut min_proj = f64::INFINITY;
            for v in other.verts() {
                min_proj = min_proj.min(normal.dot(v));
            }
            let depth = offset - min_proj;
            if depth < 0.0 {
                // Separating axis: fall through to the closest-pair search.
                return (closest_pair(a, b), None);
            }
            if best.as_ref().map_or(true, |s| depth < s.depth) {
                best = Some(SatAxis {
                    normal: if on_a { -normal } else { normal },
                    reference_on_a: on_a,
                    face: i,
                    depth,
                });
            }
        }
    }
    let axis = best.expect("polygons have faces");
    let (wa, wb) = deepest_witness(a, b, &axis);
    let q = ContactQuery { point_a: wa, point_b: wb, normal: axis.normal, distance: -axis.depth };
    (q, Some(axis))
}

fn deepest_witness(a: &WorldPoly, b: &WorldPoly, axis: &SatAxis) -> (Vec2, Vec2) {
    let (reference, incident) = if axis.reference_on_a { (a, b) } else { (b, a) };
    let (n_ref, va, _) = reference.face(axis.face);
    let offset = n_ref.dot(&va);
    let mut deepest = incident.v[0];
    let mut best = f64::INFINITY;
    for v in incident.verts() {
        let s = n_ref.dot(v);
        if s < best {
            best = s;
            deepest = *v;
        }
    }
    let depth = offset - best;
    let on_face = deepest + n_ref * depth;
    if axis.reference_on_a {
        (on_face, deepest)
    } else {
        (deepest, on_face)
    }
}

fn closest_pair(a: &WorldPoly, b: &WorldPoly) -> ContactQuery {
    let mut best_d2 = f64::INFINITY;
    let mut wa = a.v[0];
    let mut wb = b.v[0];
    for i in 0..a.n {
        let (a0, a1) = (a.v[i], a.v[(i + 1) % a.n]);
        for j in 0..b.n {
            let (b0, b1) = (b.v[j], b.v[(j + 1) % b.n]);
            let (pa, pb) = closest_segment_segment(a0, a1, b0, b1);
            let d2 = (pa - pb).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                wa = pa;
                wb = pb;
            }
        }
    }
    let d = best_d2.sqrt();
    let normal = if d > 1e-12 { (wa - wb) / d } else { Vec2::new(1.0, 0.0) };
    ContactQuery { point_a: wa, point_b: wb, normal, distance: d }
}

/// Closest points between two segments (Ericson, Real-Time Collision
/// Detection, 5.1.9).
fn closest_segment_segment(p1: Vec2, q1: Vec2, p2: Vec2, q2: Vec2) -> (Vec2, Vec2) {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let tiny = 1e-18;
    let (s, t);
    if a <= tiny && e <= tiny {
        s = 0.0;
        t = 0.0;
    } else if a <= tiny {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= tiny {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let bb = d1.dot(&d2);
            let denom = a * e - bb * bb;
            let mut s_ = if denom.abs() > tiny {
                ((bb * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t_ = (bb * s_ + f) / e;
            if t_ < 0.0 {
                t_ = 0.0;
                s_ = (-c / a).clamp(0.0, 1.0);
            } else if t_ > 1.0 {
                t_ = 1.0;
                s_ = ((bb - c) / a).clamp(0.0, 1.0);
            }
            s = s_;
            t = t_;
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

fn clip_manifold(a: &WorldPoly, b: &WorldPoly, axis: &SatAxis, fallback: ContactQuery) -> Manifold {
    let (reference, incident) = if axis.reference_on_a { (a, b) } else { (b, a) };
    let (n_ref, r0, r1) = reference.face(axis.face);
    let offset = n_ref.dot(&r0);

    // Incident face: most anti-parallel to the reference normal.
    let mut inc_face = 0;
    let mut best = f64::INFINITY;
    for i in 0..incident.n {
        let (n, _, _) = incident.face(i);
        let d = n.dot(&n_ref);
        if d < best {
            best = d;
            inc_face = i;
        }
    }
    let mut i0 = incident.v[inc_face];
    let mut i1 = incident.v[(inc_face + 1) % incident.n];

    // Clip the incident edge to the reference face's side planes.
    let tangent = perp(n_ref);
    let (t_lo, t_hi) = {
        let ta = tangent.dot(&r0);
        let tb = tangent.dot(&r1);
        (ta.min(tb), ta.max(tb))
    };
    for (bound, keep_below) in [(t_hi, true), (t_lo, false)] {
        let s0 = tangent.dot(&i0) - bound;
        let s1 = tangent.dot(&i1) - bound;
        let inside = |s: f64| if keep_below { s <= 0.0 } else { s >= 0.0 };
        match (inside(s0), inside(s1)) {
            (true, true) => {}
            (false, false) => return Manifold::one(fallback),
            (i0_in, _) => {
                let t = s0 / (s0 - s1);
                let clipped = i0 + (i1 - i0) * t;
                if i0_in {
                    i1 = clipped;
                } else {
                    i0 = clipped;
                }
            }
        }
    }

    let make = |p: Vec2| -> Option<ContactQuery> {
        let depth = offset - n_ref.dot(&p);
        if depth <= 0.0 {
            return None;
        }
        let on_face = p + n_ref * depth;
        let (point_a, point_b) = if axis.reference_on_a { (on_face, p) } else { (p, on_face) };
        Some(ContactQuery { point_a, point_b, normal: axis.normal, distance: -depth })
    };
    match (make(i0), make(i1)) {
        (Some(q0), Some(q1)) => Manifold::two(q0, q1),
        (Some(q), None) | (None, Some(q)) => Manifold::one(q),
        (None, None) => Manifold::one(fallback),
    }
}
