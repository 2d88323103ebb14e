//! Polygon/polyhedron approximations of round shapes and convex-hull plane
//! representations.
//!
//! Every Euclidean-norm condition the planner needs (speed limits, waypoint
//! proximity, inter-vehicle separation, target distance) is replaced by a set
//! of linear functions `f_h(a) = cx·ax + cy·ay + cz·az`. Convex regions (geo
//! fence, obstacles) are stored as outward unit-normal planes so that
//! `d_h(p) = n_h·p + c0_h` is the signed distance of `p` to face `h`.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = Vector3<f64>;

/// Tolerance on the unit length of face normals.
pub const NORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("approximation degree H must be an even integer >= 4, got {0}")]
    InvalidDegree(usize),
    #[error("reduced face set requires H divisible by 4, got {0}")]
    ReducedDegree(usize),
    #[error("convex hull needs at least 4 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("non-finite coordinate in input point {0}")]
    NonFinite(usize),
}

/// One linear affine face `cx·ax + cy·ay + cz·az + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFace {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub c0: f64,
}

impl AffineFace {
    pub fn new(cx: f64, cy: f64, cz: f64, c0: f64) -> Self {
        Self { cx, cy, cz, c0 }
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.cx, self.cy, self.cz)
    }

    #[inline]
    pub fn eval(&self, a: &Vector3<f64>) -> f64 {
        self.cx * a.x + self.cy * a.y + self.cz * a.z + self.c0
    }

    /// The same plane after translating the underlying shape by `shift`.
    pub fn translated(&self, shift: &Vector3<f64>) -> Self {
        Self {
            c0: self.c0 - self.normal().dot(shift),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    InfiniteCylinder,
    ClosedCylinder,
    Sphere,
}

impl ShapeKind {
    pub fn is_planar(self) -> bool {
        !matches!(self, ShapeKind::Sphere)
    }
}

/// Which side of the round shape the polygon is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxSide {
    /// Faces touch the round shape (`c_in = 1`); accepts slightly more.
    Outer,
    /// Faces scaled so the accepted set lies inside the round shape.
    Inner,
}

/// Face set approximating a round shape of radius 1 centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyApprox {
    faces: Vec<AffineFace>,
    kind: ShapeKind,
    degree: usize,
    reduced: bool,
}

impl PolyApprox {
    pub fn faces(&self) -> &[AffineFace] {
        &self.faces
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    /// The polygon resolution `H`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn c_in_outer(&self) -> f64 {
        1.0
    }

    pub fn c_in_inner(&self) -> f64 {
        let c = (PI / self.degree as f64).cos();
        if self.kind.is_planar() {
            c
        } else {
            c * c
        }
    }

    pub fn c_in(&self, side: ApproxSide) -> f64 {
        match side {
            ApproxSide::Outer => self.c_in_outer(),
            ApproxSide::Inner => self.c_in_inner(),
        }
    }

    pub fn eval_all(&self, a: &Vector3<f64>) -> Vec<f64> {
        self.faces.iter().map(|f| f.eval(a)).collect()
    }

    /// Largest face value; the polygonal "norm" of `a`.
    pub fn max_face(&self, a: &Vector3<f64>) -> f64 {
        self.faces
            .iter()
            .map(|f| f.eval(a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `true` if every face accepts `a` under the bound `bound·c_in`.
    pub fn accepts_upper(&self, a: &Vector3<f64>, bound: f64, side: ApproxSide) -> bool {
        self.max_face(a) <= bound * self.c_in(side)
    }
}

fn check_degree(h: usize) -> Result<(), GeometryError> {
    if h < 4 || h % 2 != 0 {
        return Err(GeometryError::InvalidDegree(h));
    }
    Ok(())
}

fn cylinder_angles(h: usize, reduced: bool) -> Vec<f64> {
    (1..=h)
        .filter(|&k| !reduced || k <= h / 4 || k == h)
        .map(|k| 2.0 * PI * k as f64 / h as f64)
        .collect()
}

/// `H` faces `a_x cos(α_h) + a_y sin(α_h)`, `α_h = 2πh/H`.
pub fn make_cylinder_faces(h: usize) -> Result<PolyApprox, GeometryError> {
    build_cylinder(h, false, false)
}

/// Cylinder faces plus `a_z` and `-a_z` for the height bounds.
pub fn make_closed_cylinder_faces(h: usize) -> Result<PolyApprox, GeometryError> {
    build_cylinder(h, true, false)
}

/// Reduced face set for vectors with non-negative components: only angles in
/// `[0, π/2]` are kept (and only the `+a_z` cap for the closed variant).
pub fn make_reduced_cylinder_faces(h: usize, closed: bool) -> Result<PolyApprox, GeometryError> {
    build_cylinder(h, closed, true)
}

fn build_cylinder(h: usize, closed: bool, reduced: bool) -> Result<PolyApprox, GeometryError> {
    check_degree(h)?;
    if reduced && h % 4 != 0 {
        return Err(GeometryError::ReducedDegree(h));
    }
    let mut faces: Vec<AffineFace> = cylinder_angles(h, reduced)
        .into_iter()
        .map(|a| AffineFace::new(a.cos(), a.sin(), 0.0, 0.0))
        .collect();
    if closed {
        faces.push(AffineFace::new(0.0, 0.0, 1.0, 0.0));
        if !reduced {
            faces.push(AffineFace::new(0.0, 0.0, -1.0, 0.0));
        }
    }
    Ok(PolyApprox {
        faces,
        kind: if closed {
            ShapeKind::ClosedCylinder
        } else {
            ShapeKind::InfiniteCylinder
        },
        degree: h,
        reduced,
    })
}

/// Translate a 1-based sphere face index into its `(i, j)` angle indices.
pub fn sphere_face_indices(face: usize, h: usize) -> (usize, usize) {
    let per_ring = h / 2 - 1;
    ((face - 1) / per_ring + 1, (face - 1) % per_ring + 1)
}

/// `H(H/2 - 1) + 2` faces approximating the unit sphere.
pub fn make_sphere_faces(h: usize) -> Result<PolyApprox, GeometryError> {
    build_sphere(h, false)
}

pub fn make_reduced_sphere_faces(h: usize) -> Result<PolyApprox, GeometryError> {
    build_sphere(h, true)
}

fn build_sphere(h: usize, reduced: bool) -> Result<PolyApprox, GeometryError> {
    check_degree(h)?;
    if reduced && h % 4 != 0 {
        return Err(GeometryError::ReducedDegree(h));
    }
    let per_ring = h / 2 - 1;
    let mut faces = Vec::with_capacity(h * per_ring + 2);
    for face in 1..=h * per_ring {
        let (i, j) = sphere_face_indices(face, h);
        let alpha = 2.0 * PI * i as f64 / h as f64;
        let beta = 2.0 * PI * j as f64 / h as f64;
        if reduced && !(i <= h / 4 || i == h) {
            continue;
        }
        if reduced && j > h / 4 {
            continue;
        }
        faces.push(AffineFace::new(
            alpha.cos() * beta.sin(),
            alpha.sin() * beta.sin(),
            beta.cos(),
            0.0,
        ));
    }
    faces.push(AffineFace::new(0.0, 0.0, 1.0, 0.0));
    if !reduced {
        faces.push(AffineFace::new(0.0, 0.0, -1.0, 0.0));
    }
    Ok(PolyApprox {
        faces,
        kind: ShapeKind::Sphere,
        degree: h,
        reduced,
    })
}

/// A bounded convex polytope stored as outward unit-normal planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexRegion {
    faces: Vec<AffineFace>,
    vertices: Vec<Point3>,
}

impl ConvexRegion {
    pub fn faces(&self) -> &[AffineFace] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Extreme points of the hull.
    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn signed_distances(&self, p: &Point3) -> Vec<f64> {
        signed_distances(self, p)
    }

    /// `D(p)`: the maximum signed distance. `<= 0` means inside or on the hull.
    pub fn max_distance(&self, p: &Point3) -> f64 {
        self.faces
            .iter()
            .map(|f| f.eval(p))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        self.max_distance(p) <= 0.0
    }

    pub fn translated(&self, shift: &Vector3<f64>) -> Self {
        Self {
            faces: self.faces.iter().map(|f| f.translated(shift)).collect(),
            vertices: self.vertices.iter().map(|v| v + shift).collect(),
        }
    }

    /// Axis-aligned bounding box `(min, max)` of the vertices.
    pub fn bounding_box(&self) -> (Point3, Point3) {
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Smallest value of face `h` over an axis-aligned box.
    pub fn face_min_over_box(&self, h: usize, lo: &Point3, hi: &Point3) -> f64 {
        let f = &self.faces[h];
        let n = f.normal();
        let mut acc = f.c0;
        for k in 0..3 {
            acc += if n[k] >= 0.0 { n[k] * lo[k] } else { n[k] * hi[k] };
        }
        acc
    }
}

pub fn signed_distances(region: &ConvexRegion, p: &Point3) -> Vec<f64> {
    region.faces.iter().map(|f| f.eval(p)).collect()
}

/// Outward plane through three points, oriented so that every point in
/// `points` lies on the non-positive side, if such an orientation exists.
fn supporting_plane(points: &[Point3], a: &Point3, b: &Point3, c: &Point3, tol: f64) -> Option<AffineFace> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len <= 1e-10 * (b - a).norm() * (c - a).norm() || len == 0.0 {
        return None;
    }
    let n = n / len;
    let c0 = -n.dot(a);
    let mut pos = false;
    let mut neg = false;
    for p in points {
        let d = n.dot(p) + c0;
        if d > tol {
            pos = true;
        } else if d < -tol {
            neg = true;
        }
        if pos && neg {
            return None;
        }
    }
    if pos {
        Some(AffineFace::new(-n.x, -n.y, -n.z, -c0))
    } else {
        Some(AffineFace::new(n.x, n.y, n.z, c0))
    }
}

fn same_plane(a: &AffineFace, b: &AffineFace, tol: f64) -> bool {
    (a.normal() - b.normal()).norm() <= 1e-7 && (a.c0 - b.c0).abs() <= tol * 10.0
}

/// Boundary edges of the points lying on `face`, as index pairs in
/// counter-clockwise order around the outward normal.
fn face_boundary(points: &[Point3], on_face: &[usize], face: &AffineFace) -> Vec<usize> {
    let n = face.normal();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    let mut pts: Vec<(Vector2<f64>, usize)> = on_face
        .iter()
        .map(|&i| (Vector2::new(points[i].dot(&e1), points[i].dot(&e2)), i))
        .collect();
    pts.sort_by(|a, b| {
        a.0.x
            .partial_cmp(&b.0.x)
            .unwrap()
            .then(a.0.y.partial_cmp(&b.0.y).unwrap())
    });
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let scale = pts
        .iter()
        .map(|p| p.0.norm())
        .fold(1.0_f64, f64::max);
    let eps = 1e-12 * scale * scale;
    let mut hull: Vec<(Vector2<f64>, usize)> = Vec::with_capacity(pts.len() * 2);
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2].0, &hull[hull.len() - 1].0, &p.0) <= eps {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2].0, &hull[hull.len() - 1].0, &p.0) <= eps {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull.into_iter().map(|(_, i)| i).collect()
}

/// Convex hull of a 3D point cloud by gift wrapping: starting from one
/// supporting plane, the plane is pivoted about every boundary edge of every
/// discovered face until the surface closes.
pub fn convex_hull(input: &[Point3]) -> Result<ConvexRegion, GeometryError> {
    for (i, p) in input.iter().enumerate() {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(GeometryError::NonFinite(i));
        }
    }
    let scale = input
        .iter()
        .map(|p| p.amax())
        .fold(1.0_f64, f64::max);
    let tol = 1e-10 * scale;

    let mut points: Vec<Point3> = Vec::with_capacity(input.len());
    for p in input {
        if !points.iter().any(|q| (q - p).norm() <= tol) {
            points.push(*p);
        }
    }
    if points.len() < 4 {
        return Err(GeometryError::TooFewPoints(points.len()));
    }

    // Rank check: farthest pair, farthest from their line, farthest from that plane.
    let (mut ia, mut ib, mut best) = (0, 0, -1.0);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = (points[i] - points[j]).norm();
            if d > best {
                best = d;
                ia = i;
                ib = j;
            }
        }
    }
    let dir = (points[ib] - points[ia]).normalize();
    let (ic, line_dist) = points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let w = p - points[ia];
            (k, (w - dir * w.dot(&dir)).norm())
        })
        .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if line_dist <= 1e-9 * best.max(1.0) {
        return Err(GeometryError::Degenerate("all points are collinear".into()));
    }
    let plane_n = (points[ib] - points[ia])
        .cross(&(points[ic] - points[ia]))
        .normalize();
    let plane_dist = points
        .iter()
        .map(|p| plane_n.dot(&(p - points[ia])).abs())
        .fold(0.0, f64::max);
    if plane_dist <= 1e-9 * best.max(1.0) {
        return Err(GeometryError::Degenerate(
            "all points are coplanar; a 3D extent is required".into(),
        ));
    }

    // Initial supporting plane through the lexicographically smallest point.
    let start = (0..points.len())
        .min_by(|&a, &b| {
            let (p, q) = (&points[a], &points[b]);
            p.x.partial_cmp(&q.x)
                .unwrap()
                .then(p.y.partial_cmp(&q.y).unwrap())
                .then(p.z.partial_cmp(&q.z).unwrap())
        })
        .unwrap();
    let mut first = None;
    'outer: for j in 0..points.len() {
        if j == start {
            continue;
        }
        for k in j + 1..points.len() {
            if k == start {
                continue;
            }
            if let Some(face) = supporting_plane(&points, &points[start], &points[j], &points[k], tol) {
                first = Some(face);
                break 'outer;
            }
        }
    }
    let first = first.ok_or_else(|| GeometryError::Degenerate("no supporting plane found".into()))?;

    let on_plane = |face: &AffineFace| -> Vec<usize> {
        (0..points.len())
            .filter(|&i| face.eval(&points[i]).abs() <= tol)
            .collect()
    };

    let mut faces: Vec<AffineFace> = vec![first];
    let mut vertex_ids: Vec<usize> = Vec::new();
    let mut queue = vec![0usize];
    while let Some(fi) = queue.pop() {
        let face = faces[fi];
        let members = on_plane(&face);
        let ring = face_boundary(&points, &members, &face);
        for &v in &ring {
            if !vertex_ids.contains(&v) {
                vertex_ids.push(v);
            }
        }
        for e in 0..ring.len() {
            let a = ring[e];
            let b = ring[(e + 1) % ring.len()];
            // Pivot about edge (a, b): the neighbouring face is the other
            // supporting plane containing the edge.
            let mut neighbour = None;
            for (k, p) in points.iter().enumerate() {
                if members.contains(&k) {
                    continue;
                }
                if let Some(cand) = supporting_plane(&points, &points[a], &points[b], p, tol) {
                    if !same_plane(&cand, &face, tol) {
                        neighbour = Some(cand);
                        break;
                    }
                }
            }
            let cand = neighbour.ok_or_else(|| {
                GeometryError::Degenerate("hull surface failed to close".into())
            })?;
            if !faces.iter().any(|f| same_plane(f, &cand, tol)) {
                faces.push(cand);
                queue.push(faces.len() - 1);
            }
        }
    }

    vertex_ids.sort_unstable();
    Ok(ConvexRegion {
        faces,
        vertices: vertex_ids.into_iter().map(|i| points[i]).collect(),
    })
}

/// Axis-aligned box as a convex region.
pub fn box_region(lo: Point3, hi: Point3) -> Result<ConvexRegion, GeometryError> {
    let mut pts = Vec::with_capacity(8);
    for &x in &[lo.x, hi.x] {
        for &y in &[lo.y, hi.y] {
            for &z in &[lo.z, hi.z] {
                pts.push(Point3::new(x, y, z));
            }
        }
    }
    convex_hull(&pts)
}

/// Vertical prism with a regular `sides`-gon cross-section, e.g. a helicopter
/// hull.
pub fn cylinder_region(
    center: Point3,
    radius: f64,
    z_lo: f64,
    z_hi: f64,
    sides: usize,
) -> Result<ConvexRegion, GeometryError> {
    if sides < 3 {
        return Err(GeometryError::Degenerate(format!("{sides}-gon cross-section")));
    }
    let mut pts = Vec::with_capacity(2 * sides);
    for k in 0..sides {
        let a = 2.0 * PI * k as f64 / sides as f64;
        for &z in &[z_lo, z_hi] {
            pts.push(Point3::new(center.x + radius * a.cos(), center.y + radius * a.sin(), z));
        }
    }
    convex_hull(&pts)
}
