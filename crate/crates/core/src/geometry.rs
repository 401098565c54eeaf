//! Digital map of a site: materials, planar walls and blocker screens, plus the
//! exact ray/segment queries the tracer is built on.
//!
//! Walls are zero-thickness planar polygons. Material thickness only enters the
//! slab transmission/reflection evaluation in [`crate::rt::em`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::{Point2, Point3, Vector2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::VACUUM_PERMITTIVITY;

/// Planarity and polygon-containment tolerance, meters.
pub const GEOMETRY_TOLERANCE: f64 = 1e-3;

/// Minimum parametric distance (meters) for a ray hit to count as "ahead".
pub const HIT_EPSILON: f64 = 1e-9;

/// Frequency band over which material models must stay finite.
const MATERIAL_BAND_HZ: (f64, f64) = (6e9, 100e9);

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read map file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed map document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("material `{name}`: {reason}")]
    Material { name: String, reason: String },
    #[error("wall {index}: {reason}")]
    Wall { index: usize, reason: String },
    #[error("blocker {index}: {reason}")]
    Blocker { index: usize, reason: String },
    #[error("floor plan: {0}")]
    FloorPlan(String),
}

/// Building material with power-law frequency dependence:
/// `value(f) = base * (f / 1 GHz)^exponent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub name: String,
    pub relative_permittivity: f64,
    /// Siemens per meter.
    pub conductivity: f64,
    #[serde(default)]
    pub permittivity_exponent: f64,
    #[serde(default)]
    pub conductivity_exponent: f64,
    #[serde(rename = "thickness_m")]
    pub thickness: f64,
}

impl Material {
    pub fn new(name: &str, relative_permittivity: f64, conductivity: f64, thickness: f64) -> Self {
        Self {
            name: name.to_string(),
            relative_permittivity,
            conductivity,
            permittivity_exponent: 0.0,
            conductivity_exponent: 0.0,
            thickness,
        }
    }

    pub fn permittivity_at(&self, frequency: f64) -> f64 {
        self.relative_permittivity * (frequency / 1e9).powf(self.permittivity_exponent)
    }

    pub fn conductivity_at(&self, frequency: f64) -> f64 {
        self.conductivity * (frequency / 1e9).powf(self.conductivity_exponent)
    }

    /// Complex relative permittivity `ε_r(f) − j σ(f) / (2π f ε₀)`.
    pub fn complex_permittivity(&self, frequency: f64) -> Complex64 {
        let omega = 2.0 * std::f64::consts::PI * frequency;
        Complex64::new(
            self.permittivity_at(frequency),
            -self.conductivity_at(frequency) / (omega * VACUUM_PERMITTIVITY),
        )
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let fail = |reason: &str| MapError::Material {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if !(self.relative_permittivity >= 1.0) {
            return Err(fail("relative permittivity must be >= 1"));
        }
        if !(self.conductivity >= 0.0) {
            return Err(fail("conductivity must be >= 0"));
        }
        if !(self.thickness > 0.0) || !self.thickness.is_finite() {
            return Err(fail("thickness must be > 0"));
        }
        // Power laws are monotone, so the band edges bound the whole band.
        for f in [MATERIAL_BAND_HZ.0, MATERIAL_BAND_HZ.1] {
            let eps = self.complex_permittivity(f);
            if !eps.re.is_finite() || !eps.im.is_finite() {
                return Err(fail("permittivity not finite across 6-100 GHz"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WallTag {
    External,
    Internal,
    Floor,
    Ceiling,
}

/// A planar, simple polygon with a resolved material.
#[derive(Clone, Debug)]
pub struct Wall {
    vertices: Vec<Point3<f64>>,
    material: usize,
    tag: WallTag,
    normal: Vector3<f64>,
    offset: f64,
    // In-plane orthonormal basis and projected outline for containment tests.
    origin: Point3<f64>,
    axis_u: Vector3<f64>,
    axis_v: Vector3<f64>,
    outline: Vec<Point2<f64>>,
    area: f64,
}

impl Wall {
    fn build(vertices: Vec<Point3<f64>>, material: usize, tag: WallTag) -> Result<Self, String> {
        if vertices.len() < 3 {
            return Err(format!("needs at least 3 vertices, got {}", vertices.len()));
        }
        if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err("non-finite vertex coordinate".into());
        }
        // Newell's method: robust normal for any planar polygon.
        let mut newell: Vector3<f64> = Vector3::zeros();
        for (i, a) in vertices.iter().enumerate() {
            let b = vertices[(i + 1) % vertices.len()];
            newell.x += (a.y - b.y) * (a.z + b.z);
            newell.y += (a.z - b.z) * (a.x + b.x);
            newell.z += (a.x - b.x) * (a.y + b.y);
        }
        let area = newell.norm() / 2.0;
        if area < GEOMETRY_TOLERANCE * GEOMETRY_TOLERANCE {
            return Err("degenerate polygon (no well-defined normal)".into());
        }
        let normal = newell / (2.0 * area);
        let centroid = vertices
            .iter()
            .fold(Vector3::zeros(), |acc, v| acc + v.coords)
            / vertices.len() as f64;
        let offset = normal.dot(&centroid);
        for (i, v) in vertices.iter().enumerate() {
            let dev = (normal.dot(&v.coords) - offset).abs();
            if dev > GEOMETRY_TOLERANCE {
                return Err(format!("vertex {i} is {dev:.4} m off the wall plane"));
            }
        }

        let origin = vertices[0];
        let mut axis_u: Vector3<f64> = Vector3::zeros();
        for v in &vertices[1..] {
            let d = v - origin;
            let d = d - normal * normal.dot(&d);
            if d.norm() > GEOMETRY_TOLERANCE {
                axis_u = d.normalize();
                break;
            }
        }
        let axis_v = normal.cross(&axis_u);
        let outline: Vec<Point2<f64>> = vertices
            .iter()
            .map(|v| {
                let d = v - origin;
                Point2::new(d.dot(&axis_u), d.dot(&axis_v))
            })
            .collect();

        let n = outline.len();
        for i in 0..n {
            if (outline[(i + 1) % n] - outline[i]).norm() <= GEOMETRY_TOLERANCE {
                return Err(format!("repeated vertex at index {}", (i + 1) % n));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect_2d(
                    outline[i],
                    outline[(i + 1) % n],
                    outline[j],
                    outline[(j + 1) % n],
                ) {
                    return Err(format!("edges {i} and {j} intersect (polygon not simple)"));
                }
            }
        }

        Ok(Self {
            vertices,
            material,
            tag,
            normal,
            offset,
            origin,
            axis_u,
            axis_v,
            outline,
            area,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn material_index(&self) -> usize {
        self.material
    }

    pub fn tag(&self) -> WallTag {
        self.tag
    }

    /// Unit normal (orientation follows the vertex winding).
    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn plane_offset(&self) -> f64 {
        self.offset
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// Signed distance of `p` from the wall plane.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    /// Mirror image of `p` across the wall plane.
    pub fn mirror(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    /// Whether an in-plane point lies inside the polygon, boundary inclusive
    /// within [`GEOMETRY_TOLERANCE`].
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let d = p - self.origin;
        let q = Point2::new(d.dot(&self.axis_u), d.dot(&self.axis_v));
        point_in_polygon(&self.outline, q)
            || distance_to_outline(&self.outline, q) <= GEOMETRY_TOLERANCE
    }

    /// Intersection of the segment `a + t (b - a)`, `t ∈ (0, 1)`, with the
    /// polygon. Returns `t` and the hit point.
    pub fn intersect_segment(&self, a: &Point3<f64>, b: &Point3<f64>) -> Option<(f64, Point3<f64>)> {
        let dir = b - a;
        let denom = self.normal.dot(&dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = -self.signed_distance(a) / denom;
        if !(t > 0.0 && t < 1.0) {
            return None;
        }
        let p = a + dir * t;
        self.contains(&p).then_some((t, p))
    }
}

/// Whether closed 2D segments `p1p2` and `q1q2` share any point.
fn segments_intersect_2d(p1: Point2<f64>, p2: Point2<f64>, q1: Point2<f64>, q2: Point2<f64>) -> bool {
    fn orient(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
        let ab = b - a;
        let ac = c - a;
        ab.x * ac.y - ab.y * ac.x
    }
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let tol = GEOMETRY_TOLERANCE;
    point_segment_distance(p1, q1, q2) <= tol
        || point_segment_distance(p2, q1, q2) <= tol
        || point_segment_distance(q1, p1, p2) <= tol
        || point_segment_distance(q2, p1, p2) <= tol
}

fn point_segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab: Vector2<f64> = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

fn point_in_polygon(outline: &[Point2<f64>], q: Point2<f64>) -> bool {
    // Crossing-number test.
    let mut inside = false;
    let n = outline.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (outline[i], outline[j]);
        if (a.y > q.y) != (b.y > q.y) {
            let x = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if q.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn distance_to_outline(outline: &[Point2<f64>], q: Point2<f64>) -> f64 {
    let n = outline.len();
    (0..n)
        .map(|i| point_segment_distance(q, outline[i], outline[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Penetration behaviour of a blocker screen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penetration {
    /// Finite loss in dB.
    Loss(f64),
    Opaque,
}

impl Serialize for Penetration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Penetration::Loss(db) => s.serialize_f64(*db),
            Penetration::Opaque => s.serialize_str("opaque"),
        }
    }
}

impl<'de> Deserialize<'de> for Penetration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Db(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Db(db) => Ok(Penetration::Loss(db)),
            Repr::Word(w) if w == "opaque" => Ok(Penetration::Opaque),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "loss_db must be a number or \"opaque\", got \"{w}\""
            ))),
        }
    }
}

/// Vertical rectangular screen (3GPP-style blocker). `azimuth` is the
/// direction of the screen normal in the horizontal plane; the screen spans
/// `width` along the perpendicular horizontal axis and `height` along z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockerScreen {
    pub center: Point3<f64>,
    #[serde(rename = "width_m")]
    pub width: f64,
    #[serde(rename = "height_m")]
    pub height: f64,
    #[serde(rename = "azimuth_rad")]
    pub azimuth: f64,
    #[serde(rename = "loss_db")]
    pub penetration: Penetration,
    #[serde(default = "Vector3::zeros")]
    pub velocity: Vector3<f64>,
}

impl BlockerScreen {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err("width and height must be > 0".into());
        }
        if let Penetration::Loss(db) = self.penetration {
            if !(db >= 0.0) || !db.is_finite() {
                return Err("penetration loss must be a finite value >= 0 dB".into());
            }
        }
        if !self.center.coords.iter().chain(self.velocity.iter()).all(|c| c.is_finite()) {
            return Err("non-finite center or velocity".into());
        }
        Ok(())
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.azimuth.cos(), self.azimuth.sin(), 0.0)
    }

    fn width_axis(&self) -> Vector3<f64> {
        Vector3::new(-self.azimuth.sin(), self.azimuth.cos(), 0.0)
    }

    /// Whether the open segment `(a, b)` crosses the screen rectangle.
    pub fn intersects_segment(&self, a: &Point3<f64>, b: &Point3<f64>) -> bool {
        let n = self.normal();
        let dir = b - a;
        let denom = n.dot(&dir);
        if denom.abs() < 1e-15 {
            return false;
        }
        let t = n.dot(&(self.center - a)) / denom;
        let len = dir.norm();
        if !(t * len > HIT_EPSILON && (1.0 - t) * len > HIT_EPSILON) {
            return false;
        }
        let d = a + dir * t - self.center;
        d.dot(&self.width_axis()).abs() <= self.width / 2.0 && d.z.abs() <= self.height / 2.0
    }

    /// The screen translated by `velocity * dt`.
    pub fn advanced(&self, dt: f64) -> Self {
        let mut moved = self.clone();
        moved.center += self.velocity * dt;
        moved
    }
}

/// Axis-aligned box. Maps without walls are unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn unbounded() -> Self {
        Self {
            min: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            max: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.min.coords.iter().chain(self.max.coords.iter()).all(|c| c.is_finite())
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - GEOMETRY_TOLERANCE && p[i] <= self.max[i] + GEOMETRY_TOLERANCE)
    }

    fn around<'a>(points: impl Iterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let mut it = points.peekable();
        let first = **it.peek()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Some(Self { min, max })
    }
}

/// Wall entry as it appears in a map document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub vertices: Vec<Point3<f64>>,
    pub material: String,
    pub tag: WallTag,
}

/// Serialized map document (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDocument {
    pub site_name: String,
    pub materials: Vec<Material>,
    #[serde(default)]
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub blockers: Vec<BlockerScreen>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounding_box: Option<Aabb>,
}

/// Immutable site geometry. All queries take `&self` and may run concurrently.
#[derive(Clone, Debug)]
pub struct DigitalMap {
    site_name: String,
    materials: Vec<Material>,
    walls: Vec<Wall>,
    wall_specs: Vec<WallSpec>,
    blockers: Vec<BlockerScreen>,
    bounding_box: Aabb,
    explicit_box: bool,
}

impl DigitalMap {
    pub fn empty() -> Self {
        Self::from_document(MapDocument {
            site_name: "empty".into(),
            materials: vec![],
            walls: vec![],
            blockers: vec![],
            bounding_box: None,
        })
        .expect("empty map is valid")
    }

    pub fn from_document(doc: MapDocument) -> Result<Self, MapError> {
        let mut index = HashMap::new();
        for (i, m) in doc.materials.iter().enumerate() {
            m.validate()?;
            if index.insert(m.name.clone(), i).is_some() {
                return Err(MapError::Material {
                    name: m.name.clone(),
                    reason: "defined more than once".into(),
                });
            }
        }
        let mut walls = Vec::with_capacity(doc.walls.len());
        for (i, spec) in doc.walls.iter().enumerate() {
            let material = *index.get(&spec.material).ok_or_else(|| MapError::Wall {
                index: i,
                reason: format!("references undefined material `{}`", spec.material),
            })?;
            let wall = Wall::build(spec.vertices.clone(), material, spec.tag)
                .map_err(|reason| MapError::Wall { index: i, reason })?;
            walls.push(wall);
        }
        for (i, b) in doc.blockers.iter().enumerate() {
            b.validate().map_err(|reason| MapError::Blocker { index: i, reason })?;
        }
        let computed = Aabb::around(walls.iter().flat_map(|w| w.vertices.iter()));
        let bounding_box = match (doc.bounding_box, computed) {
            (Some(explicit), _) => {
                for (i, w) in walls.iter().enumerate() {
                    if !w.vertices.iter().all(|v| explicit.contains(v)) {
                        return Err(MapError::Wall {
                            index: i,
                            reason: "lies outside the declared bounding box".into(),
                        });
                    }
                }
                explicit
            }
            (None, Some(b)) => b,
            (None, None) => Aabb::unbounded(),
        };
        Ok(Self {
            site_name: doc.site_name,
            materials: doc.materials,
            walls,
            wall_specs: doc.walls,
            blockers: doc.blockers,
            bounding_box,
            explicit_box: doc.bounding_box.is_some(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn to_document(&self) -> MapDocument {
        MapDocument {
            site_name: self.site_name.clone(),
            materials: self.materials.clone(),
            walls: self.wall_specs.clone(),
            blockers: self.blockers.clone(),
            bounding_box: self.explicit_box.then_some(self.bounding_box),
        }
    }

    pub fn site_name(&self) -> &str {
        &self.site_name
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn material_of(&self, wall: usize) -> &Material {
        &self.materials[self.walls[wall].material]
    }

    pub fn blockers(&self) -> &[BlockerScreen] {
        &self.blockers
    }

    pub fn bounding_box(&self) -> Aabb {
        self.bounding_box
    }

    /// Same walls with a different blocker population.
    pub fn with_blockers(&self, blockers: Vec<BlockerScreen>) -> Result<Self, MapError> {
        for (i, b) in blockers.iter().enumerate() {
            b.validate().map_err(|reason| MapError::Blocker { index: i, reason })?;
        }
        let mut map = self.clone();
        map.blockers = blockers;
        Ok(map)
    }

    /// Wall crossings of the open segment `(a, b)`, sorted by distance from `a`.
    /// Walls listed in `skip` (typically the walls `a` and `b` lie on) are ignored.
    pub fn segment_crossings(&self, a: &Point3<f64>, b: &Point3<f64>, skip: &[usize]) -> Vec<(usize, f64)> {
        let len = (b - a).norm();
        let mut out: Vec<(usize, f64)> = self
            .walls
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .filter_map(|(i, w)| {
                let (t, _) = w.intersect_segment(a, b)?;
                (t * len > HIT_EPSILON && (1.0 - t) * len > HIT_EPSILON).then_some((i, t))
            })
            .collect();
        out.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        out
    }

    /// Blocker screens crossed by the open segment `(a, b)`.
    pub fn segment_blockers(&self, a: &Point3<f64>, b: &Point3<f64>) -> Vec<usize> {
        self.blockers
            .iter()
            .enumerate()
            .filter(|(_, s)| s.intersects_segment(a, b))
            .map(|(i, _)| i)
            .collect()
    }
}

impl fmt::Display for DigitalMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} walls, {} materials, {} blockers)",
            self.site_name,
            self.walls.len(),
            self.materials.len(),
            self.blockers.len()
        )
    }
}

pub fn load_map(path: impl AsRef<Path>) -> Result<DigitalMap, MapError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MapError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DigitalMap::from_json(&text)
}

/// Extrudes a 2D floor plan into vertical rectangular walls, one per
/// consecutive corner pair (plus the closing segment when `closed`).
pub fn extrude_floor_plan(
    corners: &[Point2<f64>],
    base_height: f64,
    top_height: f64,
    material: &str,
    tag: WallTag,
    closed: bool,
) -> Result<Vec<WallSpec>, MapError> {
    if corners.len() < 2 {
        return Err(MapError::FloorPlan("at least 2 corners are required".into()));
    }
    if !(top_height > base_height) {
        return Err(MapError::FloorPlan(format!(
            "top height {top_height} m must exceed base height {base_height} m"
        )));
    }
    let n = corners.len();
    let segments = if closed && n > 2 { n } else { n - 1 };
    (0..segments)
        .map(|i| {
            let (a, b) = (corners[i], corners[(i + 1) % n]);
            if (b - a).norm() <= GEOMETRY_TOLERANCE {
                return Err(MapError::FloorPlan(format!(
                    "degenerate segment between corners {i} and {}",
                    (i + 1) % n
                )));
            }
            Ok(WallSpec {
                vertices: vec![
                    Point3::new(a.x, a.y, base_height),
                    Point3::new(b.x, b.y, base_height),
                    Point3::new(b.x, b.y, top_height),
                    Point3::new(a.x, a.y, top_height),
                ],
                material: material.to_string(),
                tag,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayHit {
    pub wall: usize,
    pub point: Point3<f64>,
    pub distance: f64,
    /// Angle from the wall normal, in `[0, π/2]`.
    pub incidence_angle: f64,
}

/// All wall hits along a ray, ascending in distance, strictly within
/// `(0, max_range)`.
pub fn ray_hits(map: &DigitalMap, origin: &Point3<f64>, direction: &Vector3<f64>, max_range: f64) -> Vec<RayHit> {
    debug_assert!((direction.norm() - 1.0).abs() < 1e-9, "direction must be a unit vector");
    let mut hits: Vec<RayHit> = map
        .walls
        .iter()
        .enumerate()
        .filter_map(|(i, w)| {
            let denom = w.normal.dot(direction);
            if denom.abs() < 1e-15 {
                return None;
            }
            let distance = -w.signed_distance(origin) / denom;
            if !(distance > HIT_EPSILON && distance < max_range) {
                return None;
            }
            let point = origin + direction * distance;
            w.contains(&point).then(|| RayHit {
                wall: i,
                point,
                distance,
                incidence_angle: denom.abs().min(1.0).acos(),
            })
        })
        .collect();
    hits.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.wall.cmp(&b.wall)));
    hits
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LosReport {
    pub los: bool,
    pub walls: Vec<usize>,
    pub blockers: Vec<usize>,
}

/// Line-of-sight test: true iff the open segment `(a, b)` crosses no wall and
/// no blocker screen. Obstructions are reported in ascending index order.
pub fn is_los(map: &DigitalMap, a: &Point3<f64>, b: &Point3<f64>) -> LosReport {
    let mut walls: Vec<usize> = map.segment_crossings(a, b, &[]).into_iter().map(|(w, _)| w).collect();
    walls.sort_unstable();
    walls.dedup();
    let blockers = map.segment_blockers(a, b);
    LosReport {
        los: walls.is_empty() && blockers.is_empty(),
        walls,
        blockers,
    }
}
