use std::f64::consts::PI;

use nalgebra::{Matrix2, Point3, Vector3};
use num_complex::Complex64;

use super::em::slab_response;
use super::{
    angles_from_direction, apply_blockage, Interaction, InteractionKind, Node, PathRecord, PolMatrix, RtError,
    TraceConfig,
};
use crate::geometry::{DigitalMap, GEOMETRY_TOLERANCE, HIT_EPSILON};
use crate::units::{wrap_two_pi, SPEED_OF_LIGHT};

#[derive(Clone, Debug)]
struct ImageNode {
    wall: usize,
    parent: Option<usize>,
    depth: usize,
    image: Point3<f64>,
}

/// Tree of mirror images of a source point, built once per transmitter and
/// reused for every receiver.
#[derive(Clone, Debug)]
pub struct ImageTree<'m> {
    map: &'m DigitalMap,
    source: Point3<f64>,
    nodes: Vec<ImageNode>,
}

/// Frequency-independent description of one valid path.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricPath {
    /// Transmitter, reflection points in order, receiver.
    pub points: Vec<Point3<f64>>,
    /// Walls reflected from, one per interior point.
    pub reflections: Vec<usize>,
    /// Walls crossed by each segment, in travel order.
    pub transmissions: Vec<Vec<usize>>,
}

impl GeometricPath {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn n_transmissions(&self) -> usize {
        self.transmissions.iter().map(Vec::len).sum()
    }

    /// Interaction sequence in travel order.
    pub fn interactions(&self) -> Vec<Interaction> {
        let mut out = Vec::new();
        for (seg, crossed) in self.transmissions.iter().enumerate() {
            out.extend(crossed.iter().map(|&w| Interaction {
                wall: w as u32,
                kind: InteractionKind::Transmission,
            }));
            if let Some(&w) = self.reflections.get(seg) {
                out.push(Interaction {
                    wall: w as u32,
                    kind: InteractionKind::Reflection,
                });
            }
        }
        out
    }
}

impl<'m> ImageTree<'m> {
    pub fn build(map: &'m DigitalMap, source: Point3<f64>, max_order: usize) -> Self {
        let walls = map.walls();
        // front[w][v]: sides of w's plane on which wall v has some vertex,
        // (positive side, negative side), boundary inclusive.
        let front: Vec<Vec<(bool, bool)>> = walls
            .iter()
            .map(|w| {
                walls
                    .iter()
                    .map(|v| {
                        let d: Vec<f64> = v.vertices().iter().map(|p| w.signed_distance(p)).collect();
                        (
                            d.iter().any(|&x| x > -GEOMETRY_TOLERANCE),
                            d.iter().any(|&x| x < GEOMETRY_TOLERANCE),
                        )
                    })
                    .collect()
            })
            .collect();

        let mut nodes = Vec::new();
        let mut stack: Vec<ImageNode> = Vec::new();
        if max_order > 0 {
            for (w, wall) in walls.iter().enumerate().rev() {
                if wall.signed_distance(&source).abs() <= HIT_EPSILON {
                    continue;
                }
                stack.push(ImageNode {
                    wall: w,
                    parent: None,
                    depth: 1,
                    image: wall.mirror(&source),
                });
            }
        }
        while let Some(node) = stack.pop() {
            let index = nodes.len();
            if node.depth < max_order {
                let parent_wall = &walls[node.wall];
                // Real propagation after reflecting on `parent_wall` stays on the
                // side opposite to the image.
                let image_side = parent_wall.signed_distance(&node.image);
                for (w, wall) in walls.iter().enumerate().rev() {
                    if w == node.wall {
                        continue;
                    }
                    let (pos, neg) = front[node.wall][w];
                    if (image_side > 0.0 && !neg) || (image_side < 0.0 && !pos) {
                        continue;
                    }
                    if wall.signed_distance(&node.image).abs() <= HIT_EPSILON {
                        continue;
                    }
                    stack.push(ImageNode {
                        wall: w,
                        parent: Some(index),
                        depth: node.depth + 1,
                        image: wall.mirror(&node.image),
                    });
                }
            }
            nodes.push(node);
        }
        Self { map, source, nodes }
    }

    pub fn source(&self) -> Point3<f64> {
        self.source
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All geometrically valid paths (direct path included) from the source
    /// to `target` crossing at most `max_transmissions` walls in total.
    pub fn paths_to(&self, target: &Point3<f64>, max_transmissions: usize) -> Vec<GeometricPath> {
        let mut out = Vec::new();
        if let Some(p) = self.finish(vec![self.source, *target], vec![], max_transmissions) {
            out.push(p);
        }
        'nodes: for (i, _) in self.nodes.iter().enumerate() {
            let mut chain = Vec::new();
            let mut cursor = Some(i);
            while let Some(c) = cursor {
                chain.push(c);
                cursor = self.nodes[c].parent;
            }
            // Unfold from the receiver back to the transmitter.
            let mut rev_points = vec![*target];
            let mut rev_walls = Vec::with_capacity(chain.len());
            let mut aim = *target;
            for &c in &chain {
                let node = &self.nodes[c];
                let wall = &self.map.walls()[node.wall];
                let Some((_, hit)) = wall.intersect_segment(&node.image, &aim) else {
                    continue 'nodes;
                };
                if (hit - aim).norm() <= HIT_EPSILON {
                    continue 'nodes;
                }
                rev_points.push(hit);
                rev_walls.push(node.wall);
                aim = hit;
            }
            if (self.source - aim).norm() <= HIT_EPSILON {
                continue;
            }
            rev_points.push(self.source);
            rev_points.reverse();
            rev_walls.reverse();
            if let Some(p) = self.finish(rev_points, rev_walls, max_transmissions) {
                out.push(p);
            }
        }
        out
    }

    fn finish(&self, points: Vec<Point3<f64>>, reflections: Vec<usize>, max_transmissions: usize) -> Option<GeometricPath> {
        let mut transmissions = Vec::with_capacity(points.len() - 1);
        let mut total = 0;
        for (seg, pair) in points.windows(2).enumerate() {
            let mut skip = Vec::with_capacity(2);
            if seg > 0 {
                skip.push(reflections[seg - 1]);
            }
            if let Some(&w) = reflections.get(seg) {
                skip.push(w);
            }
            let crossed: Vec<usize> = self
                .map
                .segment_crossings(&pair[0], &pair[1], &skip)
                .into_iter()
                .map(|(w, _)| w)
                .collect();
            total += crossed.len();
            if total > max_transmissions {
                return None;
            }
            transmissions.push(crossed);
        }
        Some(GeometricPath {
            points,
            reflections,
            transmissions,
        })
    }
}

/// Global (θ̂, φ̂) basis for a propagation direction.
fn vh_basis(k: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let (az, zen) = angles_from_direction(k);
    let theta_hat = Vector3::new(zen.cos() * az.cos(), zen.cos() * az.sin(), -zen.sin());
    let phi_hat = Vector3::new(-az.sin(), az.cos(), 0.0);
    (theta_hat, phi_hat)
}

/// Jones matrix of one wall interaction, mapping global (V, H) components
/// along `k_in` to those along `k_out`.
fn interaction_matrix(
    k_in: &Vector3<f64>,
    k_out: &Vector3<f64>,
    normal: &Vector3<f64>,
    kind: InteractionKind,
    perpendicular: Complex64,
    parallel: Complex64,
) -> Matrix2<Complex64> {
    let (th_in, ph_in) = vh_basis(k_in);
    let (th_out, ph_out) = vh_basis(k_out);
    let c = k_in.cross(normal);
    let s = if c.norm() < 1e-9 { th_in } else { c.normalize() };
    let p_in = s.cross(k_in);
    let p_out = match kind {
        InteractionKind::Reflection => p_in - normal * (2.0 * p_in.dot(normal)),
        InteractionKind::Transmission => p_in,
    };
    let r = |x: f64| Complex64::new(x, 0.0);
    let to_local = Matrix2::new(r(s.dot(&th_in)), r(s.dot(&ph_in)), r(p_in.dot(&th_in)), r(p_in.dot(&ph_in)));
    let to_global = Matrix2::new(
        r(th_out.dot(&s)),
        r(th_out.dot(&p_out)),
        r(ph_out.dot(&s)),
        r(ph_out.dot(&p_out)),
    );
    let coeffs = Matrix2::new(perpendicular, r(0.0), r(0.0), parallel);
    to_global * coeffs * to_local
}

fn incidence_angle(k: &Vector3<f64>, normal: &Vector3<f64>) -> f64 {
    // Segments always cross the plane transversally, so the angle is < π/2.
    k.dot(normal).abs().min(1.0).acos().min(PI / 2.0 - 1e-12)
}

/// Evaluates a geometric path at one frequency. Returns `None` when the
/// interactions cancel the field entirely.
fn evaluate(map: &DigitalMap, geom: &GeometricPath, tx: &Node, rx: &Node, frequency: f64) -> Option<PathRecord> {
    let dirs: Vec<Vector3<f64>> = geom.points.windows(2).map(|w| (w[1] - w[0]).normalize()).collect();
    let length = geom.length();
    let mut jones = Matrix2::<Complex64>::identity();
    for (seg, crossed) in geom.transmissions.iter().enumerate() {
        let k = dirs[seg];
        for &w in crossed {
            let wall = &map.walls()[w];
            let n = wall.normal();
            let slab = slab_response(map.material_of(w), incidence_angle(&k, &n), frequency).ok()?;
            jones = interaction_matrix(
                &k,
                &k,
                &n,
                InteractionKind::Transmission,
                slab.transmission.perpendicular,
                slab.transmission.parallel,
            ) * jones;
        }
        if let Some(&w) = geom.reflections.get(seg) {
            let wall = &map.walls()[w];
            let n = wall.normal();
            let k_out = dirs[seg + 1];
            let slab = slab_response(map.material_of(w), incidence_angle(&k, &n), frequency).ok()?;
            jones = interaction_matrix(
                &k,
                &k_out,
                &n,
                InteractionKind::Reflection,
                slab.reflection.perpendicular,
                slab.reflection.parallel,
            ) * jones;
        }
    }
    let norm = jones.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt() / std::f64::consts::SQRT_2;
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let fs = super::em::free_space_gain(length, frequency).ok()?;
    let pol: PolMatrix = [
        [jones[(0, 0)] / norm, jones[(0, 1)] / norm],
        [jones[(1, 0)] / norm, jones[(1, 1)] / norm],
    ];
    let departure = dirs[0];
    let arrival = -dirs[dirs.len() - 1];
    let (aod_az, aod_zen) = angles_from_direction(&departure);
    let (aoa_az, aoa_zen) = angles_from_direction(&arrival);
    let n_transmissions = geom.n_transmissions() as u32;
    let doppler = frequency / SPEED_OF_LIGHT * (tx.velocity.dot(&departure) + rx.velocity.dot(&arrival));
    Some(PathRecord {
        delay: length / SPEED_OF_LIGHT,
        amplitude: fs * norm,
        phase: wrap_two_pi(-2.0 * PI * frequency * length / SPEED_OF_LIGHT),
        aod_az,
        aod_zen,
        aoa_az,
        aoa_zen,
        n_reflections: geom.reflections.len() as u32,
        n_transmissions,
        interactions: geom.interactions(),
        pol_matrix: pol,
        doppler,
        blockage_db: 0.0,
        los: geom.reflections.is_empty() && n_transmissions == 0,
        points: geom.points.clone(),
    })
}

/// Removes paths weaker than the strongest by more than `floor_db`.
pub fn prune_weak_paths(paths: &mut Vec<PathRecord>, floor_db: f64) {
    let strongest = paths.iter().map(PathRecord::power).fold(0.0, f64::max);
    let threshold = strongest * 10f64.powf(-floor_db / 10.0);
    paths.retain(|p| p.power() >= threshold && p.amplitude > 0.0);
}

fn sort_paths(paths: &mut [PathRecord]) {
    paths.sort_by(|a, b| {
        a.delay
            .total_cmp(&b.delay)
            .then_with(|| a.interactions.len().cmp(&b.interactions.len()))
            .then_with(|| {
                let ka: Vec<(u32, bool)> = a.interactions.iter().map(|i| (i.wall, i.kind == InteractionKind::Reflection)).collect();
                let kb: Vec<(u32, bool)> = b.interactions.iter().map(|i| (i.wall, i.kind == InteractionKind::Reflection)).collect();
                ka.cmp(&kb)
            })
    });
}

/// Tracer bound to one map, configuration and transmitter. Building it
/// computes the image tree once; [`Tracer::trace`] is then cheap per receiver
/// and safe to call concurrently.
pub struct Tracer<'m> {
    map: &'m DigitalMap,
    cfg: TraceConfig,
    tx: Node,
    tree: ImageTree<'m>,
}

impl<'m> Tracer<'m> {
    pub fn new(map: &'m DigitalMap, tx: Node, cfg: &TraceConfig) -> Result<Self, RtError> {
        cfg.validate()?;
        let tree = ImageTree::build(map, tx.position, cfg.max_reflections);
        Ok(Self {
            map,
            cfg: cfg.clone(),
            tx,
            tree,
        })
    }

    pub fn config(&self) -> &TraceConfig {
        &self.cfg
    }

    pub fn transmitter(&self) -> &Node {
        &self.tx
    }

    pub fn geometric_paths(&self, rx: &Node) -> Result<Vec<GeometricPath>, RtError> {
        if (rx.position - self.tx.position).norm() <= HIT_EPSILON {
            return Err(RtError::CoincidentNodes);
        }
        Ok(self.tree.paths_to(&rx.position, self.cfg.max_transmissions))
    }

    /// Paths at `frequency` before blockage and pruning.
    pub fn unblocked_paths(&self, rx: &Node, frequency: f64) -> Result<Vec<PathRecord>, RtError> {
        let geoms = self.geometric_paths(rx)?;
        let mut paths: Vec<PathRecord> = geoms
            .iter()
            .filter_map(|g| evaluate(self.map, g, &self.tx, rx, frequency))
            .collect();
        sort_paths(&mut paths);
        Ok(paths)
    }

    /// Paths at the center frequency with the map's blockers applied and
    /// weak paths pruned.
    pub fn trace(&self, rx: &Node) -> Result<Vec<PathRecord>, RtError> {
        self.trace_with_blockers(rx, self.map.blockers())
    }

    pub fn trace_with_blockers(&self, rx: &Node, blockers: &[crate::geometry::BlockerScreen]) -> Result<Vec<PathRecord>, RtError> {
        let paths = self.unblocked_paths(rx, self.cfg.center_frequency)?;
        let mut paths = apply_blockage(paths, blockers);
        prune_weak_paths(&mut paths, self.cfg.power_floor);
        Ok(paths)
    }
}

/// Traces all paths between `tx` and `rx` at the configured center
/// frequency, applying the map's blockers and the power floor. An empty
/// result signals outage.
pub fn trace_paths(map: &DigitalMap, tx: &Node, rx: &Node, cfg: &TraceConfig) -> Result<Vec<PathRecord>, RtError> {
    Tracer::new(map, tx.clone(), cfg)?.trace(rx)
}

/// Traces the geometry once and evaluates material coefficients in every
/// frequency bin. Returns `(bin frequency, paths)` pairs.
pub fn trace_wideband(
    map: &DigitalMap,
    tx: &Node,
    rx: &Node,
    cfg: &TraceConfig,
) -> Result<Vec<(f64, Vec<PathRecord>)>, RtError> {
    let tracer = Tracer::new(map, tx.clone(), cfg)?;
    let geoms = tracer.geometric_paths(rx)?;
    Ok(cfg
        .bin_frequencies()
        .into_iter()
        .map(|f| {
            let mut paths: Vec<PathRecord> = geoms.iter().filter_map(|g| evaluate(map, g, tx, rx, f)).collect();
            sort_paths(&mut paths);
            let mut paths = apply_blockage(paths, map.blockers());
            prune_weak_paths(&mut paths, cfg.power_floor);
            (f, paths)
        })
        .collect())
}
