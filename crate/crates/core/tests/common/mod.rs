//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use mapchan::geometry::{DigitalMap, MapDocument, Material, Wall, WallSpec, WallTag, HIT_EPSILON};
use mapchan::gscm::{
    ConsistencyGrid, CorrelationDistances, Interpolation, LogNormal, LosProbability, LspField, NormalDb,
    PathLossModel, StochasticParamSet,
};
use mapchan::params::{angle_spread, rms_delay_spread, AngleKind, ClusterGaps};
use mapchan::scenario::{Mobility, ScenarioConfig};
use mapchan::snapshotdb::{map_digest, DbConfig, NodeState, Snapshot, SnapshotDb, SnapshotKey};
use mapchan::rt::{slab_response, trace_paths, Node, PathRecord, TraceConfig};
use mapchan::units::SPEED_OF_LIGHT;
use nalgebra::{Matrix3, Point3, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn materials() -> Vec<Material> {
    vec![
        Material::new("concrete", 5.31, 0.48, 0.1),
        Material::new("glass", 6.27, 0.12, 0.01),
        Material::new("plasterboard", 2.73, 0.09, 0.0125),
    ]
}

/// Axis-free random floor plan: up to `max_walls` vertical rectangles of
/// random orientation inside a 20 m square, optionally with a floor and a
/// ceiling.
pub fn random_map(rng: &mut ChaCha8Rng, max_walls: usize) -> DigitalMap {
    let names = ["concrete", "glass", "plasterboard"];
    let mut walls = Vec::new();
    let slabs = rng.random_range(0..=2usize).min(max_walls.saturating_sub(1));
    if slabs >= 1 {
        walls.push(horizontal(0.0, names[0], WallTag::Floor));
    }
    if slabs >= 2 {
        walls.push(horizontal(3.0, names[2], WallTag::Ceiling));
    }
    let n = rng.random_range(1..=max_walls - walls.len());
    for _ in 0..n {
        let a = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let angle = rng.random_range(0.0..PI);
        let len = rng.random_range(2.0..12.0);
        let b = (a.0 + len * angle.cos(), a.1 + len * angle.sin());
        let h = rng.random_range(2.0..4.0);
        walls.push(WallSpec {
            vertices: vec![
                Point3::new(a.0, a.1, 0.0),
                Point3::new(b.0, b.1, 0.0),
                Point3::new(b.0, b.1, h),
                Point3::new(a.0, a.1, h),
            ],
            material: names[rng.random_range(0..names.len())].into(),
            tag: WallTag::Internal,
        });
    }
    DigitalMap::from_document(MapDocument {
        site_name: "random".into(),
        materials: materials(),
        walls,
        blockers: vec![],
        bounding_box: None,
    })
    .expect("random map is valid")
}

fn horizontal(z: f64, material: &str, tag: WallTag) -> WallSpec {
    WallSpec {
        vertices: vec![
            Point3::new(-5.0, -5.0, z),
            Point3::new(25.0, -5.0, z),
            Point3::new(25.0, 25.0, z),
            Point3::new(-5.0, 25.0, z),
        ],
        material: material.into(),
        tag,
    }
}

/// Random point at least 5 cm from every wall plane.
pub fn random_point(rng: &mut ChaCha8Rng, map: &DigitalMap) -> Point3<f64> {
    loop {
        let p = Point3::new(
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..20.0),
            rng.random_range(0.3..2.7),
        );
        if map.walls().iter().all(|w| w.signed_distance(&p).abs() > 0.05) {
            return p;
        }
    }
}

/// Every map wall moved by `f`.
pub fn transformed(map: &DigitalMap, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> DigitalMap {
    let mut doc = map.to_document();
    for w in &mut doc.walls {
        for v in &mut w.vertices {
            *v = f(v);
        }
    }
    DigitalMap::from_document(doc).expect("rigid motion keeps walls valid")
}

pub fn exhaustive_config(max_reflections: usize, max_transmissions: usize) -> TraceConfig {
    TraceConfig {
        max_reflections,
        max_transmissions,
        power_floor: 1e9,
        ..TraceConfig::default()
    }
}

/// Reflection walls of a traced path, in travel order.
pub fn reflection_walls(p: &PathRecord) -> Vec<usize> {
    p.interactions
        .iter()
        .filter(|i| i.kind == mapchan::rt::InteractionKind::Reflection)
        .map(|i| i.wall as usize)
        .collect()
}

#[derive(Clone, Debug)]
pub struct OraclePath {
    pub reflections: Vec<usize>,
    pub delay: f64,
    pub amplitude: f64,
}

/// Crossing parameter of the open segment `a → b` with a wall polygon.
fn crossing(wall: &Wall, a: &Point3<f64>, b: &Point3<f64>) -> Option<(f64, Point3<f64>)> {
    let n = wall.normal();
    let da = n.dot(&a.coords) - wall.plane_offset();
    let db = n.dot(&b.coords) - wall.plane_offset();
    if da == db {
        return None;
    }
    let t = da / (da - db);
    if !(t > 0.0 && t < 1.0) {
        return None;
    }
    let p = a + (b - a) * t;
    wall.contains(&p).then_some((t, p))
}

fn outer(a: &Vector3<f64>, b: &Vector3<f64>, c: Complex64) -> Matrix3<Complex64> {
    Matrix3::from_fn(|i, j| c * a[i] * b[j])
}

/// 3-D field transfer of one wall interaction.
fn field_transfer(map: &DigitalMap, w: usize, k_in: &Vector3<f64>, reflect: bool) -> Matrix3<Complex64> {
    let n = map.walls()[w].normal();
    let theta = k_in.dot(&n).abs().min(1.0).acos();
    let slab = slab_response(map.material_of(w), theta, 28e9).expect("oblique incidence");
    let s = k_in.cross(&n).normalize();
    let p_in = s.cross(k_in);
    let (coef, p_out) = if reflect {
        (slab.reflection, p_in - n * (2.0 * p_in.dot(&n)))
    } else {
        (slab.transmission, p_in)
    };
    outer(&s, &s, coef.perpendicular) + outer(&p_out, &p_in, coef.parallel)
}

/// Exhaustive image-method oracle: every ordered wall sequence up to
/// `max_order` reflections is mirrored, unfolded and checked against every
/// wall polygon. Amplitudes follow the 3-D field through each interaction
/// at 28 GHz.
pub fn mirror_oracle(
    map: &DigitalMap,
    tx: &Point3<f64>,
    rx: &Point3<f64>,
    max_order: usize,
    max_transmissions: usize,
) -> Vec<OraclePath> {
    let walls = map.walls();
    let mut sequences: Vec<Vec<usize>> = vec![vec![]];
    let mut frontier: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_order {
        let mut next = Vec::new();
        for s in &frontier {
            for w in 0..walls.len() {
                if s.last() != Some(&w) {
                    let mut t = s.clone();
                    t.push(w);
                    next.push(t);
                }
            }
        }
        sequences.extend(next.iter().cloned());
        frontier = next;
    }

    let mut out = Vec::new();
    'seq: for seq in sequences {
        let mut images = vec![*tx];
        for &w in &seq {
            let last = *images.last().unwrap();
            if walls[w].signed_distance(&last).abs() <= HIT_EPSILON {
                continue 'seq;
            }
            images.push(walls[w].mirror(&last));
        }
        let mut points = vec![*rx];
        let mut aim = *rx;
        for (i, &w) in seq.iter().enumerate().rev() {
            let Some((_, hit)) = crossing(&walls[w], &images[i + 1], &aim) else {
                continue 'seq;
            };
            points.push(hit);
            aim = hit;
        }
        points.push(*tx);
        points.reverse();
        if points.windows(2).any(|p| (p[1] - p[0]).norm() <= HIT_EPSILON) {
            continue;
        }

        let mut crossed: Vec<Vec<usize>> = Vec::new();
        for (seg, pair) in points.windows(2).enumerate() {
            let len = (pair[1] - pair[0]).norm();
            let mut hits: Vec<(f64, usize)> = (0..walls.len())
                .filter(|w| !(seg > 0 && seq[seg - 1] == *w) && seq.get(seg) != Some(w))
                .filter_map(|w| {
                    let (t, _) = crossing(&walls[w], &pair[0], &pair[1])?;
                    (t * len > HIT_EPSILON && (1.0 - t) * len > HIT_EPSILON).then_some((t, w))
                })
                .collect();
            hits.sort_by(|a, b| a.0.total_cmp(&b.0));
            crossed.push(hits.into_iter().map(|(_, w)| w).collect());
        }
        if crossed.iter().map(Vec::len).sum::<usize>() > max_transmissions {
            continue;
        }

        let dirs: Vec<Vector3<f64>> = points.windows(2).map(|p| (p[1] - p[0]).normalize()).collect();
        let mut field = Matrix3::<Complex64>::identity();
        for (seg, list) in crossed.iter().enumerate() {
            for &w in list {
                field = field_transfer(map, w, &dirs[seg], false) * field;
            }
            if let Some(&w) = seq.get(seg) {
                field = field_transfer(map, w, &dirs[seg], true) * field;
            }
        }
        // Two orthonormal transverse input polarizations.
        let k0 = dirs[0];
        let e1 = k0.cross(&Vector3::z()).try_normalize(1e-12).unwrap_or_else(Vector3::x);
        let e2 = k0.cross(&e1);
        let mut norm2 = 0.0;
        for e in [e1, e2] {
            let ec = e.map(|x| Complex64::new(x, 0.0));
            norm2 += (field * ec).iter().map(|c| c.norm_sqr()).sum::<f64>();
        }
        let length: f64 = points.windows(2).map(|p| (p[1] - p[0]).norm()).sum();
        let friis = SPEED_OF_LIGHT / 28e9 / (4.0 * PI * length);
        out.push(OraclePath {
            reflections: seq,
            delay: length / SPEED_OF_LIGHT,
            amplitude: friis * (norm2 / 2.0).sqrt(),
        });
    }
    out
}

/// Reflection and transmission of a single slab in air from the
/// characteristic (transfer) matrix of a thin film, for (perpendicular,
/// parallel) polarization. The transmitted field is referenced to a wave
/// that crossed the same thickness of air.
pub fn slab_transfer_matrix(eps: Complex64, thickness: f64, theta: f64, frequency: f64) -> [(Complex64, Complex64); 2] {
    let j = Complex64::i();
    let k0 = 2.0 * PI * frequency / SPEED_OF_LIGHT;
    let n1 = eps.sqrt();
    let sin0 = theta.sin();
    let cos0 = Complex64::new(theta.cos(), 0.0);
    let cos1 = (Complex64::new(1.0, 0.0) - sin0 * sin0 / eps).sqrt();
    // The characteristic matrix is even in the branch of n1·cos1.
    let delta = k0 * thickness * n1 * cos1;
    let mut out = [(Complex64::default(), Complex64::default()); 2];
    for (i, te) in [true, false].into_iter().enumerate() {
        let (eta0, eta1) = if te { (cos0, n1 * cos1) } else { (1.0 / cos0, n1 / cos1) };
        let m11 = delta.cos();
        let m12 = j * delta.sin() / eta1;
        let m21 = j * eta1 * delta.sin();
        let m22 = delta.cos();
        let b = m11 + m12 * eta0;
        let c = m21 + m22 * eta0;
        let r = (eta0 * b - c) / (eta0 * b + c);
        let t = 2.0 * eta0 / (eta0 * b + c);
        out[i] = (r, t * (j * k0 * thickness * theta.cos()).exp());
    }
    out
}

/// `J0(x) = (1/π) ∫₀^π cos(x sin t) dt` by composite Simpson.
pub fn bessel_j0(x: f64) -> f64 {
    let n = 20_000;
    let h = PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut s = f(0.0) + f(PI);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0 / PI
}

/// Connected components of the ray linkage graph by repeated flood fill.
pub fn cluster_components(rays: &[PathRecord], gaps: &ClusterGaps) -> Vec<Vec<usize>> {
    let n = rays.len();
    let linked = |a: &PathRecord, b: &PathRecord| {
        let da = a.arrival_direction();
        let db = b.arrival_direction();
        let angle = da.cross(&db).norm().atan2(da.dot(&db));
        (a.delay - b.delay).abs() <= gaps.delay_gap && angle <= gaps.angle_gap
    };
    let mut label = vec![usize::MAX; n];
    let mut groups = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut members = vec![start];
        label[start] = id;
        let mut i = 0;
        while i < members.len() {
            let u = members[i];
            for v in 0..n {
                if label[v] == usize::MAX && linked(&rays[u], &rays[v]) {
                    label[v] = id;
                    members.push(v);
                }
            }
            i += 1;
        }
        members.sort_unstable();
        groups.push(members);
    }
    groups
}

/// Synthetic ray with the given delay, power and arrival azimuth.
pub fn ray(delay: f64, power: f64, aoa_az: f64, aoa_zen: f64) -> PathRecord {
    PathRecord {
        delay,
        amplitude: power.sqrt(),
        phase: 0.0,
        aod_az: 0.0,
        aod_zen: PI / 2.0,
        aoa_az,
        aoa_zen,
        n_reflections: 0,
        n_transmissions: 0,
        interactions: vec![],
        pol_matrix: mapchan::rt::IDENTITY_POL,
        doppler: 0.0,
        blockage_db: 0.0,
        los: false,
        points: vec![],
    }
}

pub fn params() -> StochasticParamSet {
    let ln = |log_mean| LogNormal { log_mean, log_std: 0.2 };
    StochasticParamSet {
        ds: ln(-7.5),
        asd: ln(1.3),
        asa: ln(1.5),
        zsd: ln(0.9),
        zsa: ln(1.0),
        path_loss: PathLossModel {
            intercept_db: 61.4,
            exponent: 2.0,
            shadow_std_db: 3.0,
        },
        k_factor_db: NormalDb { mean: 7.0, std: 4.0 },
        delay_scaling: 3.0,
        cluster_shadow_std_db: 3.0,
        n_clusters_pmf: BTreeMap::from([(4, 0.25), (6, 0.5), (8, 0.25)]),
        rays_per_cluster_pmf: BTreeMap::from([(1, 0.5), (3, 0.5)]),
        xpr_db: NormalDb { mean: 11.0, std: 3.0 },
        correlation_distance: CorrelationDistances::uniform(10.0),
        los_probability: LosProbability::default(),
        ray_offset_scale: 0.2,
    }
}

/// Rotation about the vertical axis through the origin.
pub fn rotate_z(p: &Point3<f64>, angle: f64) -> Point3<f64> {
    let (s, c) = angle.sin_cos();
    Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
}

/// Traces `tx → rx` and compares against [`mirror_oracle`]: same reflection
/// sequences, delays within `1e-12` s, amplitudes within `1e-9` relative.
pub fn check_against_oracle(
    map: &DigitalMap,
    tx: &Point3<f64>,
    rx: &Point3<f64>,
    max_order: usize,
    max_transmissions: usize,
) -> Result<usize, String> {
    use mapchan::rt::{trace_paths, Node};
    let cfg = exhaustive_config(max_order, max_transmissions);
    let traced = trace_paths(map, &Node::at(*tx), &Node::at(*rx), &cfg).map_err(|e| e.to_string())?;
    let mut expected: BTreeMap<Vec<usize>, OraclePath> = BTreeMap::new();
    for p in mirror_oracle(map, tx, rx, max_order, max_transmissions) {
        expected.insert(p.reflections.clone(), p);
    }
    let mut got: BTreeMap<Vec<usize>, &PathRecord> = BTreeMap::new();
    for p in &traced {
        if got.insert(reflection_walls(p), p).is_some() {
            return Err(format!("duplicate path {:?}", reflection_walls(p)));
        }
    }
    let (a, b): (Vec<_>, Vec<_>) = (expected.keys().collect(), got.keys().collect());
    if a != b {
        return Err(format!("path sets differ: oracle {a:?}, tracer {b:?} (tx {tx}, rx {rx})"));
    }
    for (key, o) in &expected {
        let p = got[key];
        if (p.delay - o.delay).abs() > 1e-12 {
            return Err(format!("{key:?}: delay {} vs {}", p.delay, o.delay));
        }
        if (p.amplitude - o.amplitude).abs() > 1e-9 * o.amplitude {
            return Err(format!("{key:?}: amplitude {} vs {}", p.amplitude, o.amplitude));
        }
    }
    Ok(expected.len())
}

pub fn db_config() -> DbConfig {
    DbConfig {
        trace: TraceConfig::default(),
        gaps: ClusterGaps::default(),
    }
}

pub fn empty_digest() -> [u8; 32] {
    map_digest(&DigitalMap::empty(), &TraceConfig::default())
}

/// Snapshot whose two equal-power rays at delays 0 and 2·ds give an rms
/// delay spread of exactly `ds` and a path loss of `pl_db`.
pub fn two_ray_snapshot(k: u32, n: u64, tx: Point3<f64>, rx: Point3<f64>, ds: f64, pl_db: f64) -> Snapshot {
    let p = 0.5 * 10f64.powf(-pl_db / 10.0);
    let paths = vec![ray(0.0, p, 0.3, 1.4), ray(2.0 * ds, p, 1.1, 1.7)];
    let key = SnapshotKey {
        k,
        n,
        tx: NodeState::at(tx),
        rx: NodeState::at(rx),
        time: 0.0,
    };
    Snapshot::new(key, paths, &ClusterGaps::default(), empty_digest())
}

/// Exhaustive nearest-snapshot search by the endpoint-sum metric, ties to
/// the smallest `n`.
pub fn linear_pick(snaps: &[Snapshot], tx: &Point3<f64>, rx: &Point3<f64>, k: u32) -> Option<(u64, f64)> {
    snaps
        .iter()
        .filter(|s| s.key.k == k)
        .map(|s| (s.key.n, (tx - s.key.tx.position).norm() + (rx - s.key.rx.position).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// Database of `count` two-ray snapshots with log10 delay spread drawn from
/// N(ds_log_mean, ds_log_std) and a noiseless path loss of
/// `pl_intercept + 10·pl_exponent·log10(d)` over distances 2 to 60 m.
pub fn planted_database(
    path: &std::path::Path,
    count: u64,
    seed: u64,
    ds_log_mean: f64,
    ds_log_std: f64,
    pl_intercept: f64,
    pl_exponent: f64,
) -> SnapshotDb {
    let mut r = rng(seed);
    let mut db = SnapshotDb::create(path, empty_digest(), db_config()).expect("fresh database");
    let tx = Point3::new(0.0, 0.0, 3.0);
    for n in 0..count {
        let z: f64 = r.sample(rand_distr::StandardNormal);
        let ds = 10f64.powf(ds_log_mean + ds_log_std * z);
        let (d, phi) = (r.random_range(2.0..60.0), r.random_range(0.0..2.0 * PI));
        let rx = tx + Vector3::new(d * phi.cos(), d * phi.sin(), 0.0);
        let pl = pl_intercept + 10.0 * pl_exponent * d.log10();
        db.store(&two_ray_snapshot(0, n, tx, rx, ds, pl)).expect("store");
    }
    db
}

/// Deterministic scenario on the office fixture with random receivers,
/// moving receivers and blockers near them.
pub fn office_scenario(output_dir: &std::path::Path) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::load(fixture("office_5_blockers.json")).expect("fixture loads");
    cfg.rx_mobility = Mobility::Velocity {
        velocity: Vector3::new(0.4, -0.2, 0.0),
    };
    cfg.snapshots = 3;
    cfg.output_dir = output_dir.to_path_buf();
    cfg
}

/// Every file under `dir`, by name, with its bytes.
pub fn dir_contents(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .expect("directory exists")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("readable"))
        })
        .collect()
}

/// Random map of up to 12 walls with two free points in it.
pub fn scene(seed: u64) -> (DigitalMap, Point3<f64>, Point3<f64>) {
    let mut r = rng(seed);
    let map = random_map(&mut r, 12);
    let a = random_point(&mut r, &map);
    let b = random_point(&mut r, &map);
    (map, a, b)
}

/// Every path up to two reflections and two transmissions.
pub fn trace_all(map: &DigitalMap, a: &Point3<f64>, b: &Point3<f64>) -> Vec<PathRecord> {
    trace_paths(map, &Node::at(*a), &Node::at(*b), &exhaustive_config(2, 2)).expect("trace")
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-30)
}

fn same_angle(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(2.0 * PI);
    d < 1e-9 || 2.0 * PI - d < 1e-9
}

/// Tracing `b → a` gives the reversed paths of `a → b`.
pub fn check_reciprocity(map: &DigitalMap, a: &Point3<f64>, b: &Point3<f64>) -> Result<(), String> {
    let fwd = trace_all(map, a, b);
    let mut rev = trace_all(map, b, a);
    if fwd.len() != rev.len() {
        return Err(format!("{} paths forward, {} back", fwd.len(), rev.len()));
    }
    for p in &fwd {
        let mut key = reflection_walls(p);
        key.reverse();
        let i = rev
            .iter()
            .position(|q| reflection_walls(q) == key)
            .ok_or_else(|| format!("no reverse of {key:?}"))?;
        let q = rev.swap_remove(i);
        if !(close(p.delay, q.delay, 1e-12) && close(p.amplitude, q.amplitude, 1e-9)) {
            return Err(format!("{key:?}: delay {} vs {}, amplitude {} vs {}", p.delay, q.delay, p.amplitude, q.amplitude));
        }
        if !(same_angle(p.aod_az, q.aoa_az) && (p.aod_zen - q.aoa_zen).abs() < 1e-9) {
            return Err(format!("{key:?}: departure and arrival angles differ"));
        }
    }
    Ok(())
}

/// Rms delay spread is unchanged when map and nodes move by `shift`.
pub fn check_translation(map: &DigitalMap, a: &Point3<f64>, b: &Point3<f64>, shift: Vector3<f64>) -> Result<(), String> {
    let moved = transformed(map, |p| p + shift);
    let p0 = trace_all(map, a, b);
    let p1 = trace_all(&moved, &(a + shift), &(b + shift));
    if p0.len() != p1.len() {
        return Err(format!("{} paths before, {} after", p0.len(), p1.len()));
    }
    match (rms_delay_spread(&p0), rms_delay_spread(&p1)) {
        (Ok(d0), Ok(d1)) if (d0 - d1).abs() <= 1e-9 * d0.max(1e-12) => Ok(()),
        (Err(_), Err(_)) => Ok(()),
        (d0, d1) => Err(format!("delay spread {d0:?} vs {d1:?}")),
    }
}

/// Angle spreads are unchanged when map and nodes turn about the z axis.
/// `sqrt(-2 ln R)` near R = 1 amplifies rounding to about 1e-8 rad.
pub fn check_rotation(map: &DigitalMap, a: &Point3<f64>, b: &Point3<f64>, angle: f64) -> Result<(), String> {
    let moved = transformed(map, |p| rotate_z(p, angle));
    let p0 = trace_all(map, a, b);
    let p1 = trace_all(&moved, &rotate_z(a, angle), &rotate_z(b, angle));
    if p0.len() != p1.len() {
        return Err(format!("{} paths before, {} after", p0.len(), p1.len()));
    }
    for kind in [AngleKind::AodAz, AngleKind::AoaAz, AngleKind::AodZen, AngleKind::AoaZen] {
        match (angle_spread(&p0, kind), angle_spread(&p1, kind)) {
            (Ok(s0), Ok(s1)) if (s0 - s1).abs() <= 1e-7 => {}
            (Err(_), Err(_)) => {}
            (s0, s1) => return Err(format!("{kind:?}: {s0:?} vs {s1:?}")),
        }
    }
    Ok(())
}

/// Mean of `z(0)·z(d)` for the delay-spread field of the consistency grid
/// over `seeds` grids, at each probe distance along x.
pub fn consistency_correlation(seeds: u64, probes: &[f64], cell: f64) -> Vec<f64> {
    let cells = CorrelationDistances::uniform(cell);
    let mut corr = vec![0.0; probes.len()];
    for seed in 0..seeds {
        let g = ConsistencyGrid::new(seed, cells, Interpolation::NearestCell);
        let z0 = g.value(LspField::Ds, &Point3::origin());
        for (c, d) in corr.iter_mut().zip(probes) {
            *c += z0 * g.value(LspField::Ds, &Point3::new(*d, 0.0, 0.0)) / seeds as f64;
        }
    }
    corr
}
