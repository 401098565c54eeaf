//! Scenario configuration and the end-to-end pipelines: node drops,
//! trajectories, blocker drops, snapshot runs and mode-dependent artifacts.

mod experiment;
mod run;

use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use experiment::{blocker_sweep, BlockerSweep, SweepLevel, SweepOptions};
pub use run::{manifest_path, run_pipeline, run_snapshots, trace_snapshot, Manifest, ManifestFile, SnapshotPlan};

use crate::coeffgen::{ArrayConfig, CoeffError};
use crate::geometry::{BlockerScreen, DigitalMap, MapError, Penetration};
use crate::gscm::GscmError;
use crate::hybrid::{CalibrationFactors, HybridError, HybridWeights, ParameterSelector};
use crate::params::{ClusterGaps, GridSpec, ParamsError};
use crate::rt::{RtError, TraceConfig};
use crate::seed::{rng_for, stream};
use crate::snapshotdb::DbError;

#[derive(Debug, Error)]
pub enum ScenarioError {
    /// Invalid configuration; the string names the offending field.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Rt(#[from] RtError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Gscm(#[from] GscmError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Coeff(#[from] CoeffError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing prerequisite: {0}")]
    Missing(String),
}

impl ScenarioError {
    /// Whether the error stems from the configuration rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ScenarioError::Config(_) | ScenarioError::Map(_) | ScenarioError::Missing(_)
        )
    }
}

fn invalid<T>(field: &str, msg: impl std::fmt::Display) -> Result<T, ScenarioError> {
    Err(ScenarioError::Config(format!("{field}: {msg}")))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Deterministic,
    Stochastic,
    Hybrid,
    DbPick,
}

/// Horizontal drop region `[x_min, y_min, x_max, y_max]`.
pub type Area = [f64; 4];

pub const BS_HEIGHT: f64 = 3.0;
pub const UE_HEIGHT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Placement {
    Fixed {
        positions: Vec<Point3<f64>>,
    },
    /// Uniform over the free space of `area` (the map's bounding box by
    /// default) at a fixed height. Points closer than `clearance` to a wall
    /// are rejected.
    Random {
        count: usize,
        #[serde(default)]
        height: Option<f64>,
        #[serde(default)]
        area: Option<Area>,
        #[serde(default = "default_clearance")]
        clearance: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

fn default_clearance() -> f64 {
    0.2
}

impl Placement {
    pub fn count(&self) -> usize {
        match self {
            Placement::Fixed { positions } => positions.len(),
            Placement::Random { count, .. } => *count,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mobility {
    #[default]
    Static,
    Velocity {
        velocity: Vector3<f64>,
    },
    /// Constant-speed travel from the drop position through `waypoints`;
    /// the node stops at the last waypoint.
    Waypoints {
        waypoints: Vec<Point3<f64>>,
        speed: f64,
    },
}

impl Mobility {
    /// Position and velocity `t` seconds after leaving `start`.
    pub fn state(&self, start: &Point3<f64>, t: f64) -> (Point3<f64>, Vector3<f64>) {
        match self {
            Mobility::Static => (*start, Vector3::zeros()),
            Mobility::Velocity { velocity } => (start + velocity * t, *velocity),
            Mobility::Waypoints { waypoints, speed } => {
                let mut remaining = speed * t;
                let mut from = *start;
                for w in waypoints {
                    let leg = w - from;
                    let len = leg.norm();
                    if len > 0.0 && remaining < len {
                        let dir = leg / len;
                        return (from + dir * remaining, dir * *speed);
                    }
                    remaining -= len;
                    from = *w;
                }
                (from, Vector3::zeros())
            }
        }
    }

    fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        match self {
            Mobility::Static => Ok(()),
            Mobility::Velocity { velocity } if velocity.iter().all(|v| v.is_finite()) => Ok(()),
            Mobility::Velocity { .. } => invalid(field, "velocity must be finite"),
            Mobility::Waypoints { waypoints, speed } => {
                if !(*speed >= 0.0 && speed.is_finite()) {
                    return invalid(&format!("{field}.speed"), "must be finite and >= 0");
                }
                if waypoints.iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
                    return invalid(&format!("{field}.waypoints"), "must be finite");
                }
                Ok(())
            }
        }
    }
}

/// Random blocker screens dropped per (setup, receiver) pair. Screens stand
/// on the ground plane `z = 0` with uniform width and height, a random
/// orientation and an optional random heading at `speed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockerDrop {
    pub count: usize,
    #[serde(default = "default_width")]
    pub width: [f64; 2],
    #[serde(default = "default_height")]
    pub height: [f64; 2],
    #[serde(default = "default_loss")]
    pub loss_db: Penetration,
    /// Drop within this horizontal radius of the receiver instead of over
    /// the whole area.
    #[serde(default)]
    pub near_rx: Option<f64>,
    #[serde(default)]
    pub area: Option<Area>,
    #[serde(default)]
    pub speed: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_width() -> [f64; 2] {
    [0.3, 0.6]
}

fn default_height() -> [f64; 2] {
    [1.5, 1.9]
}

fn default_loss() -> Penetration {
    Penetration::Loss(20.0)
}

impl BlockerDrop {
    /// Screen `j` of the drop for setup `k` and receiver `i`. Screens are
    /// drawn from independent streams, so a drop of `m` screens is a prefix
    /// of a drop of `m' > m` screens.
    pub fn screen(&self, seed: u64, area: &Area, rx: &Point3<f64>, k: u64, i: u64, j: u64) -> BlockerScreen {
        let mut rng = rng_for(self.seed.unwrap_or(seed), &[stream::BLOCKER_DROP, k, i, j]);
        let center = match self.near_rx {
            Some(r) => {
                let rho = r * rng.random::<f64>().sqrt();
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                Point3::new(rx.x + rho * phi.cos(), rx.y + rho * phi.sin(), 0.0)
            }
            None => Point3::new(
                rng.random_range(area[0]..=area[2]),
                rng.random_range(area[1]..=area[3]),
                0.0,
            ),
        };
        let width = rng.random_range(self.width[0]..=self.width[1]);
        let height = rng.random_range(self.height[0]..=self.height[1]);
        let azimuth = rng.random::<f64>() * std::f64::consts::PI;
        let heading = rng.random::<f64>() * std::f64::consts::TAU;
        BlockerScreen {
            center: Point3::new(center.x, center.y, height / 2.0),
            width,
            height,
            azimuth,
            penetration: self.loss_db,
            velocity: Vector3::new(heading.cos(), heading.sin(), 0.0) * self.speed,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        for (name, r) in [("blockers.width", self.width), ("blockers.height", self.height)] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return invalid(name, "need 0 < min <= max");
            }
        }
        if let Some(r) = self.near_rx {
            if !(r >= 0.0 && r.is_finite()) {
                return invalid("blockers.near_rx", "radius must be finite and >= 0");
            }
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return invalid("blockers.speed", "must be finite and >= 0");
        }
        if let Penetration::Loss(db) = self.loss_db {
            if !(db >= 0.0 && db.is_finite()) {
                return invalid("blockers.loss_db", "must be finite and >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    pub grid: GridSpec,
    #[serde(default = "default_threshold")]
    pub threshold_dbm: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
}

fn default_threshold() -> f64 {
    -90.0
}

fn default_tx_power() -> f64 {
    20.0
}

/// Fields recorded in the manifest without influence on propagation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resources: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_type: Option<String>,
}

fn default_w() -> HybridWeights {
    HybridWeights { w_det: 1.0 }
}

fn default_snapshots() -> usize {
    1
}

fn default_time_step() -> f64 {
    0.1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Map document. Omitted means free space.
    #[serde(default)]
    pub map: Option<PathBuf>,
    pub tx: Placement,
    pub rx: Placement,
    #[serde(default)]
    pub tx_mobility: Mobility,
    #[serde(default)]
    pub rx_mobility: Mobility,
    #[serde(default)]
    pub blockers: Option<BlockerDrop>,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub gaps: ClusterGaps,
    #[serde(default)]
    pub mode: Mode,
    /// Time samples per (transmitter, receiver) drop.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    /// Seconds between time samples.
    #[serde(default = "default_time_step")]
    pub time_step: f64,
    #[serde(default = "default_w")]
    pub hybrid: HybridWeights,
    #[serde(default)]
    pub selector: ParameterSelector,
    #[serde(default)]
    pub calibration: CalibrationFactors,
    /// Stochastic parameter set for the stochastic and hybrid modes.
    #[serde(default)]
    pub stochastic_params: Option<PathBuf>,
    /// Snapshot database for db-pick mode, or to fit parameters from when no
    /// parameter file is given.
    #[serde(default)]
    pub database: Option<PathBuf>,
    #[serde(default)]
    pub coverage: Option<CoverageSpec>,
    #[serde(default = "default_array")]
    pub tx_array: ArrayConfig,
    #[serde(default = "default_array")]
    pub rx_array: ArrayConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub metadata: Metadata,
}

fn default_array() -> ArrayConfig {
    ArrayConfig::single(Default::default())
}

impl ScenarioConfig {
    /// Minimal deterministic configuration with fixed nodes.
    pub fn fixed(tx: Vec<Point3<f64>>, rx: Vec<Point3<f64>>, seed: u64) -> Self {
        Self {
            map: None,
            tx: Placement::Fixed { positions: tx },
            rx: Placement::Fixed { positions: rx },
            tx_mobility: Mobility::Static,
            rx_mobility: Mobility::Static,
            blockers: None,
            trace: TraceConfig::default(),
            gaps: ClusterGaps::default(),
            mode: Mode::Deterministic,
            snapshots: 1,
            time_step: default_time_step(),
            hybrid: default_w(),
            selector: ParameterSelector::default(),
            calibration: CalibrationFactors::default(),
            stochastic_params: None,
            database: None,
            coverage: None,
            tx_array: default_array(),
            rx_array: default_array(),
            output_dir: default_output(),
            seed,
            metadata: Metadata::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    /// Reads a configuration file. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.map, &mut cfg.stochastic_params, &mut cfg.database].into_iter().flatten() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.trace.validate().map_err(|e| ScenarioError::Config(format!("trace: {e}")))?;
        if self.tx.count() == 0 {
            return invalid("tx", "at least one transmitter is required");
        }
        if self.rx.count() == 0 {
            return invalid("rx", "at least one receiver is required");
        }
        for (name, p) in [("tx", &self.tx), ("rx", &self.rx)] {
            match p {
                Placement::Fixed { positions } => {
                    if positions.iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
                        return invalid(&format!("{name}.positions"), "must be finite");
                    }
                }
                Placement::Random { clearance, area, height, .. } => {
                    if !(*clearance >= 0.0 && clearance.is_finite()) {
                        return invalid(&format!("{name}.clearance"), "must be finite and >= 0");
                    }
                    if let Some(a) = area {
                        if !(a[0] < a[2] && a[1] < a[3]) || a.iter().any(|v| !v.is_finite()) {
                            return invalid(&format!("{name}.area"), "need x_min < x_max and y_min < y_max");
                        }
                    }
                    if height.is_some_and(|h| !h.is_finite()) {
                        return invalid(&format!("{name}.height"), "must be finite");
                    }
                }
            }
        }
        self.tx_mobility.validate("tx_mobility")?;
        self.rx_mobility.validate("rx_mobility")?;
        if let Some(b) = &self.blockers {
            b.validate()?;
        }
        if self.snapshots == 0 {
            return invalid("snapshots", "must be >= 1");
        }
        if !(self.time_step >= 0.0 && self.time_step.is_finite()) {
            return invalid("time_step", "must be finite and >= 0");
        }
        if !(self.gaps.delay_gap >= 0.0 && self.gaps.angle_gap >= 0.0) {
            return invalid("gaps", "delay_gap and angle_gap must be >= 0");
        }
        self.hybrid.validate().map_err(|e| ScenarioError::Config(format!("hybrid: {e}")))?;
        self.calibration.validate().map_err(|e| ScenarioError::Config(format!("calibration: {e}")))?;
        self.tx_array.validate().map_err(|e| ScenarioError::Config(format!("tx_array: {e}")))?;
        self.rx_array.validate().map_err(|e| ScenarioError::Config(format!("rx_array: {e}")))?;
        for (name, p) in [
            ("map", &self.map),
            ("stochastic_params", &self.stochastic_params),
            ("database", &self.database),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return invalid(name, format!("{} does not exist", p.display()));
                }
            }
        }
        match self.mode {
            Mode::Stochastic | Mode::Hybrid if self.stochastic_params.is_none() && self.database.is_none() => {
                invalid("stochastic_params", "stochastic and hybrid modes need a parameter file or a database to fit")
            }
            Mode::DbPick if self.database.is_none() => invalid("database", "db-pick mode needs a database"),
            _ => Ok(()),
        }
    }

    pub fn load_map(&self) -> Result<DigitalMap, ScenarioError> {
        Ok(match &self.map {
            Some(p) => crate::geometry::load_map(p)?,
            None => DigitalMap::empty(),
        })
    }
}

/// Drop region: the explicit area, else the map's horizontal extent.
fn drop_area(map: &DigitalMap, area: Option<Area>, field: &str) -> Result<Area, ScenarioError> {
    if let Some(a) = area {
        return Ok(a);
    }
    let bb = map.bounding_box();
    if !bb.is_bounded() {
        return invalid(field, "map is unbounded; give an explicit area");
    }
    Ok([bb.min.x, bb.min.y, bb.max.x, bb.max.y])
}

/// Whether `p` keeps at least `clearance` from every wall polygon.
fn in_free_space(map: &DigitalMap, p: &Point3<f64>, clearance: f64) -> bool {
    map.walls().iter().all(|w| {
        let d = w.signed_distance(p);
        d.abs() >= clearance || !w.contains(&(p - w.normal() * d))
    })
}

const MAX_DROP_ATTEMPTS: usize = 10_000;

/// Resolves a placement to concrete positions. Random drop `i` uses its own
/// stream, so it does not depend on the drop count.
pub fn place(
    map: &DigitalMap,
    placement: &Placement,
    default_height: f64,
    seed: u64,
    tag: u64,
    field: &str,
) -> Result<Vec<Point3<f64>>, ScenarioError> {
    match placement {
        Placement::Fixed { positions } => Ok(positions.clone()),
        Placement::Random {
            count,
            height,
            area,
            clearance,
            seed: own,
        } => {
            let area = drop_area(map, *area, field)?;
            let z = height.unwrap_or(default_height);
            (0..*count as u64)
                .map(|i| {
                    let mut rng = rng_for(own.unwrap_or(seed), &[tag, i]);
                    for _ in 0..MAX_DROP_ATTEMPTS {
                        let p = Point3::new(
                            rng.random_range(area[0]..=area[2]),
                            rng.random_range(area[1]..=area[3]),
                            z,
                        );
                        if in_free_space(map, &p, *clearance) {
                            return Ok(p);
                        }
                    }
                    invalid(field, format!("no free position found for drop {i}"))
                })
                .collect()
        }
    }
}
