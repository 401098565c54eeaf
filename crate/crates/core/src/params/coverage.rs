use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ParamsError;
use crate::geometry::DigitalMap;
use crate::rt::{Node, RtError, TraceConfig, Tracer};

/// Regular receiver lattice at a fixed height.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub y_min: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub height: f64,
}

impl GridSpec {
    pub fn points(&self) -> impl Iterator<Item = Point3<f64>> + '_ {
        (0..self.ny).flat_map(move |j| {
            (0..self.nx).map(move |i| {
                Point3::new(self.x_min + i as f64 * self.dx, self.y_min + j as f64 * self.dy, self.height)
            })
        })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self, map: &DigitalMap) -> Result<(), ParamsError> {
        if self.is_empty() {
            return Err(ParamsError::Grid("grid has no points".into()));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(ParamsError::Grid("spacing must be positive".into()));
        }
        let bbox = map.bounding_box();
        if let Some(p) = self.points().find(|p| !bbox.contains(p)) {
            return Err(ParamsError::Grid(format!(
                "point ({:.3}, {:.3}, {:.3}) lies outside the map bounding box",
                p.x, p.y, p.z
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub x: f64,
    pub y: f64,
    /// `-inf` in outage.
    #[serde(with = "super::float_ext")]
    pub rx_power_dbm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub grid: GridSpec,
    pub threshold_dbm: f64,
    pub points: Vec<CoveragePoint>,
    /// Fraction of points at or above the threshold.
    pub eta: f64,
}

impl CoverageMap {
    pub fn eta_at(&self, threshold_dbm: f64) -> f64 {
        let covered = self.points.iter().filter(|p| p.rx_power_dbm >= threshold_dbm).count();
        covered as f64 / self.points.len() as f64
    }
}

/// Received power over a grid of receivers around one transmitter, and the
/// covered fraction η. A grid point coinciding with the transmitter receives
/// the full transmit power.
pub fn coverage_map(
    map: &DigitalMap,
    tx: &Node,
    grid: &GridSpec,
    threshold_dbm: f64,
    tx_power_dbm: f64,
    cfg: &TraceConfig,
) -> Result<CoverageMap, ParamsError> {
    grid.validate(map)?;
    let tracer = Tracer::new(map, tx.clone(), cfg)?;
    let pts: Vec<Point3<f64>> = grid.points().collect();
    let powers: Vec<Result<f64, RtError>> = pts
        .par_iter()
        .map(|p| match tracer.trace(&Node::at(*p)) {
            Ok(paths) => {
                let total: f64 = paths.iter().map(|p| p.power()).sum();
                Ok(if total > 0.0 {
                    tx_power_dbm + 10.0 * total.log10()
                } else {
                    f64::NEG_INFINITY
                })
            }
            Err(RtError::CoincidentNodes) => Ok(tx_power_dbm),
            Err(e) => Err(e),
        })
        .collect();
    let mut points = Vec::with_capacity(pts.len());
    for (p, power) in pts.iter().zip(powers) {
        points.push(CoveragePoint {
            x: p.x,
            y: p.y,
            rx_power_dbm: power?,
        });
    }
    let mut out = CoverageMap {
        grid: grid.clone(),
        threshold_dbm,
        points,
        eta: 0.0,
    };
    out.eta = out.eta_at(threshold_dbm);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BlockerScreen, Penetration};
    use crate::rt::free_space_path_loss_db;
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn grid() -> GridSpec {
        GridSpec {
            x_min: -10.0,
            y_min: -10.0,
            dx: 0.5,
            dy: 0.5,
            nx: 41,
            ny: 41,
            height: 1.0,
        }
    }

    #[test]
    fn infinite_threshold_covers_everything() {
        let tx = Node::at(Point3::new(0.05, 0.05, 3.0));
        let cov = coverage_map(&DigitalMap::empty(), &tx, &grid(), f64::NEG_INFINITY, 20.0, &TraceConfig::default()).unwrap();
        assert_eq!(cov.eta, 1.0);
        assert_eq!(cov.points.len(), 41 * 41);
    }

    #[test]
    fn free_space_disc_fraction() {
        let tx = Node::at(Point3::new(0.0, 0.0, 1.0));
        let g = grid();
        let mut d: Vec<f64> = g.points().map(|p| (p - tx.position).norm()).filter(|d| *d > 0.0).collect();
        d.sort_by(f64::total_cmp);
        let r = d[d.len() / 2];
        let threshold = 0.0 - free_space_path_loss_db(r, 28e9).unwrap();
        let cov = coverage_map(&DigitalMap::empty(), &tx, &g, threshold, 0.0, &TraceConfig::default()).unwrap();
        let area = (g.nx as f64 * g.dx) * (g.ny as f64 * g.dy);
        let analytic = PI * r * r / area;
        // One ring of cells along the circle circumference.
        let resolution = 2.0 * PI * r * g.dx / area;
        assert!((cov.eta - analytic).abs() <= resolution, "eta {} vs {}", cov.eta, analytic);
    }

    #[test]
    fn opaque_ring_shrinks_coverage_and_eta_monotone() {
        let tx = Node::at(Point3::new(0.0, 0.0, 1.0));
        let cfg = TraceConfig {
            max_reflections: 0,
            ..TraceConfig::default()
        };
        let open = coverage_map(&DigitalMap::empty(), &tx, &grid(), -90.0, 0.0, &cfg).unwrap();
        let ring: Vec<BlockerScreen> = (0..6)
            .map(|i| {
                let az = i as f64 * PI / 3.0;
                BlockerScreen {
                    center: Point3::new(2.0 * az.cos(), 2.0 * az.sin(), 1.0),
                    width: 1.0,
                    height: 2.0,
                    azimuth: az,
                    penetration: Penetration::Opaque,
                    velocity: Vector3::zeros(),
                }
            })
            .collect();
        let blocked_map = DigitalMap::empty().with_blockers(ring).unwrap();
        let blocked = coverage_map(&blocked_map, &tx, &grid(), -90.0, 0.0, &cfg).unwrap();
        assert!(blocked.eta < open.eta);
        let mut prev = 1.0;
        for t in [-120.0, -100.0, -80.0, -70.0, -60.0] {
            let e = blocked.eta_at(t);
            assert!(e <= prev);
            prev = e;
        }
    }
}
