//! MIMO channel coefficients from cluster sets, beamforming, and CDL/TDL
//! link-level export.

mod cdl;

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{DMatrix, Point3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cdl::{
    cdl_from_clusters, cdl_table, is_hermitian_psd, spatial_correlation, tdl_from_cdl, tdl_to_json, Cdl, CdlRay,
    CdlRow, Fading, Tdl, TdlTap,
};

use crate::params::{Cluster, ClusterSet};
use crate::rt::PathRecord;
use crate::units::wavelength;

#[derive(Debug, Error, PartialEq)]
pub enum CoeffError {
    #[error("cluster set is empty")]
    EmptyClusters,
    #[error("invalid array: {0}")]
    InvalidArray(String),
    #[error("spherical wavefronts need stored path geometry; use planar mode for stochastic clusters")]
    SphericalNeedsGeometry,
    #[error("weight vector has {got} entries, array has {expected} elements")]
    WeightLength { expected: usize, got: usize },
    #[error("frequency {0} Hz must be positive")]
    Frequency(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolarizationPorts {
    /// One vertically (θ̂) polarized port per element.
    #[default]
    V,
    /// One horizontally (φ̂) polarized port per element.
    H,
    /// Two ports per element at ±45°.
    DualSlant,
}

impl PolarizationPorts {
    pub fn count(self) -> usize {
        match self {
            PolarizationPorts::V | PolarizationPorts::H => 1,
            PolarizationPorts::DualSlant => 2,
        }
    }

    /// Unit field vectors of the ports in the (θ̂, φ̂) basis.
    fn vectors(self) -> &'static [[f64; 2]] {
        const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            PolarizationPorts::V => &[[1.0, 0.0]],
            PolarizationPorts::H => &[[0.0, 1.0]],
            PolarizationPorts::DualSlant => &[[S, S], [S, -S]],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wavefront {
    #[default]
    Planar,
    Spherical,
}

/// Element power gain on a 1° grid: 181 zenith rows (0..=180°) by 361
/// azimuth columns (0..=360°), in dBi, separately for the θ̂ and φ̂ field
/// components. Values between grid points are bilinearly interpolated in
/// linear scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternTable {
    pub theta_db: Vec<f64>,
    pub phi_db: Vec<f64>,
}

const PATTERN_ROWS: usize = 181;
const PATTERN_COLS: usize = 361;

impl PatternTable {
    /// Table from a function of (azimuth, zenith) in radians returning the
    /// θ̂ and φ̂ gains in dBi.
    pub fn from_fn(f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut theta_db = Vec::with_capacity(PATTERN_ROWS * PATTERN_COLS);
        let mut phi_db = Vec::with_capacity(PATTERN_ROWS * PATTERN_COLS);
        for z in 0..PATTERN_ROWS {
            for a in 0..PATTERN_COLS {
                let (t, p) = f((a as f64).to_radians(), (z as f64).to_radians());
                theta_db.push(t);
                phi_db.push(p);
            }
        }
        Self { theta_db, phi_db }
    }

    fn validate(&self) -> Result<(), CoeffError> {
        let n = PATTERN_ROWS * PATTERN_COLS;
        if self.theta_db.len() != n || self.phi_db.len() != n {
            return Err(CoeffError::InvalidArray(format!("pattern tables need {n} entries (181 x 361)")));
        }
        if self.theta_db.iter().chain(&self.phi_db).any(|g| !g.is_finite()) {
            return Err(CoeffError::InvalidArray("pattern gains must be finite".into()));
        }
        Ok(())
    }

    fn lookup(table: &[f64], az: f64, zen: f64) -> f64 {
        let a = az.rem_euclid(TAU).to_degrees().min(360.0);
        let z = zen.clamp(0.0, std::f64::consts::PI).to_degrees();
        let (a0, z0) = (a.floor().min(359.0) as usize, z.floor().min(179.0) as usize);
        let (fa, fz) = (a - a0 as f64, z - z0 as f64);
        let g = |zi: usize, ai: usize| 10f64.powf(table[zi * PATTERN_COLS + ai] / 10.0);
        (1.0 - fz) * ((1.0 - fa) * g(z0, a0) + fa * g(z0, a0 + 1)) + fz * ((1.0 - fa) * g(z0 + 1, a0) + fa * g(z0 + 1, a0 + 1))
    }

    /// Linear power gains (θ̂, φ̂).
    pub fn gains(&self, az: f64, zen: f64) -> (f64, f64) {
        (Self::lookup(&self.theta_db, az, zen), Self::lookup(&self.phi_db, az, zen))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ElementPattern {
    #[default]
    Isotropic,
    Table(PatternTable),
}

impl ElementPattern {
    fn amplitudes(&self, az: f64, zen: f64) -> (f64, f64) {
        match self {
            ElementPattern::Isotropic => (1.0, 1.0),
            ElementPattern::Table(t) => {
                let (gt, gp) = t.gains(az, zen);
                (gt.sqrt(), gp.sqrt())
            }
        }
    }
}

/// Antenna array: element offsets from the phase centre (metres), one
/// element pattern shared by all elements, the port layout and the wavefront
/// model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub element_positions: Vec<Vector3<f64>>,
    #[serde(default)]
    pub pattern: ElementPattern,
    #[serde(default)]
    pub ports: PolarizationPorts,
    #[serde(default)]
    pub wavefront: Wavefront,
}

impl ArrayConfig {
    pub fn single(ports: PolarizationPorts) -> Self {
        Self {
            element_positions: vec![Vector3::zeros()],
            pattern: ElementPattern::Isotropic,
            ports,
            wavefront: Wavefront::Planar,
        }
    }

    /// `n` elements spaced `spacing` metres along `axis`, centred on the
    /// phase centre.
    pub fn uniform_linear(n: usize, spacing: f64, axis: Vector3<f64>, ports: PolarizationPorts) -> Self {
        let axis = axis.normalize();
        let mid = (n as f64 - 1.0) / 2.0;
        Self {
            element_positions: (0..n).map(|i| axis * ((i as f64 - mid) * spacing)).collect(),
            pattern: ElementPattern::Isotropic,
            ports,
            wavefront: Wavefront::Planar,
        }
    }

    pub fn validate(&self) -> Result<(), CoeffError> {
        if self.element_positions.is_empty() {
            return Err(CoeffError::InvalidArray("at least one element is required".into()));
        }
        if self.element_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CoeffError::InvalidArray("element positions must be finite".into()));
        }
        if let ElementPattern::Table(t) = &self.pattern {
            t.validate()?;
        }
        Ok(())
    }

    pub fn n_elements(&self) -> usize {
        self.element_positions.len()
    }

    /// Rows (or columns) contributed to the channel matrix.
    pub fn n_outputs(&self) -> usize {
        self.n_elements() * self.ports.count()
    }

    /// Field vector of each port in the (θ̂, φ̂) basis towards `(az, zen)`.
    fn port_fields(&self, az: f64, zen: f64) -> Vec<[f64; 2]> {
        let (at, ap) = self.pattern.amplitudes(az, zen);
        self.ports.vectors().iter().map(|v| [v[0] * at, v[1] * ap]).collect()
    }

    /// Scalar element gain (amplitude) towards `(az, zen)`.
    pub(crate) fn element_amplitude(&self, az: f64, zen: f64) -> f64 {
        let (at, ap) = self.pattern.amplitudes(az, zen);
        ((at * at + ap * ap) / 2.0).sqrt()
    }
}

/// Channel matrices per delay tap, ordered by delay. Entry `(u, s)` couples
/// receive output `u = element·ports + port` with transmit input `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTaps {
    pub delays: Vec<f64>,
    pub matrices: Vec<DMatrix<Complex64>>,
}

impl ChannelTaps {
    pub fn total_power(&self) -> f64 {
        self.matrices.iter().map(|m| m.iter().map(|c| c.norm_sqr()).sum::<f64>()).sum()
    }
}

/// Extra path length at `offset` from `origin` towards `target` compared
/// with the origin itself.
fn excess_length(origin: &Point3<f64>, offset: &Vector3<f64>, target: &Point3<f64>) -> f64 {
    (target - (origin + offset)).norm() - (target - origin).norm()
}

fn steering_phases(
    array: &ArrayConfig,
    direction: &Vector3<f64>,
    node: Option<(&Point3<f64>, &Point3<f64>)>,
    lambda: f64,
) -> Vec<Complex64> {
    array
        .element_positions
        .iter()
        .map(|d| {
            let phase = match node {
                // Spherical: exact distance to the first/last interaction point.
                Some((origin, target)) => -TAU * excess_length(origin, d, target) / lambda,
                None => TAU * d.dot(direction) / lambda,
            };
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

fn ray_matrix(ray: &PathRecord, tx: &ArrayConfig, rx: &ArrayConfig, f: f64, t: f64) -> DMatrix<Complex64> {
    let lambda = wavelength(f);
    let geometry = |array: &ArrayConfig, end: bool| {
        if array.wavefront == Wavefront::Spherical {
            let n = ray.points.len();
            let (origin, target) = if end { (&ray.points[n - 1], &ray.points[n - 2]) } else { (&ray.points[0], &ray.points[1]) };
            Some((origin, target))
        } else {
            None
        }
    };
    let a_tx = steering_phases(tx, &ray.departure_direction(), geometry(tx, false), lambda);
    let a_rx = steering_phases(rx, &ray.arrival_direction(), geometry(rx, true), lambda);
    let f_tx = tx.port_fields(ray.aod_az, ray.aod_zen);
    let f_rx = rx.port_fields(ray.aoa_az, ray.aoa_zen);
    let m = &ray.pol_matrix;
    // Port-to-port coupling F_rxᵀ · M · F_tx.
    let coupling: Vec<Vec<Complex64>> = f_rx
        .iter()
        .map(|fr| {
            f_tx.iter()
                .map(|ft| {
                    (0..2)
                        .flat_map(|i| (0..2).map(move |j| (i, j)))
                        .map(|(i, j)| m[i][j] * (fr[i] * ft[j]))
                        .sum()
                })
                .collect()
        })
        .collect();
    let g = ray.complex_gain() * Complex64::from_polar(1.0, TAU * ray.doppler * t);
    let (pr, pt) = (rx.ports.count(), tx.ports.count());
    DMatrix::from_fn(rx.n_outputs(), tx.n_outputs(), |u, s| {
        g * a_rx[u / pr] * a_tx[s / pt] * coupling[u % pr][s % pt]
    })
}

fn check_inputs(tx: &ArrayConfig, rx: &ArrayConfig, f: f64) -> Result<(), CoeffError> {
    tx.validate()?;
    rx.validate()?;
    if !(f > 0.0 && f.is_finite()) {
        return Err(CoeffError::Frequency(f));
    }
    Ok(())
}

/// MIMO channel at frequency `f` and time `t`, one matrix per distinct ray
/// delay. Planar mode steers each element by `e^{j2π d·r̂/λ}`; spherical
/// mode uses exact element distances to the first and last points of the
/// stored path polyline.
pub fn channel_matrix(
    clusters: &ClusterSet,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    f: f64,
    t: f64,
) -> Result<ChannelTaps, CoeffError> {
    check_inputs(tx, rx, f)?;
    if clusters.is_empty() || clusters.n_rays() == 0 {
        return Err(CoeffError::EmptyClusters);
    }
    let spherical = tx.wavefront == Wavefront::Spherical || rx.wavefront == Wavefront::Spherical;
    if spherical && clusters.rays().any(|r| r.points.len() < 2) {
        return Err(CoeffError::SphericalNeedsGeometry);
    }
    let mut taps: BTreeMap<u64, DMatrix<Complex64>> = BTreeMap::new();
    for ray in clusters.rays() {
        let m = ray_matrix(ray, tx, rx, f, t);
        // Non-negative delays order the same as their bit patterns.
        taps.entry(ray.delay.to_bits())
            .and_modify(|acc| *acc += &m)
            .or_insert(m);
    }
    let (delays, matrices) = taps.into_iter().map(|(d, m)| (f64::from_bits(d), m)).unzip();
    Ok(ChannelTaps { delays, matrices })
}

/// Optional per-element beamforming weights at either end.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BeamWeights {
    pub tx: Option<Vec<Complex64>>,
    pub rx: Option<Vec<Complex64>>,
}

/// Combines elements with `weights`, port by port, along the columns
/// (transmit side) of `h`: `y[:, p] = Σ_e w_e · h[:, e·P + p]`.
pub fn beamform_tx(h: &DMatrix<Complex64>, weights: &[Complex64], ports: usize) -> Result<DMatrix<Complex64>, CoeffError> {
    let elements = h.ncols() / ports;
    if weights.len() != elements {
        return Err(CoeffError::WeightLength {
            expected: elements,
            got: weights.len(),
        });
    }
    Ok(DMatrix::from_fn(h.nrows(), ports, |u, p| {
        weights.iter().enumerate().map(|(e, w)| w * h[(u, e * ports + p)]).sum()
    }))
}

/// Receive-side combining `y[p, :] = Σ_e conj(w_e) · h[e·P + p, :]`.
pub fn beamform_rx(h: &DMatrix<Complex64>, weights: &[Complex64], ports: usize) -> Result<DMatrix<Complex64>, CoeffError> {
    let elements = h.nrows() / ports;
    if weights.len() != elements {
        return Err(CoeffError::WeightLength {
            expected: elements,
            got: weights.len(),
        });
    }
    Ok(DMatrix::from_fn(ports, h.ncols(), |p, s| {
        weights.iter().enumerate().map(|(e, w)| w.conj() * h[(e * ports + p, s)]).sum()
    }))
}

/// Applies beamforming weights to every tap.
pub fn apply_beam_pattern(
    taps: &ChannelTaps,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    weights: &BeamWeights,
) -> Result<ChannelTaps, CoeffError> {
    let matrices = taps
        .matrices
        .iter()
        .map(|h| {
            let h = match &weights.tx {
                Some(w) => beamform_tx(h, w, tx.ports.count())?,
                None => h.clone(),
            };
            match &weights.rx {
                Some(w) => beamform_rx(&h, w, rx.ports.count()),
                None => Ok(h),
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(ChannelTaps {
        delays: taps.delays.clone(),
        matrices,
    })
}

/// Unit-norm weights steering `array` towards `(az, zen)`: the conjugate of
/// the planar array response.
pub fn steering_weights(array: &ArrayConfig, az: f64, zen: f64, f: f64) -> Vec<Complex64> {
    let dir = crate::rt::direction_from_angles(az, zen);
    let a = steering_phases(array, &dir, None, wavelength(f));
    let norm = (a.len() as f64).sqrt();
    a.iter().map(|c| c.conj() / norm).collect()
}

/// The same channel seen in the opposite direction: departure and arrival
/// swap and the polarization matrix is transposed.
pub fn reversed_clusters(set: &ClusterSet) -> ClusterSet {
    let clusters = set
        .clusters
        .iter()
        .map(|c| {
            let rays = c
                .rays
                .iter()
                .map(|r| {
                    let m = r.pol_matrix;
                    let mut points = r.points.clone();
                    points.reverse();
                    PathRecord {
                        aod_az: r.aoa_az,
                        aod_zen: r.aoa_zen,
                        aoa_az: r.aod_az,
                        aoa_zen: r.aod_zen,
                        pol_matrix: [[m[0][0], m[1][0]], [m[0][1], m[1][1]]],
                        interactions: r.interactions.iter().rev().copied().collect(),
                        points,
                        ..r.clone()
                    }
                })
                .collect();
            let mut out = Cluster::from_rays(rays);
            out.power = c.power;
            out.mean_delay = c.mean_delay;
            out
        })
        .collect();
    ClusterSet {
        clusters,
        source: set.source,
    }
}
