//! Image-method ray tracer producing deterministic per-path channel
//! parameters: delay, complex gain, departure/arrival angles, interaction
//! history, polarization transfer matrix and Doppler shift.

pub mod blockage;
pub mod dump;
pub mod em;
mod tracer;

use nalgebra::{Point3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blockage::apply_blockage;
pub use em::{
    free_space_gain, free_space_path_loss_db, fresnel_coefficients, slab_response, transmission_coefficient,
    PolarizationPair, SlabResponse,
};
pub use tracer::{prune_weak_paths, trace_paths, trace_wideband, GeometricPath, ImageTree, Tracer};

#[derive(Debug, Error, PartialEq)]
pub enum RtError {
    #[error("invalid trace configuration: {0}")]
    InvalidConfig(String),
    #[error("transmitter and receiver coincide")]
    CoincidentNodes,
    #[error("incidence angle {0} rad outside [0, π/2)")]
    IncidenceAngle(f64),
    #[error("distance {0} m must be positive")]
    InvalidDistance(f64),
}

/// A transmitter or receiver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub position: Point3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub velocity: Vector3<f64>,
    /// Name of the array configuration used at this node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub antenna_ref: Option<String>,
    /// Boresight azimuth and zenith, radians.
    #[serde(default = "default_orientation")]
    pub orientation: (f64, f64),
}

fn default_orientation() -> (f64, f64) {
    (0.0, std::f64::consts::FRAC_PI_2)
}

impl Node {
    pub fn at(position: Point3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            antenna_ref: None,
            orientation: default_orientation(),
        }
    }

    pub fn moving(position: Point3<f64>, velocity: Vector3<f64>) -> Self {
        Self {
            velocity,
            ..Self::at(position)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    /// Hz.
    pub center_frequency: f64,
    pub max_reflections: usize,
    pub max_transmissions: usize,
    /// Paths weaker than the strongest by more than this many dB are dropped.
    #[serde(rename = "power_floor_db")]
    pub power_floor: f64,
    pub frequency_bins: usize,
    /// Hz.
    pub bandwidth: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            center_frequency: 28e9,
            max_reflections: 3,
            max_transmissions: 2,
            power_floor: 25.0,
            frequency_bins: 1,
            bandwidth: 400e6,
        }
    }
}

impl TraceConfig {
    pub fn validate(&self) -> Result<(), RtError> {
        let bad = |m: String| Err(RtError::InvalidConfig(m));
        if !(6e9..=100e9).contains(&self.center_frequency) {
            return bad(format!(
                "center_frequency {} Hz outside 6-100 GHz",
                self.center_frequency
            ));
        }
        if self.max_reflections > 6 {
            return bad(format!("max_reflections {} exceeds 6", self.max_reflections));
        }
        if !(self.power_floor > 0.0) {
            return bad("power_floor_db must be > 0".into());
        }
        if self.frequency_bins == 0 {
            return bad("frequency_bins must be >= 1".into());
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return bad("bandwidth must be > 0".into());
        }
        Ok(())
    }

    /// Center frequencies of the evaluation bins, spread evenly across the
    /// bandwidth.
    pub fn bin_frequencies(&self) -> Vec<f64> {
        let n = self.frequency_bins;
        if n == 1 {
            return vec![self.center_frequency];
        }
        let step = self.bandwidth / n as f64;
        (0..n)
            .map(|i| self.center_frequency + (i as f64 - (n as f64 - 1.0) / 2.0) * step)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InteractionKind {
    Reflection,
    Transmission,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub wall: u32,
    pub kind: InteractionKind,
}

/// 2×2 polarization transfer matrix in the global (V, H) = (θ̂, φ̂) basis,
/// row-major: rows are receive-side components, columns transmit-side.
pub type PolMatrix = [[Complex64; 2]; 2];

pub const IDENTITY_POL: PolMatrix = [
    [Complex64 { re: 1.0, im: 0.0 }, Complex64 { re: 0.0, im: 0.0 }],
    [Complex64 { re: 0.0, im: 0.0 }, Complex64 { re: 1.0, im: 0.0 }],
];

/// One propagation path.
///
/// The full complex channel of the path is
/// `amplitude · e^{j·phase} · pol_matrix`; `pol_matrix` is normalized so that
/// its Frobenius norm is √2 (identity for a free-space path).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    /// Seconds.
    pub delay: f64,
    pub amplitude: f64,
    /// Radians, `[0, 2π)`.
    pub phase: f64,
    pub aod_az: f64,
    pub aod_zen: f64,
    pub aoa_az: f64,
    pub aoa_zen: f64,
    pub n_reflections: u32,
    pub n_transmissions: u32,
    pub interactions: Vec<Interaction>,
    pub pol_matrix: PolMatrix,
    /// Hz.
    pub doppler: f64,
    /// Accumulated blocker penetration loss.
    #[serde(default)]
    pub blockage_db: f64,
    /// Unobstructed direct path.
    #[serde(default)]
    pub los: bool,
    /// Polyline from transmitter through every reflection point to receiver.
    /// Empty for stochastically generated rays.
    #[serde(default)]
    pub points: Vec<Point3<f64>>,
}

impl PathRecord {
    pub fn power(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    pub fn complex_gain(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }

    /// Unit vector pointing from the transmitter along the departure direction.
    pub fn departure_direction(&self) -> Vector3<f64> {
        direction_from_angles(self.aod_az, self.aod_zen)
    }

    /// Unit vector pointing from the receiver towards where the wave arrives from.
    pub fn arrival_direction(&self) -> Vector3<f64> {
        direction_from_angles(self.aoa_az, self.aoa_zen)
    }

    /// Geometric length of the stored polyline (0 when no geometry is stored).
    pub fn unfolded_length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Cross-polarization ratio of the transfer matrix in dB
    /// (co-polar over cross-polar power); `+∞` when there is no coupling.
    pub fn xpr_db(&self) -> f64 {
        let m = &self.pol_matrix;
        let co = m[0][0].norm_sqr() + m[1][1].norm_sqr();
        let cross = m[0][1].norm_sqr() + m[1][0].norm_sqr();
        10.0 * (co / cross).log10()
    }
}

pub fn direction_from_angles(azimuth: f64, zenith: f64) -> Vector3<f64> {
    Vector3::new(
        zenith.sin() * azimuth.cos(),
        zenith.sin() * azimuth.sin(),
        zenith.cos(),
    )
}

/// Azimuth in `[0, 2π)` and zenith in `[0, π]` of a unit vector.
pub fn angles_from_direction(d: &Vector3<f64>) -> (f64, f64) {
    let az = crate::units::wrap_two_pi(d.y.atan2(d.x));
    let zen = d.z.clamp(-1.0, 1.0).acos();
    (az, zen)
}
