//! Electromagnetic interaction coefficients: Fresnel interface coefficients,
//! single-slab reflection/transmission and free-space spreading.
//!
//! Time convention is `e^{jωt}`, so lossy media have `Im(ε) < 0` and a wave
//! travelling a distance `d` picks up `e^{-jkd}`.
//!
//! The parallel (TM) coefficient uses the sign convention in which both
//! polarizations coincide at normal incidence.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::RtError;
use crate::geometry::Material;
use crate::units::{wavelength, SPEED_OF_LIGHT};

/// Coefficient pair for the two linear polarizations of a plane wave.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarizationPair {
    /// Parallel / TM (field in the plane of incidence).
    pub parallel: Complex64,
    /// Perpendicular / TE (field normal to the plane of incidence).
    pub perpendicular: Complex64,
}

fn check_angle(incidence_angle: f64) -> Result<(), RtError> {
    if !(0.0..FRAC_PI_2).contains(&incidence_angle) {
        return Err(RtError::IncidenceAngle(incidence_angle));
    }
    Ok(())
}

fn check_frequency(frequency: f64) -> Result<(), RtError> {
    if !(frequency > 0.0 && frequency.is_finite()) {
        return Err(RtError::InvalidConfig(format!("frequency {frequency} Hz must be positive")));
    }
    Ok(())
}

/// `sqrt(ε − sin²θ)` on the principal branch (non-negative real part).
fn normal_wavenumber_ratio(eps: Complex64, incidence_angle: f64) -> Complex64 {
    let s = incidence_angle.sin();
    (eps - s * s).sqrt()
}

/// Reflection coefficients of the air→material half-space interface.
pub fn fresnel_coefficients(
    material: &Material,
    incidence_angle: f64,
    frequency: f64,
) -> Result<PolarizationPair, RtError> {
    check_angle(incidence_angle)?;
    check_frequency(frequency)?;
    let eps = material.complex_permittivity(frequency);
    Ok(interface_reflection(eps, incidence_angle))
}

fn interface_reflection(eps: Complex64, incidence_angle: f64) -> PolarizationPair {
    let cos = incidence_angle.cos();
    let root = normal_wavenumber_ratio(eps, incidence_angle);
    PolarizationPair {
        perpendicular: (cos - root) / (cos + root),
        parallel: (root - eps * cos) / (root + eps * cos),
    }
}

/// Reflection and transmission of a homogeneous slab of the material's
/// thickness embedded in air, including all internal bounces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabResponse {
    pub reflection: PolarizationPair,
    pub transmission: PolarizationPair,
}

/// Slab response at oblique incidence. The transmitted wave is referenced to
/// the same phase as a wave crossing an equally thick layer of air, so a
/// vacuum slab transmits exactly unity (walls have zero geometric thickness).
pub fn slab_response(material: &Material, incidence_angle: f64, frequency: f64) -> Result<SlabResponse, RtError> {
    check_angle(incidence_angle)?;
    check_frequency(frequency)?;
    let eps = material.complex_permittivity(frequency);
    let k0 = 2.0 * PI * frequency / SPEED_OF_LIGHT;
    let d = material.thickness;
    let q = normal_wavenumber_ratio(eps, incidence_angle) * (k0 * d);
    let j = Complex64::i();
    let one_way = (-j * q).exp();
    let round_trip = one_way * one_way;
    let air_phase = Complex64::from_polar(1.0, k0 * d * incidence_angle.cos());

    let gamma = interface_reflection(eps, incidence_angle);
    let slab = |g: Complex64| {
        let g2 = g * g;
        let denom = Complex64::new(1.0, 0.0) - g2 * round_trip;
        let r = g * (Complex64::new(1.0, 0.0) - round_trip) / denom;
        let t = (Complex64::new(1.0, 0.0) - g2) * one_way / denom * air_phase;
        (r, t)
    };
    let (r_par, t_par) = slab(gamma.parallel);
    let (r_perp, t_perp) = slab(gamma.perpendicular);
    Ok(SlabResponse {
        reflection: PolarizationPair {
            parallel: r_par,
            perpendicular: r_perp,
        },
        transmission: PolarizationPair {
            parallel: t_par,
            perpendicular: t_perp,
        },
    })
}

/// Through-slab transmission coefficient for the perpendicular (TE)
/// polarization. Both polarizations coincide at normal incidence; use
/// [`slab_response`] for the pair.
pub fn transmission_coefficient(material: &Material, incidence_angle: f64, frequency: f64) -> Result<Complex64, RtError> {
    Ok(slab_response(material, incidence_angle, frequency)?.transmission.perpendicular)
}

/// Friis free-space amplitude gain `λ / (4π d)`.
pub fn free_space_gain(distance: f64, frequency: f64) -> Result<f64, RtError> {
    if !(distance > 0.0) {
        return Err(RtError::InvalidDistance(distance));
    }
    check_frequency(frequency)?;
    Ok(wavelength(frequency) / (4.0 * PI * distance))
}

/// Free-space path loss in dB, `20 log10(4π d / λ)`.
pub fn free_space_path_loss_db(distance: f64, frequency: f64) -> Result<f64, RtError> {
    Ok(-20.0 * free_space_gain(distance, frequency)?.log10())
}
