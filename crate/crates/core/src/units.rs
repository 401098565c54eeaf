//! Physical constants and small unit helpers.

use std::f64::consts::PI;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Vacuum permittivity ε₀, F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

pub fn wavelength(frequency: f64) -> f64 {
    SPEED_OF_LIGHT / frequency
}

pub fn db_to_power(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn power_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_two_pi(angle: f64) -> f64 {
    let w = angle.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_pi(angle: f64) -> f64 {
    wrap_two_pi(angle + PI) - PI
}
