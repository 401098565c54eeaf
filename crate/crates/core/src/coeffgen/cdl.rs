use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_inputs, steering_phases, ArrayConfig, CoeffError};
use crate::params::ClusterSet;
use crate::rt::{direction_from_angles, PolMatrix};
use crate::units::{power_to_db, wavelength, wrap_pi};

/// One ray of a CDL row. Angles are offsets from the row's cluster means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdlRay {
    pub delay_offset: f64,
    /// Fraction of the row power carried by this ray.
    pub power_fraction: f64,
    pub aod_az_offset: f64,
    pub aod_zen_offset: f64,
    pub aoa_az_offset: f64,
    pub aoa_zen_offset: f64,
    pub pol_matrix: PolMatrix,
    pub xpr_db: f64,
    pub los: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdlRow {
    /// Seconds after the first row.
    pub delay: f64,
    /// Linear, rows sum to one.
    pub power: f64,
    pub aod_az: f64,
    pub aod_zen: f64,
    pub aoa_az: f64,
    pub aoa_zen: f64,
    pub rays: Vec<CdlRay>,
}

impl CdlRow {
    /// Absolute ray angles `(aod_az, aod_zen, aoa_az, aoa_zen)`, delay and
    /// absolute power.
    fn ray_params(&self) -> impl Iterator<Item = (&CdlRay, [f64; 4], f64, f64)> + '_ {
        self.rays.iter().map(move |r| {
            let angles = [
                self.aod_az + r.aod_az_offset,
                self.aod_zen + r.aod_zen_offset,
                self.aoa_az + r.aoa_az_offset,
                self.aoa_zen + r.aoa_zen_offset,
            ];
            (r, angles, self.delay + r.delay_offset, self.power * r.power_fraction)
        })
    }
}

/// Cluster delay line: one channel realization, rows sorted by delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cdl {
    pub rows: Vec<CdlRow>,
}

/// Builds a CDL with one row per cluster, shifted so the earliest cluster
/// sits at zero delay and normalized to unit total power.
pub fn cdl_from_clusters(clusters: &ClusterSet) -> Result<Cdl, CoeffError> {
    let total = clusters.total_power();
    if clusters.is_empty() || !(total > 0.0) {
        return Err(CoeffError::EmptyClusters);
    }
    let mut order: Vec<&crate::params::Cluster> = clusters.clusters.iter().collect();
    order.sort_by(|a, b| a.mean_delay.total_cmp(&b.mean_delay));
    let t0 = order[0].mean_delay;
    let rows = order
        .into_iter()
        .map(|c| {
            let cp = if c.power > 0.0 { c.power } else { 1.0 };
            CdlRow {
                delay: c.mean_delay - t0,
                power: c.power / total,
                aod_az: c.mean_aod_az,
                aod_zen: c.mean_aod_zen,
                aoa_az: c.mean_aoa_az,
                aoa_zen: c.mean_aoa_zen,
                rays: c
                    .rays
                    .iter()
                    .map(|r| CdlRay {
                        delay_offset: r.delay - c.mean_delay,
                        power_fraction: r.power() / cp,
                        aod_az_offset: wrap_pi(r.aod_az - c.mean_aod_az),
                        aod_zen_offset: r.aod_zen - c.mean_aod_zen,
                        aoa_az_offset: wrap_pi(r.aoa_az - c.mean_aoa_az),
                        aoa_zen_offset: r.aoa_zen - c.mean_aoa_zen,
                        pol_matrix: r.pol_matrix,
                        xpr_db: r.xpr_db(),
                        los: r.los,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(Cdl { rows })
}

/// Plain-text CDL table. Cluster lines start with `C`, ray lines with `R`;
/// angles are in degrees, delays in nanoseconds, powers in dB.
pub fn cdl_table(cdl: &Cdl) -> String {
    let mut out = String::from(
        "# C index delay_ns power_db aod_deg zod_deg aoa_deg zoa_deg\n\
         # R index delay_offset_ns power_fraction_db aod_offset_deg zod_offset_deg aoa_offset_deg zoa_offset_deg xpr_db los\n",
    );
    for (i, row) in cdl.rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "C {i} {:.6} {:.4} {:.4} {:.4} {:.4} {:.4}",
            row.delay * 1e9,
            power_to_db(row.power),
            row.aod_az.to_degrees(),
            row.aod_zen.to_degrees(),
            row.aoa_az.to_degrees(),
            row.aoa_zen.to_degrees()
        );
        for (j, r) in row.rays.iter().enumerate() {
            let _ = writeln!(
                out,
                "R {j} {:.6} {:.4} {:.4} {:.4} {:.4} {:.4} {:.2} {}",
                r.delay_offset * 1e9,
                power_to_db(r.power_fraction),
                r.aod_az_offset.to_degrees(),
                r.aod_zen_offset.to_degrees(),
                r.aoa_az_offset.to_degrees(),
                r.aoa_zen_offset.to_degrees(),
                r.xpr_db,
                u8::from(r.los)
            );
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Fading {
    Rayleigh,
    /// LOS tap with the given ratio of LOS to diffuse power.
    Rician { k_factor_db: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdlTap {
    pub delay: f64,
    pub power: f64,
    pub fading: Fading,
    pub tx_correlation: DMatrix<Complex64>,
    pub rx_correlation: DMatrix<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tdl {
    pub bandwidth: f64,
    pub frequency: f64,
    pub taps: Vec<TdlTap>,
}

/// Power-weighted steering covariance `Σ p·a·aᴴ / Σ p`, scaled to a unit
/// diagonal. `rays` holds `(azimuth, zenith, power)`.
pub fn spatial_correlation(array: &ArrayConfig, rays: &[(f64, f64, f64)], f: f64) -> DMatrix<Complex64> {
    let n = array.n_elements();
    let lambda = wavelength(f);
    let mut r = DMatrix::<Complex64>::zeros(n, n);
    let mut total = 0.0;
    for &(az, zen, p) in rays {
        let g = array.element_amplitude(az, zen);
        let w = p * g * g;
        if !(w > 0.0) {
            continue;
        }
        let a = steering_phases(array, &direction_from_angles(az, zen), None, lambda);
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] += a[i] * a[j].conj() * w;
            }
        }
        total += w;
    }
    if !(total > 0.0) {
        return DMatrix::identity(n, n);
    }
    let d: Vec<f64> = (0..n).map(|i| r[(i, i)].re.sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else if j < i {
            (r[(j, i)] / (d[i] * d[j])).conj()
        } else {
            r[(i, j)] / (d[i] * d[j])
        }
    })
}

/// Whether `m` is Hermitian and its eigenvalues are all ≥ `-tol`.
pub fn is_hermitian_psd(m: &DMatrix<Complex64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let herm = (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() <= tol));
    herm && SymmetricEigen::new(m.clone()).eigenvalues.iter().all(|&e| e >= -tol)
}

/// Quantizes CDL ray delays onto a `1/bandwidth` grid, merges powers per
/// tap, and computes per-tap spatial correlation at both ends.
pub fn tdl_from_cdl(cdl: &Cdl, tx: &ArrayConfig, rx: &ArrayConfig, f: f64, bandwidth: f64) -> Result<Tdl, CoeffError> {
    check_inputs(tx, rx, f)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(CoeffError::Frequency(bandwidth));
    }
    #[derive(Default)]
    struct Acc {
        power: f64,
        los: f64,
        dep: Vec<(f64, f64, f64)>,
        arr: Vec<(f64, f64, f64)>,
    }
    let mut taps: BTreeMap<i64, Acc> = BTreeMap::new();
    for row in &cdl.rows {
        for (ray, [aod_az, aod_zen, aoa_az, aoa_zen], delay, p) in row.ray_params() {
            let bin = (delay.max(0.0) * bandwidth).round() as i64;
            let acc = taps.entry(bin).or_default();
            acc.power += p;
            if ray.los {
                acc.los += p;
            }
            acc.dep.push((aod_az, aod_zen, p));
            acc.arr.push((aoa_az, aoa_zen, p));
        }
    }
    let total: f64 = taps.values().map(|a| a.power).sum();
    let total = if total > 0.0 { total } else { 1.0 };
    let taps = taps
        .into_iter()
        .map(|(bin, acc)| TdlTap {
            delay: bin as f64 / bandwidth,
            power: acc.power / total,
            fading: if acc.los > 0.0 {
                Fading::Rician {
                    k_factor_db: power_to_db(acc.los / (acc.power - acc.los)),
                }
            } else {
                Fading::Rayleigh
            },
            tx_correlation: spatial_correlation(tx, &acc.dep, f),
            rx_correlation: spatial_correlation(rx, &acc.arr, f),
        })
        .collect();
    Ok(Tdl {
        bandwidth,
        frequency: f,
        taps,
    })
}

fn matrix_json(m: &DMatrix<Complex64>) -> serde_json::Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect();
    json!(rows)
}

/// TDL document. Correlation matrices are row-major lists of `[re, im]`.
/// `scenario` labels the map and setup the model was derived from; the
/// model is not meant to be rescaled to other scenarios.
pub fn tdl_to_json(tdl: &Tdl, scenario: &str) -> serde_json::Value {
    json!({
        "scenario": scenario,
        "frequency_hz": tdl.frequency,
        "bandwidth_hz": tdl.bandwidth,
        "taps": tdl.taps.iter().map(|t| json!({
            "delay_s": t.delay,
            "power": t.power,
            "fading": t.fading,
            "tx_correlation": matrix_json(&t.tx_correlation),
            "rx_correlation": matrix_json(&t.rx_correlation),
        })).collect::<Vec<_>>(),
    })
}
