//! Large- and small-scale parameter extraction from path sets: power delay
//! profiles, delay/angle spreads, ray clustering, count PMFs and coverage.

mod cluster;
mod coverage;
pub mod emit;

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{angular_distance, cluster_paths, Cluster, ClusterGaps, ClusterSet, ClusterSource};
pub use coverage::{coverage_map, CoverageMap, CoveragePoint, GridSpec};

use crate::rt::PathRecord;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("operation needs at least one path")]
    NoPaths,
    #[error("bin width {0} s must be positive")]
    BinWidth(f64),
    #[error("angle spread undefined: power-weighted resultant vanishes")]
    UndefinedSpread,
    #[error("at least one snapshot is required")]
    NoSnapshots,
    #[error("invalid coverage grid: {0}")]
    Grid(String),
    #[error(transparent)]
    Trace(#[from] crate::rt::RtError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerDelayProfile {
    /// Seconds.
    pub bin_width: f64,
    /// Delay of the first bin (earliest path), seconds.
    pub origin_delay: f64,
    /// Linear power per bin.
    pub bin_powers: Vec<f64>,
}

impl PowerDelayProfile {
    /// True when built from an empty path list.
    pub fn is_empty(&self) -> bool {
        self.bin_powers.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.bin_powers.iter().sum()
    }

    pub fn bin_delay(&self, bin: usize) -> f64 {
        self.origin_delay + bin as f64 * self.bin_width
    }
}

pub fn compute_pdp(paths: &[PathRecord], bin_width: f64) -> Result<PowerDelayProfile, ParamsError> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(ParamsError::BinWidth(bin_width));
    }
    let Some(origin) = paths.iter().map(|p| p.delay).min_by(f64::total_cmp) else {
        return Ok(PowerDelayProfile {
            bin_width,
            origin_delay: 0.0,
            bin_powers: vec![],
        });
    };
    let mut bins: Vec<f64> = Vec::new();
    for p in paths {
        let idx = ((p.delay - origin) / bin_width).floor() as usize;
        if idx >= bins.len() {
            bins.resize(idx + 1, 0.0);
        }
        bins[idx] += p.power();
    }
    Ok(PowerDelayProfile {
        bin_width,
        origin_delay: origin,
        bin_powers: bins,
    })
}

/// Power-weighted mean and standard deviation of `values`.
fn weighted_moments(weights: &[f64], values: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>() / total;
    let var = weights.iter().zip(values).map(|(w, v)| w * (v - mean).powi(2)).sum::<f64>() / total;
    (mean, var.max(0.0).sqrt())
}

/// RMS delay spread (power-weighted second central moment of delay).
pub fn rms_delay_spread(paths: &[PathRecord]) -> Result<f64, ParamsError> {
    if paths.is_empty() {
        return Err(ParamsError::NoPaths);
    }
    let w: Vec<f64> = paths.iter().map(PathRecord::power).collect();
    // Center on the earliest delay first so the moment is insensitive to a
    // common offset.
    let t0 = paths.iter().map(|p| p.delay).fold(f64::INFINITY, f64::min);
    let t: Vec<f64> = paths.iter().map(|p| p.delay - t0).collect();
    Ok(weighted_moments(&w, &t).1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleKind {
    AodAz,
    AoaAz,
    AodZen,
    AoaZen,
}

impl AngleKind {
    pub fn of(self, p: &PathRecord) -> f64 {
        match self {
            AngleKind::AodAz => p.aod_az,
            AngleKind::AoaAz => p.aoa_az,
            AngleKind::AodZen => p.aod_zen,
            AngleKind::AoaZen => p.aoa_zen,
        }
    }

    pub fn is_azimuth(self) -> bool {
        matches!(self, AngleKind::AodAz | AngleKind::AoaAz)
    }
}

/// Circular spread `sqrt(-2 ln |Σ p e^{jθ} / Σ p|)` of azimuth samples.
pub fn circular_spread(weights: &[f64], angles: &[f64]) -> Result<f64, ParamsError> {
    let total: f64 = weights.iter().sum();
    let resultant: Complex64 = weights
        .iter()
        .zip(angles)
        .map(|(w, a)| Complex64::from_polar(*w, *a))
        .sum::<Complex64>()
        / total;
    let r = resultant.norm();
    if r < 1e-12 {
        return Err(ParamsError::UndefinedSpread);
    }
    Ok((-2.0 * r.min(1.0).ln()).max(0.0).sqrt())
}

/// Angle spread: circular for azimuths, linear power-weighted standard
/// deviation for zenith angles.
pub fn angle_spread(paths: &[PathRecord], which: AngleKind) -> Result<f64, ParamsError> {
    if paths.is_empty() {
        return Err(ParamsError::NoPaths);
    }
    let w: Vec<f64> = paths.iter().map(PathRecord::power).collect();
    let a: Vec<f64> = paths.iter().map(|p| which.of(p)).collect();
    if which.is_azimuth() {
        circular_spread(&w, &a)
    } else {
        Ok(weighted_moments(&w, &a).1)
    }
}

/// Large-scale parameters of one link. Spreads in radians, delay spread in
/// seconds. Outage is flagged by `los_state == None` and infinite path loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LspRecord {
    #[serde(with = "crate::params::float_ext")]
    pub path_loss_db: f64,
    pub delay_spread: f64,
    pub asd: f64,
    pub asa: f64,
    pub zsd: f64,
    pub zsa: f64,
    #[serde(with = "crate::params::float_ext")]
    pub k_factor_db: f64,
    pub n_clusters: usize,
    pub n_rays: usize,
    pub los_state: Option<bool>,
}

impl LspRecord {
    pub fn outage() -> Self {
        Self {
            path_loss_db: f64::INFINITY,
            delay_spread: 0.0,
            asd: 0.0,
            asa: 0.0,
            zsd: 0.0,
            zsa: 0.0,
            k_factor_db: f64::NEG_INFINITY,
            n_clusters: 0,
            n_rays: 0,
            los_state: None,
        }
    }

    pub fn is_outage(&self) -> bool {
        self.los_state.is_none()
    }
}

/// Serde helper writing non-finite floats as the strings `"inf"`, `"-inf"`
/// and `"nan"` so that sentinels survive a JSON round trip.
pub mod float_ext {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Word(w) => match w.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("invalid float `{other}`"))),
            },
        }
    }
}

/// Extracts the large-scale parameters of a path set. Azimuth spreads whose
/// resultant vanishes (antipodal balance) are reported at the maximum
/// representable circular spread.
pub fn extract_lsps(paths: &[PathRecord], gaps: &ClusterGaps) -> LspRecord {
    if paths.is_empty() {
        return LspRecord::outage();
    }
    let total: f64 = paths.iter().map(PathRecord::power).sum();
    let spread = |kind| angle_spread(paths, kind).unwrap_or_else(|_| (-2.0 * 1e-12f64.ln()).sqrt());
    let strongest = paths.iter().map(PathRecord::power).fold(0.0, f64::max);
    let rest = total - strongest;
    let k_factor_db = if rest > 0.0 {
        10.0 * (strongest / rest).log10()
    } else {
        f64::INFINITY
    };
    let clusters = cluster_paths(paths, gaps);
    LspRecord {
        path_loss_db: -10.0 * total.log10(),
        delay_spread: rms_delay_spread(paths).expect("non-empty"),
        asd: spread(AngleKind::AodAz),
        asa: spread(AngleKind::AoaAz),
        zsd: spread(AngleKind::AodZen),
        zsa: spread(AngleKind::AoaZen),
        k_factor_db,
        n_clusters: clusters.clusters.len(),
        n_rays: paths.len(),
        los_state: Some(paths.iter().any(|p| p.los)),
    }
}

/// Empirical mass functions of the cluster count per snapshot and of the ray
/// count per cluster.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountPmf {
    pub clusters: BTreeMap<usize, f64>,
    pub rays_per_cluster: BTreeMap<usize, f64>,
}

impl CountPmf {
    pub fn mean_clusters(&self) -> f64 {
        self.clusters.iter().map(|(k, p)| *k as f64 * p).sum()
    }

    pub fn max_rays_per_cluster(&self) -> Option<usize> {
        self.rays_per_cluster.keys().next_back().copied()
    }
}

pub fn empirical_pmf(counts: impl IntoIterator<Item = usize>) -> BTreeMap<usize, f64> {
    let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
    let mut n = 0usize;
    for c in counts {
        *tally.entry(c).or_default() += 1;
        n += 1;
    }
    tally.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect()
}

pub fn count_pmf(snapshots: &[ClusterSet]) -> Result<CountPmf, ParamsError> {
    if snapshots.is_empty() {
        return Err(ParamsError::NoSnapshots);
    }
    Ok(CountPmf {
        clusters: empirical_pmf(snapshots.iter().map(|s| s.clusters.len())),
        rays_per_cluster: empirical_pmf(snapshots.iter().flat_map(|s| s.clusters.iter().map(|c| c.rays.len()))),
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::rt::{PathRecord, IDENTITY_POL};

    pub fn ray(delay: f64, power: f64, aoa_az: f64) -> PathRecord {
        PathRecord {
            delay,
            amplitude: power.sqrt(),
            phase: 0.0,
            aod_az: 0.0,
            aod_zen: std::f64::consts::FRAC_PI_2,
            aoa_az,
            aoa_zen: std::f64::consts::FRAC_PI_2,
            n_reflections: 1,
            n_transmissions: 0,
            interactions: vec![],
            pol_matrix: IDENTITY_POL,
            doppler: 0.0,
            blockage_db: 0.0,
            los: false,
            points: vec![],
        }
    }
}
