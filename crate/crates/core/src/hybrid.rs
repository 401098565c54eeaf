//! Hybrid composition of deterministic and stochastic channels: weighted
//! cluster merging, per-parameter source selection and affine calibration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{ClusterSet, ClusterSource, LspRecord};
use crate::units::{wrap_two_pi, wrap_pi};

#[derive(Debug, Error, PartialEq)]
pub enum HybridError {
    #[error("deterministic weight {0} outside [0, 1]")]
    Weight(f64),
    #[error("both cluster sets are empty")]
    BothEmpty,
    #[error("cluster set is empty")]
    Empty,
    #[error("calibration factor `{0}` is not finite")]
    NonFinite(&'static str),
    #[error("calibration shifts a delay to {0} s")]
    NegativeDelay(f64),
}

/// Weight of the deterministic part; the stochastic part gets `1 − w_det`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridWeights {
    pub w_det: f64,
}

impl HybridWeights {
    pub fn new(w_det: f64) -> Result<Self, HybridError> {
        let w = Self { w_det };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        if !(0.0..=1.0).contains(&self.w_det) {
            return Err(HybridError::Weight(self.w_det));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Deterministic,
    Stochastic,
}

/// Source of each channel parameter group.
///
/// `path_loss` also routes the LOS state, `powers` the K-factor and the
/// cluster and ray counts, `angles` the four angle spreads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSelector {
    pub path_loss: Source,
    pub delays: Source,
    pub powers: Source,
    pub angles: Source,
    pub polarization: Source,
}

impl ParameterSelector {
    pub fn all(source: Source) -> Self {
        Self {
            path_loss: source,
            delays: source,
            powers: source,
            angles: source,
            polarization: source,
        }
    }
}

impl Default for ParameterSelector {
    fn default() -> Self {
        Self::all(Source::Deterministic)
    }
}

/// Source recorded for every field of a composed record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path_loss_db: Source,
    pub delay_spread: Source,
    pub asd: Source,
    pub asa: Source,
    pub zsd: Source,
    pub zsa: Source,
    pub k_factor_db: Source,
    pub n_clusters: Source,
    pub n_rays: Source,
    pub los_state: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFactors {
    /// dB, applied to power.
    pub gain_offset: f64,
    /// Seconds.
    pub delay_offset: f64,
    /// Radians, per angle.
    pub aod_az_bias: f64,
    pub aod_zen_bias: f64,
    pub aoa_az_bias: f64,
    pub aoa_zen_bias: f64,
    /// Where the factors came from (testbed, campaign, ...).
    pub provenance: String,
}

impl Default for CalibrationFactors {
    fn default() -> Self {
        Self {
            gain_offset: 0.0,
            delay_offset: 0.0,
            aod_az_bias: 0.0,
            aod_zen_bias: 0.0,
            aoa_az_bias: 0.0,
            aoa_zen_bias: 0.0,
            provenance: String::new(),
        }
    }
}

impl CalibrationFactors {
    pub fn validate(&self) -> Result<(), HybridError> {
        let fields = [
            ("gain_offset", self.gain_offset),
            ("delay_offset", self.delay_offset),
            ("aod_az_bias", self.aod_az_bias),
            ("aod_zen_bias", self.aod_zen_bias),
            ("aoa_az_bias", self.aoa_az_bias),
            ("aoa_zen_bias", self.aoa_zen_bias),
        ];
        match fields.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(HybridError::NonFinite(name)),
            None => Ok(()),
        }
    }

    fn is_identity(&self) -> bool {
        [
            self.gain_offset,
            self.delay_offset,
            self.aod_az_bias,
            self.aod_zen_bias,
            self.aoa_az_bias,
            self.aoa_zen_bias,
        ]
        .iter()
        .all(|v| *v == 0.0)
    }
}

/// Merges `det` (L clusters) and `sto` (M clusters) into one set of up to
/// L + M clusters. Powers are weighted by `w_det` and `1 − w_det`, clusters
/// left with zero power are dropped, and the result is renormalized to unit
/// total power. At `w_det = 1` (or `0`) the output is exactly `det` (or
/// `sto`), apart from the source tag.
pub fn merge_clusters(det: &ClusterSet, sto: &ClusterSet, w: HybridWeights) -> Result<ClusterSet, HybridError> {
    w.validate()?;
    if det.is_empty() && sto.is_empty() {
        return Err(HybridError::BothEmpty);
    }
    let endpoint = if w.w_det == 1.0 {
        Some(det)
    } else if w.w_det == 0.0 {
        Some(sto)
    } else {
        None
    };
    if let Some(set) = endpoint {
        if set.is_empty() {
            return Err(HybridError::Empty);
        }
        return Ok(ClusterSet {
            clusters: set.clusters.clone(),
            source: ClusterSource::Hybrid,
        });
    }
    let mut clusters = Vec::with_capacity(det.clusters.len() + sto.clusters.len());
    for (set, weight) in [(det, w.w_det), (sto, 1.0 - w.w_det)] {
        let amp = weight.sqrt();
        for c in &set.clusters {
            let mut c = c.clone();
            c.power *= weight;
            if c.power <= 0.0 {
                continue;
            }
            for r in &mut c.rays {
                r.amplitude *= amp;
            }
            clusters.push(c);
        }
    }
    let mut out = ClusterSet {
        clusters,
        source: ClusterSource::Hybrid,
    };
    let total = out.total_power();
    if (total - 1.0).abs() > 1e-12 {
        out = out.normalized();
    }
    Ok(out)
}

/// Builds a record field by field from the selected sources and reports
/// where each field came from.
pub fn compose_parameters(det: &LspRecord, sto: &LspRecord, sel: &ParameterSelector) -> (LspRecord, Provenance) {
    let pick = |s: Source| match s {
        Source::Deterministic => det,
        Source::Stochastic => sto,
    };
    let record = LspRecord {
        path_loss_db: pick(sel.path_loss).path_loss_db,
        delay_spread: pick(sel.delays).delay_spread,
        asd: pick(sel.angles).asd,
        asa: pick(sel.angles).asa,
        zsd: pick(sel.angles).zsd,
        zsa: pick(sel.angles).zsa,
        k_factor_db: pick(sel.powers).k_factor_db,
        n_clusters: pick(sel.powers).n_clusters,
        n_rays: pick(sel.powers).n_rays,
        los_state: pick(sel.path_loss).los_state,
    };
    let provenance = Provenance {
        path_loss_db: sel.path_loss,
        delay_spread: sel.delays,
        asd: sel.angles,
        asa: sel.angles,
        zsd: sel.angles,
        zsa: sel.angles,
        k_factor_db: sel.powers,
        n_clusters: sel.powers,
        n_rays: sel.powers,
        los_state: sel.path_loss,
    };
    (record, provenance)
}

/// Applies gain, delay and angle offsets to every ray and cluster summary.
/// Zenith biases are applied without folding; a result outside `[0, π]` is
/// clamped.
pub fn apply_calibration(clusters: &ClusterSet, cal: &CalibrationFactors) -> Result<ClusterSet, HybridError> {
    cal.validate()?;
    if clusters.is_empty() {
        return Err(HybridError::Empty);
    }
    if cal.is_identity() {
        return Ok(clusters.clone());
    }
    let amp = 10f64.powf(cal.gain_offset / 20.0);
    let pow = 10f64.powf(cal.gain_offset / 10.0);
    let zen = |z: f64, b: f64| (z + b).clamp(0.0, std::f64::consts::PI);
    let mut out = clusters.clone();
    for c in &mut out.clusters {
        for r in &mut c.rays {
            r.amplitude *= amp;
            r.delay += cal.delay_offset;
            if r.delay < 0.0 {
                return Err(HybridError::NegativeDelay(r.delay));
            }
            r.aod_az = wrap_two_pi(r.aod_az + cal.aod_az_bias);
            r.aoa_az = wrap_two_pi(r.aoa_az + cal.aoa_az_bias);
            r.aod_zen = zen(r.aod_zen, cal.aod_zen_bias);
            r.aoa_zen = zen(r.aoa_zen, cal.aoa_zen_bias);
        }
        c.power *= pow;
        c.mean_delay += cal.delay_offset;
        c.mean_aod_az = wrap_two_pi(c.mean_aod_az + cal.aod_az_bias);
        c.mean_aoa_az = wrap_two_pi(c.mean_aoa_az + cal.aoa_az_bias);
        c.mean_aod_zen = zen(c.mean_aod_zen, cal.aod_zen_bias);
        c.mean_aoa_zen = zen(c.mean_aoa_zen, cal.aoa_zen_bias);
    }
    Ok(out)
}

/// Signed smallest difference between two azimuths, for checking biases.
pub fn azimuth_difference(a: f64, b: f64) -> f64 {
    wrap_pi(a - b)
}
