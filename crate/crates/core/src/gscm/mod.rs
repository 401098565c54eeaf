//! Geometry-based stochastic channel model: fitting distributions to
//! snapshot statistics, spatially consistent large-scale parameter draws and
//! cluster generation.

mod fit;
mod grid;
mod sample;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{fit_stochastic_params, FitOptions, FitSample};
pub use grid::{ConsistencyGrid, Interpolation, LspField};
pub use sample::{draw_lsps, generate_clusters, generate_clusters_in, LinkFrame, RAY_OFFSETS};

#[derive(Debug, Error)]
pub enum GscmError {
    #[error("insufficient data: need at least {needed} snapshots, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid parameter set: {0}")]
    InvalidParams(String),
    #[error("cluster generation needs at least one cluster")]
    NoClusters,
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Lognormal distribution described by the mean and standard deviation of
/// `log10` of the variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub log_mean: f64,
    pub log_std: f64,
}

impl LogNormal {
    /// Value at standard-normal quantile `z`.
    pub fn at(&self, z: f64) -> f64 {
        10f64.powf(self.log_mean + self.log_std * z)
    }

    pub fn median(&self) -> f64 {
        10f64.powf(self.log_mean)
    }
}

/// Gaussian in dB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalDb {
    pub mean: f64,
    pub std: f64,
}

impl NormalDb {
    pub fn at(&self, z: f64) -> f64 {
        self.mean + self.std * z
    }
}

/// `PL(d) = intercept + exponent · 10 log10(d)` with lognormal shadowing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub intercept_db: f64,
    pub exponent: f64,
    pub shadow_std_db: f64,
}

impl PathLossModel {
    /// Median path loss at `distance` metres (clamped to 1 m).
    pub fn median_db(&self, distance: f64) -> f64 {
        self.intercept_db + self.exponent * 10.0 * distance.max(1.0).log10()
    }
}

/// `P(d) = min(d1/d, 1)(1 − e^{−d/d2}) + e^{−d/d2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosProbability {
    pub d1: f64,
    pub d2: f64,
}

impl Default for LosProbability {
    fn default() -> Self {
        Self { d1: 18.0, d2: 36.0 }
    }
}

impl LosProbability {
    pub fn at(&self, distance: f64) -> f64 {
        if distance <= 0.0 {
            return 1.0;
        }
        let e = (-distance / self.d2).exp();
        (self.d1 / distance).min(1.0) * (1.0 - e) + e
    }
}

/// Correlation distances in metres, one per independently drawn quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDistances {
    pub ds: f64,
    pub asd: f64,
    pub asa: f64,
    pub zsd: f64,
    pub zsa: f64,
    pub shadow_fading: f64,
    pub k_factor: f64,
    pub los: f64,
}

impl Default for CorrelationDistances {
    fn default() -> Self {
        Self {
            ds: 8.0,
            asd: 7.0,
            asa: 5.0,
            zsd: 4.0,
            zsa: 4.0,
            shadow_fading: 10.0,
            k_factor: 4.0,
            los: 10.0,
        }
    }
}

impl CorrelationDistances {
    pub fn uniform(d: f64) -> Self {
        Self {
            ds: d,
            asd: d,
            asa: d,
            zsd: d,
            zsa: d,
            shadow_fading: d,
            k_factor: d,
            los: d,
        }
    }

    pub fn of(&self, field: LspField) -> f64 {
        match field {
            LspField::Ds | LspField::Clusters => self.ds,
            LspField::Asd => self.asd,
            LspField::Asa => self.asa,
            LspField::Zsd => self.zsd,
            LspField::Zsa => self.zsa,
            LspField::ShadowFading => self.shadow_fading,
            LspField::KFactor => self.k_factor,
            LspField::Los => self.los,
        }
    }
}

/// Fitted distributions driving the stochastic sampler.
///
/// Delay spread in log10-seconds, angle spreads in log10-degrees, everything
/// else in the unit named by the field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StochasticParamSet {
    pub ds: LogNormal,
    pub asd: LogNormal,
    pub asa: LogNormal,
    pub zsd: LogNormal,
    pub zsa: LogNormal,
    pub path_loss: PathLossModel,
    pub k_factor_db: NormalDb,
    /// r_τ, > 1.
    pub delay_scaling: f64,
    /// ζ, per-cluster shadowing in dB.
    pub cluster_shadow_std_db: f64,
    pub n_clusters_pmf: BTreeMap<usize, f64>,
    pub rays_per_cluster_pmf: BTreeMap<usize, f64>,
    pub xpr_db: NormalDb,
    pub correlation_distance: CorrelationDistances,
    pub los_probability: LosProbability,
    /// Intra-cluster ray spread as a fraction of the angle spread.
    pub ray_offset_scale: f64,
}

fn check_pmf(name: &str, pmf: &BTreeMap<usize, f64>) -> Result<(), GscmError> {
    if pmf.is_empty() {
        return Err(GscmError::InvalidParams(format!("{name} is empty")));
    }
    if pmf.contains_key(&0) {
        return Err(GscmError::InvalidParams(format!("{name} assigns mass to zero")));
    }
    if pmf.values().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(GscmError::InvalidParams(format!("{name} has a probability outside [0, 1]")));
    }
    let total: f64 = pmf.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(GscmError::InvalidParams(format!("{name} sums to {total}")));
    }
    Ok(())
}

impl StochasticParamSet {
    pub fn validate(&self) -> Result<(), GscmError> {
        let stds = [
            ("ds.log_std", self.ds.log_std),
            ("asd.log_std", self.asd.log_std),
            ("asa.log_std", self.asa.log_std),
            ("zsd.log_std", self.zsd.log_std),
            ("zsa.log_std", self.zsa.log_std),
            ("path_loss.shadow_std_db", self.path_loss.shadow_std_db),
            ("k_factor_db.std", self.k_factor_db.std),
            ("cluster_shadow_std_db", self.cluster_shadow_std_db),
            ("xpr_db.std", self.xpr_db.std),
        ];
        for (name, v) in stds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GscmError::InvalidParams(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if !(self.delay_scaling > 1.0 && self.delay_scaling.is_finite()) {
            return Err(GscmError::InvalidParams(format!(
                "delay_scaling = {} must exceed 1",
                self.delay_scaling
            )));
        }
        check_pmf("n_clusters_pmf", &self.n_clusters_pmf)?;
        check_pmf("rays_per_cluster_pmf", &self.rays_per_cluster_pmf)?;
        let c = &self.correlation_distance;
        for d in [c.ds, c.asd, c.asa, c.zsd, c.zsa, c.shadow_fading, c.k_factor, c.los] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(GscmError::InvalidParams("correlation distances must be positive".into()));
            }
        }
        if !(self.los_probability.d1 > 0.0 && self.los_probability.d2 > 0.0) {
            return Err(GscmError::InvalidParams("los_probability distances must be positive".into()));
        }
        if !(self.ray_offset_scale >= 0.0 && self.ray_offset_scale.is_finite()) {
            return Err(GscmError::InvalidParams("ray_offset_scale must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, GscmError> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter set serializes")
    }

    pub fn load(path: &Path) -> Result<Self, GscmError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), GscmError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::params;
    use super::*;

    #[test]
    fn json_round_trip_and_validation() {
        let p = params();
        assert_eq!(StochasticParamSet::from_json(&p.to_json()).unwrap(), p);
        let mut bad = p.clone();
        bad.delay_scaling = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = p.clone();
        bad.n_clusters_pmf.insert(10, 0.1);
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.ds.log_std = -0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn los_probability_shape() {
        let l = LosProbability::default();
        assert_eq!(l.at(0.0), 1.0);
        assert_eq!(l.at(10.0), 1.0);
        let mut prev = 1.0;
        for d in [20.0, 40.0, 80.0, 160.0] {
            assert!(l.at(d) < prev);
            prev = l.at(d);
        }
    }
}
