use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use super::{
    CorrelationDistances, GscmError, LogNormal, LosProbability, NormalDb, PathLossModel, StochasticParamSet,
};
use crate::params::{empirical_pmf, ClusterSet, LspRecord};

/// One snapshot's contribution to a fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub lsps: LspRecord,
    pub clusters: ClusterSet,
    /// TX-RX distance, metres.
    pub distance: f64,
}

/// Settings that cannot be estimated from per-snapshot statistics, plus
/// fallbacks for quantities the data may not determine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub min_snapshots: usize,
    pub correlation_distance: CorrelationDistances,
    pub los_probability: LosProbability,
    pub ray_offset_scale: f64,
    /// Used when no snapshot has two clusters and a positive delay spread.
    pub fallback_delay_scaling: f64,
    /// Used when no NLOS snapshot has three clusters.
    pub fallback_cluster_shadow_std_db: f64,
    /// Per-ray XPR and per-snapshot K-factor values are clipped to ± this.
    pub clip_db: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            min_snapshots: 30,
            correlation_distance: CorrelationDistances::default(),
            los_probability: LosProbability::default(),
            ray_offset_scale: 0.2,
            fallback_delay_scaling: 3.0,
            fallback_cluster_shadow_std_db: 3.0,
            clip_db: 60.0,
        }
    }
}

/// Mean and sample standard deviation. Identical values give exactly that
/// value and zero spread.
fn moments(values: &[f64]) -> (f64, f64) {
    match values {
        [] => (0.0, 0.0),
        [first, rest @ ..] if rest.iter().all(|v| v == first) => (*first, 0.0),
        _ => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (mean, (ss / (n - 1.0)).sqrt())
        }
    }
}

fn lognormal(values: impl Iterator<Item = f64>, floor_log: f64) -> LogNormal {
    let logs: Vec<f64> = values.filter(|v| *v > 0.0).map(f64::log10).collect();
    if logs.is_empty() {
        return LogNormal {
            log_mean: floor_log,
            log_std: 0.0,
        };
    }
    let (log_mean, log_std) = moments(&logs);
    LogNormal { log_mean, log_std }
}

fn fit_path_loss(samples: &[&FitSample]) -> Result<PathLossModel, GscmError> {
    let x: Vec<f64> = samples.iter().map(|s| 10.0 * s.distance.log10()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.lsps.path_loss_db).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GscmError::DegenerateFit("distances must be positive".into()));
    }
    let (mx, _) = moments(&x);
    let (my, _) = moments(&y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(GscmError::DegenerateFit("all TX-RX distances are equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let exponent = sxy / sxx;
    let intercept_db = my - exponent * mx;
    let ss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept_db - exponent * a).powi(2)).sum();
    let dof = samples.len().saturating_sub(2);
    Ok(PathLossModel {
        intercept_db,
        exponent,
        shadow_std_db: if dof > 0 { (ss / dof as f64).sqrt() } else { 0.0 },
    })
}

/// Mean excess cluster delay over delay spread, corrected for the expected
/// minimum of `N` exponential draws.
fn fit_delay_scaling(samples: &[&FitSample]) -> Option<f64> {
    let ratios: Vec<f64> = samples
        .iter()
        .filter(|s| s.clusters.clusters.len() >= 2 && s.lsps.delay_spread > 0.0)
        .map(|s| {
            let c = &s.clusters.clusters;
            let n = c.len() as f64;
            let t0 = c.iter().map(|c| c.mean_delay).fold(f64::INFINITY, f64::min);
            let excess = c.iter().map(|c| c.mean_delay - t0).sum::<f64>() / n;
            excess / s.lsps.delay_spread / (1.0 - 1.0 / n)
        })
        .collect();
    if ratios.is_empty() {
        return None;
    }
    let r = moments(&ratios).0;
    (r > 1.0 && r.is_finite()).then_some(r)
}

/// Pooled within-snapshot deviation of cluster power (dB) around the
/// exponential decay implied by `r`.
fn fit_cluster_shadowing(samples: &[&FitSample], r: f64) -> Option<f64> {
    let mut ss = 0.0;
    let mut dof = 0usize;
    for s in samples.iter().filter(|s| s.lsps.los_state == Some(false) && s.lsps.delay_spread > 0.0) {
        let c = &s.clusters.clusters;
        if c.len() < 3 {
            continue;
        }
        let slope = 10.0 * E.log10() * (r - 1.0) / (r * s.lsps.delay_spread);
        let e: Vec<f64> = c
            .iter()
            .filter(|c| c.power > 0.0)
            .map(|c| 10.0 * c.power.log10() + slope * c.mean_delay)
            .collect();
        if e.len() < 3 {
            continue;
        }
        let mean = e.iter().sum::<f64>() / e.len() as f64;
        ss += e.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
        dof += e.len() - 1;
    }
    (dof > 0).then(|| (ss / dof as f64).sqrt())
}

/// Fits a stochastic parameter set to snapshot statistics.
///
/// Spreads are lognormal with the sample moments of their `log10` values;
/// zero spreads (single-path snapshots) are left out. Path loss is a least
/// squares line against `10 log10(d)`. Outage snapshots count towards the
/// minimum but contribute to nothing else.
pub fn fit_stochastic_params(samples: &[FitSample], opts: &FitOptions) -> Result<StochasticParamSet, GscmError> {
    if samples.len() < opts.min_snapshots {
        return Err(GscmError::InsufficientData {
            needed: opts.min_snapshots,
            got: samples.len(),
        });
    }
    let live: Vec<&FitSample> = samples
        .iter()
        .filter(|s| !s.lsps.is_outage() && s.lsps.path_loss_db.is_finite() && !s.clusters.is_empty())
        .collect();
    if live.len() < 2 {
        return Err(GscmError::InsufficientData {
            needed: opts.min_snapshots,
            got: live.len(),
        });
    }
    let spread = |f: fn(&LspRecord) -> f64| lognormal(live.iter().map(|s| f(&s.lsps).to_degrees()), -6.0);
    let clip = |v: f64| v.clamp(-opts.clip_db, opts.clip_db);

    let k: Vec<f64> = live
        .iter()
        .filter(|s| s.lsps.los_state == Some(true) && !s.lsps.k_factor_db.is_nan())
        .map(|s| clip(s.lsps.k_factor_db))
        .collect();
    let (k_mean, k_std) = moments(&k);
    let xpr: Vec<f64> = live.iter().flat_map(|s| s.clusters.rays()).map(|r| clip(r.xpr_db())).collect();
    let (xpr_mean, xpr_std) = moments(&xpr);

    let delay_scaling = fit_delay_scaling(&live).unwrap_or(opts.fallback_delay_scaling);
    let params = StochasticParamSet {
        ds: lognormal(live.iter().map(|s| s.lsps.delay_spread), -12.0),
        asd: spread(|l| l.asd),
        asa: spread(|l| l.asa),
        zsd: spread(|l| l.zsd),
        zsa: spread(|l| l.zsa),
        path_loss: fit_path_loss(&live)?,
        k_factor_db: NormalDb { mean: k_mean, std: k_std },
        delay_scaling,
        cluster_shadow_std_db: fit_cluster_shadowing(&live, delay_scaling)
            .unwrap_or(opts.fallback_cluster_shadow_std_db),
        n_clusters_pmf: empirical_pmf(live.iter().map(|s| s.clusters.clusters.len())),
        rays_per_cluster_pmf: empirical_pmf(
            live.iter().flat_map(|s| s.clusters.clusters.iter().map(|c| c.rays.len().max(1))),
        ),
        xpr_db: NormalDb {
            mean: xpr_mean,
            std: xpr_std,
        },
        correlation_distance: opts.correlation_distance,
        los_probability: opts.los_probability,
        ray_offset_scale: opts.ray_offset_scale,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::params;
    use super::super::{generate_clusters, LogNormal};
    use super::*;
    use crate::params::ClusterSource;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sample(ds: f64, distance: f64, seed: u64) -> FitSample {
        let mut lsps = LspRecord {
            path_loss_db: 61.4 + 20.0 * distance.log10(),
            delay_spread: ds,
            asd: 0.3,
            asa: 0.5,
            zsd: 0.1,
            zsa: 0.2,
            k_factor_db: f64::NEG_INFINITY,
            n_clusters: 6,
            n_rays: 0,
            los_state: Some(false),
        };
        let clusters = generate_clusters(&lsps, &params(), seed).unwrap();
        lsps.n_rays = clusters.n_rays();
        FitSample {
            lsps,
            clusters,
            distance,
        }
    }

    #[test]
    fn too_few_snapshots() {
        let s: Vec<FitSample> = (0..29).map(|i| sample(1e-8, 2.0 + i as f64, i)).collect();
        assert!(matches!(
            fit_stochastic_params(&s, &FitOptions::default()),
            Err(GscmError::InsufficientData { needed: 30, got: 29 })
        ));
    }

    #[test]
    fn equal_distances_are_degenerate() {
        let s: Vec<FitSample> = (0..30).map(|i| sample(1e-8, 5.0, i)).collect();
        assert!(matches!(
            fit_stochastic_params(&s, &FitOptions::default()),
            Err(GscmError::DegenerateFit(_))
        ));
    }

    #[test]
    fn path_loss_law_is_recovered() {
        let s: Vec<FitSample> = (0..40).map(|i| sample(1e-8, 1.0 + 1.7 * i as f64, i)).collect();
        let p = fit_stochastic_params(&s, &FitOptions::default()).unwrap();
        assert!((p.path_loss.intercept_db - 61.4).abs() < 1e-6);
        assert!((p.path_loss.exponent - 2.0).abs() < 1e-6);
        assert!(p.path_loss.shadow_std_db < 1e-6);
    }

    #[test]
    fn identical_statistics_give_zero_spreads() {
        let base = sample(2e-8, 10.0, 1);
        let s: Vec<FitSample> = (0..30)
            .map(|i| {
                let mut x = base.clone();
                x.distance = 3.0 + i as f64;
                x
            })
            .collect();
        let p = fit_stochastic_params(&s, &FitOptions::default()).unwrap();
        for d in [p.ds, p.asd, p.asa, p.zsd, p.zsa] {
            assert_eq!(d.log_std, 0.0);
        }
        assert_eq!(p.ds.log_mean, 2e-8f64.log10());
        assert_eq!(p.path_loss.exponent, 0.0);
        assert_eq!(p.path_loss.shadow_std_db, 0.0);
        assert_eq!(p.n_clusters_pmf.len(), 1);
    }

    #[test]
    fn lognormal_delay_spread_round_trip() {
        let planted = LogNormal {
            log_mean: -7.5,
            log_std: 0.2,
        };
        let mut rng = crate::seed::rng_for(9, &[]);
        let n = 2000;
        let s: Vec<FitSample> = (0..n)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                let d = 1.0 + rng.random::<f64>() * 50.0;
                sample(planted.at(z), d, i)
            })
            .collect();
        let p = fit_stochastic_params(&s, &FitOptions::default()).unwrap();
        let se_mean = 0.2 / (n as f64).sqrt();
        let se_std = 0.2 / (2.0 * (n as f64 - 1.0)).sqrt();
        assert!((p.ds.log_mean + 7.5).abs() < 3.0 * se_mean);
        assert!((p.ds.log_std - 0.2).abs() < 3.0 * se_std);
        // Generated with r_τ = 3 and ζ = 3 dB.
        assert!((p.delay_scaling - 3.0).abs() < 1.0, "r {}", p.delay_scaling);
        assert!(p.cluster_shadow_std_db > 1.0 && p.cluster_shadow_std_db < 6.0);
        assert!((p.xpr_db.mean - 11.0).abs() < 0.5);
        assert_eq!(s[0].clusters.source, ClusterSource::Stochastic);
    }
}
