use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::Point3;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{ConsistencyGrid, GscmError, LspField, StochasticParamSet};
use crate::params::{Cluster, ClusterSet, ClusterSource, LspRecord};
use crate::rt::{angles_from_direction, PathRecord, PolMatrix};
use crate::seed::{rng_for, stream};
use crate::units::wrap_two_pi;

/// Unit-rms ray offsets, interleaved so that any prefix is balanced around
/// the cluster centre.
pub const RAY_OFFSETS: [f64; 20] = [
    0.0447, -0.0447, 0.1413, -0.1413, 0.2492, -0.2492, 0.3715, -0.3715, 0.5129, -0.5129, 0.6797, -0.6797, 0.8844,
    -0.8844, 1.1481, -1.1481, 1.5195, -1.5195, 2.1551, -2.1551,
];

/// Azimuth spread cap in degrees.
const MAX_AZIMUTH_SPREAD_DEG: f64 = 104.0;
/// Zenith spread cap in degrees.
const MAX_ZENITH_SPREAD_DEG: f64 = 52.0;

fn standard_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Smallest count whose cumulative probability reaches `u`.
fn pmf_quantile(pmf: &BTreeMap<usize, f64>, u: f64) -> usize {
    let mut acc = 0.0;
    for (k, p) in pmf {
        acc += p;
        if u <= acc {
            return *k;
        }
    }
    *pmf.keys().next_back().expect("validated pmf is non-empty")
}

fn pmf_mean(pmf: &BTreeMap<usize, f64>) -> f64 {
    pmf.iter().map(|(k, p)| *k as f64 * p).sum()
}

/// Draws the large-scale parameters of the link `tx → rx`. Every quantity is
/// the distribution transform of the grid value at the receiver position, so
/// receivers sharing a lattice cell receive identical records.
///
/// LOS state is a Bernoulli draw against the distance-dependent LOS
/// probability. NLOS records carry `k_factor_db = -inf`. `n_rays` is the
/// expected ray count; the realized count comes from [`generate_clusters`].
pub fn draw_lsps(
    params: &StochasticParamSet,
    tx: &Point3<f64>,
    rx: &Point3<f64>,
    grid: &ConsistencyGrid,
) -> LspRecord {
    let z = |f: LspField| grid.value(f, rx);
    let distance = (rx - tx).norm();
    let los = standard_cdf(z(LspField::Los)) < params.los_probability.at(distance);
    let az = |d: &super::LogNormal, f| d.at(z(f)).min(MAX_AZIMUTH_SPREAD_DEG).to_radians();
    let zen = |d: &super::LogNormal, f| d.at(z(f)).min(MAX_ZENITH_SPREAD_DEG).to_radians();
    let n_clusters = pmf_quantile(&params.n_clusters_pmf, standard_cdf(z(LspField::Clusters)));
    let pl = &params.path_loss;
    LspRecord {
        path_loss_db: pl.median_db(distance) + pl.shadow_std_db * z(LspField::ShadowFading),
        delay_spread: params.ds.at(z(LspField::Ds)),
        asd: az(&params.asd, LspField::Asd),
        asa: az(&params.asa, LspField::Asa),
        zsd: zen(&params.zsd, LspField::Zsd),
        zsa: zen(&params.zsa, LspField::Zsa),
        k_factor_db: if los {
            params.k_factor_db.at(z(LspField::KFactor))
        } else {
            f64::NEG_INFINITY
        },
        n_clusters,
        n_rays: (n_clusters as f64 * pmf_mean(&params.rays_per_cluster_pmf)).round() as usize,
        los_state: Some(los),
    }
}

/// Angular reference of a generated cluster set: the centre directions of
/// departure and arrival (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkFrame {
    pub aod_az: f64,
    pub aod_zen: f64,
    pub aoa_az: f64,
    pub aoa_zen: f64,
}

impl Default for LinkFrame {
    /// Horizontal link along +x.
    fn default() -> Self {
        Self {
            aod_az: 0.0,
            aod_zen: FRAC_PI_2,
            aoa_az: PI,
            aoa_zen: FRAC_PI_2,
        }
    }
}

impl LinkFrame {
    /// Frame centred on the direct line between two nodes.
    pub fn between(tx: &Point3<f64>, rx: &Point3<f64>) -> Self {
        let d = rx - tx;
        if d.norm() == 0.0 {
            return Self::default();
        }
        let (aod_az, aod_zen) = angles_from_direction(&d);
        let (aoa_az, aoa_zen) = angles_from_direction(&(-d));
        Self {
            aod_az,
            aod_zen,
            aoa_az,
            aoa_zen,
        }
    }
}

fn fold_zenith(z: f64) -> f64 {
    let z = z.rem_euclid(TAU);
    if z > PI {
        TAU - z
    } else {
        z
    }
}

fn xpr_matrix(rng: &mut ChaCha8Rng, xpr_db: f64) -> PolMatrix {
    let cross = 10f64.powf(-xpr_db / 20.0);
    let mut phase = || Complex64::from_polar(1.0, rng.random::<f64>() * TAU);
    let m = [[phase(), phase() * cross], [phase() * cross, phase()]];
    let norm = (2.0 + 2.0 * cross * cross).sqrt();
    let s = 2f64.sqrt() / norm;
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

/// [`generate_clusters_in`] in the default frame.
pub fn generate_clusters(lsps: &LspRecord, params: &StochasticParamSet, seed: u64) -> Result<ClusterSet, GscmError> {
    generate_clusters_in(lsps, params, seed, LinkFrame::default())
}

/// Draws a normalized cluster set for the given large-scale parameters.
///
/// Cluster delays are `−r_τ·DS·ln U`, sorted and shifted to start at zero;
/// powers decay as `exp(−τ(r_τ−1)/(r_τ·DS))` with per-cluster lognormal
/// shadowing and sum to one. In LOS the first cluster receives the K-factor
/// share of the power. Cluster centres scatter around the frame with the
/// link's angle spreads; rays sit at [`RAY_OFFSETS`] scaled by
/// `ray_offset_scale` times the spread, with random pairing between the four
/// angle dimensions.
pub fn generate_clusters_in(
    lsps: &LspRecord,
    params: &StochasticParamSet,
    seed: u64,
    frame: LinkFrame,
) -> Result<ClusterSet, GscmError> {
    let n = lsps.n_clusters;
    if n == 0 {
        return Err(GscmError::NoClusters);
    }
    let mut rng = rng_for(seed, &[stream::CLUSTERS]);
    let r = params.delay_scaling;

    let mut x: Vec<f64> = (0..n).map(|_| -r * (1.0 - rng.random::<f64>()).ln()).collect();
    x.sort_by(f64::total_cmp);
    let x0 = x[0];
    for v in &mut x {
        *v -= x0;
    }
    let mut powers: Vec<f64> = x
        .iter()
        .map(|xi| {
            let zeta: f64 = rng.sample(StandardNormal);
            (-xi * (r - 1.0) / r).exp() * 10f64.powf(-zeta * params.cluster_shadow_std_db / 10.0)
        })
        .collect();
    let los = lsps.los_state == Some(true);
    if los && lsps.k_factor_db.is_finite() {
        let k = 10f64.powf(lsps.k_factor_db / 10.0);
        let diffuse: f64 = powers.iter().sum();
        for p in &mut powers {
            *p /= diffuse * (k + 1.0);
        }
        powers[0] += k / (k + 1.0);
    }
    let total: f64 = powers.iter().sum();
    for p in &mut powers {
        *p /= total;
    }

    let mut clusters = Vec::with_capacity(n);
    for (i, (&xi, &power)) in x.iter().zip(&powers).enumerate() {
        let delay = xi * lsps.delay_spread;
        let centred = los && i == 0;
        let mut scatter = |spread: f64| {
            let g: f64 = rng.sample(StandardNormal);
            if centred {
                0.0
            } else {
                g * spread
            }
        };
        let c_aod_az = frame.aod_az + scatter(lsps.asd);
        let c_aoa_az = frame.aoa_az + scatter(lsps.asa);
        let c_aod_zen = frame.aod_zen + scatter(lsps.zsd);
        let c_aoa_zen = frame.aoa_zen + scatter(lsps.zsa);

        let m = pmf_quantile(&params.rays_per_cluster_pmf, rng.random::<f64>()).max(1);
        let offsets: Vec<f64> = (0..m).map(|k| RAY_OFFSETS[k % RAY_OFFSETS.len()]).collect();
        let shuffled = |rng: &mut ChaCha8Rng| {
            let mut o = offsets.clone();
            o.shuffle(rng);
            o
        };
        let o_aoa_az = shuffled(&mut rng);
        let o_aod_zen = shuffled(&mut rng);
        let o_aoa_zen = shuffled(&mut rng);
        let amplitude = (power / m as f64).sqrt();
        let mut rays = Vec::with_capacity(m);
        for k in 0..m {
            // The LOS ray itself sits exactly on the direct line.
            let s = if centred && k == 0 { 0.0 } else { params.ray_offset_scale };
            let phase = rng.random::<f64>() * TAU;
            let xpr = params.xpr_db.at(rng.sample(StandardNormal));
            rays.push(PathRecord {
                delay,
                amplitude,
                phase,
                aod_az: wrap_two_pi(c_aod_az + s * lsps.asd * offsets[k]),
                aod_zen: fold_zenith(c_aod_zen + s * lsps.zsd * o_aod_zen[k]),
                aoa_az: wrap_two_pi(c_aoa_az + s * lsps.asa * o_aoa_az[k]),
                aoa_zen: fold_zenith(c_aoa_zen + s * lsps.zsa * o_aoa_zen[k]),
                n_reflections: 0,
                n_transmissions: 0,
                interactions: vec![],
                pol_matrix: xpr_matrix(&mut rng, xpr),
                doppler: 0.0,
                blockage_db: 0.0,
                los: centred && k == 0,
                points: vec![],
            });
        }
        let mut cluster = Cluster::from_rays(rays);
        cluster.power = power;
        cluster.mean_delay = delay;
        clusters.push(cluster);
    }
    Ok(ClusterSet {
        clusters,
        source: ClusterSource::Stochastic,
    })
}
