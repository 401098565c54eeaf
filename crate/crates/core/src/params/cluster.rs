use std::cmp::Ordering;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::rt::{direction_from_angles, PathRecord};
use crate::units::wrap_two_pi;

/// Single-linkage thresholds for grouping rays into clusters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterGaps {
    /// Seconds.
    pub delay_gap: f64,
    /// Radians, between arrival directions.
    pub angle_gap: f64,
}

impl Default for ClusterGaps {
    fn default() -> Self {
        Self {
            delay_gap: 5e-9,
            angle_gap: 15f64.to_radians(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSource {
    Deterministic,
    Stochastic,
    Hybrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub rays: Vec<PathRecord>,
    /// Linear power, the sum of ray powers.
    pub power: f64,
    /// Power-weighted mean delay, seconds.
    pub mean_delay: f64,
    pub mean_aod_az: f64,
    pub mean_aod_zen: f64,
    pub mean_aoa_az: f64,
    pub mean_aoa_zen: f64,
}

impl Cluster {
    /// Builds a cluster and its power-weighted statistics. Azimuth means are
    /// circular.
    pub fn from_rays(rays: Vec<PathRecord>) -> Self {
        let w: Vec<f64> = rays.iter().map(PathRecord::power).collect();
        let power: f64 = w.iter().sum();
        let norm = if power > 0.0 { power } else { 1.0 };
        let lin = |f: fn(&PathRecord) -> f64| rays.iter().zip(&w).map(|(r, w)| w * f(r)).sum::<f64>() / norm;
        let circ = |f: fn(&PathRecord) -> f64| {
            let z: Complex64 = rays.iter().zip(&w).map(|(r, w)| Complex64::from_polar(*w, f(r))).sum();
            wrap_two_pi(z.arg())
        };
        Self {
            power,
            mean_delay: lin(|r| r.delay),
            mean_aod_az: circ(|r| r.aod_az),
            mean_aod_zen: lin(|r| r.aod_zen),
            mean_aoa_az: circ(|r| r.aoa_az),
            mean_aoa_zen: lin(|r| r.aoa_zen),
            rays,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
    pub source: ClusterSource,
}

impl ClusterSet {
    pub fn total_power(&self) -> f64 {
        self.clusters.iter().map(|c| c.power).sum()
    }

    pub fn n_rays(&self) -> usize {
        self.clusters.iter().map(|c| c.rays.len()).sum()
    }

    pub fn rays(&self) -> impl Iterator<Item = &PathRecord> {
        self.clusters.iter().flat_map(|c| c.rays.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Copy scaled so that cluster powers sum to one. Ray amplitudes are
    /// scaled consistently.
    pub fn normalized(&self) -> Self {
        let total = self.total_power();
        if !(total > 0.0) {
            return self.clone();
        }
        let amp = total.sqrt().recip();
        let clusters = self
            .clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.power /= total;
                for r in &mut c.rays {
                    r.amplitude *= amp;
                }
                c
            })
            .collect();
        Self {
            clusters,
            source: self.source,
        }
    }
}

/// Great-circle angle between two (azimuth, zenith) directions.
pub fn angular_distance(az1: f64, zen1: f64, az2: f64, zen2: f64) -> f64 {
    let a = direction_from_angles(az1, zen1);
    let b = direction_from_angles(az2, zen2);
    a.cross(&b).norm().atan2(a.dot(&b))
}

fn ray_order(a: &PathRecord, b: &PathRecord) -> Ordering {
    a.delay
        .total_cmp(&b.delay)
        .then(a.amplitude.total_cmp(&b.amplitude))
        .then(a.aoa_az.total_cmp(&b.aoa_az))
        .then(a.aoa_zen.total_cmp(&b.aoa_zen))
        .then(a.aod_az.total_cmp(&b.aod_az))
        .then(a.aod_zen.total_cmp(&b.aod_zen))
        .then(a.phase.total_cmp(&b.phase))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clustering: rays `u`, `v` are linked when their delays
/// differ by at most `delay_gap` and their arrival directions by at most
/// `angle_gap`; clusters are the connected components, ordered by ascending
/// mean delay. The result does not depend on input order.
pub fn cluster_paths(paths: &[PathRecord], gaps: &ClusterGaps) -> ClusterSet {
    let mut rays: Vec<PathRecord> = paths.to_vec();
    rays.sort_by(ray_order);
    let n = rays.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            // Sorted by delay, so later rays only get further away.
            if rays[j].delay - rays[i].delay > gaps.delay_gap {
                break;
            }
            let ang = angular_distance(rays[i].aoa_az, rays[i].aoa_zen, rays[j].aoa_az, rays[j].aoa_zen);
            if ang <= gaps.angle_gap {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<PathRecord>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for (i, ray) in rays.iter().enumerate() {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(ray.clone());
    }
    let mut clusters: Vec<Cluster> = groups.into_iter().map(Cluster::from_rays).collect();
    clusters.sort_by(|a, b| a.mean_delay.total_cmp(&b.mean_delay).then_with(|| ray_order(&a.rays[0], &b.rays[0])));
    ClusterSet {
        clusters,
        source: ClusterSource::Deterministic,
    }
}
