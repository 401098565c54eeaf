//! Blocker-density sweep: cluster counts, coverage and the fate of weak
//! single-ray clusters as random blockers are added around the receivers.

use std::collections::HashSet;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{place, Area, BlockerDrop, Placement, ScenarioError};
use crate::geometry::{BlockerScreen, DigitalMap};
use crate::params::{cluster_paths, coverage_map, ClusterGaps, GridSpec};
use crate::rt::dump::interaction_string;
use crate::rt::{Node, PathRecord, TraceConfig, Tracer};
use crate::seed::stream;
use crate::units::power_to_db;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Blocker counts per receiver, ascending.
    pub blocker_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub receivers_per_seed: usize,
    pub rx_area: Area,
    pub rx_height: f64,
    /// Template for the screens; its `count` is ignored.
    pub drop: BlockerDrop,
    pub tx_power_dbm: f64,
    /// Paths below this received power are not detected.
    pub detection_threshold_dbm: f64,
    /// Single-ray clusters at least this far below the strongest cluster of
    /// their link count as weak.
    pub weak_margin_db: f64,
    /// Share of a seed's weak single-ray clusters that must be undetected at
    /// the highest blocker count for the seed to count as vanished.
    pub vanish_share: f64,
    pub coverage_grid: GridSpec,
    pub coverage_threshold_dbm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepLevel {
    pub blockers: usize,
    pub mean_clusters: f64,
    pub mean_weak_single_ray: f64,
    /// Covered fraction of the coverage grid, averaged over seeds.
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockerSweep {
    pub levels: Vec<SweepLevel>,
    /// Seeds whose unblocked links have at least one weak single-ray cluster.
    pub seeds_with_weak: usize,
    /// Of those, the seeds where at least `vanish_share` of those clusters'
    /// rays are undetected at the highest blocker count.
    pub seeds_vanished: usize,
    /// Per seed with weak clusters: fraction of their rays undetected at the
    /// highest blocker count.
    pub vanished_fractions: Vec<f64>,
}

impl BlockerSweep {
    pub fn vanish_fraction(&self) -> f64 {
        if self.seeds_with_weak == 0 {
            return 0.0;
        }
        self.seeds_vanished as f64 / self.seeds_with_weak as f64
    }
}

struct LinkStats {
    clusters: usize,
    /// Identities of the rays forming weak single-ray clusters.
    weak: Vec<String>,
    detected: HashSet<String>,
}

fn identity(p: &PathRecord) -> String {
    if p.los {
        "LOS".into()
    } else {
        interaction_string(p)
    }
}

fn link_stats(paths: Vec<PathRecord>, opts: &SweepOptions, gaps: &ClusterGaps) -> LinkStats {
    let detected: Vec<PathRecord> = paths
        .into_iter()
        .filter(|p| opts.tx_power_dbm + power_to_db(p.power()) >= opts.detection_threshold_dbm)
        .collect();
    let set = cluster_paths(&detected, gaps);
    let strongest = set.clusters.iter().map(|c| c.power).fold(0.0, f64::max);
    let weak = set
        .clusters
        .iter()
        .filter(|c| c.rays.len() == 1 && power_to_db(strongest / c.power) >= opts.weak_margin_db)
        .map(|c| identity(&c.rays[0]))
        .collect();
    LinkStats {
        clusters: set.clusters.len(),
        weak,
        detected: detected.iter().map(identity).collect(),
    }
}

/// Runs the sweep from one transmitter. For each seed, receivers are dropped
/// in `rx_area` and every receiver gets its own screens near it; the screen
/// populations of successive blocker counts are nested. Relative path
/// pruning is disabled so that only the absolute detection threshold
/// decides which paths survive.
pub fn blocker_sweep(
    map: &DigitalMap,
    tx: &Point3<f64>,
    trace: &TraceConfig,
    gaps: &ClusterGaps,
    opts: &SweepOptions,
) -> Result<BlockerSweep, ScenarioError> {
    if opts.blocker_counts.is_empty() || opts.seeds.is_empty() {
        return Err(ScenarioError::Config("sweep: need blocker counts and seeds".into()));
    }
    let trace = TraceConfig {
        power_floor: f64::MAX,
        ..trace.clone()
    };
    let tracer = Tracer::new(map, Node::at(*tx), &trace)?;
    let max_count = *opts.blocker_counts.iter().max().expect("non-empty");
    let placement = Placement::Random {
        count: opts.receivers_per_seed,
        height: Some(opts.rx_height),
        area: Some(opts.rx_area),
        clearance: 0.3,
        seed: None,
    };

    // Per seed and level: link stats and η.
    let per_seed: Vec<Vec<(Vec<LinkStats>, f64)>> = opts
        .seeds
        .par_iter()
        .map(|&seed| {
            let rx = place(map, &placement, opts.rx_height, seed, stream::RX_DROP, "sweep.rx")?;
            let screens: Vec<Vec<BlockerScreen>> = rx
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    (0..max_count as u64)
                        .map(|j| opts.drop.screen(seed, &opts.rx_area, p, 0, i as u64, j))
                        .collect()
                })
                .collect();
            opts.blocker_counts
                .iter()
                .map(|&m| {
                    let blockers: Vec<BlockerScreen> = screens.iter().flat_map(|s| s[..m].iter().cloned()).collect();
                    let links = rx
                        .iter()
                        .map(|p| Ok(link_stats(tracer.trace_with_blockers(&Node::at(*p), &blockers)?, opts, gaps)))
                        .collect::<Result<Vec<_>, ScenarioError>>()?;
                    let blocked = map.with_blockers(blockers)?;
                    let cov = coverage_map(
                        &blocked,
                        &Node::at(*tx),
                        &opts.coverage_grid,
                        opts.coverage_threshold_dbm,
                        opts.tx_power_dbm,
                        &trace,
                    )?;
                    Ok((links, cov.eta))
                })
                .collect()
        })
        .collect::<Result<_, ScenarioError>>()?;

    let levels = opts
        .blocker_counts
        .iter()
        .enumerate()
        .map(|(l, &m)| {
            let links: Vec<&LinkStats> = per_seed.iter().flat_map(|s| s[l].0.iter()).collect();
            let n = links.len() as f64;
            SweepLevel {
                blockers: m,
                mean_clusters: links.iter().map(|s| s.clusters as f64).sum::<f64>() / n,
                mean_weak_single_ray: links.iter().map(|s| s.weak.len() as f64).sum::<f64>() / n,
                eta: per_seed.iter().map(|s| s[l].1).sum::<f64>() / per_seed.len() as f64,
            }
        })
        .collect();

    let first = opts.blocker_counts.iter().position(|&m| m == 0);
    let last = opts.blocker_counts.iter().position(|&m| m == max_count).expect("max present");
    let (mut seeds_with_weak, mut seeds_vanished) = (0, 0);
    let mut vanished_fractions = Vec::new();
    if let Some(first) = first {
        for s in &per_seed {
            let pairs: Vec<(&LinkStats, &LinkStats)> = s[first].0.iter().zip(&s[last].0).collect();
            if pairs.iter().all(|(a, _)| a.weak.is_empty()) {
                continue;
            }
            seeds_with_weak += 1;
            let total: usize = pairs.iter().map(|(a, _)| a.weak.len()).sum();
            let gone: usize = pairs.iter().map(|(a, b)| a.weak.iter().filter(|w| !b.detected.contains(*w)).count()).sum();
            let share = gone as f64 / total as f64;
            vanished_fractions.push(share);
            if share >= opts.vanish_share {
                seeds_vanished += 1;
            }
        }
    }
    Ok(BlockerSweep {
        levels,
        seeds_with_weak,
        seeds_vanished,
        vanished_fractions,
    })
}
