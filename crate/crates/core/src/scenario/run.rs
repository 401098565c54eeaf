use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{drop_area, place, Area, Mode, ScenarioConfig, ScenarioError, BS_HEIGHT, UE_HEIGHT};
use crate::coeffgen::{cdl_from_clusters, cdl_table, tdl_from_cdl, tdl_to_json};
use crate::geometry::{BlockerScreen, DigitalMap};
use crate::gscm::{
    draw_lsps, fit_stochastic_params, generate_clusters_in, ConsistencyGrid, FitOptions, Interpolation, LinkFrame,
    StochasticParamSet,
};
use crate::hybrid::{apply_calibration, compose_parameters, merge_clusters, HybridError};
use crate::params::emit::{coverage_table, lsp_row, pmf_table, LSP_HEADER};
use crate::params::{cluster_paths, count_pmf, coverage_map, ClusterSet, LspRecord};
use crate::rt::dump::paths_to_csv;
use crate::rt::{Node, Tracer};
use crate::seed::{derive_seed, stream};
use crate::snapshotdb::{index_path, map_digest, DbConfig, NodeState, Snapshot, SnapshotDb, SnapshotKey};

/// Resolved node drops for a configuration. Setup `k` is transmitter `k`;
/// snapshot `n = i·N + t` is receiver drop `i` at time sample `t`.
#[derive(Clone, Debug)]
pub struct SnapshotPlan {
    pub map: DigitalMap,
    pub map_digest: [u8; 32],
    pub tx: Vec<Point3<f64>>,
    pub rx: Vec<Point3<f64>>,
    blocker_area: Option<Area>,
}

impl SnapshotPlan {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let map = cfg.load_map()?;
        let tx = place(&map, &cfg.tx, BS_HEIGHT, cfg.seed, stream::TX_DROP, "tx")?;
        let rx = place(&map, &cfg.rx, UE_HEIGHT, cfg.seed, stream::RX_DROP, "rx")?;
        let blocker_area = match &cfg.blockers {
            Some(b) if b.near_rx.is_none() => Some(drop_area(&map, b.area, "blockers.area")?),
            _ => None,
        };
        Ok(Self {
            map_digest: map_digest(&map, &cfg.trace),
            map,
            tx,
            rx,
            blocker_area,
        })
    }

    /// `(k, i, t)` for every snapshot, in key order.
    pub fn indices(&self, cfg: &ScenarioConfig) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.tx.len() * self.rx.len() * cfg.snapshots);
        for k in 0..self.tx.len() {
            for i in 0..self.rx.len() {
                for t in 0..cfg.snapshots {
                    out.push((k, i, t));
                }
            }
        }
        out
    }

    pub fn key(&self, cfg: &ScenarioConfig, k: usize, i: usize, t: usize) -> SnapshotKey {
        let time = t as f64 * cfg.time_step;
        let (tp, tv) = cfg.tx_mobility.state(&self.tx[k], time);
        let (rp, rv) = cfg.rx_mobility.state(&self.rx[i], time);
        SnapshotKey {
            k: k as u32,
            n: (i * cfg.snapshots + t) as u64,
            tx: NodeState {
                position: tp,
                velocity: tv,
            },
            rx: NodeState {
                position: rp,
                velocity: rv,
            },
            time,
        }
    }

    /// The map's own blockers plus the dropped screens, advanced to the
    /// snapshot time.
    pub fn blockers(&self, cfg: &ScenarioConfig, k: usize, i: usize, time: f64) -> Vec<BlockerScreen> {
        let mut out = self.map.blockers().to_vec();
        if let Some(drop) = &cfg.blockers {
            let area = self.blocker_area.unwrap_or([0.0; 4]);
            out.extend(
                (0..drop.count as u64)
                    .map(|j| drop.screen(cfg.seed, &area, &self.rx[i], k as u64, i as u64, j).advanced(time)),
            );
        }
        out
    }
}

/// Traces one snapshot of the plan.
pub fn trace_snapshot(
    cfg: &ScenarioConfig,
    plan: &SnapshotPlan,
    k: usize,
    i: usize,
    t: usize,
) -> Result<Snapshot, ScenarioError> {
    let key = plan.key(cfg, k, i, t);
    let tx = Node::moving(key.tx.position, key.tx.velocity);
    let rx = Node::moving(key.rx.position, key.rx.velocity);
    let tracer = Tracer::new(&plan.map, tx, &cfg.trace)?;
    let paths = tracer.trace_with_blockers(&rx, &plan.blockers(cfg, k, i, key.time))?;
    Ok(Snapshot::new(key, paths, &cfg.gaps, plan.map_digest))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ScenarioError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ScenarioError::Config(format!("workers: {e}")))
}

fn traced(cfg: &ScenarioConfig, plan: &SnapshotPlan, workers: usize) -> Result<Vec<Snapshot>, ScenarioError> {
    let idx = plan.indices(cfg);
    pool(workers)?.install(|| idx.par_iter().map(|&(k, i, t)| trace_snapshot(cfg, plan, k, i, t)).collect())
}

/// Traces every snapshot of the scenario on `workers` threads. The result
/// is ordered by `(k, n)` and independent of the worker count.
pub fn run_snapshots(cfg: &ScenarioConfig, workers: usize) -> Result<Vec<Snapshot>, ScenarioError> {
    cfg.validate()?;
    let plan = SnapshotPlan::new(cfg)?;
    traced(cfg, &plan, workers)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Index of every file a pipeline run wrote, with content hashes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Mode,
    pub seed: u64,
    pub site: String,
    pub metadata: super::Metadata,
    pub files: Vec<ManifestFile>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<ManifestFile>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), ScenarioError> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.record(name)
    }

    fn record(&mut self, name: &str) -> Result<(), ScenarioError> {
        let bytes = std::fs::read(self.dir.join(name))?;
        self.files.push(ManifestFile {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }
}

/// One link of the run: the snapshot key, its large-scale parameters and
/// its clusters (empty in outage).
struct Link {
    key: SnapshotKey,
    lsps: LspRecord,
    clusters: ClusterSet,
}

fn load_params(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<StochasticParamSet, ScenarioError> {
    if let Some(p) = &cfg.stochastic_params {
        return Ok(StochasticParamSet::load(p)?);
    }
    let path = cfg
        .database
        .as_ref()
        .ok_or_else(|| ScenarioError::Missing("stochastic parameter file or database".into()))?;
    let db = SnapshotDb::open_read_only(path)?;
    let setups: BTreeSet<u32> = db.keys().into_iter().map(|(k, _)| k).collect();
    let mut samples = Vec::new();
    for k in setups {
        samples.extend(db.export_for_fitting(k)?);
    }
    let params = fit_stochastic_params(&samples, &FitOptions::default())?;
    out.write("fitted_params.json", params.to_json().as_bytes())?;
    Ok(params)
}

fn stochastic_link(
    cfg: &ScenarioConfig,
    params: &StochasticParamSet,
    grid: &ConsistencyGrid,
    key: &SnapshotKey,
) -> Result<(LspRecord, ClusterSet), ScenarioError> {
    let (tx, rx) = (key.tx.position, key.rx.position);
    let lsps = draw_lsps(params, &tx, &rx, grid);
    let seed = derive_seed(cfg.seed, &[stream::SNAPSHOT, key.k as u64, key.n]);
    let clusters = generate_clusters_in(&lsps, params, seed, LinkFrame::between(&tx, &rx))?;
    Ok((lsps, clusters))
}

fn empty_set() -> ClusterSet {
    ClusterSet {
        clusters: vec![],
        source: crate::params::ClusterSource::Hybrid,
    }
}

fn hybrid_link(cfg: &ScenarioConfig, det: &Snapshot, sto_lsps: &LspRecord, sto: &ClusterSet) -> Result<Link, ScenarioError> {
    let det_clusters = cluster_paths(&det.paths, &cfg.gaps);
    let merged = match merge_clusters(&det_clusters, sto, cfg.hybrid) {
        Ok(m) => apply_calibration(&m, &cfg.calibration)?,
        Err(HybridError::Empty | HybridError::BothEmpty) => empty_set(),
        Err(e) => return Err(e.into()),
    };
    let (lsps, _) = compose_parameters(&det.lsps, sto_lsps, &cfg.selector);
    Ok(Link {
        key: det.key,
        lsps,
        clusters: merged,
    })
}

fn write_links(cfg: &ScenarioConfig, plan: &SnapshotPlan, links: &[Link], out: &mut Outputs) -> Result<(), ScenarioError> {
    let mut lsp = format!("{LSP_HEADER}\n");
    let mut cdl = String::new();
    let mut tdl = Vec::new();
    for l in links {
        let (k, n) = (l.key.k, l.key.n);
        lsp.push_str(&lsp_row(k as i64, n as i64, &l.lsps));
        lsp.push('\n');
        if l.clusters.is_empty() {
            let _ = writeln!(cdl, "# snapshot {k} {n} outage");
            continue;
        }
        let c = cdl_from_clusters(&l.clusters)?;
        let _ = writeln!(cdl, "# snapshot {k} {n}");
        cdl.push_str(&cdl_table(&c));
        let t = tdl_from_cdl(&c, &cfg.tx_array, &cfg.rx_array, cfg.trace.center_frequency, cfg.trace.bandwidth)?;
        tdl.push(json!({"k": k, "n": n, "model": tdl_to_json(&t, plan.map.site_name())}));
    }
    out.write("lsp.txt", lsp.as_bytes())?;
    out.write("cdl.txt", cdl.as_bytes())?;
    out.write("tdl.json", serde_json::to_string_pretty(&tdl)?.as_bytes())?;
    let sets: Vec<ClusterSet> = links.iter().filter(|l| !l.clusters.is_empty()).map(|l| l.clusters.clone()).collect();
    if !sets.is_empty() {
        out.write("pmf.txt", pmf_table(&count_pmf(&sets)?).as_bytes())?;
    }
    Ok(())
}

fn write_deterministic(
    cfg: &ScenarioConfig,
    plan: &SnapshotPlan,
    snaps: &[Snapshot],
    out: &mut Outputs,
) -> Result<(), ScenarioError> {
    let db_path = out.dir.join("snapshots.db");
    for p in [db_path.clone(), index_path(&db_path)] {
        if p.exists() {
            std::fs::remove_file(p)?;
        }
    }
    {
        let config = DbConfig {
            trace: cfg.trace.clone(),
            gaps: cfg.gaps,
        };
        let mut db = SnapshotDb::create(&db_path, plan.map_digest, config)?;
        for s in snaps {
            db.store(s)?;
        }
    }
    out.record("snapshots.db")?;
    out.record("snapshots.db.idx")?;
    let mut csv = String::new();
    for s in snaps {
        let _ = writeln!(csv, "# snapshot {} {}", s.key.k, s.key.n);
        csv.push_str(&paths_to_csv(&s.paths));
    }
    out.write("paths.csv", csv.as_bytes())?;
    if let Some(spec) = &cfg.coverage {
        let mut etas = String::from("k eta\n");
        for (k, tx) in plan.tx.iter().enumerate() {
            let cov = coverage_map(&plan.map, &Node::at(*tx), &spec.grid, spec.threshold_dbm, spec.tx_power_dbm, &cfg.trace)?;
            out.write(&format!("coverage_{k}.txt"), coverage_table(&cov).as_bytes())?;
            let _ = writeln!(etas, "{k} {:.6}", cov.eta);
        }
        out.write("coverage_eta.txt", etas.as_bytes())?;
    }
    Ok(())
}

/// Runs the configured mode and writes its artifacts plus `manifest.json`
/// into the output directory. Every written byte is a function of the
/// configuration and seed.
///
/// * deterministic: snapshot database, path dump, LSP table, PMFs, CDL/TDL,
///   coverage grids when configured.
/// * stochastic: LSP table, PMFs and CDL/TDL from drawn clusters; fitted
///   parameters when fitted from a database.
/// * hybrid: merged and calibrated clusters with composed LSPs.
/// * db-pick: the nearest stored snapshot per link, listed in `picks.txt`.
pub fn run_pipeline(cfg: &ScenarioConfig, workers: usize) -> Result<Manifest, ScenarioError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let plan = SnapshotPlan::new(cfg)?;
    let mut out = Outputs {
        dir: cfg.output_dir.clone(),
        files: vec![],
    };
    let pool = pool(workers)?;
    let idx = plan.indices(cfg);
    let links: Vec<Link> = match cfg.mode {
        Mode::Deterministic => {
            let snaps = pool.install(|| traced(cfg, &plan, workers))?;
            write_deterministic(cfg, &plan, &snaps, &mut out)?;
            snaps
                .into_iter()
                .map(|s| Link {
                    clusters: cluster_paths(&s.paths, &cfg.gaps),
                    key: s.key,
                    lsps: s.lsps,
                })
                .collect()
        }
        Mode::Stochastic => {
            let params = load_params(cfg, &mut out)?;
            let grid = ConsistencyGrid::new(cfg.seed, params.correlation_distance, Interpolation::NearestCell);
            pool.install(|| {
                idx.par_iter()
                    .map(|&(k, i, t)| {
                        let key = plan.key(cfg, k, i, t);
                        let (lsps, clusters) = stochastic_link(cfg, &params, &grid, &key)?;
                        Ok(Link { key, lsps, clusters })
                    })
                    .collect::<Result<_, ScenarioError>>()
            })?
        }
        Mode::Hybrid => {
            let params = load_params(cfg, &mut out)?;
            let grid = ConsistencyGrid::new(cfg.seed, params.correlation_distance, Interpolation::NearestCell);
            pool.install(|| {
                idx.par_iter()
                    .map(|&(k, i, t)| {
                        let det = trace_snapshot(cfg, &plan, k, i, t)?;
                        let (sto_lsps, sto) = stochastic_link(cfg, &params, &grid, &det.key)?;
                        hybrid_link(cfg, &det, &sto_lsps, &sto)
                    })
                    .collect::<Result<_, ScenarioError>>()
            })?
        }
        Mode::DbPick => {
            let path = cfg.database.as_ref().ok_or_else(|| ScenarioError::Missing("database".into()))?;
            let db = SnapshotDb::open_read_only(path)?;
            let gaps = db.header().config.gaps;
            let mut picks = String::from("k n picked_k picked_n distance_m\n");
            let mut links = Vec::with_capacity(idx.len());
            for &(k, i, t) in &idx {
                let key = plan.key(cfg, k, i, t);
                let picked = db.pick_nearest(&key.tx.position, &key.rx.position, key.k)?;
                let s = picked.snapshot;
                let _ = writeln!(picks, "{} {} {} {} {:.6}", key.k, key.n, s.key.k, s.key.n, picked.distance);
                links.push(Link {
                    key,
                    clusters: cluster_paths(&s.paths, &gaps),
                    lsps: s.lsps,
                });
            }
            out.write("picks.txt", picks.as_bytes())?;
            links
        }
    };
    write_links(cfg, &plan, &links, &mut out)?;
    out.files.sort_by(|a, b| a.name.cmp(&b.name));
    let manifest = Manifest {
        mode: cfg.mode,
        seed: cfg.seed,
        site: plan.map.site_name().to_string(),
        metadata: cfg.metadata.clone(),
        files: out.files,
    };
    std::fs::write(cfg.output_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Path of the manifest a pipeline run writes into `dir`.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}
