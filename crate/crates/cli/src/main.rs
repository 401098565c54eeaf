//! `mapchan` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input (arguments, configuration, maps,
//! parameter files), 3 runtime failure.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mapchan::coeffgen::{cdl_from_clusters, cdl_table, tdl_from_cdl, tdl_to_json, ArrayConfig};
use mapchan::geometry::{load_map, DigitalMap};
use mapchan::gscm::{
    draw_lsps, fit_stochastic_params, generate_clusters_in, ConsistencyGrid, FitOptions, Interpolation, LinkFrame,
    StochasticParamSet,
};
use mapchan::hybrid::HybridWeights;
use mapchan::params::emit::{coverage_table, lsp_row, pmf_table, LSP_HEADER};
use mapchan::params::{cluster_paths, count_pmf, coverage_map, ClusterGaps, ClusterSet, GridSpec};
use mapchan::rt::dump::{paths_to_csv, paths_to_json};
use mapchan::rt::{trace_paths, Node, TraceConfig};
use mapchan::scenario::{run_pipeline, Mode, ScenarioConfig, ScenarioError};
use mapchan::seed::{derive_seed, stream};
use mapchan::snapshotdb::{adapter_by_name, ingest, map_digest, DbConfig, SnapshotDb};
use nalgebra::Point3;

/// Input the user has to fix; reported with exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl fmt::Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

fn scenario_err(e: ScenarioError) -> anyhow::Error {
    if e.is_validation() {
        invalid(e)
    } else {
        e.into()
    }
}

fn parse_point(s: &str) -> Result<Point3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Point3::new(x, y, z)),
        _ => Err("expected finite x,y,z".into()),
    }
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let v: Vec<&str> = s.split(',').collect();
    if v.len() != 7 {
        return Err("expected x_min,y_min,dx,dy,nx,ny,height".into());
    }
    let f = |i: usize| v[i].trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", v[i]));
    let u = |i: usize| v[i].trim().parse::<usize>().map_err(|e| format!("`{}`: {e}", v[i]));
    Ok(GridSpec {
        x_min: f(0)?,
        y_min: f(1)?,
        dx: f(2)?,
        dy: f(3)?,
        nx: u(4)?,
        ny: u(5)?,
        height: f(6)?,
    })
}

#[derive(Parser)]
#[command(name = "mapchan", version, about = "Map-based millimeter-wave channel simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TraceArgs {
    /// Map document (JSON). Omitted means free space.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Trace configuration (JSON).
    #[arg(long = "trace-config")]
    trace_config: Option<PathBuf>,
    /// Center frequency override, Hz.
    #[arg(long)]
    frequency: Option<f64>,
    #[arg(long = "max-reflections")]
    max_reflections: Option<usize>,
}

impl TraceArgs {
    fn load(&self) -> Result<(DigitalMap, TraceConfig)> {
        let map = match &self.map {
            Some(p) => load_map(p).map_err(invalid)?,
            None => DigitalMap::empty(),
        };
        let mut cfg: TraceConfig = match &self.trace_config {
            Some(p) => serde_json::from_str(&read(p)?).map_err(invalid)?,
            None => TraceConfig::default(),
        };
        if let Some(f) = self.frequency {
            cfg.center_frequency = f;
        }
        if let Some(r) = self.max_reflections {
            cfg.max_reflections = r;
        }
        cfg.validate().map_err(invalid)?;
        Ok((map, cfg))
    }
}

/// Scenario file plus the flag overrides shared by the pipeline verbs.
#[derive(Args)]
struct RunArgs {
    /// Scenario configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "output-dir")]
    output_dir: Option<PathBuf>,
    /// Time samples per drop.
    #[arg(long)]
    snapshots: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl RunArgs {
    fn load(&self, mode: Option<Mode>, seed_required: bool) -> Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::load(&self.config).map_err(invalid)?;
        match self.seed {
            Some(s) => cfg.seed = s,
            None if seed_required => return Err(invalid("--seed is required for stochastic verbs")),
            None => {}
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        if let Some(n) = self.snapshots {
            cfg.snapshots = n;
        }
        if let Some(m) = mode {
            cfg.mode = m;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PathFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Trace one link and dump its paths.
    Trace {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long, value_parser = parse_point)]
        tx: Point3<f64>,
        #[arg(long, value_parser = parse_point)]
        rx: Point3<f64>,
        #[arg(long, value_enum, default_value_t = PathFormat::Csv)]
        format: PathFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Received-power grid and coverage fraction around one transmitter.
    Coverage {
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long, value_parser = parse_point)]
        tx: Point3<f64>,
        /// x_min,y_min,dx,dy,nx,ny,height
        #[arg(long, value_parser = parse_grid)]
        grid: GridSpec,
        #[arg(long = "threshold-dbm", default_value_t = -90.0, allow_negative_numbers = true)]
        threshold_dbm: f64,
        #[arg(long = "tx-power-dbm", default_value_t = 20.0, allow_negative_numbers = true)]
        tx_power_dbm: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace every snapshot of a scenario into a database with artifacts.
    Snapshots(RunArgs),
    /// Fit a stochastic parameter set from a snapshot database.
    Fit {
        #[arg(long)]
        db: PathBuf,
        /// Setup to fit; all setups when omitted.
        #[arg(long)]
        k: Option<u32>,
        #[arg(long = "min-snapshots")]
        min_snapshots: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw stochastic clusters. With --config runs the stochastic pipeline,
    /// otherwise generates one link and prints its CDL.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_parser = parse_point)]
        tx: Option<Point3<f64>>,
        #[arg(long, value_parser = parse_point)]
        rx: Option<Point3<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "output-dir")]
        output_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the hybrid pipeline.
    Hybrid {
        #[command(flatten)]
        run: RunArgs,
        /// Weight of the deterministic part.
        #[arg(long = "w-det")]
        w_det: Option<f64>,
    },
    /// Snapshot database maintenance.
    #[command(subcommand)]
    Db(DbCommand),
    /// Link-level model export from a stored snapshot.
    #[command(subcommand)]
    Export(ExportCommand),
    /// Cluster-count and rays-per-cluster mass functions of a database.
    Pmf {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        k: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DbCommand {
    /// Create an empty database bound to a map and trace configuration.
    Init {
        #[arg(long)]
        db: PathBuf,
        #[command(flatten)]
        trace: TraceArgs,
        #[arg(long = "delay-gap")]
        delay_gap: Option<f64>,
        #[arg(long = "angle-gap-deg")]
        angle_gap_deg: Option<f64>,
    },
    /// Append snapshots from an external source.
    Ingest {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value = "json")]
        adapter: String,
        #[arg(long)]
        input: PathBuf,
    },
    /// Nearest stored snapshot to a query link.
    Pick {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, value_parser = parse_point)]
        tx: Point3<f64>,
        #[arg(long, value_parser = parse_point)]
        rx: Point3<f64>,
        #[arg(long, default_value_t = 0)]
        k: u32,
    },
    /// Fitting samples of one setup as JSON.
    Export {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 0)]
        k: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check checksums, digests, keys, LSPs and the index.
    Verify {
        #[arg(long)]
        db: PathBuf,
    },
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    db: PathBuf,
    #[arg(long, default_value_t = 0)]
    k: u32,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExportCommand {
    /// Cluster delay line table.
    Cdl(LinkArgs),
    /// Tapped delay line with spatial correlation matrices.
    Tdl {
        #[command(flatten)]
        link: LinkArgs,
        /// Tap grid bandwidth, Hz; the database's trace bandwidth by default.
        #[arg(long)]
        bandwidth: Option<f64>,
        /// JSON with `tx` and `rx` array configurations.
        #[arg(long)]
        arrays: Option<PathBuf>,
    },
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p)
        .with_context(|| format!("reading {}", p.display()))
        .map_err(invalid)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn open_db(p: &Path) -> Result<SnapshotDb> {
    if !p.exists() {
        return Err(invalid(format!("database {} does not exist", p.display())));
    }
    Ok(SnapshotDb::open_read_only(p)?)
}

fn setups(db: &SnapshotDb, k: Option<u32>) -> Vec<u32> {
    match k {
        Some(k) => vec![k],
        None => db.keys().into_iter().map(|(k, _)| k).collect::<BTreeSet<_>>().into_iter().collect(),
    }
}

fn pipeline(cfg: &ScenarioConfig, workers: usize) -> Result<()> {
    let manifest = run_pipeline(cfg, workers).map_err(scenario_err)?;
    eprintln!(
        "{} files written to {}",
        manifest.files.len() + 1,
        cfg.output_dir.display()
    );
    Ok(())
}

fn link_clusters(db: &SnapshotDb, k: u32, n: u64) -> Result<ClusterSet> {
    let s = db
        .get(k, n)?
        .ok_or_else(|| invalid(format!("no snapshot (k={k}, n={n}) in database")))?;
    Ok(cluster_paths(&s.paths, &db.header().config.gaps))
}

#[derive(serde::Deserialize)]
struct Arrays {
    tx: ArrayConfig,
    rx: ArrayConfig,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Trace {
            trace,
            tx,
            rx,
            format,
            out,
        } => {
            let (map, cfg) = trace.load()?;
            let paths = trace_paths(&map, &Node::at(tx), &Node::at(rx), &cfg).map_err(invalid)?;
            let text = match format {
                PathFormat::Csv => paths_to_csv(&paths),
                PathFormat::Json => paths_to_json(&paths),
            };
            emit(out.as_deref(), &text)
        }
        Command::Coverage {
            trace,
            tx,
            grid,
            threshold_dbm,
            tx_power_dbm,
            out,
        } => {
            let (map, cfg) = trace.load()?;
            let cov = coverage_map(&map, &Node::at(tx), &grid, threshold_dbm, tx_power_dbm, &cfg).map_err(invalid)?;
            eprintln!("eta {:.6}", cov.eta);
            emit(out.as_deref(), &coverage_table(&cov))
        }
        Command::Snapshots(args) => {
            let cfg = args.load(Some(Mode::Deterministic), false)?;
            pipeline(&cfg, args.workers)
        }
        Command::Fit {
            db,
            k,
            min_snapshots,
            out,
        } => {
            let db = open_db(&db)?;
            let mut samples = Vec::new();
            for k in setups(&db, k) {
                samples.extend(db.export_for_fitting(k)?);
            }
            let mut opts = FitOptions::default();
            if let Some(m) = min_snapshots {
                opts.min_snapshots = m;
            }
            let params = fit_stochastic_params(&samples, &opts)?;
            emit(out.as_deref(), &(params.to_json() + "\n"))
        }
        Command::Gen {
            config,
            params,
            tx,
            rx,
            seed,
            output_dir,
            workers,
            out,
        } => {
            let seed = seed.ok_or_else(|| invalid("--seed is required for stochastic verbs"))?;
            if let Some(config) = config {
                let mut cfg = ScenarioConfig::load(&config).map_err(invalid)?;
                cfg.seed = seed;
                cfg.mode = Mode::Stochastic;
                if let Some(p) = params {
                    cfg.stochastic_params = Some(p);
                }
                if let Some(d) = output_dir {
                    cfg.output_dir = d;
                }
                return pipeline(&cfg, workers);
            }
            let (Some(params), Some(tx), Some(rx)) = (params, tx, rx) else {
                return Err(invalid("gen needs --config, or --params with --tx and --rx"));
            };
            let params = StochasticParamSet::load(&params).map_err(invalid)?;
            let grid = ConsistencyGrid::new(seed, params.correlation_distance, Interpolation::NearestCell);
            let lsps = draw_lsps(&params, &tx, &rx, &grid);
            let clusters = generate_clusters_in(
                &lsps,
                &params,
                derive_seed(seed, &[stream::SNAPSHOT, 0, 0]),
                LinkFrame::between(&tx, &rx),
            )?;
            let text = format!(
                "# {LSP_HEADER}\n# {}\n{}",
                lsp_row(0, 0, &lsps),
                cdl_table(&cdl_from_clusters(&clusters)?)
            );
            emit(out.as_deref(), &text)
        }
        Command::Hybrid { run, w_det } => {
            let mut cfg = run.load(Some(Mode::Hybrid), true)?;
            if let Some(w) = w_det {
                cfg.hybrid = HybridWeights::new(w).map_err(invalid)?;
            }
            pipeline(&cfg, run.workers)
        }
        Command::Db(cmd) => db_command(cmd),
        Command::Export(cmd) => export_command(cmd),
        Command::Pmf { db, k, out } => {
            let db = open_db(&db)?;
            let gaps = db.header().config.gaps;
            let wanted = setups(&db, k);
            let sets: Vec<ClusterSet> = db
                .scan()?
                .into_iter()
                .filter(|s| wanted.contains(&s.key.k) && !s.paths.is_empty())
                .map(|s| cluster_paths(&s.paths, &gaps))
                .collect();
            let pmf = count_pmf(&sets).map_err(invalid)?;
            emit(out.as_deref(), &pmf_table(&pmf))
        }
    }
}

fn db_command(cmd: DbCommand) -> Result<()> {
    match cmd {
        DbCommand::Init {
            db,
            trace,
            delay_gap,
            angle_gap_deg,
        } => {
            let (map, cfg) = trace.load()?;
            let mut gaps = ClusterGaps::default();
            if let Some(d) = delay_gap {
                gaps.delay_gap = d;
            }
            if let Some(a) = angle_gap_deg {
                gaps.angle_gap = a.to_radians();
            }
            let digest = map_digest(&map, &cfg);
            SnapshotDb::create(&db, digest, DbConfig { trace: cfg, gaps }).map_err(|e| match e {
                mapchan::snapshotdb::DbError::Exists(_) => invalid(e),
                e => e.into(),
            })?;
            println!("{}", hex::encode(digest));
            Ok(())
        }
        DbCommand::Ingest { db, adapter, input } => {
            let adapter = adapter_by_name(&adapter).ok_or_else(|| invalid(format!("unknown adapter `{adapter}`")))?;
            if !db.exists() {
                return Err(invalid(format!("database {} does not exist", db.display())));
            }
            let mut db = SnapshotDb::open(&db)?;
            let n = ingest(&mut db, adapter.as_ref(), &input)?;
            println!("{n}");
            Ok(())
        }
        DbCommand::Pick { db, tx, rx, k } => {
            let db = open_db(&db)?;
            let p = db.pick_nearest(&tx, &rx, k)?;
            println!("{} {} {:.6}", p.snapshot.key.k, p.snapshot.key.n, p.distance);
            Ok(())
        }
        DbCommand::Export { db, k, out } => {
            let db = open_db(&db)?;
            let samples = db.export_for_fitting(k)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&samples)?)
        }
        DbCommand::Verify { db } => {
            let db = open_db(&db)?;
            let report = db.verify()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if report.is_ok() {
                Ok(())
            } else {
                Err(anyhow::anyhow!("database failed verification"))
            }
        }
    }
}

fn export_command(cmd: ExportCommand) -> Result<()> {
    match cmd {
        ExportCommand::Cdl(link) => {
            let db = open_db(&link.db)?;
            let clusters = link_clusters(&db, link.k, link.n)?;
            let cdl = cdl_from_clusters(&clusters).map_err(invalid)?;
            emit(link.out.as_deref(), &cdl_table(&cdl))
        }
        ExportCommand::Tdl {
            link,
            bandwidth,
            arrays,
        } => {
            let db = open_db(&link.db)?;
            let clusters = link_clusters(&db, link.k, link.n)?;
            let cdl = cdl_from_clusters(&clusters).map_err(invalid)?;
            let arrays = match arrays {
                Some(p) => serde_json::from_str(&read(&p)?).map_err(invalid)?,
                None => Arrays {
                    tx: ArrayConfig::single(Default::default()),
                    rx: ArrayConfig::single(Default::default()),
                },
            };
            let trace = &db.header().config.trace;
            let tdl = tdl_from_cdl(
                &cdl,
                &arrays.tx,
                &arrays.rx,
                trace.center_frequency,
                bandwidth.unwrap_or(trace.bandwidth),
            )
            .map_err(invalid)?;
            let label = format!("map {} k={} n={}", &hex::encode(db.header().map_digest)[..16], link.k, link.n);
            emit(link.out.as_deref(), &serde_json::to_string_pretty(&tdl_to_json(&tdl, &label))?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
