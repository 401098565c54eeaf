mod common;

use std::f64::consts::FRAC_PI_2;

use common::*;
use mapchan::geometry::load_map;
use mapchan::gscm::{draw_lsps, fit_stochastic_params, generate_clusters_in, ConsistencyGrid, FitOptions, Interpolation, LinkFrame};
use mapchan::hybrid::{merge_clusters, HybridWeights};
use mapchan::params::{cluster_paths, Cluster, ClusterGaps, ClusterSet, ClusterSource};
use mapchan::rt::{trace_paths, Node, TraceConfig};
use mapchan::scenario::{manifest_path, run_pipeline, Mode};
use mapchan::snapshotdb::SnapshotDb;
use nalgebra::Point3;

#[test]
fn fit_recovers_planted_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let n = 10_000;
    let db = planted_database(&dir.path().join("f.db"), n, 21, -7.5, 0.2, 61.4, 2.0);
    let samples = db.export_for_fitting(0).unwrap();
    let fit = fit_stochastic_params(&samples, &FitOptions::default()).unwrap();
    let se_mean = 0.2 / (n as f64).sqrt();
    let se_std = 0.2 / (2.0 * (n as f64 - 1.0)).sqrt();
    assert!((fit.ds.log_mean + 7.5).abs() < 3.0 * se_mean, "{}", fit.ds.log_mean);
    assert!((fit.ds.log_std - 0.2).abs() < 3.0 * se_std, "{}", fit.ds.log_std);
    assert!((fit.path_loss.intercept_db - 61.4).abs() < 1e-6);
    assert!((fit.path_loss.exponent - 2.0).abs() < 1e-6);
    assert!(fit.path_loss.shadow_std_db < 1e-6);
}

fn weighted(powers: &[f64], source: ClusterSource) -> ClusterSet {
    let clusters = powers
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut c = Cluster::from_rays(vec![ray(i as f64 * 20e-9, p, 0.4 * i as f64, FRAC_PI_2)]);
            c.power = p;
            c
        })
        .collect();
    ClusterSet { clusters, source }
}

#[test]
fn hybrid_of_traced_and_generated_sets() {
    let map = load_map(fixture("indoor_office.json")).unwrap();
    let (tx, rx) = (Point3::new(7.0, 6.0, 3.0), Point3::new(2.0, 3.0, 1.0));
    let paths = trace_paths(&map, &Node::at(tx), &Node::at(rx), &TraceConfig::default()).unwrap();
    let det = cluster_paths(&paths, &ClusterGaps::default()).normalized();
    let p = params();
    let grid = ConsistencyGrid::new(4, p.correlation_distance, Interpolation::NearestCell);
    let lsps = draw_lsps(&p, &tx, &rx, &grid);
    let sto = generate_clusters_in(&lsps, &p, 4, LinkFrame::between(&tx, &rx)).unwrap();

    let one = merge_clusters(&det, &sto, HybridWeights::new(1.0).unwrap()).unwrap();
    assert_eq!(one.clusters, det.clusters);
    assert_eq!(one.source, ClusterSource::Hybrid);
    let zero = merge_clusters(&det, &sto, HybridWeights::new(0.0).unwrap()).unwrap();
    assert_eq!(zero.clusters, sto.clusters);
    let half = merge_clusters(&det, &sto, HybridWeights::new(0.5).unwrap()).unwrap();
    assert_eq!(half.clusters.len(), det.clusters.len() + sto.clusters.len());
    assert!((half.total_power() - 1.0).abs() < 1e-12);

    let m = merge_clusters(
        &weighted(&[0.6, 0.4], ClusterSource::Deterministic),
        &weighted(&[0.5, 0.3, 0.2], ClusterSource::Stochastic),
        HybridWeights::new(0.5).unwrap(),
    )
    .unwrap();
    let powers: Vec<f64> = m.clusters.iter().map(|c| c.power).collect();
    assert_eq!(powers, vec![0.30, 0.20, 0.25, 0.15, 0.10]);
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, workers) in [(0, 1), (1, 1), (2, 8)] {
        let cfg = office_scenario(&dir.path().join(format!("run{run}")));
        let manifest = run_pipeline(&cfg, workers).unwrap();
        assert!(manifest.files.iter().any(|f| f.name == "snapshots.db"));
        assert!(manifest_path(&cfg.output_dir).exists());
        outputs.push(dir_contents(&cfg.output_dir));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let db = SnapshotDb::open_read_only(dir.path().join("run0/snapshots.db")).unwrap();
    assert_eq!(db.len(), 4 * 3);
    assert!(db.verify().unwrap().is_ok());
}

#[test]
fn stochastic_and_hybrid_runs_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let params_path = dir.path().join("params.json");
    params().save(&params_path).unwrap();
    for mode in [Mode::Stochastic, Mode::Hybrid] {
        let mut outputs = Vec::new();
        for workers in [1, 8] {
            let mut cfg = office_scenario(&dir.path().join(format!("{mode:?}{workers}")));
            cfg.mode = mode;
            cfg.stochastic_params = Some(params_path.clone());
            run_pipeline(&cfg, workers).unwrap();
            outputs.push(dir_contents(&cfg.output_dir));
        }
        assert_eq!(outputs[0], outputs[1], "{mode:?}");
    }
}

#[test]
fn db_pick_mode_returns_stored_links() {
    let dir = tempfile::tempdir().unwrap();
    let traced = office_scenario(&dir.path().join("det"));
    run_pipeline(&traced, 2).unwrap();
    let mut cfg = traced.clone();
    cfg.mode = Mode::DbPick;
    cfg.database = Some(dir.path().join("det/snapshots.db"));
    cfg.output_dir = dir.path().join("pick");
    run_pipeline(&cfg, 2).unwrap();
    let picks = std::fs::read_to_string(dir.path().join("pick/picks.txt")).unwrap();
    let rows: Vec<Vec<&str>> = picks.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 12);
    for r in rows {
        assert_eq!(r[0], r[2]);
        assert_eq!(r[1], r[3]);
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
    }
}
