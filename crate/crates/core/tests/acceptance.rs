//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::time::{Duration, Instant};

use common::*;
use mapchan::coeffgen::{
    beamform_tx, cdl_from_clusters, channel_matrix, spatial_correlation, steering_weights, tdl_from_cdl, ArrayConfig,
    PolarizationPorts,
};
use mapchan::geometry::{is_los, load_map, Material};
use mapchan::gscm::{
    draw_lsps, fit_stochastic_params, generate_clusters, generate_clusters_in, ConsistencyGrid, FitOptions,
    Interpolation, LinkFrame,
};
use mapchan::hybrid::{merge_clusters, HybridWeights};
use mapchan::params::{cluster_paths, rms_delay_spread, Cluster, ClusterGaps, ClusterSet, ClusterSource, LspRecord};
use mapchan::rt::{free_space_path_loss_db, fresnel_coefficients, slab_response, trace_paths, Node, TraceConfig};
use mapchan::scenario::{blocker_sweep, run_pipeline, SweepOptions};
use mapchan::snapshotdb::{file_hash, DbError, SnapshotDb};
use mapchan::units::{power_to_db, wavelength};
use nalgebra::{Cholesky, DMatrix, Point3, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn image_method() -> Outcome {
    let mut paths = 0;
    for seed in 0..50u64 {
        let mut r = rng(1000 + seed);
        let map = random_map(&mut r, 12);
        ensure(map.walls().len() <= 12, || format!("map {seed} has {} walls", map.walls().len()))?;
        for _ in 0..3 {
            let (tx, rx) = (random_point(&mut r, &map), random_point(&mut r, &map));
            paths += check_against_oracle(&map, &tx, &rx, 2, 2).map_err(|e| format!("map {seed}: {e}"))?;
        }
    }
    Ok(format!("50 maps, 150 links, {paths} paths match the mirror oracle"))
}

fn closed_forms() -> Outcome {
    let fspl = free_space_path_loss_db(10.0, 28e9).map_err(|e| e.to_string())?;
    ensure((fspl - 81.39).abs() <= 0.01, || format!("free-space loss {fspl}"))?;
    let g = fresnel_coefficients(&Material::new("lossless", 5.31, 0.0, 0.1), 0.0, 28e9).map_err(|e| e.to_string())?;
    let gamma = g.perpendicular.re;
    ensure((gamma + 0.3947).abs() <= 1e-4 && g.perpendicular.im.abs() < 1e-12, || format!("Fresnel {}", g.perpendicular))?;
    let mut worst: f64 = 0.0;
    for m in materials() {
        for f in [6e9, 28e9, 60e9] {
            for deg in [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 89.0] {
                let theta = f64::to_radians(deg);
                let s = slab_response(&m, theta, f).map_err(|e| e.to_string())?;
                let [(_, t_te), (_, t_tm)] = slab_transfer_matrix(m.complex_permittivity(f), m.thickness, theta, f);
                for (got, want) in [(s.transmission.perpendicular, t_te), (s.transmission.parallel, t_tm)] {
                    worst = worst.max((got.norm() - want.norm()).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-9, || format!("slab |T| off by {worst:e}"))?;
    Ok(format!("FSPL {fspl:.4} dB, Γ {gamma:.5}, slab |T| max error {worst:.1e}"))
}

fn invariance() -> Outcome {
    const CASES: u64 = 10_000;
    let count = |check: &(dyn Fn(u64) -> Result<(), String> + Sync)| -> Vec<(u64, String)> {
        (0..CASES).into_par_iter().filter_map(|i| check(i).err().map(|e| (i, e))).collect()
    };
    let los = count(&|i| {
        let (map, a, b) = scene(i);
        ensure(is_los(&map, &a, &b) == is_los(&map, &b, &a), || "is_los differs by direction".into())
    });
    let recip = count(&|i| {
        let (map, a, b) = scene(20_000 + i);
        check_reciprocity(&map, &a, &b)
    });
    let shift = count(&|i| {
        let (map, a, b) = scene(40_000 + i);
        let mut r = rng(i);
        let v = Vector3::new(r.random_range(-50.0..50.0), r.random_range(-50.0..50.0), r.random_range(-5.0..5.0));
        check_translation(&map, &a, &b, v)
    });
    let turn = count(&|i| {
        let (map, a, b) = scene(60_000 + i);
        check_rotation(&map, &a, &b, rng(i).random_range(0.0..TAU))
    });
    let all = [("is_los symmetry", los), ("reciprocity", recip), ("DS translation", shift), ("AS rotation", turn)];
    for (name, v) in &all {
        if let Some((i, e)) = v.first() {
            return Err(format!("{name}: {} violations, first at case {i}: {e}", v.len()));
        }
    }
    Ok(format!("4 × {CASES} cases, 0 violations"))
}

fn stochastic_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let n = 10_000u64;
    let db = planted_database(&dir.path().join("fit.db"), n, 7, -7.5, 0.2, 61.4, 2.0);
    let samples = db.export_for_fitting(0).map_err(|e| e.to_string())?;
    let fit = fit_stochastic_params(&samples, &FitOptions::default()).map_err(|e| e.to_string())?;
    let se_mean = 0.2 / (n as f64).sqrt();
    let se_std = 0.2 / (2.0 * (n as f64 - 1.0)).sqrt();
    let (zm, zs) = ((fit.ds.log_mean + 7.5) / se_mean, (fit.ds.log_std - 0.2) / se_std);
    ensure(zm.abs() < 3.0 && zs.abs() < 3.0, || format!("DS fit ({}, {}) is ({zm:.2}, {zs:.2}) SE off", fit.ds.log_mean, fit.ds.log_std))?;
    let pl = &fit.path_loss;
    ensure((pl.intercept_db - 61.4).abs() <= 1e-6 && (pl.exponent - 2.0).abs() <= 1e-6, || {
        format!("path loss ({}, {})", pl.intercept_db, pl.exponent)
    })?;
    Ok(format!(
        "DS ({:.4}, {:.4}) at ({zm:.2}, {zs:.2}) SE; path loss ({:.9}, {:.9})",
        fit.ds.log_mean, fit.ds.log_std, pl.intercept_db, pl.exponent
    ))
}

fn nlos(ds: f64, n_clusters: usize) -> LspRecord {
    LspRecord {
        path_loss_db: 80.0,
        delay_spread: ds,
        asd: 0.2,
        asa: 0.3,
        zsd: 0.1,
        zsa: 0.1,
        k_factor_db: f64::NEG_INFINITY,
        n_clusters,
        n_rays: 0,
        los_state: Some(false),
    }
}

fn contract_violation(p: &mapchan::gscm::StochasticParamSet, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let ds = 10f64.powf(r.random_range(-9.0..-6.0));
    let n = r.random_range(1..25usize);
    let set = generate_clusters(&nlos(ds, n), p, seed).map_err(|e| format!("seed {seed}: {e}"))?;
    let d: Vec<f64> = set.clusters.iter().map(|c| c.mean_delay).collect();
    if d[0] != 0.0 || d.windows(2).any(|w| w[0] > w[1]) {
        return Err(format!("seed {seed}: delays {d:?}"));
    }
    if (set.total_power() - 1.0).abs() > 1e-12 {
        return Err(format!("seed {seed}: power sum {}", set.total_power()));
    }
    let rays = |s: &ClusterSet| s.rays().cloned().collect::<Vec<_>>();
    let ds0 = rms_delay_spread(&rays(&set)).map_err(|e| format!("seed {seed}: {e}"))?;
    for k in [0.25, 2.0, 3.7, 10.0] {
        let scaled = generate_clusters(&nlos(ds * k, n), p, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        let exact = k == 0.25 || k == 2.0;
        for (a, b) in set.rays().zip(scaled.rays()) {
            let ok = if exact { a.delay * k == b.delay } else { close(a.delay * k, b.delay, 1e-12) };
            if !ok || a.amplitude != b.amplitude {
                return Err(format!("seed {seed}: scaling by {k} moved a ray"));
            }
        }
        let ds1 = rms_delay_spread(&rays(&scaled)).map_err(|e| format!("seed {seed}: {e}"))?;
        if !close(ds1, k * ds0, 1e-12) {
            return Err(format!("seed {seed}: DS {ds1} vs {}", k * ds0));
        }
    }
    Ok(())
}

fn gscm_contracts() -> Outcome {
    let p = params();
    let bad: Vec<String> = (0..10_000u64)
        .into_par_iter()
        .filter_map(|seed| contract_violation(&p, seed).err())
        .collect();
    if let Some(e) = bad.first() {
        return Err(format!("{} seeds fail: {e}", bad.len()));
    }
    let seeds = 10_000u64;
    let probes: Vec<f64> = (0..=12).map(|i| i as f64 * 2.0).collect();
    let corr = consistency_correlation(seeds, &probes, 10.0);
    let se = 3.0 / (seeds as f64).sqrt();
    ensure(corr.windows(2).all(|w| w[1] <= w[0] + se), || format!("correlation along the line {corr:.3?}"))?;
    Ok(format!(
        "10⁴ seeds: sorted, zero-based, unit power, DS scaling exact; correlation {:.3} → {:.3} over 24 m (3 SE = {se:.3})",
        corr[0],
        corr.last().unwrap()
    ))
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

fn hybrid_endpoints() -> Outcome {
    let map = load_map(fixture("indoor_office.json")).map_err(|e| e.to_string())?;
    let tx = Point3::new(7.0, 6.0, 3.0);
    let p = params();
    let mut links = 0;
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let rx = Point3::new(r.random_range(1.0..13.0), r.random_range(1.0..11.0), 1.0);
        let paths = trace_paths(&map, &Node::at(tx), &Node::at(rx), &TraceConfig::default()).map_err(|e| e.to_string())?;
        if paths.is_empty() {
            continue;
        }
        links += 1;
        let det = cluster_paths(&paths, &ClusterGaps::default());
        let grid = ConsistencyGrid::new(seed, p.correlation_distance, Interpolation::NearestCell);
        let sto = generate_clusters_in(&draw_lsps(&p, &tx, &rx, &grid), &p, seed, LinkFrame::between(&tx, &rx))
            .map_err(|e| e.to_string())?;
        for (w, want) in [(1.0, &det), (0.0, &sto)] {
            let got = merge_clusters(&det, &sto, HybridWeights::new(w).unwrap()).map_err(|e| e.to_string())?;
            ensure(got.clusters == want.clusters, || format!("seed {seed}: w = {w} differs from its source"))?;
        }
    }
    let m = merge_clusters(
        &weighted(&[0.6, 0.4], ClusterSource::Deterministic),
        &weighted(&[0.5, 0.3, 0.2], ClusterSource::Stochastic),
        HybridWeights::new(0.5).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let powers: Vec<f64> = m.clusters.iter().map(|c| c.power).collect();
    ensure(powers == [0.30, 0.20, 0.25, 0.15, 0.10], || format!("example powers {powers:?}"))?;
    Ok(format!("{links} links bit-identical at both endpoints; example (.30, .20, .25, .15, .10)"))
}

fn snapshot_db() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("db");
    let e = |e: DbError| e.to_string();
    let mut r = rng(77);
    let txs: Vec<Point3<f64>> = (0..2).map(|_| Point3::new(r.random_range(0.0..50.0), r.random_range(0.0..50.0), 3.0)).collect();
    let snaps: Vec<_> = (0..10_000u64)
        .map(|i| {
            let k = (i % 2) as u32;
            let rx = Point3::new(r.random_range(0.0..50.0), r.random_range(0.0..50.0), r.random_range(0.5..2.5));
            two_ray_snapshot(k, i / 2, txs[k as usize], rx, 1e-8, 80.0)
        })
        .collect();
    let (hash, bytes) = {
        let mut db = SnapshotDb::create(&path, empty_digest(), db_config()).map_err(e)?;
        for s in &snaps {
            db.store(s).map_err(e)?;
        }
        (db.content_hash().map_err(e)?, file_hash(&path).map_err(e)?)
    };
    let db = SnapshotDb::open(&path).map_err(e)?;
    ensure(db.scan().map_err(e)? == snaps, || "reopened scan differs".into())?;
    ensure(db.content_hash().map_err(e)? == hash, || "content hash changed on reopen".into())?;
    drop(db);
    ensure(file_hash(&path).map_err(e)? == bytes, || "file bytes changed on reopen".into())?;

    let mut db = SnapshotDb::open(&path).map_err(e)?;
    for q in 0..2000 {
        let k = q % 2;
        let tx = Point3::new(r.random_range(-5.0..55.0), r.random_range(-5.0..55.0), r.random_range(0.0..4.0));
        let rx = Point3::new(r.random_range(-5.0..55.0), r.random_range(-5.0..55.0), r.random_range(0.0..4.0));
        let got = db.pick_nearest(&tx, &rx, k).map_err(e)?;
        let (n, d) = linear_pick(&snaps, &tx, &rx, k).ok_or("oracle found nothing")?;
        ensure(got.snapshot.key.n == n && got.distance.to_bits() == d.to_bits(), || {
            format!("query {q}: picked n = {} at {}, oracle n = {n} at {d}", got.snapshot.key.n, got.distance)
        })?;
    }
    let dup = db.store(&snaps[17]);
    ensure(matches!(dup, Err(DbError::DuplicateKey { .. })), || format!("duplicate store gave {dup:?}"))?;
    let mut foreign = two_ray_snapshot(0, 99_999, txs[0], txs[1], 1e-8, 80.0);
    foreign.map_digest[31] ^= 0x80;
    let mis = db.store(&foreign);
    ensure(matches!(mis, Err(DbError::DigestMismatch { .. })), || format!("foreign digest gave {mis:?}"))?;
    Ok("10⁴ snapshots hash-identical after reopen; 2000 picks equal the linear oracle; duplicate and digest errors raised".into())
}

fn hermitian_psd(m: &DMatrix<Complex64>, floor: f64) -> bool {
    let n = m.nrows();
    let herm = (0..n).all(|i| (0..n).all(|j| (m[(i, j)] - m[(j, i)].conj()).norm() <= 1e-12));
    let shifted = m + DMatrix::<Complex64>::identity(n, n) * Complex64::new(floor.abs() + 1e-12, 0.0);
    herm && Cholesky::new(shifted).is_some()
}

fn coefficients() -> Outcome {
    const F: f64 = 28e9;
    let half = wavelength(F) / 2.0;
    let v = PolarizationPorts::V;
    let w = steering_weights(&ArrayConfig::uniform_linear(2, half, Vector3::y(), v), PI / 6.0, FRAC_PI_2, F);
    let phase = (w[0] / w[1]).arg();
    ensure((phase - FRAC_PI_2).abs() <= 1e-9, || format!("steering phase {phase}"))?;

    let mut r0 = ray(10e-9, 1e-6, PI, FRAC_PI_2);
    r0.aod_az = 0.0;
    let set = ClusterSet {
        clusters: vec![Cluster::from_rays(vec![r0])],
        source: ClusterSource::Deterministic,
    };
    let single = ArrayConfig::single(v);
    let one = channel_matrix(&set, &single, &single, F, 0.0).map_err(|e| e.to_string())?.matrices[0][(0, 0)];
    let h = channel_matrix(&set, &ArrayConfig::uniform_linear(4, half, Vector3::y(), v), &single, F, 0.0)
        .map_err(|e| e.to_string())?;
    let y = beamform_tx(&h.matrices[0], &[Complex64::new(0.5, 0.0); 4], 1).map_err(|e| e.to_string())?[(0, 0)];
    let gain = power_to_db(y.norm_sqr() / one.norm_sqr());
    ensure((gain - 6.02).abs() <= 0.01, || format!("4-element gain {gain} dB"))?;

    let tx = ArrayConfig::uniform_linear(4, half, Vector3::x(), PolarizationPorts::DualSlant);
    let rx = ArrayConfig::uniform_linear(3, half, Vector3::y(), v);
    let p = params();
    let mut matrices = 0;
    for seed in 0..1000u64 {
        let grid = ConsistencyGrid::new(seed, p.correlation_distance, Interpolation::NearestCell);
        let lsps = draw_lsps(&p, &Point3::new(0.0, 0.0, 3.0), &Point3::new(20.0, 5.0, 1.5), &grid);
        let clusters = generate_clusters(&lsps, &p, seed).map_err(|e| e.to_string())?;
        let cdl = cdl_from_clusters(&clusters).map_err(|e| e.to_string())?;
        let tdl = tdl_from_cdl(&cdl, &tx, &rx, F, 400e6).map_err(|e| e.to_string())?;
        for t in &tdl.taps {
            for m in [&t.tx_correlation, &t.rx_correlation] {
                ensure(hermitian_psd(m, 1e-9), || format!("seed {seed}: correlation not Hermitian PSD"))?;
                matrices += 1;
            }
        }
    }

    let mut r = rng(5);
    let rays: Vec<(f64, f64, f64)> = (0..1_000_000).map(|_| (r.random_range(0.0..TAU), FRAC_PI_2, 1.0)).collect();
    let m = spatial_correlation(&ArrayConfig::uniform_linear(2, half, Vector3::x(), v), &rays, F);
    let r12 = m[(0, 1)].norm();
    let j0 = bessel_j0(PI).abs();
    ensure((r12 - 0.3042).abs() <= 0.01 && (r12 - j0).abs() <= 0.01, || format!("|R12| = {r12}, |J0(π)| = {j0}"))?;
    Ok(format!("phase {phase:.12}, gain {gain:.4} dB, {matrices} TDL correlations PSD, |R12| {r12:.4} vs |J0(π)| {j0:.4}"))
}

fn blocker_trend() -> Outcome {
    let map = load_map(fixture("indoor_office.json")).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(fixture("office_sweep.json")).map_err(|e| e.to_string())?;
    let opts: SweepOptions = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let sweep = blocker_sweep(&map, &Point3::new(7.0, 6.0, 3.0), &TraceConfig::default(), &ClusterGaps::default(), &opts)
        .map_err(|e| e.to_string())?;
    let l = &sweep.levels;
    let desc = l
        .iter()
        .map(|v| format!("{}: {:.2} clusters, η {:.3}", v.blockers, v.mean_clusters, v.eta))
        .collect::<Vec<_>>()
        .join("; ");
    ensure(l.windows(2).all(|w| w[1].mean_clusters <= w[0].mean_clusters && w[1].eta <= w[0].eta), || {
        format!("not non-increasing: {desc}")
    })?;
    ensure(sweep.seeds_with_weak > 0, || "no weak single-ray clusters at 0 blockers".into())?;
    let share = sweep.vanish_fraction();
    ensure(share >= 0.8, || format!("weak clusters vanish in {share:.2} of seeds; {desc}"))?;
    Ok(format!(
        "{desc}; weak clusters vanish in {}/{} seeds",
        sweep.seeds_vanished, sweep.seeds_with_weak
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (run, workers) in [(0, 1), (1, 1), (2, 8)] {
        let cfg = office_scenario(&dir.path().join(format!("run{run}")));
        run_pipeline(&cfg, workers).map_err(|e| e.to_string())?;
        outputs.push(dir_contents(&cfg.output_dir));
    }
    ensure(outputs[0].contains_key("snapshots.db") && outputs[0].contains_key("manifest.json"), || {
        "database or manifest missing".into()
    })?;
    ensure(outputs[0] == outputs[1], || "two runs differ".into())?;
    ensure(outputs[0] == outputs[2], || "1 and 8 workers differ".into())?;
    Ok(format!("{} files byte-identical across two runs and 1 vs 8 workers", outputs[0].len()))
}

type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 10] = [
        ("image method vs mirror oracle", image_method, Some(Duration::from_secs(60))),
        ("Friis, Fresnel and slab closed forms", closed_forms, None),
        ("reciprocity and invariance", invariance, None),
        ("stochastic round trip", stochastic_round_trip, Some(Duration::from_secs(120))),
        ("cluster generation contracts", gscm_contracts, None),
        ("hybrid endpoints", hybrid_endpoints, None),
        ("snapshot database", snapshot_db, None),
        ("coefficient generation", coefficients, None),
        ("blocker density trend", blocker_trend, Some(Duration::from_secs(300))),
        ("end-to-end determinism", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let mut outcome = run();
        let took = start.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, limit) {
            if took > limit {
                outcome = Err(format!("took {took:.1?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({took:.1?})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} ({took:.1?})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
