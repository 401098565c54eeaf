//! Columnar text emitters for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{CountPmf, CoverageMap, LspRecord, PowerDelayProfile};

fn db(p: f64) -> f64 {
    10.0 * p.log10()
}

pub fn pdp_table(pdp: &PowerDelayProfile) -> String {
    let mut out = String::from("delay_ns power_db\n");
    for (i, p) in pdp.bin_powers.iter().enumerate() {
        let _ = writeln!(out, "{:.4} {:.4}", pdp.bin_delay(i) * 1e9, db(*p));
    }
    out
}

pub const LSP_HEADER: &str =
    "k n path_loss_db ds_ns asd_deg asa_deg zsd_deg zsa_deg k_factor_db n_clusters n_rays los";

/// One line of the LSP table, prefixed with the snapshot key.
pub fn lsp_row(k: i64, n: i64, l: &LspRecord) -> String {
    let los = match l.los_state {
        Some(true) => "1",
        Some(false) => "0",
        None => "nan",
    };
    format!(
        "{k} {n} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {} {} {los}",
        l.path_loss_db,
        l.delay_spread * 1e9,
        l.asd.to_degrees(),
        l.asa.to_degrees(),
        l.zsd.to_degrees(),
        l.zsa.to_degrees(),
        l.k_factor_db,
        l.n_clusters,
        l.n_rays,
    )
}

fn pmf_rows(out: &mut String, name: &str, pmf: &BTreeMap<usize, f64>) {
    for (k, p) in pmf {
        let _ = writeln!(out, "{name} {k} {p:.12}");
    }
}

pub fn pmf_table(pmf: &CountPmf) -> String {
    let mut out = String::from("quantity count probability\n");
    pmf_rows(&mut out, "clusters", &pmf.clusters);
    pmf_rows(&mut out, "rays_per_cluster", &pmf.rays_per_cluster);
    out
}

pub fn coverage_table(cov: &CoverageMap) -> String {
    let mut out = String::from("x_m y_m rx_power_dbm\n");
    for p in &cov.points {
        let _ = writeln!(out, "{:.4} {:.4} {:.4}", p.x, p.y, p.rx_power_dbm);
    }
    out
}
