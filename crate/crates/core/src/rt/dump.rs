//! Path dump emitters (CSV and JSON).

use std::fmt::Write as _;

use super::{InteractionKind, PathRecord};

pub const CSV_HEADER: &str = "path,delay_s,amplitude,power_db,phase_rad,aod_az_rad,aod_zen_rad,aoa_az_rad,aoa_zen_rad,\
n_reflections,n_transmissions,interactions,pol_vv_re,pol_vv_im,pol_vh_re,pol_vh_im,pol_hv_re,pol_hv_im,\
pol_hh_re,pol_hh_im,doppler_hz,blockage_db,los";

/// Interaction history as `R<wall>` / `T<wall>` tokens joined by `;`.
pub fn interaction_string(path: &PathRecord) -> String {
    path.interactions
        .iter()
        .map(|i| match i.kind {
            InteractionKind::Reflection => format!("R{}", i.wall),
            InteractionKind::Transmission => format!("T{}", i.wall),
        })
        .collect::<Vec<_>>()
        .join(";")
}

pub fn paths_to_csv(paths: &[PathRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for (i, p) in paths.iter().enumerate() {
        let m = &p.pol_matrix;
        let _ = writeln!(
            out,
            "{i},{:e},{:e},{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6},{:.3},{}",
            p.delay,
            p.amplitude,
            10.0 * p.power().log10(),
            p.phase,
            p.aod_az,
            p.aod_zen,
            p.aoa_az,
            p.aoa_zen,
            p.n_reflections,
            p.n_transmissions,
            interaction_string(p),
            m[0][0].re,
            m[0][0].im,
            m[0][1].re,
            m[0][1].im,
            m[1][0].re,
            m[1][0].im,
            m[1][1].re,
            m[1][1].im,
            p.doppler,
            p.blockage_db,
            u8::from(p.los),
        );
    }
    out
}

pub fn paths_to_json(paths: &[PathRecord]) -> String {
    serde_json::to_string_pretty(paths).expect("path records serialize")
}
