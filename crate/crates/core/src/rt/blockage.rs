//! Blocker-screen attenuation of already traced paths.

use super::PathRecord;
use crate::geometry::{BlockerScreen, Penetration};

/// Attenuates every path segment that crosses a blocker screen. Losses from
/// several crossings accumulate in dB; crossing an opaque screen removes the
/// path. Paths without stored geometry pass through unchanged.
pub fn apply_blockage(paths: Vec<PathRecord>, blockers: &[BlockerScreen]) -> Vec<PathRecord> {
    if blockers.is_empty() {
        return paths;
    }
    paths
        .into_iter()
        .filter_map(|mut path| {
            let mut loss_db = 0.0;
            let mut crossed = false;
            for seg in path.points.windows(2) {
                for b in blockers {
                    if b.intersects_segment(&seg[0], &seg[1]) {
                        crossed = true;
                        match b.penetration {
                            Penetration::Opaque => return None,
                            Penetration::Loss(db) => loss_db += db,
                        }
                    }
                }
            }
            if crossed {
                path.amplitude *= 10f64.powf(-loss_db / 20.0);
                path.blockage_db += loss_db;
                path.los = false;
            }
            Some(path)
        })
        .collect()
}
