use std::path::Path;

use super::{DbError, Snapshot, SnapshotDb};

/// Converts an external snapshot source into [`Snapshot`]s.
pub trait IngestAdapter {
    fn name(&self) -> &'static str;
    fn read(&self, input: &Path) -> Result<Vec<Snapshot>, DbError>;
}

/// JSON array of snapshots in their serde form.
pub struct JsonIngest;

impl IngestAdapter for JsonIngest {
    fn name(&self) -> &'static str {
        "json"
    }

    fn read(&self, input: &Path) -> Result<Vec<Snapshot>, DbError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(input)?)?)
    }
}

pub fn adapter_by_name(name: &str) -> Option<Box<dyn IngestAdapter>> {
    match name {
        "json" => Some(Box::new(JsonIngest)),
        _ => None,
    }
}

/// Stores every snapshot produced by `adapter`. Stops at the first rejected
/// snapshot; earlier ones stay stored.
pub fn ingest(db: &mut SnapshotDb, adapter: &dyn IngestAdapter, input: &Path) -> Result<usize, DbError> {
    let snaps = adapter.read(input)?;
    for s in &snaps {
        db.store(s)?;
    }
    Ok(snaps.len())
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use nalgebra::Point3;

    #[test]
    fn json_ingest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let snaps: Vec<Snapshot> = (0..3)
            .map(|n| snapshot(0, n, Point3::new(0.0, 0.0, 3.0), Point3::new(1.0 + n as f64, 2.0, 1.0)))
            .collect();
        let input = dir.path().join("in.json");
        std::fs::write(&input, serde_json::to_string(&snaps).unwrap()).unwrap();
        let mut db = SnapshotDb::create(dir.path().join("a.db"), digest(), config()).unwrap();
        let adapter = adapter_by_name("json").unwrap();
        assert_eq!(ingest(&mut db, adapter.as_ref(), &input).unwrap(), 3);
        assert_eq!(db.scan().unwrap(), snaps);
        assert!(adapter_by_name("csv").is_none());
    }
}
