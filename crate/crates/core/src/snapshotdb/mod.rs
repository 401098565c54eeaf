//! Append-only database of deterministic channel snapshots with
//! nearest-snapshot picking.
//!
//! A database is a log file plus a text index next to it (`<log>.idx`). The
//! log starts with a header (magic, schema version, map digest, JSON
//! configuration, checksum) followed by checksummed records; see [`codec`]
//! for the record layout. The index lists `k n offset length` and the TX/RX
//! positions of every record and can always be rebuilt from the log.
//!
//! One writer at a time holds an exclusive lock on the log. Records are
//! appended with a single write and readers stop at the first incomplete or
//! corrupt frame, so a partial append is never observed.

pub mod codec;
mod index;
mod ingest;

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use index::{IndexEntry, SpatialIndex};
pub use ingest::{adapter_by_name, ingest, IngestAdapter, JsonIngest};

use crate::geometry::DigitalMap;
use crate::gscm::FitSample;
use crate::params::{cluster_paths, extract_lsps, ClusterGaps, LspRecord};
use crate::rt::{PathRecord, TraceConfig};

pub const MAGIC: &[u8; 8] = b"MCSNAPDB";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed database: {0}")]
    Format(String),
    #[error("map digest mismatch: database {expected}, snapshot {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("snapshot (k={k}, n={n}) already stored")]
    DuplicateKey { k: u32, n: u64 },
    #[error("no snapshots stored for setup k={0}")]
    EmptySetup(u32),
    #[error("database already exists at {0}")]
    Exists(PathBuf),
    #[error("database is locked by another writer")]
    Locked,
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("ingest: {0}")]
    Ingest(String),
}

/// Position and velocity of one link end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub position: Point3<f64>,
    pub velocity: Vector3<f64>,
}

impl NodeState {
    pub fn at(position: Point3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotKey {
    /// System setup index.
    pub k: u32,
    /// Snapshot index within the setup.
    pub n: u64,
    pub tx: NodeState,
    pub rx: NodeState,
    /// Seconds.
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub key: SnapshotKey,
    pub paths: Vec<PathRecord>,
    pub lsps: LspRecord,
    #[serde(with = "hex::serde")]
    pub map_digest: [u8; 32],
}

impl Snapshot {
    /// Builds a snapshot whose LSPs are extracted from `paths`.
    pub fn new(key: SnapshotKey, paths: Vec<PathRecord>, gaps: &ClusterGaps, map_digest: [u8; 32]) -> Self {
        let lsps = extract_lsps(&paths, gaps);
        Self {
            key,
            paths,
            lsps,
            map_digest,
        }
    }

    pub fn distance(&self) -> f64 {
        (self.key.tx.position - self.key.rx.position).norm()
    }
}

/// Configuration stored in the header. Only the trace settings enter the
/// map digest; the cluster gaps are needed to recompute LSPs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbConfig {
    pub trace: TraceConfig,
    pub gaps: ClusterGaps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbHeader {
    pub version: u32,
    pub map_digest: [u8; 32],
    pub config: DbConfig,
    /// Byte offset of the first record.
    pub data_start: u64,
}

/// Content hash of a map and the trace configuration used on it.
pub fn map_digest(map: &DigitalMap, cfg: &TraceConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&map.to_document()).expect("map serializes"));
    h.update([0u8]);
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.finalize().into()
}

fn encode_header(digest: &[u8; 32], config: &DbConfig) -> Vec<u8> {
    let json = serde_json::to_vec(config).expect("config serializes");
    let mut out = Vec::with_capacity(52 + json.len() + codec::CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(digest);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let sum = codec::checksum(&out);
    out.extend_from_slice(&sum);
    out
}

fn decode_header(data: &[u8]) -> Result<DbHeader, DbError> {
    let bad = |m: &str| DbError::Format(m.to_string());
    if data.get(..8) != Some(MAGIC.as_slice()) {
        return Err(bad("not a snapshot database (bad magic)"));
    }
    let version = u32::from_le_bytes(data[8..12].try_into().expect("4 bytes"));
    if version != SCHEMA_VERSION {
        return Err(DbError::Format(format!("unsupported schema version {version}")));
    }
    let map_digest: [u8; 32] = data.get(12..44).ok_or_else(|| bad("truncated header"))?.try_into().expect("32");
    let len = u32::from_le_bytes(data.get(44..48).ok_or_else(|| bad("truncated header"))?.try_into().expect("4"));
    let json_end = 48 + len as usize;
    let json = data.get(48..json_end).ok_or_else(|| bad("truncated header"))?;
    let sum = data.get(json_end..json_end + codec::CHECKSUM_LEN).ok_or_else(|| bad("truncated header"))?;
    if sum != codec::checksum(&data[..json_end]) {
        return Err(bad("header checksum mismatch"));
    }
    Ok(DbHeader {
        version,
        map_digest,
        config: serde_json::from_slice(json)?,
        data_start: (json_end + codec::CHECKSUM_LEN) as u64,
    })
}

/// Walks the record frames after the header. Returns the decoded entries and
/// the end offset of the last valid frame.
fn scan_frames(data: &[u8], start: usize) -> Result<(Vec<(IndexEntry, Snapshot)>, usize), DbError> {
    let mut pos = start;
    let mut out = Vec::new();
    while let Some((payload, len)) = codec::unframe(&data[pos..]) {
        let snap = codec::decode_snapshot(payload)?;
        out.push((IndexEntry::of(&snap, pos as u64, len as u64), snap));
        pos += len;
    }
    Ok((out, pos))
}

pub fn index_path(log: &Path) -> PathBuf {
    let mut name = log.as_os_str().to_owned();
    name.push(".idx");
    PathBuf::from(name)
}

/// Outcome of [`SnapshotDb::verify`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub records: usize,
    /// Bytes after the last valid record (an interrupted append).
    pub trailing_bytes: u64,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty() && self.trailing_bytes == 0
    }
}

/// Snapshot found by [`SnapshotDb::pick_nearest`] and its distance
/// `|tx_q − tx_s| + |rx_q − rx_s|` from the query.
#[derive(Clone, Debug, PartialEq)]
pub struct Picked {
    pub snapshot: Snapshot,
    pub distance: f64,
}

pub struct SnapshotDb {
    path: PathBuf,
    header: DbHeader,
    entries: Vec<IndexEntry>,
    by_key: HashMap<(u32, u64), usize>,
    spatial: SpatialIndex,
    /// Held open and locked in writer mode.
    writer: Option<File>,
}

impl SnapshotDb {
    /// Creates a new, empty database. Fails if the log already exists.
    pub fn create(path: impl AsRef<Path>, map_digest: [u8; 32], config: DbConfig) -> Result<Self, DbError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => DbError::Exists(path.clone()),
                _ => DbError::Io(e),
            })?;
        lock(&file)?;
        let header = encode_header(&map_digest, &config);
        file.write_all(&header)?;
        file.sync_all()?;
        let header = decode_header(&header)?;
        let db = Self {
            path,
            header,
            entries: vec![],
            by_key: HashMap::new(),
            spatial: SpatialIndex::default(),
            writer: Some(file),
        };
        index::write_index(&index_path(&db.path), &db.entries)?;
        Ok(db)
    }

    /// Opens an existing database for appending. A torn final record is cut
    /// off and the index is rebuilt if it does not match the log.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, DbError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().read(true).write(true).open(&path)?;
        lock(&file)?;
        let mut db = Self::load(path, Some(file))?;
        db.repair()?;
        Ok(db)
    }

    /// Opens an existing database without taking the writer lock.
    pub fn open_read_only(path: impl AsRef<Path>) -> Result<Self, DbError> {
        Self::load(path.as_ref().to_path_buf(), None)
    }

    fn load(path: PathBuf, writer: Option<File>) -> Result<Self, DbError> {
        let data = std::fs::read(&path)?;
        let header = decode_header(&data)?;
        let start = header.data_start as usize;
        let entries = match index::read_index(&index_path(&path)) {
            Some(e) if index::matches_log(&e, start as u64, data.len() as u64) => e,
            _ => scan_frames(&data, start)?.0.into_iter().map(|(e, _)| e).collect(),
        };
        let mut db = Self {
            path,
            header,
            entries: vec![],
            by_key: HashMap::new(),
            spatial: SpatialIndex::default(),
            writer,
        };
        for e in entries {
            db.insert_entry(e)?;
        }
        Ok(db)
    }

    /// Truncates bytes after the last valid frame and rewrites a stale index.
    fn repair(&mut self) -> Result<(), DbError> {
        let data = std::fs::read(&self.path)?;
        let (frames, end) = scan_frames(&data, self.header.data_start as usize)?;
        if end != data.len() {
            let file = self.writer.as_ref().expect("writer mode");
            file.set_len(end as u64)?;
            file.sync_all()?;
        }
        let on_disk = index::read_index(&index_path(&self.path));
        let scanned: Vec<IndexEntry> = frames.into_iter().map(|(e, _)| e).collect();
        if on_disk.as_ref() != Some(&scanned) || scanned != self.entries {
            self.entries.clear();
            self.by_key.clear();
            self.spatial = SpatialIndex::with_cell(self.spatial.cell());
            for e in scanned {
                self.insert_entry(e)?;
            }
            index::write_index(&index_path(&self.path), &self.entries)?;
        }
        Ok(())
    }

    fn insert_entry(&mut self, e: IndexEntry) -> Result<(), DbError> {
        if self.by_key.contains_key(&(e.k, e.n)) {
            return Err(DbError::DuplicateKey { k: e.k, n: e.n });
        }
        let i = self.entries.len();
        self.by_key.insert((e.k, e.n), i);
        self.spatial.insert(i, &e);
        self.entries.push(e);
        Ok(())
    }

    /// Rebuilds the spatial index with a different bucket size (metres).
    pub fn set_cell_size(&mut self, cell: f64) {
        self.spatial = SpatialIndex::with_cell(cell);
        for (i, e) in self.entries.iter().enumerate() {
            self.spatial.insert(i, e);
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &DbHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Keys in ascending `(k, n)` order.
    pub fn keys(&self) -> Vec<(u32, u64)> {
        let mut keys: Vec<(u32, u64)> = self.by_key.keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    /// Appends a snapshot. The log is synced before the index is updated.
    pub fn store(&mut self, snapshot: &Snapshot) -> Result<(), DbError> {
        if snapshot.map_digest != self.header.map_digest {
            return Err(DbError::DigestMismatch {
                expected: hex::encode(self.header.map_digest),
                found: hex::encode(snapshot.map_digest),
            });
        }
        let key = (snapshot.key.k, snapshot.key.n);
        if self.by_key.contains_key(&key) {
            return Err(DbError::DuplicateKey { k: key.0, n: key.1 });
        }
        let file = self
            .writer
            .as_mut()
            .ok_or_else(|| DbError::Format("database opened read-only".into()))?;
        let frame = codec::frame(&codec::encode_snapshot(snapshot));
        let offset = file.seek(SeekFrom::End(0))?;
        file.write_all(&frame)?;
        file.sync_data()?;
        let entry = IndexEntry::of(snapshot, offset, frame.len() as u64);
        index::append_index(&index_path(&self.path), &entry)?;
        self.insert_entry(entry)
    }

    fn read_entry(&self, e: &IndexEntry) -> Result<Snapshot, DbError> {
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(e.offset))?;
        let mut buf = vec![0u8; e.len as usize];
        file.read_exact(&mut buf)?;
        let (payload, _) =
            codec::unframe(&buf).ok_or_else(|| DbError::Format(format!("corrupt record at offset {}", e.offset)))?;
        codec::decode_snapshot(payload)
    }

    pub fn get(&self, k: u32, n: u64) -> Result<Option<Snapshot>, DbError> {
        match self.by_key.get(&(k, n)) {
            Some(&i) => Ok(Some(self.read_entry(&self.entries[i])?)),
            None => Ok(None),
        }
    }

    /// Every snapshot in log order, read straight from the log.
    pub fn scan(&self) -> Result<Vec<Snapshot>, DbError> {
        let data = std::fs::read(&self.path)?;
        Ok(scan_frames(&data, self.header.data_start as usize)?.0.into_iter().map(|(_, s)| s).collect())
    }

    /// SHA-256 (hex) over the encoded snapshots in key order.
    pub fn content_hash(&self) -> Result<String, DbError> {
        let mut snaps = self.scan()?;
        snaps.sort_by_key(|s| (s.key.k, s.key.n));
        let mut h = Sha256::new();
        h.update(self.header.map_digest);
        for s in &snaps {
            h.update(codec::frame(&codec::encode_snapshot(s)));
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Nearest stored snapshot of setup `k` under the endpoint-sum metric;
    /// ties go to the smallest `n`.
    pub fn pick_nearest(&self, tx: &Point3<f64>, rx: &Point3<f64>, k: u32) -> Result<Picked, DbError> {
        let (i, distance) = self.spatial.nearest(&self.entries, tx, rx, k).ok_or(DbError::EmptySetup(k))?;
        Ok(Picked {
            snapshot: self.read_entry(&self.entries[i])?,
            distance,
        })
    }

    /// Exhaustive version of [`pick_nearest`](Self::pick_nearest).
    pub fn pick_nearest_linear(&self, tx: &Point3<f64>, rx: &Point3<f64>, k: u32) -> Result<Picked, DbError> {
        let (i, distance) = index::linear_nearest(&self.entries, (0..self.entries.len()).filter(|i| self.entries[*i].k == k), tx, rx)
            .ok_or(DbError::EmptySetup(k))?;
        Ok(Picked {
            snapshot: self.read_entry(&self.entries[i])?,
            distance,
        })
    }

    /// Setup `k` in snapshot order, as fitting input.
    pub fn export_for_fitting(&self, k: u32) -> Result<Vec<FitSample>, DbError> {
        let mut snaps: Vec<Snapshot> = self.scan()?.into_iter().filter(|s| s.key.k == k).collect();
        if snaps.is_empty() {
            return Err(DbError::EmptySetup(k));
        }
        snaps.sort_by_key(|s| s.key.n);
        let gaps = self.header.config.gaps;
        Ok(snaps
            .into_iter()
            .map(|s| FitSample {
                distance: s.distance(),
                clusters: cluster_paths(&s.paths, &gaps),
                lsps: s.lsps,
            })
            .collect())
    }

    /// Checks record checksums, digests, key uniqueness, LSP consistency and
    /// the index file.
    pub fn verify(&self) -> Result<VerifyReport, DbError> {
        let data = std::fs::read(&self.path)?;
        let (frames, end) = scan_frames(&data, self.header.data_start as usize)?;
        let mut problems = Vec::new();
        let mut seen: BTreeMap<(u32, u64), usize> = BTreeMap::new();
        for (e, s) in &frames {
            if s.map_digest != self.header.map_digest {
                problems.push(format!("(k={}, n={}): foreign map digest", e.k, e.n));
            }
            if seen.insert((e.k, e.n), e.offset as usize).is_some() {
                problems.push(format!("(k={}, n={}): duplicate key", e.k, e.n));
            }
            let recomputed = extract_lsps(&s.paths, &self.header.config.gaps);
            if !same_lsps(&recomputed, &s.lsps) {
                problems.push(format!("(k={}, n={}): stored LSPs differ from paths", e.k, e.n));
            }
        }
        let scanned: Vec<IndexEntry> = frames.into_iter().map(|(e, _)| e).collect();
        if index::read_index(&index_path(&self.path)).as_ref() != Some(&scanned) {
            problems.push("index file does not match the log".into());
        }
        Ok(VerifyReport {
            records: scanned.len(),
            trailing_bytes: (data.len() - end) as u64,
            problems,
        })
    }
}

fn same_lsps(a: &LspRecord, b: &LspRecord) -> bool {
    let f = |x: f64, y: f64| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan());
    f(a.path_loss_db, b.path_loss_db)
        && f(a.delay_spread, b.delay_spread)
        && f(a.asd, b.asd)
        && f(a.asa, b.asa)
        && f(a.zsd, b.zsd)
        && f(a.zsa, b.zsa)
        && f(a.k_factor_db, b.k_factor_db)
        && a.n_clusters == b.n_clusters
        && a.n_rays == b.n_rays
        && a.los_state == b.los_state
}

fn lock(file: &File) -> Result<(), DbError> {
    match file.try_lock() {
        Ok(()) => Ok(()),
        Err(std::fs::TryLockError::WouldBlock) => Err(DbError::Locked),
        Err(std::fs::TryLockError::Error(e)) => Err(DbError::Io(e)),
    }
}

/// Rewrites the index of a database from its log.
pub fn rebuild_index(path: impl AsRef<Path>) -> Result<usize, DbError> {
    let path = path.as_ref();
    let data = std::fs::read(path)?;
    let header = decode_header(&data)?;
    let entries: Vec<IndexEntry> =
        scan_frames(&data, header.data_start as usize)?.0.into_iter().map(|(e, _)| e).collect();
    index::write_index(&index_path(path), &entries)?;
    Ok(entries.len())
}

/// SHA-256 (hex) of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String, DbError> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}
