//! Little-endian record encoding.
//!
//! Record payload, in order:
//!
//! | field | encoding |
//! |---|---|
//! | k | u32 |
//! | n | u64 |
//! | tx position, tx velocity, rx position, rx velocity | 12 × f64 |
//! | time | f64 |
//! | map digest | 32 bytes |
//! | path_loss_db, delay_spread, asd, asa, zsd, zsa, k_factor_db | 7 × f64 |
//! | n_clusters, n_rays | 2 × u32 |
//! | los_state | u8 (0 NLOS, 1 LOS, 2 outage) |
//! | path count | u32, then one path block each |
//!
//! Path block: delay, amplitude, phase, aod_az, aod_zen, aoa_az, aoa_zen
//! (7 × f64); n_reflections, n_transmissions (2 × u32); interaction count
//! (u32) followed by (wall u32, kind u8: 0 reflection, 1 transmission);
//! pol_matrix row-major as 4 × (re f64, im f64); doppler, blockage_db
//! (2 × f64); los u8; point count (u32) followed by 3 × f64 each.
//!
//! On disk each payload is framed as `u32 length | payload | 8-byte checksum`
//! where the checksum is the first 8 bytes of the payload's SHA-256.

use nalgebra::{Point3, Vector3};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::{DbError, NodeState, Snapshot, SnapshotKey};
use crate::params::LspRecord;
use crate::rt::{Interaction, InteractionKind, PathRecord};

pub(crate) const CHECKSUM_LEN: usize = 8;
pub(crate) const FRAME_OVERHEAD: usize = 4 + CHECKSUM_LEN;

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("collection length fits in u32"));
    }
    fn point(&mut self, p: &Point3<f64>) {
        p.iter().for_each(|v| self.f64(*v));
    }
    fn vector(&mut self, v: &Vector3<f64>) {
        v.iter().for_each(|x| self.f64(*x));
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DbError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len());
        let end = end.ok_or_else(|| DbError::Format("record payload ends early".into()))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, DbError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, DbError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, DbError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, DbError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn point(&mut self) -> Result<Point3<f64>, DbError> {
        Ok(Point3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn vector(&mut self) -> Result<Vector3<f64>, DbError> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }
    fn finished(&self) -> bool {
        self.pos == self.data.len()
    }
}

fn encode_path(w: &mut Writer, p: &PathRecord) {
    for v in [p.delay, p.amplitude, p.phase, p.aod_az, p.aod_zen, p.aoa_az, p.aoa_zen] {
        w.f64(v);
    }
    w.u32(p.n_reflections);
    w.u32(p.n_transmissions);
    w.len(p.interactions.len());
    for i in &p.interactions {
        w.u32(i.wall);
        w.u8(match i.kind {
            InteractionKind::Reflection => 0,
            InteractionKind::Transmission => 1,
        });
    }
    for c in p.pol_matrix.iter().flatten() {
        w.f64(c.re);
        w.f64(c.im);
    }
    w.f64(p.doppler);
    w.f64(p.blockage_db);
    w.u8(p.los as u8);
    w.len(p.points.len());
    p.points.iter().for_each(|q| w.point(q));
}

fn decode_path(r: &mut Reader) -> Result<PathRecord, DbError> {
    let mut f = [0.0; 7];
    for v in &mut f {
        *v = r.f64()?;
    }
    let n_reflections = r.u32()?;
    let n_transmissions = r.u32()?;
    let n_int = r.u32()? as usize;
    let mut interactions = Vec::with_capacity(n_int.min(64));
    for _ in 0..n_int {
        let wall = r.u32()?;
        let kind = match r.u8()? {
            0 => InteractionKind::Reflection,
            1 => InteractionKind::Transmission,
            other => return Err(DbError::Format(format!("unknown interaction kind {other}"))),
        };
        interactions.push(Interaction { wall, kind });
    }
    let mut c = [Complex64::new(0.0, 0.0); 4];
    for v in &mut c {
        *v = Complex64::new(r.f64()?, r.f64()?);
    }
    let doppler = r.f64()?;
    let blockage_db = r.f64()?;
    let los = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(DbError::Format(format!("invalid LOS flag {other}"))),
    };
    let n_pts = r.u32()? as usize;
    let mut points = Vec::with_capacity(n_pts.min(64));
    for _ in 0..n_pts {
        points.push(r.point()?);
    }
    Ok(PathRecord {
        delay: f[0],
        amplitude: f[1],
        phase: f[2],
        aod_az: f[3],
        aod_zen: f[4],
        aoa_az: f[5],
        aoa_zen: f[6],
        n_reflections,
        n_transmissions,
        interactions,
        pol_matrix: [[c[0], c[1]], [c[2], c[3]]],
        doppler,
        blockage_db,
        los,
        points,
    })
}

pub fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(s.key.k);
    w.u64(s.key.n);
    for node in [&s.key.tx, &s.key.rx] {
        w.point(&node.position);
        w.vector(&node.velocity);
    }
    w.f64(s.key.time);
    w.buf.extend_from_slice(&s.map_digest);
    let l = &s.lsps;
    for v in [l.path_loss_db, l.delay_spread, l.asd, l.asa, l.zsd, l.zsa, l.k_factor_db] {
        w.f64(v);
    }
    w.len(l.n_clusters);
    w.len(l.n_rays);
    w.u8(match l.los_state {
        Some(false) => 0,
        Some(true) => 1,
        None => 2,
    });
    w.len(s.paths.len());
    s.paths.iter().for_each(|p| encode_path(&mut w, p));
    w.buf
}

pub fn decode_snapshot(payload: &[u8]) -> Result<Snapshot, DbError> {
    let mut r = Reader::new(payload);
    let k = r.u32()?;
    let n = r.u64()?;
    let tx = NodeState {
        position: r.point()?,
        velocity: r.vector()?,
    };
    let rx = NodeState {
        position: r.point()?,
        velocity: r.vector()?,
    };
    let time = r.f64()?;
    let map_digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let mut f = [0.0; 7];
    for v in &mut f {
        *v = r.f64()?;
    }
    let n_clusters = r.u32()? as usize;
    let n_rays = r.u32()? as usize;
    let los_state = match r.u8()? {
        0 => Some(false),
        1 => Some(true),
        2 => None,
        other => return Err(DbError::Format(format!("invalid LOS state {other}"))),
    };
    let n_paths = r.u32()? as usize;
    let mut paths = Vec::with_capacity(n_paths.min(1024));
    for _ in 0..n_paths {
        paths.push(decode_path(&mut r)?);
    }
    if !r.finished() {
        return Err(DbError::Format("trailing bytes in record payload".into()));
    }
    Ok(Snapshot {
        key: SnapshotKey { k, n, tx, rx, time },
        paths,
        lsps: LspRecord {
            path_loss_db: f[0],
            delay_spread: f[1],
            asd: f[2],
            asa: f[3],
            zsd: f[4],
            zsa: f[5],
            k_factor_db: f[6],
            n_clusters,
            n_rays,
            los_state,
        },
        map_digest,
    })
}

pub(crate) fn checksum(payload: &[u8]) -> [u8; CHECKSUM_LEN] {
    Sha256::digest(payload)[..CHECKSUM_LEN].try_into().expect("checksum length")
}

/// Length-prefixed, checksummed frame around a payload.
pub(crate) fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&checksum(payload));
    out
}

/// Parses the frame starting at `data[0]`. Returns the payload and the frame
/// length, or `None` if the frame is incomplete or fails its checksum.
pub(crate) fn unframe(data: &[u8]) -> Option<(&[u8], usize)> {
    let len = u32::from_le_bytes(data.get(..4)?.try_into().ok()?) as usize;
    let end = 4usize.checked_add(len)?;
    let payload = data.get(4..end)?;
    let sum = data.get(end..end + CHECKSUM_LEN)?;
    (sum == checksum(payload)).then_some((payload, end + CHECKSUM_LEN))
}
