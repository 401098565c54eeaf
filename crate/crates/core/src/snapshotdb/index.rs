use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use super::{DbError, Snapshot};

const INDEX_HEADER: &str = "# snapshot index v1: k n offset length tx_x tx_y tx_z rx_x rx_y rx_z";

/// One line of the text index.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub k: u32,
    pub n: u64,
    /// Byte offset of the record frame in the log.
    pub offset: u64,
    /// Frame length in bytes.
    pub len: u64,
    pub tx: Point3<f64>,
    pub rx: Point3<f64>,
}

impl IndexEntry {
    pub fn of(s: &Snapshot, offset: u64, len: u64) -> Self {
        Self {
            k: s.key.k,
            n: s.key.n,
            offset,
            len,
            tx: s.key.tx.position,
            rx: s.key.rx.position,
        }
    }

    fn line(&self) -> String {
        // `{}` on f64 prints the shortest text that parses back exactly.
        format!(
            "{} {} {} {} {} {} {} {} {} {}",
            self.k, self.n, self.offset, self.len, self.tx.x, self.tx.y, self.tx.z, self.rx.x, self.rx.y, self.rx.z
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 10 {
            return None;
        }
        let num = |i: usize| f[i].parse::<f64>().ok();
        Some(Self {
            k: f[0].parse().ok()?,
            n: f[1].parse().ok()?,
            offset: f[2].parse().ok()?,
            len: f[3].parse().ok()?,
            tx: Point3::new(num(4)?, num(5)?, num(6)?),
            rx: Point3::new(num(7)?, num(8)?, num(9)?),
        })
    }

    /// `|tx_q − tx| + |rx_q − rx|`.
    pub fn distance(&self, tx: &Point3<f64>, rx: &Point3<f64>) -> f64 {
        (tx - self.tx).norm() + (rx - self.rx).norm()
    }
}

pub(crate) fn write_index(path: &Path, entries: &[IndexEntry]) -> Result<(), DbError> {
    let mut text = String::from(INDEX_HEADER);
    text.push('\n');
    for e in entries {
        text.push_str(&e.line());
        text.push('\n');
    }
    let tmp = path.with_extension("idx.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn append_index(path: &Path, e: &IndexEntry) -> Result<(), DbError> {
    let mut f = OpenOptions::new().append(true).open(path)?;
    writeln!(f, "{}", e.line())?;
    Ok(())
}

/// Parses an index file; `None` if it is missing or malformed.
pub(crate) fn read_index(path: &Path) -> Option<Vec<IndexEntry>> {
    let text = std::fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    if lines.next()? != INDEX_HEADER {
        return None;
    }
    lines.map(IndexEntry::parse).collect()
}

/// Whether the entries tile the log exactly from the first record to the end.
pub(crate) fn matches_log(entries: &[IndexEntry], data_start: u64, log_len: u64) -> bool {
    let mut pos = data_start;
    for e in entries {
        if e.offset != pos {
            return false;
        }
        pos += e.len;
    }
    pos == log_len
}

/// Minimum of `(distance, n)` over `candidates`.
pub(crate) fn linear_nearest(
    entries: &[IndexEntry],
    candidates: impl Iterator<Item = usize>,
    tx: &Point3<f64>,
    rx: &Point3<f64>,
) -> Option<(usize, f64)> {
    candidates
        .map(|i| (i, entries[i].distance(tx, rx)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(entries[a.0].n.cmp(&entries[b.0].n)))
}

/// Uniform horizontal grid over receiver positions, per setup.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    cell: f64,
    buckets: HashMap<(u32, i64, i64), Vec<usize>>,
    partitions: HashMap<u32, Vec<usize>>,
}

impl Default for SpatialIndex {
    fn default() -> Self {
        Self::with_cell(1.0)
    }
}

impl SpatialIndex {
    pub fn with_cell(cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        Self {
            cell,
            buckets: HashMap::new(),
            partitions: HashMap::new(),
        }
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    fn cell_of(&self, p: &Point3<f64>) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    pub(crate) fn insert(&mut self, i: usize, e: &IndexEntry) {
        let (a, b) = self.cell_of(&e.rx);
        self.buckets.entry((e.k, a, b)).or_default().push(i);
        self.partitions.entry(e.k).or_default().push(i);
    }

    /// Ring search outward from the query's cell. After ring `r` every
    /// unvisited receiver is at least `r·cell` away horizontally, which
    /// bounds its metric from below. Falls back to a linear scan when the
    /// ring grows larger than the partition.
    pub fn nearest(
        &self,
        entries: &[IndexEntry],
        tx: &Point3<f64>,
        rx: &Point3<f64>,
        k: u32,
    ) -> Option<(usize, f64)> {
        let part = self.partitions.get(&k)?;
        let (ci, cj) = self.cell_of(rx);
        let mut best: Option<(usize, f64)> = None;
        let mut visited = 0usize;
        let better = |cand: (usize, f64), cur: Option<(usize, f64)>| match cur {
            None => true,
            Some(c) => cand.1.total_cmp(&c.1).then(entries[cand.0].n.cmp(&entries[c.0].n)).is_lt(),
        };
        for r in 0i64.. {
            let ring_cells = if r == 0 { 1 } else { 8 * r as usize };
            if ring_cells > part.len() {
                return linear_nearest(entries, part.iter().copied(), tx, rx);
            }
            for (a, b) in ring(ci, cj, r) {
                if let Some(bucket) = self.buckets.get(&(k, a, b)) {
                    for &i in bucket {
                        let cand = (i, entries[i].distance(tx, rx));
                        if better(cand, best) {
                            best = Some(cand);
                        }
                    }
                    visited += bucket.len();
                }
            }
            if visited == part.len() {
                break;
            }
            if let Some((_, d)) = best {
                if d < r as f64 * self.cell {
                    break;
                }
            }
        }
        best
    }
}

/// Cells at Chebyshev distance exactly `r` from `(ci, cj)`.
fn ring(ci: i64, cj: i64, r: i64) -> impl Iterator<Item = (i64, i64)> {
    let side = (-r..=r).flat_map(move |t| {
        let edges = [(ci + t, cj - r), (ci + t, cj + r)];
        edges.into_iter().take(if r == 0 { 1 } else { 2 })
    });
    let inner = (-r + 1..r).flat_map(move |t| [(ci - r, cj + t), (ci + r, cj + t)]);
    side.chain(inner)
}
