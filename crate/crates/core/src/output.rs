//! Per-step CSV logs and binary field snapshots.
//!
//! Snapshot layout: one ASCII header line
//! `acmob-snapshot dim=<d> cells=<M> length=<L> t=<t> eps=<ε>` followed by
//! `M^d` little-endian `f64` values in lexicographic order (x fastest).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::StepRecord;
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

pub const CSV_HEADER: [&str; 9] = [
    "n",
    "t",
    "tau",
    "energy",
    "max_norm",
    "max_val",
    "min_val",
    "solver_iters",
    "solver_residual",
];

const SNAPSHOT_MAGIC: &str = "acmob-snapshot";

/// One CSV row; the subset of [`StepRecord`] that is persisted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub n: usize,
    pub t: f64,
    pub tau: f64,
    pub energy: f64,
    pub max_norm: f64,
    pub max_val: f64,
    pub min_val: f64,
    pub solver_iters: usize,
    pub solver_residual: f64,
}

impl From<&StepRecord> for CsvRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            n: r.n,
            t: r.t,
            tau: r.tau,
            energy: r.energy,
            max_norm: r.max_norm,
            max_val: r.max_val,
            min_val: r.min_val,
            solver_iters: r.solver_iters,
            solver_residual: r.solver_residual,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.display().to_string(),
            source,
        },
        other => Error::Format {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

/// Streaming CSV writer for step records.
pub struct CsvLog<W: Write> {
    inner: csv::Writer<W>,
}

impl CsvLog<File> {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        Self::from_writer(file).map_err(|e| csv_err(path, e))
    }
}

impl<W: Write> CsvLog<W> {
    /// Writes the header immediately, so an empty log is header-only.
    pub fn from_writer(w: W) -> std::result::Result<Self, csv::Error> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        inner.write_record(CSV_HEADER)?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, record: &StepRecord) -> std::result::Result<(), csv::Error> {
        self.inner.serialize(CsvRow::from(record))
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> std::result::Result<W, String> {
        self.inner.into_inner().map_err(|e| e.to_string())
    }
}

pub fn write_csv(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut log = CsvLog::create(path)?;
    for r in records {
        log.push(r).map_err(|e| csv_err(path, e))?;
    }
    log.flush().map_err(io_err(path))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    reader
        .deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotMeta {
    pub grid: GridSpec,
    pub t: f64,
    pub eps: f64,
}

pub fn write_snapshot(path: &Path, phi: &Field, t: f64, eps: f64) -> Result<()> {
    let g = phi.grid();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    // `{:?}` on f64 round-trips exactly.
    writeln!(
        w,
        "{SNAPSHOT_MAGIC} dim={} cells={} length={:?} t={:?} eps={:?}",
        g.dim(),
        g.cells_per_dim(),
        g.domain_length(),
        t,
        eps
    )
    .map_err(io_err(path))?;
    for v in phi.values() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotMeta, Field)> {
    let bad = |message: String| Error::Format {
        path: path.display().to_string(),
        message,
    };
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let mut header = String::new();
    r.read_line(&mut header).map_err(io_err(path))?;
    let mut parts = header.trim_end().split(' ');
    if parts.next() != Some(SNAPSHOT_MAGIC) {
        return Err(bad("missing snapshot header".into()));
    }
    let mut field = |key: &str| -> Result<String> {
        let part = parts.next().ok_or_else(|| bad(format!("missing `{key}`")))?;
        part.strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .map(str::to_owned)
            .ok_or_else(|| bad(format!("expected `{key}=`, got `{part}`")))
    };
    let num = |s: String| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
    let dim: usize = field("dim")?.parse().map_err(|e| bad(format!("dim: {e}")))?;
    let cells: usize = field("cells")?.parse().map_err(|e| bad(format!("cells: {e}")))?;
    let length = num(field("length")?)?;
    let t = num(field("t")?)?;
    let eps = num(field("eps")?)?;
    let grid = GridSpec::new(dim, cells, length)?;

    let mut bytes = Vec::with_capacity(grid.len() * 8);
    r.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() != grid.len() * 8 {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            grid.len() * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let phi = Field::from_vec(grid, values)?;
    Ok((SnapshotMeta { grid, t, eps }, phi))
}
