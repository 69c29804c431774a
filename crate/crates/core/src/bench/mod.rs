//! YCSB-style load generation and measurement.
//!
//! A run has two phases. [`load_phase`] inserts `record_count` rows with keys
//! `user0..`, each with `field_count` random alphanumeric fields. [`run_phase`]
//! then drives `n` concurrent sessions through a seeded mix of full-row reads
//! and single-field updates, checking every read against a client-side copy
//! of the table. [`sweep`] repeats runs over a grid and the results go to CSV
//! with the columns of [`CsvRecord`].

mod runner;
mod workload;
mod zipfian;

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deploy::{DeployError, ModelKind};
use crate::net::NetError;

pub use runner::{load_phase, run_phase, sweep, ExpectedTable, RunParams, SweepConfig};
pub use workload::{
    field_name, initial_value, insert_statement, key_name, partition_keys, plan_session,
    read_statement, update_statement, Distribution, Operation, WorkloadSpec, KEY_COLUMN, TABLE,
};
pub use zipfian::{zeta, Zipfian, ZipfianGenerator, DEFAULT_THETA};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark configuration: {0}")]
    Config(String),
    /// A read returned the wrong data, or the proxy reported an integrity
    /// failure for a row the benchmark wrote.
    #[error("correctness failure: {0}")]
    Correctness(String),
    #[error("loading {key}: {message}")]
    Load { key: String, message: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Outcome of one measured run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSample {
    pub model: ModelKind,
    /// Proxy count, 0 for direct plaintext access.
    pub p: usize,
    /// Concurrent client sessions.
    pub n: usize,
    pub throughput_ops: f64,
    pub read_lat_us: f64,
    pub write_lat_us: f64,
    pub read_p99_us: f64,
    pub write_p99_us: f64,
    pub reads: usize,
    pub writes: usize,
    pub errors: usize,
    pub repetition: usize,
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub model: ModelKind,
    pub p: usize,
    pub n: usize,
    pub throughput_ops: f64,
    pub read_lat_us: f64,
    pub write_lat_us: f64,
    pub errors: usize,
    pub repetition: usize,
}

impl From<&MetricsSample> for CsvRecord {
    fn from(s: &MetricsSample) -> Self {
        CsvRecord {
            model: s.model,
            p: s.p,
            n: s.n,
            throughput_ops: s.throughput_ops,
            read_lat_us: s.read_lat_us,
            write_lat_us: s.write_lat_us,
            errors: s.errors,
            repetition: s.repetition,
        }
    }
}

pub fn write_csv<W: io::Write>(out: W, records: &[CsvRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<CsvRecord>, BenchError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(BenchError::from)
}

pub fn read_csv_file(path: &Path) -> Result<Vec<CsvRecord>, BenchError> {
    read_csv(std::fs::File::open(path)?)
}

/// Mean of each metric per `(p, n)` cell, as `(p, n, T, l_r, l_w)` rows.
pub fn cell_means(records: &[CsvRecord]) -> Vec<(f64, f64, f64, f64, f64)> {
    let mut cells: BTreeMap<(usize, usize), (f64, f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let c = cells.entry((r.p, r.n)).or_default();
        c.0 += r.throughput_ops;
        c.1 += r.read_lat_us;
        c.2 += r.write_lat_us;
        c.3 += 1;
    }
    cells
        .into_iter()
        .map(|((p, n), (t, lr, lw, k))| {
            let k = k as f64;
            (p as f64, n as f64, t / k, lr / k, lw / k)
        })
        .collect()
}

/// Mean throughput at `(p, n)` over every repetition of `model`.
pub fn mean_throughput(records: &[CsvRecord], model: ModelKind, p: usize, n: usize) -> Option<f64> {
    let xs: Vec<f64> = records
        .iter()
        .filter(|r| r.model == model && r.p == p && r.n == n)
        .map(|r| r.throughput_ops)
        .collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}
