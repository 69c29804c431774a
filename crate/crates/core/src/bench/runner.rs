use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};
use parking_lot::Mutex;

use super::workload::{
    derive_seed, field_name, initial_value, insert_statement, key_name, partition_keys,
    plan_session, read_statement, update_statement, Operation, WorkloadSpec, TABLE,
};
use super::{BenchError, MetricsSample};
use crate::crypto::MasterKey;
use crate::deploy::{DeploymentModel, ModelKind, Topology, TopologyOptions, Transport};
use crate::net::{Endpoint, Session};
use crate::wire::{ErrorCode, Message};

const LOAD_THREADS_PER_ENDPOINT: usize = 8;

/// Client-side copy of every field of every record.
#[derive(Debug)]
pub struct ExpectedTable {
    rows: Vec<Mutex<Vec<String>>>,
}

impl ExpectedTable {
    /// The table as [`load_phase`] leaves it for this seed.
    pub fn initial(spec: &WorkloadSpec, seed: u64) -> Self {
        ExpectedTable {
            rows: (0..spec.record_count)
                .map(|k| {
                    Mutex::new(
                        (0..spec.field_count)
                            .map(|f| initial_value(seed, k, f, spec.value_length))
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn fields(&self, key: usize) -> Vec<String> {
        self.rows[key].lock().clone()
    }

    fn set(&self, key: usize, field: usize, value: String) {
        self.rows[key].lock()[field] = value;
    }
}

fn proxies_of(model: ModelKind, endpoints: usize) -> usize {
    if model == ModelKind::NoEnc {
        0
    } else {
        endpoints
    }
}

/// Creates the table on every endpoint and inserts all records, record `i`
/// through endpoint `i mod endpoints.len()`.
pub fn load_phase(
    spec: &WorkloadSpec,
    endpoints: &[Arc<dyn Endpoint>],
    seed: u64,
) -> Result<ExpectedTable, BenchError> {
    spec.validate()?;
    if endpoints.is_empty() {
        return Err(BenchError::Config("no endpoints to load".into()));
    }
    let create = Message::CreateSchema {
        table: TABLE.into(),
        columns: spec.columns(),
    };
    for ep in endpoints {
        match ep.connect()?.call(&create)? {
            Message::Ok => {}
            other => {
                return Err(BenchError::Load {
                    key: TABLE.into(),
                    message: format!("{} refused schema: {other:?}", ep.describe()),
                })
            }
        }
    }
    let expected = ExpectedTable::initial(spec, seed);
    let stride = endpoints.len() * LOAD_THREADS_PER_ENDPOINT;
    thread::scope(|scope| {
        let handles: Vec<_> = (0..stride)
            .map(|worker| {
                let ep = &endpoints[worker % endpoints.len()];
                let expected = &expected;
                scope.spawn(move || -> Result<(), BenchError> {
                    let mut session = ep.connect()?;
                    for key in (worker..spec.record_count).step_by(stride) {
                        let stmt = insert_statement(spec, key, &expected.fields(key));
                        match session.call(&Message::Query(stmt))? {
                            Message::Ok => {}
                            other => {
                                return Err(BenchError::Load {
                                    key: key_name(key),
                                    message: format!("{other:?}"),
                                })
                            }
                        }
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .try_for_each(|h| h.join().expect("load worker panicked"))
    })?;
    info!("loaded {} records through {} endpoint(s)", spec.record_count, endpoints.len());
    Ok(expected)
}

#[derive(Debug, Clone)]
pub struct RunParams {
    pub spec: WorkloadSpec,
    pub sessions: usize,
    pub seed: u64,
    pub model: ModelKind,
    pub repetition: usize,
}

#[derive(Default)]
struct SessionStats {
    read_us: Vec<f64>,
    write_us: Vec<f64>,
    errors: usize,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn p99(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_unstable_by(f64::total_cmp);
    let rank = ((xs.len() as f64) * 0.99).ceil() as usize;
    xs[rank.clamp(1, xs.len()) - 1]
}

fn check_row(
    key: usize,
    rows: &[(String, Vec<u8>)],
    expected: &[String],
) -> Result<(), BenchError> {
    for (field, want) in expected.iter().enumerate() {
        let name = field_name(field);
        let got = rows.iter().find(|(c, _)| *c == name).map(|(_, v)| v.as_slice());
        if got != Some(want.as_bytes()) {
            return Err(BenchError::Correctness(format!(
                "{} {name}: expected {want:?}, got {:?}",
                key_name(key),
                got.map(String::from_utf8_lossy)
            )));
        }
    }
    Ok(())
}

fn drive(
    session: &mut dyn Session,
    ops: &[Operation],
    expected: &ExpectedTable,
    stop: &AtomicBool,
) -> Result<SessionStats, BenchError> {
    let mut stats = SessionStats::default();
    for op in ops {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let msg = match op {
            Operation::Read { key } => Message::Query(read_statement(*key)),
            Operation::Update { key, field, value } => {
                Message::Query(update_statement(*key, *field, value))
            }
        };
        let t0 = Instant::now();
        let reply = session.call(&msg)?;
        let us = t0.elapsed().as_secs_f64() * 1e6;
        match (op, reply) {
            (Operation::Read { key }, Message::Rows(rows)) => {
                check_row(*key, &rows, &expected.fields(*key))?;
                stats.read_us.push(us);
            }
            (Operation::Update { key, field, value }, Message::Ok) => {
                expected.set(*key, *field, value.clone());
                stats.write_us.push(us);
            }
            (_, Message::Error { code, message })
                if matches!(code, ErrorCode::IntegrityFailure | ErrorCode::NotFound) =>
            {
                return Err(BenchError::Correctness(format!(
                    "{}: {code:?}: {message}",
                    key_name(op.key())
                )));
            }
            (_, Message::Error { code, message }) => {
                debug!("{} failed: {code:?}: {message}", key_name(op.key()));
                stats.errors += 1;
            }
            (_, other) => {
                return Err(BenchError::Correctness(format!(
                    "{}: unexpected reply {other:?}",
                    key_name(op.key())
                )))
            }
        }
    }
    Ok(stats)
}

/// Runs `params.sessions` concurrent sessions over the loaded table. Session
/// `s` talks to endpoint `s mod endpoints.len()`. Any wrong read or integrity
/// failure stops all sessions and is returned as [`BenchError::Correctness`].
pub fn run_phase(
    params: &RunParams,
    endpoints: &[Arc<dyn Endpoint>],
    expected: &ExpectedTable,
) -> Result<MetricsSample, BenchError> {
    let spec = &params.spec;
    spec.validate()?;
    let n = params.sessions;
    if endpoints.is_empty() {
        return Err(BenchError::Config("no endpoints to run against".into()));
    }
    if expected.len() != spec.record_count {
        return Err(BenchError::Config("expected table does not match the workload".into()));
    }
    let owned = partition_keys(spec.record_count, n, endpoints.len())?;
    let (base, extra) = (spec.operation_count / n, spec.operation_count % n);
    let plans = owned
        .iter()
        .enumerate()
        .map(|(s, keys)| {
            let count = base + usize::from(s < extra);
            plan_session(spec, keys, count, derive_seed(params.seed, s as u64, params.repetition as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut sessions = (0..n)
        .map(|s| endpoints[s % endpoints.len()].connect())
        .collect::<Result<Vec<_>, _>>()?;

    let stop = AtomicBool::new(false);
    let barrier = Barrier::new(n + 1);
    let (elapsed, results) = thread::scope(|scope| {
        let handles: Vec<_> = sessions
            .iter_mut()
            .zip(&plans)
            .map(|(session, ops)| {
                let (stop, barrier) = (&stop, &barrier);
                scope.spawn(move || {
                    barrier.wait();
                    let r = drive(session.as_mut(), ops, expected, stop);
                    if r.is_err() {
                        stop.store(true, Ordering::Relaxed);
                    }
                    r
                })
            })
            .collect();
        barrier.wait();
        let start = Instant::now();
        let results: Vec<_> = handles
            .into_iter()
            .map(|h| h.join().expect("session panicked"))
            .collect();
        (start.elapsed(), results)
    });

    let mut reads = Vec::new();
    let mut writes = Vec::new();
    let mut errors = 0;
    for r in results {
        let s = r?;
        reads.extend(s.read_us);
        writes.extend(s.write_us);
        errors += s.errors;
    }
    let sample = MetricsSample {
        model: params.model,
        p: proxies_of(params.model, endpoints.len()),
        n,
        throughput_ops: spec.operation_count as f64 / elapsed.as_secs_f64().max(1e-9),
        read_lat_us: mean(&reads),
        write_lat_us: mean(&writes),
        reads: reads.len(),
        writes: writes.len(),
        read_p99_us: p99(&mut reads),
        write_p99_us: p99(&mut writes),
        errors,
        repetition: params.repetition,
    };
    debug_assert_eq!(sample.reads + sample.writes + sample.errors, spec.operation_count);
    Ok(sample)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub model: ModelKind,
    pub nodes: usize,
    /// Proxy counts to try; ignored for `NoEnc`.
    pub proxies: Vec<usize>,
    pub clients: Vec<usize>,
    pub repetitions: usize,
    pub spec: WorkloadSpec,
    pub seed: u64,
    /// Store service time during the measured phase (loading runs without it).
    pub service_delay: Duration,
    pub workers: usize,
    pub transport: Transport,
}

/// For each proxy count, starts a fresh topology, loads it, then measures
/// every client count `repetitions` times, one run at a time.
pub fn sweep(config: &SweepConfig, master: &MasterKey) -> Result<Vec<MetricsSample>, BenchError> {
    if config.repetitions == 0 || config.clients.is_empty() {
        return Err(BenchError::Config("sweep needs clients and at least one repetition".into()));
    }
    let proxy_counts = if config.model == ModelKind::NoEnc {
        vec![0]
    } else {
        config.proxies.clone()
    };
    let mut samples = Vec::new();
    for p in proxy_counts {
        let model = DeploymentModel::new(config.model, config.nodes, p)
            .map_err(crate::deploy::DeployError::from)?;
        let opts = TopologyOptions {
            transport: config.transport,
            workers: config.workers,
            ..TopologyOptions::default()
        };
        let topo = Topology::start(&model, master, &opts)?;
        let endpoints = topo.endpoints();
        let expected = load_phase(&config.spec, &endpoints, config.seed)?;
        topo.set_service_delay(config.service_delay);
        for &n in &config.clients {
            for rep in 0..config.repetitions {
                let params = RunParams {
                    spec: config.spec.clone(),
                    sessions: n,
                    seed: derive_seed(config.seed, n as u64, p as u64),
                    model: config.model,
                    repetition: rep,
                };
                let s = run_phase(&params, &endpoints, &expected)?;
                info!(
                    "{} p={} n={} rep={}: {:.1} ops/s",
                    s.model, s.p, s.n, rep, s.throughput_ops
                );
                samples.push(s);
            }
        }
        topo.down();
    }
    Ok(samples)
}
