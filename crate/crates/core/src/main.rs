use std::fs::File;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use secnosql::bench::{
    cell_means, load_phase, read_csv_file, run_phase, sweep, write_csv, BenchError,
    CsvRecord, Distribution, ExpectedTable, RunParams, SweepConfig, WorkloadSpec,
};
use secnosql::crypto::MasterKey;
use secnosql::deploy::{
    ConfigError, DeployError, DeploymentConfig, ModelKind, Topology, TopologyOptions, Transport,
};
use secnosql::net::{Endpoint, NodeService, RemoteCluster, Server, Service, TcpEndpoint};
use secnosql::proxy::{Proxy, ProxyConfig};
use secnosql::sla::{self, CoefficientFile, SlaModels};
use secnosql::store::{Cluster, ClusterRing, CoordinatorPolicy, CoordinatorSelector, NodeId};

#[derive(Parser)]
#[command(name = "secnosql", version, about = "Encrypting proxy, benchmark and SLA tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a simulated cluster over TCP.
    ServeNode(ServeNodeArgs),
    /// Serve one encrypting proxy in front of a remote cluster.
    ServeProxy(ServeProxyArgs),
    /// Start a whole topology over TCP, print its status, and stop on EOF.
    Up(TopologyArgs),
    /// Create the benchmark table and insert records through running endpoints.
    Load(LoadArgs),
    /// Measure running endpoints that were loaded with the same seed.
    Run(RunArgs),
    /// Measure a model over a client/proxy grid on fresh in-process topologies.
    Sweep(SweepArgs),
    /// Fit throughput and latency surfaces to a benchmark CSV.
    Fit(FitArgs),
    /// Print SLA offers from fitted coefficients.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct TopologyArgs {
    /// JSON deployment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    nodes: Option<usize>,
    /// Proxy count; `sweep` accepts a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    proxies: Vec<usize>,
    #[arg(long)]
    service_delay_us: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl TopologyArgs {
    fn resolve(&self) -> Result<DeploymentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => DeploymentConfig::load(path)?,
            None => DeploymentConfig::for_model(self.model.unwrap_or(ModelKind::EncM1)),
        };
        if let Some(m) = self.model {
            cfg.model = m;
        }
        if let Some(n) = self.nodes {
            cfg.nodes = n;
        }
        if let Some(&p) = self.proxies.first() {
            cfg.proxies = Some(p);
        }
        if let Some(d) = self.service_delay_us {
            cfg.service_delay_us = d;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.model()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct WorkloadArgs {
    #[arg(long, default_value_t = 40_000)]
    records: usize,
    #[arg(long, default_value_t = 40_000)]
    ops: usize,
    #[arg(long, default_value_t = 0.5)]
    read_prop: f64,
    #[arg(long, value_enum, default_value_t = DistArg::Zipfian)]
    distribution: DistArg,
    #[arg(long, default_value_t = 100)]
    value_length: usize,
    #[arg(long, default_value_t = 10)]
    fields: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DistArg {
    Zipfian,
    Uniform,
}

impl WorkloadArgs {
    fn spec(&self) -> Result<WorkloadSpec, BenchError> {
        let spec = WorkloadSpec {
            record_count: self.records,
            operation_count: self.ops,
            read_proportion: self.read_prop,
            distribution: match self.distribution {
                DistArg::Zipfian => Distribution::Zipfian,
                DistArg::Uniform => Distribution::Uniform,
            },
            value_length: self.value_length,
            field_count: self.fields,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct ServeNodeArgs {
    #[arg(long, default_value = "127.0.0.1:7000")]
    listen: String,
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    #[arg(long)]
    replication_factor: Option<usize>,
    #[arg(long, default_value_t = 0)]
    service_delay_us: u64,
}

#[derive(Args)]
struct ServeProxyArgs {
    #[arg(long, default_value = "127.0.0.1:7100")]
    listen: String,
    /// Address of a `serve-node` listener.
    #[arg(long)]
    backend: SocketAddr,
    #[arg(long, default_value_t = 4)]
    nodes: usize,
    /// Coordinator node to pin to; rotates over all nodes when omitted.
    #[arg(long)]
    coordinator: Option<u8>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct LoadArgs {
    /// Comma-separated endpoint addresses (proxies, or the node for NoEnc).
    #[arg(long, value_delimiter = ',', required = true)]
    endpoints: Vec<SocketAddr>,
    #[command(flatten)]
    workload: WorkloadArgs,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    endpoints: Vec<SocketAddr>,
    #[arg(long)]
    model: ModelKind,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    clients: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    topology: TopologyArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
    clients: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Run every component behind a TCP listener instead of in-process.
    #[arg(long)]
    tcp: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Benchmark CSV.
    #[arg(long)]
    input: PathBuf,
    /// Only fit rows of this model.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct ReportArgs {
    /// Coefficients JSON written by `fit`.
    #[arg(long)]
    coefficients: PathBuf,
    #[arg(long)]
    clients: u32,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    proxies: Vec<u32>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
    #[error(transparent)]
    Fit(#[from] sla::FitError),
    #[error(transparent)]
    Sla(#[from] sla::SlaError),
    #[error(transparent)]
    Store(#[from] secnosql::store::StoreError),
    #[error(transparent)]
    Proxy(#[from] secnosql::proxy::ProxyError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Deploy(DeployError::Config(_)) => 2,
            CliError::Bench(BenchError::Config(_)) => 2,
            CliError::Bench(BenchError::Deploy(DeployError::Config(_))) => 2,
            CliError::Bench(BenchError::Correctness(_)) => 3,
            _ => 1,
        }
    }
}

fn master_key(cfg: Option<&DeploymentConfig>) -> Result<MasterKey, CliError> {
    let key = match cfg {
        Some(c) => c.master_key()?,
        None => MasterKey::from_env().transpose().map_err(ConfigError::from)?,
    };
    Ok(key.unwrap_or_else(|| {
        warn!("SECNOSQL_MASTER_KEY is not set; using an ephemeral random key");
        MasterKey::random()
    }))
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn tcp_endpoints(addrs: &[SocketAddr]) -> Vec<Arc<dyn Endpoint>> {
    addrs
        .iter()
        .map(|&a| Arc::new(TcpEndpoint(a)) as Arc<dyn Endpoint>)
        .collect()
}

/// Blocks until stdin reaches EOF, printing `status()` whenever a line reads
/// `status`, and returning early on `down`.
fn wait_for_stdin(status: impl Fn() -> Result<String, CliError>) -> Result<(), CliError> {
    for line in io::stdin().lock().lines() {
        match line?.trim() {
            "status" => println!("{}", status()?),
            "down" => break,
            _ => {}
        }
    }
    Ok(())
}

fn serve_node(args: &ServeNodeArgs) -> Result<(), CliError> {
    let rf = args.replication_factor.unwrap_or(args.nodes.min(4));
    let cluster = Arc::new(Cluster::new(ClusterRing::evenly_spaced(args.nodes, rf)?));
    cluster.set_service_delay(Duration::from_micros(args.service_delay_us));
    let selector = CoordinatorSelector::new(CoordinatorPolicy::Pinned(NodeId(0)), args.nodes)?;
    let service: Arc<dyn Service> = Arc::new(NodeService::new(cluster, selector));
    let server = Server::bind(args.listen.as_str(), service)?;
    println!("{}", server.local_addr());
    wait_for_stdin(|| Ok(format!("{} sessions", server.sessions_accepted())))?;
    server.shutdown();
    Ok(())
}

fn serve_proxy(args: &ServeProxyArgs) -> Result<(), CliError> {
    let master = master_key(None)?;
    let policy = match args.coordinator {
        Some(n) => CoordinatorPolicy::Pinned(NodeId(n)),
        None => CoordinatorPolicy::Rotate,
    };
    let backend = Arc::new(RemoteCluster::new(args.backend, args.nodes));
    let config = ProxyConfig {
        coordinator_policy: policy,
        workers: args.workers,
        ledger_path: args.ledger.clone(),
    };
    let proxy = Arc::new(Proxy::new(&master, backend, &config)?);
    let server = Server::bind(args.listen.as_str(), proxy.clone() as Arc<dyn Service>)?;
    println!("{}", server.local_addr());
    wait_for_stdin(|| Ok(serde_json::to_string(&proxy.coordinator_usage())?))?;
    server.shutdown();
    Ok(())
}

fn up(args: &TopologyArgs) -> Result<(), CliError> {
    if args.proxies.len() > 1 {
        return Err(CliError::Usage("up takes a single proxy count".into()));
    }
    let cfg = args.resolve()?;
    let model = cfg.model()?;
    let master = master_key(Some(&cfg))?;
    let topo = Topology::start(&model, &master, &TopologyOptions::from_config(&cfg, Transport::Tcp))?;
    let status = || Ok(serde_json::to_string(&topo.status())?);
    println!("{}", status()?);
    io::stdout().flush()?;
    wait_for_stdin(status)?;
    topo.down();
    Ok(())
}

fn load(args: &LoadArgs) -> Result<(), CliError> {
    let spec = args.workload.spec()?;
    load_phase(&spec, &tcp_endpoints(&args.endpoints), args.workload.seed)?;
    info!("loaded {} records", spec.record_count);
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let spec = args.workload.spec()?;
    let endpoints = tcp_endpoints(&args.endpoints);
    let expected = ExpectedTable::initial(&spec, args.workload.seed);
    let mut rows = Vec::new();
    for &n in &args.clients {
        for rep in 0..args.reps {
            let params = RunParams {
                spec: spec.clone(),
                sessions: n,
                seed: args.workload.seed ^ n as u64,
                model: args.model,
                repetition: rep,
            };
            let s = run_phase(&params, &endpoints, &expected)?;
            eprintln!("{}", serde_json::to_string(&s)?);
            rows.push(CsvRecord::from(&s));
        }
    }
    write_csv(output(args.out.as_deref())?, &rows)?;
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = args.topology.resolve()?;
    let spec = args.workload.spec()?;
    let proxies = if !args.topology.proxies.is_empty() {
        args.topology.proxies.clone()
    } else {
        vec![cfg.model()?.proxy_count]
    };
    for &p in &proxies {
        if cfg.model != ModelKind::NoEnc {
            cfg.model.check_proxy_count(p)?;
        }
    }
    let master = master_key(Some(&cfg))?;
    let config = SweepConfig {
        model: cfg.model,
        nodes: cfg.nodes,
        proxies,
        clients: args.clients.clone(),
        repetitions: args.reps,
        spec,
        seed: args.workload.seed,
        service_delay: Duration::from_micros(cfg.service_delay_us),
        workers: cfg.workers,
        transport: if args.tcp { Transport::Tcp } else { Transport::InProcess },
    };
    let samples = sweep(&config, &master)?;
    let rows: Vec<CsvRecord> = samples.iter().map(CsvRecord::from).collect();
    write_csv(output(args.out.as_deref())?, &rows)?;
    Ok(())
}

fn fit(args: &FitArgs) -> Result<(), CliError> {
    let mut records = read_csv_file(&args.input)?;
    if let Some(m) = args.model {
        records.retain(|r| r.model == m);
    }
    if records.is_empty() {
        return Err(CliError::Usage("no benchmark rows to fit".into()));
    }
    let models = sla::fit_all(&cell_means(&records))?;
    let file = CoefficientFile::from(&models);
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &file)?;
    writeln!(out)?;
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.coefficients)?;
    let file: CoefficientFile<f64> = serde_json::from_str(&text)?;
    let offers = sla::sla_table(&SlaModels::from(&file), args.clients, &args.proxies)?;
    let rendered = match args.format {
        ReportFormat::Text => sla::render_text(&offers),
        ReportFormat::Csv => sla::render_csv(&offers),
    };
    output(args.out.as_deref())?.write_all(rendered.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::ServeNode(a) => serve_node(a),
        Command::ServeProxy(a) => serve_proxy(a),
        Command::Up(a) => up(a),
        Command::Load(a) => load(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Fit(a) => fit(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
