//! Deployment models and topology lifecycle.
//!
//! * `NoEnc`: clients talk plaintext straight to one cluster node.
//! * `EncM1`: one proxy.
//! * `EncM2`: several proxies, each pinned to its own coordinator node.
//! * `EncM3`: several proxies, each rotating requests over every node.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CryptoError, MasterKey};
use crate::net::{Endpoint, InProcessEndpoint, NodeService, RemoteCluster, Server, Service, TcpEndpoint};
use crate::proxy::{Proxy, ProxyConfig, ProxyError};
use crate::store::{
    Backend, Cluster, ClusterRing, CoordinatorPolicy, CoordinatorSelector, NodeId, PlainExecutor,
    StoreError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid deployment: {0}")]
    Invalid(String),
    #[error("reading config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Key(#[from] CryptoError),
}

#[derive(Debug, Error)]
pub enum DeployError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error("binding listener: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    NoEnc,
    EncM1,
    EncM2,
    EncM3,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::NoEnc,
        ModelKind::EncM1,
        ModelKind::EncM2,
        ModelKind::EncM3,
    ];

    pub fn default_proxies(self) -> usize {
        match self {
            ModelKind::NoEnc => 0,
            ModelKind::EncM1 => 1,
            ModelKind::EncM2 | ModelKind::EncM3 => 2,
        }
    }

    pub fn check_proxy_count(self, proxies: usize) -> Result<(), ConfigError> {
        let ok = match self {
            ModelKind::NoEnc => proxies == 0,
            ModelKind::EncM1 => proxies == 1,
            ModelKind::EncM2 | ModelKind::EncM3 => proxies >= 2,
        };
        if ok {
            Ok(())
        } else {
            let want = match self {
                ModelKind::NoEnc => "exactly 0",
                ModelKind::EncM1 => "exactly 1",
                _ => "at least 2",
            };
            Err(ConfigError::Invalid(format!(
                "{self} needs {want} proxies, got {proxies}"
            )))
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::NoEnc => "NoEnc",
            ModelKind::EncM1 => "EncM1",
            ModelKind::EncM2 => "EncM2",
            ModelKind::EncM3 => "EncM3",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown model {s}")))
    }
}

/// How each proxy picks coordinators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyChoice {
    /// Proxy `i` always uses node `i mod nodes`.
    Pinned,
    /// Round-robin over every node.
    Rotate,
}

/// A validated topology description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeploymentModel {
    pub kind: ModelKind,
    pub node_count: usize,
    pub proxy_count: usize,
    pub replication_factor: usize,
    pub coordinator_policy: PolicyChoice,
}

impl DeploymentModel {
    pub fn new(kind: ModelKind, node_count: usize, proxy_count: usize) -> Result<Self, ConfigError> {
        let model = DeploymentModel {
            kind,
            node_count,
            proxy_count,
            replication_factor: node_count.min(4),
            coordinator_policy: Self::default_policy(kind),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn default_policy(kind: ModelKind) -> PolicyChoice {
        match kind {
            ModelKind::EncM3 => PolicyChoice::Rotate,
            _ => PolicyChoice::Pinned,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.node_count == 0 || self.node_count > 256 {
            return Err(ConfigError::Invalid(format!(
                "node count {} must be in 1..=256",
                self.node_count
            )));
        }
        if self.replication_factor == 0 || self.replication_factor > self.node_count {
            return Err(ConfigError::Invalid(format!(
                "replication factor {} must be in 1..={}",
                self.replication_factor, self.node_count
            )));
        }
        self.kind.check_proxy_count(self.proxy_count)
    }

    /// Coordinator policy of proxy `index`.
    pub fn proxy_policy(&self, index: usize) -> CoordinatorPolicy {
        match self.coordinator_policy {
            PolicyChoice::Pinned => CoordinatorPolicy::Pinned(NodeId((index % self.node_count) as u8)),
            PolicyChoice::Rotate => CoordinatorPolicy::Rotate,
        }
    }
}

fn default_nodes() -> usize {
    4
}
fn default_workers() -> usize {
    4
}
fn default_host() -> String {
    "127.0.0.1".into()
}

/// JSON deployment file. Missing fields take model defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    pub model: ModelKind,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default)]
    pub proxies: Option<usize>,
    #[serde(default)]
    pub replication_factor: Option<usize>,
    #[serde(default)]
    pub coordinator_policy: Option<PolicyChoice>,
    #[serde(default)]
    pub service_delay_us: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_host")]
    pub listen_host: String,
    /// 0 picks an ephemeral port.
    #[serde(default)]
    pub node_port: u16,
    /// Proxy `i` listens on `proxy_base_port + i`; 0 picks ephemeral ports.
    #[serde(default)]
    pub proxy_base_port: u16,
    #[serde(default)]
    pub ledger_dir: Option<PathBuf>,
    /// File holding the 64-hex-character master key. When absent the
    /// `SECNOSQL_MASTER_KEY` variable is consulted.
    #[serde(default)]
    pub master_key_file: Option<PathBuf>,
}

impl DeploymentConfig {
    pub fn for_model(model: ModelKind) -> Self {
        DeploymentConfig {
            model,
            nodes: default_nodes(),
            proxies: None,
            replication_factor: None,
            coordinator_policy: None,
            service_delay_us: 0,
            workers: default_workers(),
            listen_host: default_host(),
            node_port: 0,
            proxy_base_port: 0,
            ledger_dir: None,
            master_key_file: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> Result<DeploymentModel, ConfigError> {
        let model = DeploymentModel {
            kind: self.model,
            node_count: self.nodes,
            proxy_count: self.proxies.unwrap_or(self.model.default_proxies()),
            replication_factor: self.replication_factor.unwrap_or(self.nodes.min(4)),
            coordinator_policy: self
                .coordinator_policy
                .unwrap_or(DeploymentModel::default_policy(self.model)),
        };
        model.validate()?;
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        Ok(model)
    }

    /// Key from `master_key_file`, else the environment; `None` if neither is set.
    pub fn master_key(&self) -> Result<Option<MasterKey>, ConfigError> {
        if let Some(path) = &self.master_key_file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.clone(),
                source,
            })?;
            return Ok(Some(MasterKey::from_hex(&text)?));
        }
        Ok(MasterKey::from_env().transpose()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transport {
    /// Services are called directly.
    InProcess,
    /// Every node and proxy listens on TCP; proxies reach the cluster over
    /// the row opcodes.
    Tcp,
}

#[derive(Debug, Clone)]
pub struct TopologyOptions {
    pub transport: Transport,
    pub workers: usize,
    pub service_delay: Duration,
    pub listen_host: String,
    pub node_port: u16,
    pub proxy_base_port: u16,
    pub ledger_dir: Option<PathBuf>,
}

impl Default for TopologyOptions {
    fn default() -> Self {
        TopologyOptions {
            transport: Transport::InProcess,
            workers: default_workers(),
            service_delay: Duration::ZERO,
            listen_host: default_host(),
            node_port: 0,
            proxy_base_port: 0,
            ledger_dir: None,
        }
    }
}

impl TopologyOptions {
    pub fn from_config(cfg: &DeploymentConfig, transport: Transport) -> Self {
        TopologyOptions {
            transport,
            workers: cfg.workers,
            service_delay: Duration::from_micros(cfg.service_delay_us),
            listen_host: cfg.listen_host.clone(),
            node_port: cfg.node_port,
            proxy_base_port: cfg.proxy_base_port,
            ledger_dir: cfg.ledger_dir.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProxyStatus {
    pub index: usize,
    pub endpoint: Option<String>,
    pub coordinator_policy: CoordinatorPolicy,
    /// Requests this proxy sent to each node as coordinator.
    pub coordinator_usage: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyStatus {
    pub model: ModelKind,
    pub nodes: usize,
    pub replication_factor: usize,
    pub node_endpoint: Option<String>,
    pub proxies: Vec<ProxyStatus>,
}

/// A running deployment.
pub struct Topology {
    model: DeploymentModel,
    cluster: Arc<Cluster>,
    proxies: Vec<Arc<Proxy>>,
    plain: Option<Arc<PlainExecutor<Arc<Cluster>>>>,
    node_server: Option<Server>,
    proxy_servers: Vec<Server>,
}

impl Topology {
    pub fn start(
        model: &DeploymentModel,
        master: &MasterKey,
        opts: &TopologyOptions,
    ) -> Result<Topology, DeployError> {
        model.validate()?;
        let ring = ClusterRing::evenly_spaced(model.node_count, model.replication_factor)?;
        let cluster = Arc::new(Cluster::new(ring));
        cluster.set_service_delay(opts.service_delay);
        let pinned0 = || CoordinatorSelector::new(CoordinatorPolicy::Pinned(NodeId(0)), model.node_count);

        let node_server = match opts.transport {
            Transport::Tcp => Some(Server::bind(
                (opts.listen_host.as_str(), opts.node_port),
                Arc::new(NodeService::new(cluster.clone(), pinned0()?)) as Arc<dyn Service>,
            )?),
            Transport::InProcess => None,
        };
        let plain = match (model.kind, opts.transport) {
            (ModelKind::NoEnc, Transport::InProcess) => {
                Some(Arc::new(PlainExecutor::new(cluster.clone(), pinned0()?)))
            }
            _ => None,
        };

        if let Some(dir) = &opts.ledger_dir {
            std::fs::create_dir_all(dir)?;
        }
        let mut proxies = Vec::with_capacity(model.proxy_count);
        let mut proxy_servers = Vec::new();
        for i in 0..model.proxy_count {
            let backend: Arc<dyn Backend> = match &node_server {
                Some(s) => Arc::new(RemoteCluster::new(s.local_addr(), model.node_count)),
                None => cluster.clone(),
            };
            let config = ProxyConfig {
                coordinator_policy: model.proxy_policy(i),
                workers: opts.workers,
                ledger_path: opts
                    .ledger_dir
                    .as_ref()
                    .map(|d| d.join(format!("proxy-{i}.ledger"))),
            };
            let proxy = Arc::new(Proxy::new(master, backend, &config)?);
            if opts.transport == Transport::Tcp {
                let port = if opts.proxy_base_port == 0 {
                    0
                } else {
                    opts.proxy_base_port.checked_add(i as u16).ok_or_else(|| {
                        ConfigError::Invalid("proxy port range overflows".into())
                    })?
                };
                proxy_servers.push(Server::bind(
                    (opts.listen_host.as_str(), port),
                    proxy.clone() as Arc<dyn Service>,
                )?);
            }
            proxies.push(proxy);
        }
        Ok(Topology {
            model: model.clone(),
            cluster,
            proxies,
            plain,
            node_server,
            proxy_servers,
        })
    }

    pub fn model(&self) -> &DeploymentModel {
        &self.model
    }

    pub fn cluster(&self) -> &Arc<Cluster> {
        &self.cluster
    }

    pub fn proxies(&self) -> &[Arc<Proxy>] {
        &self.proxies
    }

    pub fn set_service_delay(&self, delay: Duration) {
        self.cluster.set_service_delay(delay);
    }

    /// Where clients connect: one entry per proxy, or the node for `NoEnc`.
    pub fn endpoints(&self) -> Vec<Arc<dyn Endpoint>> {
        if self.model.kind == ModelKind::NoEnc {
            return match (&self.node_server, &self.plain) {
                (Some(s), _) => vec![Arc::new(TcpEndpoint(s.local_addr()))],
                (None, Some(p)) => vec![Arc::new(InProcessEndpoint::new(
                    p.clone() as Arc<dyn Service>,
                    "node0",
                ))],
                (None, None) => unreachable!("NoEnc always has a plain executor or a node server"),
            };
        }
        if !self.proxy_servers.is_empty() {
            return self
                .proxy_servers
                .iter()
                .map(|s| Arc::new(TcpEndpoint(s.local_addr())) as Arc<dyn Endpoint>)
                .collect();
        }
        self.proxies
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Arc::new(InProcessEndpoint::new(
                    p.clone() as Arc<dyn Service>,
                    format!("proxy{i}"),
                )) as Arc<dyn Endpoint>
            })
            .collect()
    }

    pub fn status(&self) -> TopologyStatus {
        TopologyStatus {
            model: self.model.kind,
            nodes: self.cluster.ring().len(),
            replication_factor: self.cluster.ring().replication_factor(),
            node_endpoint: self.node_server.as_ref().map(|s| s.local_addr().to_string()),
            proxies: self
                .proxies
                .iter()
                .enumerate()
                .map(|(i, p)| ProxyStatus {
                    index: i,
                    endpoint: self.proxy_servers.get(i).map(|s| s.local_addr().to_string()),
                    coordinator_policy: p.coordinator_policy(),
                    coordinator_usage: p.coordinator_usage(),
                })
                .collect(),
        }
    }

    /// Stops every listener and closes open sessions.
    pub fn down(self) {
        for s in self.proxy_servers {
            s.shutdown();
        }
        if let Some(s) = self.node_server {
            s.shutdown();
        }
    }
}
