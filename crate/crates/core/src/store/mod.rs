//! In-process simulation of a replicated wide-column cluster.
//!
//! Rows are placed on a token ring by hashing the (encrypted) partition key
//! and replicated to `replication_factor` successor nodes. Any node can act
//! as coordinator. Writes are applied to every replica before returning; the
//! client-visible contract is consistency ONE. Reads are served by the first
//! replica in placement order.

mod plain;
mod ring;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::query::{EncryptedCommand, QueryOp};

pub use plain::PlainExecutor;
pub use ring::{ring_position, ClusterRing, Consistency};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u8);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("cluster configuration: {0}")]
    Config(String),
    #[error("node {0} is not part of the ring")]
    UnknownNode(u8),
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("table {0} already exists with different columns")]
    TableConflict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("backend unreachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StoredRow {
    pub key_ct: Vec<u8>,
    /// Column pseudonym to stored bytes; iteration order is the canonical order.
    pub cells: BTreeMap<String, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreRequest {
    CreateTable {
        table: String,
        columns: Vec<String>,
    },
    /// Replace the whole row.
    Put {
        table: String,
        key: Vec<u8>,
        cells: BTreeMap<String, Vec<u8>>,
    },
    /// Upsert the given cells, keeping the others.
    Merge {
        table: String,
        key: Vec<u8>,
        cells: BTreeMap<String, Vec<u8>>,
    },
    Get {
        table: String,
        key: Vec<u8>,
    },
    Delete {
        table: String,
        key: Vec<u8>,
    },
}

impl StoreRequest {
    /// Maps a translated command onto a raw row request. Inserts become whole
    /// row puts and updates become merges.
    pub fn from_command(cmd: &EncryptedCommand) -> Result<Self, StoreError> {
        let table = cmd.table_pseudonym.clone();
        if cmd.op == QueryOp::CreateTable {
            return Ok(StoreRequest::CreateTable {
                table,
                columns: cmd.projection_pseudonyms.clone(),
            });
        }
        let key = cmd
            .key_ct
            .as_ref()
            .ok_or_else(|| StoreError::Invalid("command has no key".into()))?
            .bytes
            .clone();
        let cells = || {
            cmd.cells
                .iter()
                .map(|(n, ct)| (n.clone(), ct.bytes.clone()))
                .collect()
        };
        Ok(match cmd.op {
            QueryOp::Insert => StoreRequest::Put {
                table,
                key,
                cells: cells(),
            },
            QueryOp::Update => StoreRequest::Merge {
                table,
                key,
                cells: cells(),
            },
            QueryOp::Select => StoreRequest::Get { table, key },
            QueryOp::Delete => StoreRequest::Delete { table, key },
            QueryOp::CreateTable => unreachable!("handled above"),
        })
    }

    fn key(&self) -> Option<&[u8]> {
        match self {
            StoreRequest::CreateTable { .. } => None,
            StoreRequest::Put { key, .. }
            | StoreRequest::Merge { key, .. }
            | StoreRequest::Get { key, .. }
            | StoreRequest::Delete { key, .. } => Some(key),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreResult {
    Done,
    Row(StoredRow),
    NotFound,
}

/// Anything a proxy can send row operations to.
pub trait Backend: Send + Sync {
    fn node_count(&self) -> usize;
    fn execute(&self, coordinator: NodeId, request: StoreRequest) -> Result<StoreResult, StoreError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "node")]
pub enum CoordinatorPolicy {
    Pinned(NodeId),
    Rotate,
}

/// Picks the coordinator for each request according to a policy.
#[derive(Debug)]
pub struct CoordinatorSelector {
    policy: CoordinatorPolicy,
    nodes: usize,
    next: AtomicUsize,
}

impl CoordinatorSelector {
    pub fn new(policy: CoordinatorPolicy, nodes: usize) -> Result<Self, StoreError> {
        if nodes == 0 {
            return Err(StoreError::Config("no nodes".into()));
        }
        if let CoordinatorPolicy::Pinned(n) = policy {
            if n.index() >= nodes {
                return Err(StoreError::UnknownNode(n.0));
            }
        }
        Ok(CoordinatorSelector {
            policy,
            nodes,
            next: AtomicUsize::new(0),
        })
    }

    pub fn policy(&self) -> CoordinatorPolicy {
        self.policy
    }

    pub fn next(&self) -> NodeId {
        match self.policy {
            CoordinatorPolicy::Pinned(n) => n,
            CoordinatorPolicy::Rotate => {
                NodeId((self.next.fetch_add(1, Ordering::Relaxed) % self.nodes) as u8)
            }
        }
    }
}

#[derive(Debug, Default)]
struct TableData {
    columns: Vec<String>,
    rows: HashMap<Vec<u8>, StoredRow>,
}

#[derive(Debug, Default)]
struct Node {
    tables: RwLock<HashMap<String, TableData>>,
}

/// The simulated cluster.
#[derive(Debug)]
pub struct Cluster {
    ring: ClusterRing,
    nodes: Vec<Node>,
    service_delay_us: AtomicU64,
    coordinated: Vec<AtomicU64>,
}

impl Cluster {
    pub fn new(ring: ClusterRing) -> Self {
        Cluster {
            nodes: (0..ring.len()).map(|_| Node::default()).collect(),
            coordinated: (0..ring.len()).map(|_| AtomicU64::new(0)).collect(),
            ring,
            service_delay_us: AtomicU64::new(0),
        }
    }

    pub fn ring(&self) -> &ClusterRing {
        &self.ring
    }

    /// Fixed service time charged by the coordinator on every request.
    pub fn set_service_delay(&self, delay: Duration) {
        self.service_delay_us
            .store(delay.as_micros() as u64, Ordering::Relaxed);
    }

    pub fn service_delay(&self) -> Duration {
        Duration::from_micros(self.service_delay_us.load(Ordering::Relaxed))
    }

    /// Requests coordinated by each node so far.
    pub fn coordinator_counts(&self) -> Vec<u64> {
        self.coordinated
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .collect()
    }

    pub fn replicas_for(&self, key: &[u8]) -> Vec<NodeId> {
        self.ring.replicas(ring_position(key))
    }

    pub fn route(
        &self,
        coordinator: NodeId,
        request: StoreRequest,
    ) -> Result<StoreResult, StoreError> {
        if !self.ring.contains(coordinator) {
            return Err(StoreError::UnknownNode(coordinator.0));
        }
        self.coordinated[coordinator.index()].fetch_add(1, Ordering::Relaxed);
        let delay = self.service_delay();
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        if let Some(key) = request.key() {
            if key.is_empty() {
                return Err(StoreError::Invalid("empty partition key".into()));
            }
        }
        match request {
            StoreRequest::CreateTable { table, columns } => {
                // Validate everywhere first so a conflict leaves no partial state.
                for node in &self.nodes {
                    if let Some(t) = node.tables.read().get(&table) {
                        if t.columns != columns {
                            return Err(StoreError::TableConflict(table));
                        }
                    }
                }
                for node in &self.nodes {
                    node.tables
                        .write()
                        .entry(table.clone())
                        .or_insert_with(|| TableData {
                            columns: columns.clone(),
                            rows: HashMap::new(),
                        });
                }
                Ok(StoreResult::Done)
            }
            StoreRequest::Put { table, key, cells } => {
                self.check_columns(&table, cells.keys())?;
                let row = StoredRow {
                    key_ct: key.clone(),
                    cells,
                };
                for replica in self.replicas_for(&key) {
                    self.with_table_mut(replica, &table, |t| {
                        t.rows.insert(key.clone(), row.clone());
                    })?;
                }
                Ok(StoreResult::Done)
            }
            StoreRequest::Merge { table, key, cells } => {
                self.check_columns(&table, cells.keys())?;
                for replica in self.replicas_for(&key) {
                    self.with_table_mut(replica, &table, |t| {
                        let row = t.rows.entry(key.clone()).or_insert_with(|| StoredRow {
                            key_ct: key.clone(),
                            cells: BTreeMap::new(),
                        });
                        row.cells
                            .extend(cells.iter().map(|(k, v)| (k.clone(), v.clone())));
                    })?;
                }
                Ok(StoreResult::Done)
            }
            StoreRequest::Get { table, key } => {
                let primary = self.replicas_for(&key)[0];
                let tables = self.nodes[primary.index()].tables.read();
                let t = tables
                    .get(&table)
                    .ok_or_else(|| StoreError::UnknownTable(table.clone()))?;
                Ok(t.rows
                    .get(&key)
                    .cloned()
                    .map_or(StoreResult::NotFound, StoreResult::Row))
            }
            StoreRequest::Delete { table, key } => {
                let mut found = false;
                for replica in self.replicas_for(&key) {
                    self.with_table_mut(replica, &table, |t| {
                        found |= t.rows.remove(&key).is_some();
                    })?;
                }
                Ok(if found {
                    StoreResult::Done
                } else {
                    StoreResult::NotFound
                })
            }
        }
    }

    fn check_columns<'a>(
        &self,
        table: &str,
        mut names: impl Iterator<Item = &'a String>,
    ) -> Result<(), StoreError> {
        let tables = self.nodes[0].tables.read();
        let t = tables
            .get(table)
            .ok_or_else(|| StoreError::UnknownTable(table.to_string()))?;
        match names.find(|n| !t.columns.contains(n)) {
            Some(n) => Err(StoreError::Invalid(format!("unknown column {n}"))),
            None => Ok(()),
        }
    }

    fn with_table_mut<R>(
        &self,
        node: NodeId,
        table: &str,
        f: impl FnOnce(&mut TableData) -> R,
    ) -> Result<R, StoreError> {
        let mut tables = self.nodes[node.index()].tables.write();
        let t = tables
            .get_mut(table)
            .ok_or_else(|| StoreError::UnknownTable(table.to_string()))?;
        Ok(f(t))
    }

    /// Reads a row straight from one node, bypassing routing.
    pub fn peek(&self, node: NodeId, table: &str, key: &[u8]) -> Option<StoredRow> {
        self.nodes
            .get(node.index())?
            .tables
            .read()
            .get(table)?
            .rows
            .get(key)
            .cloned()
    }

    /// Test hook: flips the low bit of byte `byte_index` of one stored cell
    /// on one replica.
    pub fn tamper(
        &self,
        node: NodeId,
        table: &str,
        key: &[u8],
        column: &str,
        byte_index: usize,
    ) -> Result<(), StoreError> {
        self.flip_bit(node, table, key, column, byte_index * 8)
    }

    /// Test hook: flips bit `bit_index` (LSB-first within each byte) of one
    /// stored cell on one replica.
    pub fn flip_bit(
        &self,
        node: NodeId,
        table: &str,
        key: &[u8],
        column: &str,
        bit_index: usize,
    ) -> Result<(), StoreError> {
        if !self.ring.contains(node) {
            return Err(StoreError::UnknownNode(node.0));
        }
        self.with_table_mut(node, table, |t| {
            let cell = t
                .rows
                .get_mut(key)
                .and_then(|r| r.cells.get_mut(column))
                .ok_or_else(|| StoreError::Invalid("no such cell".into()))?;
            let byte = cell
                .get_mut(bit_index / 8)
                .ok_or_else(|| StoreError::Invalid("bit index out of range".into()))?;
            *byte ^= 1 << (bit_index % 8);
            Ok(())
        })?
    }

    /// Visits every byte string held by any node: table and column names,
    /// keys and cell contents.
    pub fn scan_stored_bytes(&self, mut visit: impl FnMut(&[u8])) {
        for node in &self.nodes {
            for (name, t) in node.tables.read().iter() {
                visit(name.as_bytes());
                t.columns.iter().for_each(|c| visit(c.as_bytes()));
                for row in t.rows.values() {
                    visit(&row.key_ct);
                    for (c, v) in &row.cells {
                        visit(c.as_bytes());
                        visit(v);
                    }
                }
            }
        }
    }

    /// Number of rows held by one node for `table`.
    pub fn row_count(&self, node: NodeId, table: &str) -> usize {
        self.nodes
            .get(node.index())
            .and_then(|n| n.tables.read().get(table).map(|t| t.rows.len()))
            .unwrap_or(0)
    }
}

impl Backend for Cluster {
    fn node_count(&self) -> usize {
        self.ring.len()
    }

    fn execute(&self, coordinator: NodeId, request: StoreRequest) -> Result<StoreResult, StoreError> {
        self.route(coordinator, request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn node_count(&self) -> usize {
        (**self).node_count()
    }

    fn execute(&self, coordinator: NodeId, request: StoreRequest) -> Result<StoreResult, StoreError> {
        (**self).execute(coordinator, request)
    }
}
