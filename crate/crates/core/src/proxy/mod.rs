//! The trusted proxy tier.
//!
//! Clients send plaintext queries. The proxy translates them to encrypted
//! row operations, keeps an HMAC tag for every row it writes, and checks the
//! tag again on every read before decrypting anything.

mod ledger;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use log::debug;
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{derive_keys, record_hmac, HmacTag, KeySet, MasterKey};
use crate::query::{
    decrypt_cells, parse, translate_with, AnonymizedSchema, QueryError, QueryOp, SchemaDef,
};
use crate::store::{
    Backend, CoordinatorPolicy, CoordinatorSelector, NodeId, StoreError, StoreRequest,
    StoreResult, StoredRow,
};
use crate::wire::{ErrorCode, Message};

pub use ledger::{canonical_serialize, IntegrityLedger};

const LOCK_STRIPES: usize = 256;

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error("row not found")]
    NotFound,
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("backend error: {0}")]
    Backend(#[from] StoreError),
    #[error("ledger i/o: {0}")]
    Ledger(#[from] io::Error),
}

impl ProxyError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProxyError::NotFound => ErrorCode::NotFound,
            ProxyError::Integrity(_) => ErrorCode::IntegrityFailure,
            ProxyError::Query(QueryError::Syntax { .. })
            | ProxyError::Query(QueryError::UnsupportedPredicate(_)) => ErrorCode::Parse,
            ProxyError::Query(QueryError::Crypto(_)) => ErrorCode::IntegrityFailure,
            ProxyError::Query(QueryError::Schema(_)) | ProxyError::Schema(_) => ErrorCode::Schema,
            ProxyError::Backend(StoreError::UnknownTable(_))
            | ProxyError::Backend(StoreError::TableConflict(_)) => ErrorCode::Schema,
            ProxyError::Backend(_) | ProxyError::Ledger(_) => ErrorCode::Backend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub coordinator_policy: CoordinatorPolicy,
    /// Requests processed at once; further requests queue.
    pub workers: usize,
    /// Append-only ledger file, replayed at startup. `None` keeps it in memory.
    pub ledger_path: Option<PathBuf>,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            coordinator_policy: CoordinatorPolicy::Pinned(NodeId(0)),
            workers: 4,
            ledger_path: None,
        }
    }
}

/// Counting semaphore bounding concurrent request processing.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Slots {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Successful outcome of a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Ok,
    Rows(Vec<(String, String)>),
}

pub struct Proxy {
    keys: KeySet,
    backend: Arc<dyn Backend>,
    selector: CoordinatorSelector,
    schemas: RwLock<HashMap<String, Arc<AnonymizedSchema>>>,
    ledger: IntegrityLedger,
    stripes: Vec<RwLock<()>>,
    slots: Slots,
    coordinator_log: Vec<AtomicU64>,
}

impl Proxy {
    pub fn new(
        master: &MasterKey,
        backend: Arc<dyn Backend>,
        config: &ProxyConfig,
    ) -> Result<Self, ProxyError> {
        let nodes = backend.node_count();
        let selector = CoordinatorSelector::new(config.coordinator_policy, nodes)?;
        if config.workers == 0 {
            return Err(ProxyError::Schema("workers must be at least 1".into()));
        }
        let ledger = match &config.ledger_path {
            Some(p) => IntegrityLedger::open(p)?,
            None => IntegrityLedger::in_memory(),
        };
        Ok(Proxy {
            keys: derive_keys(master),
            backend,
            selector,
            schemas: RwLock::new(HashMap::new()),
            ledger,
            stripes: (0..LOCK_STRIPES).map(|_| RwLock::new(())).collect(),
            slots: Slots::new(config.workers),
            coordinator_log: (0..nodes).map(|_| AtomicU64::new(0)).collect(),
        })
    }

    pub fn ledger(&self) -> &IntegrityLedger {
        &self.ledger
    }

    pub fn keys(&self) -> &KeySet {
        &self.keys
    }

    pub fn coordinator_policy(&self) -> CoordinatorPolicy {
        self.selector.policy()
    }

    /// Requests sent to each coordinator node by this proxy.
    pub fn coordinator_usage(&self) -> Vec<u64> {
        self.coordinator_log
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .collect()
    }

    /// Anonymized form of a registered table.
    pub fn anonymized(&self, table: &str) -> Option<Arc<AnonymizedSchema>> {
        self.schemas.read().get(table).cloned()
    }

    /// Wire-level entry point.
    pub fn handle(&self, msg: &Message) -> Message {
        let _slot = self.slots.acquire();
        let result = match msg {
            Message::CreateSchema { table, columns } => SchemaDef::from_columns(table, columns)
                .map_err(ProxyError::from)
                .and_then(|s| self.create_schema(s))
                .map(|_| Reply::Ok),
            Message::Query(text) => self.query(text),
            other => {
                return Message::error(
                    ErrorCode::Parse,
                    format!("opcode {:#04x} not accepted by the proxy", other.opcode()),
                )
            }
        };
        match result {
            Ok(Reply::Ok) => Message::Ok,
            Ok(Reply::Rows(rows)) => Message::Rows(
                rows.into_iter()
                    .map(|(c, v)| (c, v.into_bytes()))
                    .collect(),
            ),
            Err(e) => Message::error(e.code(), e.to_string()),
        }
    }

    /// Parses and dispatches any supported statement.
    pub fn query(&self, text: &str) -> Result<Reply, ProxyError> {
        let ast = parse(text)?;
        match ast.op {
            QueryOp::CreateTable => self.create_schema(SchemaDef::from_ast(&ast)?).map(|_| Reply::Ok),
            QueryOp::Insert | QueryOp::Update => self.handle_write(text).map(|_| Reply::Ok),
            QueryOp::Select => self.handle_read(text).map(Reply::Rows),
            QueryOp::Delete => self.handle_delete(text).map(|_| Reply::Ok),
        }
    }

    pub fn handle_create_schema(&self, schema: SchemaDef) -> Result<(), ProxyError> {
        let _slot = self.slots.acquire();
        self.create_schema(schema)
    }

    fn create_schema(&self, schema: SchemaDef) -> Result<(), ProxyError> {
        let mut schemas = self.schemas.write();
        if let Some(existing) = schemas.get(&schema.table) {
            return if existing.schema == schema {
                Ok(())
            } else {
                Err(ProxyError::Schema(format!(
                    "table {} already defined differently",
                    schema.table
                )))
            };
        }
        let anon = AnonymizedSchema::new(&schema, &self.keys)?;
        self.send(StoreRequest::CreateTable {
            table: anon.table.clone(),
            columns: anon.all_pseudonyms(),
        })?;
        debug!("created table {}", anon.table);
        schemas.insert(schema.table.clone(), Arc::new(anon));
        Ok(())
    }

    fn schema_for(&self, table: &str) -> Result<Arc<AnonymizedSchema>, ProxyError> {
        self.anonymized(table)
            .ok_or_else(|| ProxyError::Schema(format!("unknown table {table}")))
    }

    fn send(&self, req: StoreRequest) -> Result<StoreResult, ProxyError> {
        let coordinator = self.selector.next();
        if let Some(c) = self.coordinator_log.get(coordinator.index()) {
            c.fetch_add(1, Ordering::Relaxed);
        }
        Ok(self.backend.execute(coordinator, req)?)
    }

    fn stripe(&self, table: &str, key: &[u8]) -> &RwLock<()> {
        let h = crate::store::ring_position(key) ^ crate::store::ring_position(table.as_bytes());
        &self.stripes[(h % LOCK_STRIPES as u64) as usize]
    }

    fn tag_of(&self, table: &str, row: &StoredRow) -> HmacTag {
        let canonical = canonical_serialize(
            table,
            &row.key_ct,
            row.cells.iter().map(|(n, v)| (n.as_str(), v.as_slice())),
        );
        record_hmac(&self.keys, &canonical)
    }

    fn verify(&self, table: &str, row: &StoredRow) -> Result<(), ProxyError> {
        let expected = self
            .ledger
            .get(table, &row.key_ct)
            .ok_or_else(|| ProxyError::Integrity("row has no ledger entry".into()))?;
        if !self.tag_of(table, row).ct_eq(&expected) {
            return Err(ProxyError::Integrity("row tag mismatch".into()));
        }
        Ok(())
    }

    fn fetch(&self, table: &str, key: &[u8]) -> Result<Option<StoredRow>, ProxyError> {
        match self.send(StoreRequest::Get {
            table: table.to_string(),
            key: key.to_vec(),
        })? {
            StoreResult::Row(r) => Ok(Some(r)),
            StoreResult::NotFound => Ok(None),
            StoreResult::Done => Err(ProxyError::Backend(StoreError::Invalid(
                "get returned no row".into(),
            ))),
        }
    }

    /// INSERT or UPDATE. Updates read and verify the current row, merge the
    /// new cells and re-tag the whole row.
    pub fn handle_write(&self, text: &str) -> Result<(), ProxyError> {
        let ast = parse(text)?;
        if !matches!(ast.op, QueryOp::Insert | QueryOp::Update) {
            return Err(ProxyError::Schema("not a write statement".into()));
        }
        let anon = self.schema_for(&ast.table)?;
        let cmd = translate_with(&ast, &anon, &self.keys)?;
        let key = cmd.key_ct.expect("writes carry a key").bytes;
        let table = cmd.table_pseudonym;
        let new_cells = cmd.cells.into_iter().map(|(n, ct)| (n, ct.bytes));

        let _guard = self.stripe(&table, &key).write();
        let cells: BTreeMap<String, Vec<u8>> = if ast.op == QueryOp::Update {
            let mut merged = match self.fetch(&table, &key)? {
                Some(existing) => {
                    self.verify(&table, &existing)?;
                    existing.cells
                }
                None => BTreeMap::new(),
            };
            merged.extend(new_cells);
            merged
        } else {
            new_cells.collect()
        };
        let row = StoredRow {
            key_ct: key,
            cells,
        };
        let tag = self.tag_of(&table, &row);
        self.send(StoreRequest::Put {
            table: table.clone(),
            key: row.key_ct.clone(),
            cells: row.cells,
        })?;
        self.ledger.insert(&table, &row.key_ct, tag)?;
        debug!("wrote row in {table}");
        Ok(())
    }

    /// SELECT. No plaintext is returned unless the stored row matches its
    /// ledger tag.
    pub fn handle_read(&self, text: &str) -> Result<Vec<(String, String)>, ProxyError> {
        let ast = parse(text)?;
        if ast.op != QueryOp::Select {
            return Err(ProxyError::Schema("not a SELECT statement".into()));
        }
        let anon = self.schema_for(&ast.table)?;
        let cmd = translate_with(&ast, &anon, &self.keys)?;
        let key = cmd.key_ct.expect("select carries a key").bytes;
        let table = &cmd.table_pseudonym;

        let row = {
            let _guard = self.stripe(table, &key).read();
            let row = self.fetch(table, &key)?.ok_or(ProxyError::NotFound)?;
            self.verify(table, &row)?;
            row
        };

        let mut out = Vec::with_capacity(cmd.projection_pseudonyms.len());
        for pseudonym in &cmd.projection_pseudonyms {
            if pseudonym == &anon.key_column {
                out.push((
                    anon.schema.key_column.clone(),
                    ast.key_value.clone().unwrap_or_default(),
                ));
            } else if let Some(v) = row.cells.get(pseudonym) {
                out.extend(decrypt_cells(
                    &anon,
                    &self.keys,
                    [(pseudonym.as_str(), v.as_slice())],
                )?);
            }
        }
        Ok(out)
    }

    pub fn handle_delete(&self, text: &str) -> Result<(), ProxyError> {
        let ast = parse(text)?;
        if ast.op != QueryOp::Delete {
            return Err(ProxyError::Schema("not a DELETE statement".into()));
        }
        let anon = self.schema_for(&ast.table)?;
        let cmd = translate_with(&ast, &anon, &self.keys)?;
        let key = cmd.key_ct.expect("delete carries a key").bytes;
        let table = cmd.table_pseudonym;
        let _guard = self.stripe(&table, &key).write();
        match self.send(StoreRequest::Delete {
            table: table.clone(),
            key: key.clone(),
        })? {
            StoreResult::NotFound => Err(ProxyError::NotFound),
            _ => {
                self.ledger.remove(&table, &key)?;
                Ok(())
            }
        }
    }
}
