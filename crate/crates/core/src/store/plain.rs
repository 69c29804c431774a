use std::collections::{BTreeMap, HashMap};

use parking_lot::RwLock;

use super::{Backend, CoordinatorSelector, StoreError, StoreRequest, StoreResult};
use crate::query::{check_against, parse, Projection, QueryError, QueryOp, SchemaDef};
use crate::wire::{ErrorCode, Message};

/// Executes plaintext queries directly against the cluster, with no
/// encryption and no integrity ledger. This is the unprotected baseline.
pub struct PlainExecutor<B> {
    backend: B,
    selector: CoordinatorSelector,
    schemas: RwLock<HashMap<String, SchemaDef>>,
}

impl<B: Backend> PlainExecutor<B> {
    pub fn new(backend: B, selector: CoordinatorSelector) -> Self {
        PlainExecutor {
            backend,
            selector,
            schemas: RwLock::new(HashMap::new()),
        }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn handle(&self, msg: &Message) -> Message {
        match msg {
            Message::CreateSchema { table, columns } => {
                match SchemaDef::from_columns(table, columns) {
                    Ok(s) => self.create(s),
                    Err(e) => query_error(e),
                }
            }
            Message::Query(text) => self.query(text),
            other => Message::error(
                ErrorCode::Parse,
                format!("opcode {:#04x} not accepted here", other.opcode()),
            ),
        }
    }

    fn create(&self, schema: SchemaDef) -> Message {
        let mut schemas = self.schemas.write();
        if let Some(existing) = schemas.get(&schema.table) {
            return if existing == &schema {
                Message::Ok
            } else {
                Message::error(ErrorCode::Schema, format!("table {} redefined", schema.table))
            };
        }
        let req = StoreRequest::CreateTable {
            table: schema.table.clone(),
            columns: schema.columns().map(str::to_string).collect(),
        };
        match self.backend.execute(self.selector.next(), req) {
            Ok(_) => {
                schemas.insert(schema.table.clone(), schema);
                Message::Ok
            }
            Err(e) => store_error(e),
        }
    }

    fn query(&self, text: &str) -> Message {
        let ast = match parse(text) {
            Ok(a) => a,
            Err(e) => return query_error(e),
        };
        if ast.op == QueryOp::CreateTable {
            return match SchemaDef::from_ast(&ast) {
                Ok(s) => self.create(s),
                Err(e) => query_error(e),
            };
        }
        let Some(schema) = self.schemas.read().get(&ast.table).cloned() else {
            return Message::error(ErrorCode::Schema, format!("unknown table {}", ast.table));
        };
        if let Err(e) = check_against(&ast, &schema) {
            return query_error(e);
        }
        let key = ast.key_value.clone().unwrap_or_default().into_bytes();
        let table = schema.table.clone();
        let cells = || -> BTreeMap<String, Vec<u8>> {
            ast.assignments
                .iter()
                .map(|(c, v)| (c.clone(), v.clone().into_bytes()))
                .collect()
        };
        let req = match ast.op {
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
            QueryOp::CreateTable => unreachable!(),
        };
        match self.backend.execute(self.selector.next(), req) {
            Ok(StoreResult::Done) => Message::Ok,
            Ok(StoreResult::NotFound) => Message::error(ErrorCode::NotFound, "row not found"),
            Ok(StoreResult::Row(row)) => {
                let wanted: Vec<String> = match &ast.projection {
                    Projection::All => schema.columns().map(str::to_string).collect(),
                    Projection::Columns(c) => c.clone(),
                };
                let out = wanted
                    .into_iter()
                    .filter_map(|c| {
                        if c == schema.key_column {
                            Some((c, row.key_ct.clone()))
                        } else {
                            row.cells.get(&c).map(|v| (c, v.clone()))
                        }
                    })
                    .collect();
                Message::Rows(out)
            }
            Err(e) => store_error(e),
        }
    }
}

fn query_error(e: QueryError) -> Message {
    let code = match e {
        QueryError::Syntax { .. } | QueryError::UnsupportedPredicate(_) => ErrorCode::Parse,
        _ => ErrorCode::Schema,
    };
    Message::error(code, e.to_string())
}

fn store_error(e: StoreError) -> Message {
    let code = match e {
        StoreError::UnknownTable(_) | StoreError::TableConflict(_) => ErrorCode::Schema,
        _ => ErrorCode::Backend,
    };
    Message::error(code, e.to_string())
}
