//! Query parsing and plaintext-to-encrypted translation.
//!
//! Table and column names become keyed pseudonyms, the partition key is
//! DET-encrypted so the store can look it up by equality, and every other
//! value is RND-encrypted.

mod parser;

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::crypto::{
    anonymize_name, det_encrypt, rnd_decrypt_bytes, rnd_encrypt, Ciphertext, CryptoError, KeySet,
    NameKind,
};

pub use parser::parse;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unsupported predicate: {0}")]
    UnsupportedPredicate(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryOp {
    CreateTable,
    Insert,
    Select,
    Update,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Projection {
    /// `SELECT *`
    All,
    Columns(Vec<String>),
}

/// A parsed statement.
///
/// For `CreateTable` the column list (key first) is carried in `projection`.
/// For `Insert` the first listed column is the partition key and the rest are
/// in `assignments`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryAst {
    pub op: QueryOp,
    pub table: String,
    /// Column named in the WHERE clause (or first INSERT column).
    pub key_column: Option<String>,
    pub key_value: Option<String>,
    pub assignments: Vec<(String, String)>,
    pub projection: Projection,
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name.len() <= u16::MAX as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDef {
    pub table: String,
    pub key_column: String,
    pub value_columns: Vec<String>,
}

impl SchemaDef {
    pub fn new(
        table: impl Into<String>,
        key_column: impl Into<String>,
        value_columns: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, QueryError> {
        let schema = SchemaDef {
            table: table.into(),
            key_column: key_column.into(),
            value_columns: value_columns.into_iter().map(Into::into).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Builds a schema from a column list whose first entry is the key.
    pub fn from_columns(table: &str, columns: &[String]) -> Result<Self, QueryError> {
        let (key, values) = columns
            .split_first()
            .ok_or_else(|| QueryError::Schema(format!("table {table} has no columns")))?;
        SchemaDef::new(table, key.clone(), values.iter().cloned())
    }

    pub fn from_ast(ast: &QueryAst) -> Result<Self, QueryError> {
        match (&ast.op, &ast.projection) {
            (QueryOp::CreateTable, Projection::Columns(cols)) => Self::from_columns(&ast.table, cols),
            _ => Err(QueryError::Schema("not a CREATE TABLE statement".into())),
        }
    }

    fn validate(&self) -> Result<(), QueryError> {
        for name in std::iter::once(&self.table)
            .chain(std::iter::once(&self.key_column))
            .chain(&self.value_columns)
        {
            if !is_identifier(name) {
                return Err(QueryError::Schema(format!("invalid identifier {name:?}")));
            }
        }
        let mut seen = HashSet::new();
        for c in std::iter::once(&self.key_column).chain(&self.value_columns) {
            if !seen.insert(c.as_str()) {
                return Err(QueryError::Schema(format!("duplicate column {c}")));
            }
        }
        if self.value_columns.len() > u8::MAX as usize - 1 {
            return Err(QueryError::Schema("too many columns".into()));
        }
        Ok(())
    }

    /// Key column followed by value columns.
    pub fn columns(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.key_column.as_str()).chain(self.value_columns.iter().map(|s| s.as_str()))
    }

    pub fn has_value_column(&self, name: &str) -> bool {
        self.value_columns.iter().any(|c| c == name)
    }
}

/// A schema with its pseudonyms precomputed.
#[derive(Debug, Clone)]
pub struct AnonymizedSchema {
    pub schema: SchemaDef,
    pub table: String,
    pub key_column: String,
    /// `(plain, pseudonym)` for each value column, in schema order.
    pub value_columns: Vec<(String, String)>,
    by_plain: HashMap<String, String>,
    by_pseudonym: HashMap<String, String>,
}

impl AnonymizedSchema {
    pub fn new(schema: &SchemaDef, keys: &KeySet) -> Result<Self, QueryError> {
        let table = anonymize_name(keys, NameKind::Table, &schema.table)?;
        let key_column = anonymize_name(keys, NameKind::Column, &schema.key_column)?;
        let mut value_columns = Vec::with_capacity(schema.value_columns.len());
        for c in &schema.value_columns {
            value_columns.push((c.clone(), anonymize_name(keys, NameKind::Column, c)?));
        }
        let mut by_plain: HashMap<_, _> = value_columns.iter().cloned().collect();
        by_plain.insert(schema.key_column.clone(), key_column.clone());
        let by_pseudonym = by_plain.iter().map(|(p, a)| (a.clone(), p.clone())).collect();
        Ok(AnonymizedSchema {
            schema: schema.clone(),
            table,
            key_column,
            value_columns,
            by_plain,
            by_pseudonym,
        })
    }

    pub fn pseudonym(&self, column: &str) -> Result<&str, QueryError> {
        self.by_plain
            .get(column)
            .map(|s| s.as_str())
            .ok_or_else(|| QueryError::Schema(format!("unknown column {column}")))
    }

    pub fn plain(&self, pseudonym: &str) -> Result<&str, QueryError> {
        self.by_pseudonym
            .get(pseudonym)
            .map(|s| s.as_str())
            .ok_or_else(|| QueryError::Schema(format!("unknown column pseudonym {pseudonym}")))
    }

    /// Pseudonyms of the key column followed by every value column.
    pub fn all_pseudonyms(&self) -> Vec<String> {
        std::iter::once(self.key_column.clone())
            .chain(self.value_columns.iter().map(|(_, a)| a.clone()))
            .collect()
    }
}

/// The encrypted form of a statement, as sent toward the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedCommand {
    pub op: QueryOp,
    pub table_pseudonym: String,
    /// DET ciphertext of the partition key; `None` only for `CreateTable`.
    pub key_ct: Option<Ciphertext>,
    pub cells: Vec<(String, Ciphertext)>,
    /// Requested columns for `Select` (key pseudonym included when asked
    /// for); every column pseudonym for `CreateTable`.
    pub projection_pseudonyms: Vec<String>,
}

/// Checks that `ast` only references what `schema` defines and that its
/// predicate is on the partition key.
pub fn check_against(ast: &QueryAst, schema: &SchemaDef) -> Result<(), QueryError> {
    if ast.table != schema.table {
        return Err(QueryError::Schema(format!("unknown table {}", ast.table)));
    }
    if ast.op == QueryOp::CreateTable {
        return Ok(());
    }
    let key_column = ast.key_column.as_deref().unwrap_or_default();
    if key_column != schema.key_column {
        return Err(match ast.op {
            QueryOp::Insert => QueryError::Schema(format!(
                "first INSERT column must be the partition key {}",
                schema.key_column
            )),
            _ if schema.has_value_column(key_column) => QueryError::UnsupportedPredicate(format!(
                "{key_column} is not the partition key"
            )),
            _ => QueryError::Schema(format!("unknown column {key_column}")),
        });
    }
    let mut seen = HashSet::new();
    for (c, _) in &ast.assignments {
        if c == &schema.key_column {
            return Err(QueryError::Schema(format!("cannot assign partition key {c}")));
        }
        if !schema.has_value_column(c) {
            return Err(QueryError::Schema(format!("unknown column {c}")));
        }
        if !seen.insert(c.as_str()) {
            return Err(QueryError::Schema(format!("column {c} assigned twice")));
        }
    }
    if ast.op == QueryOp::Update && ast.assignments.is_empty() {
        return Err(QueryError::Schema("UPDATE without assignments".into()));
    }
    if let Projection::Columns(cols) = &ast.projection {
        for c in cols {
            if c != &schema.key_column && !schema.has_value_column(c) {
                return Err(QueryError::Schema(format!("unknown column {c}")));
            }
        }
    }
    Ok(())
}

pub fn translate(
    ast: &QueryAst,
    schema: &SchemaDef,
    keys: &KeySet,
) -> Result<EncryptedCommand, QueryError> {
    translate_with(ast, &AnonymizedSchema::new(schema, keys)?, keys)
}

/// [`translate`] against a precomputed [`AnonymizedSchema`].
pub fn translate_with(
    ast: &QueryAst,
    anon: &AnonymizedSchema,
    keys: &KeySet,
) -> Result<EncryptedCommand, QueryError> {
    check_against(ast, &anon.schema)?;
    if ast.op == QueryOp::CreateTable {
        return Ok(EncryptedCommand {
            op: ast.op,
            table_pseudonym: anon.table.clone(),
            key_ct: None,
            cells: Vec::new(),
            projection_pseudonyms: anon.all_pseudonyms(),
        });
    }
    let key_value = ast
        .key_value
        .as_deref()
        .ok_or_else(|| QueryError::Schema("statement has no partition key value".into()))?;
    let cells = ast
        .assignments
        .iter()
        .map(|(c, v)| Ok((anon.pseudonym(c)?.to_string(), rnd_encrypt(keys, v.as_bytes(), None))))
        .collect::<Result<Vec<_>, QueryError>>()?;
    let projection_pseudonyms = match (&ast.op, &ast.projection) {
        (QueryOp::Select, Projection::All) => anon.all_pseudonyms(),
        (QueryOp::Select, Projection::Columns(cols)) => cols
            .iter()
            .map(|c| anon.pseudonym(c).map(str::to_string))
            .collect::<Result<_, _>>()?,
        _ => Vec::new(),
    };
    Ok(EncryptedCommand {
        op: ast.op,
        table_pseudonym: anon.table.clone(),
        key_ct: Some(det_encrypt(keys, key_value.as_bytes())),
        cells,
        projection_pseudonyms,
    })
}

/// Restores plaintext column names and values of stored cells.
pub fn decrypt_row(
    cells: &[(String, Ciphertext)],
    schema: &SchemaDef,
    keys: &KeySet,
) -> Result<Vec<(String, String)>, QueryError> {
    let anon = AnonymizedSchema::new(schema, keys)?;
    decrypt_cells(
        &anon,
        keys,
        cells.iter().map(|(n, ct)| (n.as_str(), ct.bytes.as_slice())),
    )
}

/// [`decrypt_row`] over raw stored cells.
pub fn decrypt_cells<'a>(
    anon: &AnonymizedSchema,
    keys: &KeySet,
    cells: impl IntoIterator<Item = (&'a str, &'a [u8])>,
) -> Result<Vec<(String, String)>, QueryError> {
    cells
        .into_iter()
        .map(|(pseudonym, bytes)| {
            let column = anon.plain(pseudonym)?;
            let plain = rnd_decrypt_bytes(keys, bytes)?;
            let value = String::from_utf8(plain).map_err(|_| {
                QueryError::Schema(format!("column {column} does not hold UTF-8 text"))
            })?;
            Ok((column.to_string(), value))
        })
        .collect()
}
