//! Proxy-side table of row tags, optionally backed by an append-only file.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use parking_lot::{Mutex, RwLock};

use crate::crypto::{HmacTag, TAG_LEN};

const REC_PUT: u8 = 1;
const REC_REMOVE: u8 = 2;

/// Canonical byte form of an encrypted row, the input to the row HMAC:
///
/// `table ‖ 0x00 ‖ u32 len(key) ‖ key ‖ per cell in ascending name order:
/// u16 len(name) ‖ name ‖ u32 len(value) ‖ value` (big-endian lengths).
pub fn canonical_serialize<'a>(
    table_pseudonym: &str,
    key_ct: &[u8],
    cells: impl IntoIterator<Item = (&'a str, &'a [u8])>,
) -> Vec<u8> {
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_unstable_by(|a, b| a.0.cmp(b.0));
    let body: usize = cells.iter().map(|(n, v)| 6 + n.len() + v.len()).sum();
    let mut out = Vec::with_capacity(table_pseudonym.len() + 5 + key_ct.len() + body);
    out.extend_from_slice(table_pseudonym.as_bytes());
    out.push(0);
    out.extend_from_slice(&(key_ct.len() as u32).to_be_bytes());
    out.extend_from_slice(key_ct);
    for (name, value) in cells {
        out.extend_from_slice(&(name.len() as u16).to_be_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.len() as u32).to_be_bytes());
        out.extend_from_slice(value);
    }
    out
}

type LedgerKey = (String, Vec<u8>);

/// Map from `(table pseudonym, key ciphertext)` to the tag of the row
/// currently stored under it.
#[derive(Debug, Default)]
pub struct IntegrityLedger {
    entries: RwLock<HashMap<LedgerKey, HmacTag>>,
    log: Option<Mutex<BufWriter<File>>>,
}

impl IntegrityLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a ledger file, replaying existing records. A
    /// truncated final record, as left by a crash mid-append, is ignored.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let mut bytes = Vec::new();
            BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
            replay(&bytes, &mut entries)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(IntegrityLedger {
            entries: RwLock::new(entries),
            log: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    pub fn get(&self, table: &str, key: &[u8]) -> Option<HmacTag> {
        self.entries
            .read()
            .get(&(table.to_string(), key.to_vec()))
            .copied()
    }

    pub fn insert(&self, table: &str, key: &[u8], tag: HmacTag) -> io::Result<()> {
        if let Some(log) = &self.log {
            let mut rec = record_header(REC_PUT, table, key);
            rec.extend_from_slice(tag.as_bytes());
            append(log, &rec)?;
        }
        self.entries
            .write()
            .insert((table.to_string(), key.to_vec()), tag);
        Ok(())
    }

    pub fn remove(&self, table: &str, key: &[u8]) -> io::Result<Option<HmacTag>> {
        if let Some(log) = &self.log {
            append(log, &record_header(REC_REMOVE, table, key))?;
        }
        Ok(self.entries.write().remove(&(table.to_string(), key.to_vec())))
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }
}

fn record_header(op: u8, table: &str, key: &[u8]) -> Vec<u8> {
    let mut rec = Vec::with_capacity(7 + table.len() + key.len() + TAG_LEN);
    rec.push(op);
    rec.extend_from_slice(&(table.len() as u16).to_be_bytes());
    rec.extend_from_slice(table.as_bytes());
    rec.extend_from_slice(&(key.len() as u32).to_be_bytes());
    rec.extend_from_slice(key);
    rec
}

fn append(log: &Mutex<BufWriter<File>>, rec: &[u8]) -> io::Result<()> {
    let mut w = log.lock();
    w.write_all(rec)?;
    w.flush()
}

fn replay(mut bytes: &[u8], entries: &mut HashMap<LedgerKey, HmacTag>) -> io::Result<()> {
    fn take<'a>(b: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
        if b.len() < n {
            return None;
        }
        let (h, t) = b.split_at(n);
        *b = t;
        Some(h)
    }
    let corrupt = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    while !bytes.is_empty() {
        let mut cur = bytes;
        let Some(parsed) = (|| {
            let op = take(&mut cur, 1)?[0];
            let tl = u16::from_be_bytes(take(&mut cur, 2)?.try_into().ok()?) as usize;
            let table = take(&mut cur, tl)?.to_vec();
            let kl = u32::from_be_bytes(take(&mut cur, 4)?.try_into().ok()?) as usize;
            let key = take(&mut cur, kl)?.to_vec();
            let tag = if op == REC_PUT {
                Some(HmacTag::from_slice(take(&mut cur, TAG_LEN)?)?)
            } else {
                None
            };
            Some((op, table, key, tag))
        })() else {
            // truncated tail
            return Ok(());
        };
        let (op, table, key, tag) = parsed;
        let table = String::from_utf8(table).map_err(|_| corrupt("ledger table is not UTF-8"))?;
        match (op, tag) {
            (REC_PUT, Some(tag)) => {
                entries.insert((table, key), tag);
            }
            (REC_REMOVE, _) => {
                entries.remove(&(table, key));
            }
            _ => return Err(corrupt("unknown ledger record")),
        }
        bytes = cur;
    }
    Ok(())
}
