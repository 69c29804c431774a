//! Length-prefixed binary framing shared by the proxy and node endpoints.
//!
//! A frame is a big-endian `u32` payload length followed by the payload. The
//! payload starts with a one-byte opcode. All integers are big-endian.
//!
//! | opcode | message        | body                                                         |
//! |--------|----------------|--------------------------------------------------------------|
//! | 0x01   | CREATE_SCHEMA  | u16 len, table, u8 count, count × (u16 len, column); key first |
//! | 0x02   | QUERY          | u32 len, UTF-8 query text                                    |
//! | 0x10   | ROW_CREATE     | u8 coordinator, u16 len, table, u8 count, count × (u16 len, column) |
//! | 0x11   | ROW_PUT        | u8 coordinator, u16 len, table, u32 len, key, cells          |
//! | 0x12   | ROW_MERGE      | same as ROW_PUT                                              |
//! | 0x13   | ROW_GET        | u8 coordinator, u16 len, table, u32 len, key                 |
//! | 0x14   | ROW_DELETE     | same as ROW_GET                                              |
//! | 0x81   | OK             | empty                                                        |
//! | 0x82   | ROWS           | cells                                                        |
//! | 0x83   | ERROR          | u8 code, u16 len, message                                    |
//!
//! `cells` is a u16 count followed by `(u16 name-len, name, u32 value-len, value)`.
//! The 0x1x opcodes are only served by node endpoints.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const OP_CREATE_SCHEMA: u8 = 0x01;
pub const OP_QUERY: u8 = 0x02;
pub const OP_ROW_CREATE: u8 = 0x10;
pub const OP_ROW_PUT: u8 = 0x11;
pub const OP_ROW_MERGE: u8 = 0x12;
pub const OP_ROW_GET: u8 = 0x13;
pub const OP_ROW_DELETE: u8 = 0x14;
pub const OP_OK: u8 = 0x81;
pub const OP_ROWS: u8 = 0x82;
pub const OP_ERROR: u8 = 0x83;

/// Largest accepted payload.
pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    NotFound = 1,
    IntegrityFailure = 2,
    Parse = 3,
    Schema = 4,
    Backend = 5,
}

impl ErrorCode {
    pub fn from_u8(code: u8) -> Option<Self> {
        Some(match code {
            1 => ErrorCode::NotFound,
            2 => ErrorCode::IntegrityFailure,
            3 => ErrorCode::Parse,
            4 => ErrorCode::Schema,
            5 => ErrorCode::Backend,
            _ => return None,
        })
    }
}

pub type Cell = (String, Vec<u8>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    CreateSchema {
        table: String,
        columns: Vec<String>,
    },
    Query(String),
    RowCreate {
        coordinator: u8,
        table: String,
        columns: Vec<String>,
    },
    RowPut {
        coordinator: u8,
        table: String,
        key: Vec<u8>,
        cells: Vec<Cell>,
    },
    RowMerge {
        coordinator: u8,
        table: String,
        key: Vec<u8>,
        cells: Vec<Cell>,
    },
    RowGet {
        coordinator: u8,
        table: String,
        key: Vec<u8>,
    },
    RowDelete {
        coordinator: u8,
        table: String,
        key: Vec<u8>,
    },
    Ok,
    Rows(Vec<Cell>),
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl Message {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Message::Error {
            code,
            message: message.into(),
        }
    }

    pub fn opcode(&self) -> u8 {
        match self {
            Message::CreateSchema { .. } => OP_CREATE_SCHEMA,
            Message::Query(_) => OP_QUERY,
            Message::RowCreate { .. } => OP_ROW_CREATE,
            Message::RowPut { .. } => OP_ROW_PUT,
            Message::RowMerge { .. } => OP_ROW_MERGE,
            Message::RowGet { .. } => OP_ROW_GET,
            Message::RowDelete { .. } => OP_ROW_DELETE,
            Message::Ok => OP_OK,
            Message::Rows(_) => OP_ROWS,
            Message::Error { .. } => OP_ERROR,
        }
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        match self {
            Message::Error { code, .. } => Some(*code),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("empty payload")]
    Empty,
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("truncated body")]
    Truncated,
    #[error("{0} trailing bytes after body")]
    Trailing(usize),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("unknown error code {0}")]
    BadErrorCode(u8),
    #[error("field too long for its length prefix: {0}")]
    Oversize(&'static str),
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame length {0} exceeds limit {MAX_FRAME_LEN}")]
    TooLarge(u32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: usize, what: &'static str) -> Result<(), WireError> {
        let v = u16::try_from(v).map_err(|_| WireError::Oversize(what))?;
        self.0.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn u32(&mut self, v: usize, what: &'static str) -> Result<(), WireError> {
        let v = u32::try_from(v).map_err(|_| WireError::Oversize(what))?;
        self.0.extend_from_slice(&v.to_be_bytes());
        Ok(())
    }
    fn short_str(&mut self, s: &str, what: &'static str) -> Result<(), WireError> {
        self.u16(s.len(), what)?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn long_bytes(&mut self, b: &[u8], what: &'static str) -> Result<(), WireError> {
        self.u32(b.len(), what)?;
        self.0.extend_from_slice(b);
        Ok(())
    }
    fn columns(&mut self, columns: &[String]) -> Result<(), WireError> {
        let n = u8::try_from(columns.len()).map_err(|_| WireError::Oversize("column count"))?;
        self.u8(n);
        for c in columns {
            self.short_str(c, "column name")?;
        }
        Ok(())
    }
    fn cells(&mut self, cells: &[Cell]) -> Result<(), WireError> {
        self.u16(cells.len(), "cell count")?;
        for (name, value) in cells {
            self.short_str(name, "cell name")?;
            self.long_bytes(value, "cell value")?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<usize, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]) as usize)
    }
    fn u32(&mut self) -> Result<usize, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
    fn string(&mut self, len: usize, what: &'static str) -> Result<String, WireError> {
        let b = self.take(len)?;
        String::from_utf8(b.to_vec()).map_err(|_| WireError::Utf8(what))
    }
    fn short_str(&mut self, what: &'static str) -> Result<String, WireError> {
        let n = self.u16()?;
        self.string(n, what)
    }
    fn long_bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let n = self.u32()?;
        Ok(self.take(n)?.to_vec())
    }
    fn columns(&mut self) -> Result<Vec<String>, WireError> {
        let n = self.u8()?;
        (0..n).map(|_| self.short_str("column name")).collect()
    }
    fn cells(&mut self) -> Result<Vec<Cell>, WireError> {
        let n = self.u16()?;
        let mut cells = Vec::with_capacity(n.min(self.buf.len() / 6));
        for _ in 0..n {
            let name = self.short_str("cell name")?;
            cells.push((name, self.long_bytes()?));
        }
        Ok(cells)
    }
    fn row_address(&mut self) -> Result<(u8, String, Vec<u8>), WireError> {
        let coordinator = self.u8()?;
        let table = self.short_str("table")?;
        Ok((coordinator, table, self.long_bytes()?))
    }
}

/// Encodes the payload (opcode and body, without the length prefix).
pub fn encode_payload(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut w = Writer(Vec::with_capacity(64));
    w.u8(msg.opcode());
    match msg {
        Message::CreateSchema { table, columns } => {
            w.short_str(table, "table")?;
            w.columns(columns)?;
        }
        Message::Query(text) => w.long_bytes(text.as_bytes(), "query")?,
        Message::RowCreate {
            coordinator,
            table,
            columns,
        } => {
            w.u8(*coordinator);
            w.short_str(table, "table")?;
            w.columns(columns)?;
        }
        Message::RowPut {
            coordinator,
            table,
            key,
            cells,
        }
        | Message::RowMerge {
            coordinator,
            table,
            key,
            cells,
        } => {
            w.u8(*coordinator);
            w.short_str(table, "table")?;
            w.long_bytes(key, "key")?;
            w.cells(cells)?;
        }
        Message::RowGet {
            coordinator,
            table,
            key,
        }
        | Message::RowDelete {
            coordinator,
            table,
            key,
        } => {
            w.u8(*coordinator);
            w.short_str(table, "table")?;
            w.long_bytes(key, "key")?;
        }
        Message::Ok => {}
        Message::Rows(cells) => w.cells(cells)?,
        Message::Error { code, message } => {
            w.u8(*code as u8);
            w.short_str(message, "error message")?;
        }
    }
    Ok(w.0)
}

pub fn decode_payload(payload: &[u8]) -> Result<Message, WireError> {
    let (&opcode, body) = payload.split_first().ok_or(WireError::Empty)?;
    let mut r = Reader { buf: body };
    let msg = match opcode {
        OP_CREATE_SCHEMA => Message::CreateSchema {
            table: r.short_str("table")?,
            columns: r.columns()?,
        },
        OP_QUERY => {
            let n = r.u32()?;
            Message::Query(r.string(n, "query")?)
        }
        OP_ROW_CREATE => Message::RowCreate {
            coordinator: r.u8()?,
            table: r.short_str("table")?,
            columns: r.columns()?,
        },
        OP_ROW_PUT | OP_ROW_MERGE => {
            let (coordinator, table, key) = r.row_address()?;
            let cells = r.cells()?;
            if opcode == OP_ROW_PUT {
                Message::RowPut {
                    coordinator,
                    table,
                    key,
                    cells,
                }
            } else {
                Message::RowMerge {
                    coordinator,
                    table,
                    key,
                    cells,
                }
            }
        }
        OP_ROW_GET | OP_ROW_DELETE => {
            let (coordinator, table, key) = r.row_address()?;
            if opcode == OP_ROW_GET {
                Message::RowGet {
                    coordinator,
                    table,
                    key,
                }
            } else {
                Message::RowDelete {
                    coordinator,
                    table,
                    key,
                }
            }
        }
        OP_OK => Message::Ok,
        OP_ROWS => Message::Rows(r.cells()?),
        OP_ERROR => {
            let raw = r.u8()?;
            let code = ErrorCode::from_u8(raw).ok_or(WireError::BadErrorCode(raw))?;
            Message::Error {
                code,
                message: r.short_str("error message")?,
            }
        }
        other => return Err(WireError::UnknownOpcode(other)),
    };
    if !r.buf.is_empty() {
        return Err(WireError::Trailing(r.buf.len()));
    }
    Ok(msg)
}

/// Full frame: length prefix followed by the payload.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    let payload = encode_payload(msg)?;
    if payload.len() > MAX_FRAME_LEN as usize {
        return Err(WireError::Oversize("frame"));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Reads one payload. `Ok(None)` on clean end-of-stream before a frame.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    let frame = encode_frame(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(&frame)?;
    w.flush()
}
