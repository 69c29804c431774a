//! Blocking TCP transport: a thread-per-connection frame server, a client,
//! and a [`Backend`] that forwards row operations to a remote node endpoint.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use log::{debug, warn};
use parking_lot::Mutex;
use thiserror::Error;

use crate::proxy::Proxy;
use crate::store::{
    Backend, Cluster, CoordinatorSelector, NodeId, PlainExecutor, StoreError, StoreRequest,
    StoreResult, StoredRow,
};
use crate::wire::{decode_payload, read_frame, write_message, ErrorCode, FrameError, Message, WireError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("connection closed by peer")]
    Closed,
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Request handler behind a server.
pub trait Service: Send + Sync + 'static {
    fn handle(&self, msg: &Message) -> Message;
}

impl Service for Proxy {
    fn handle(&self, msg: &Message) -> Message {
        Proxy::handle(self, msg)
    }
}

impl<B: Backend + 'static> Service for PlainExecutor<B> {
    fn handle(&self, msg: &Message) -> Message {
        PlainExecutor::handle(self, msg)
    }
}

/// What a node endpoint serves: raw row operations for proxies, and
/// plaintext queries for clients that bypass any proxy.
pub struct NodeService {
    cluster: Arc<Cluster>,
    plain: PlainExecutor<Arc<Cluster>>,
}

impl NodeService {
    pub fn new(cluster: Arc<Cluster>, plain_coordinator: CoordinatorSelector) -> Self {
        NodeService {
            plain: PlainExecutor::new(cluster.clone(), plain_coordinator),
            cluster,
        }
    }

    pub fn cluster(&self) -> &Arc<Cluster> {
        &self.cluster
    }
}

fn row_request(msg: &Message) -> Option<(u8, StoreRequest)> {
    let cells = |c: &[(String, Vec<u8>)]| c.iter().cloned().collect();
    Some(match msg {
        Message::RowCreate {
            coordinator,
            table,
            columns,
        } => (
            *coordinator,
            StoreRequest::CreateTable {
                table: table.clone(),
                columns: columns.clone(),
            },
        ),
        Message::RowPut {
            coordinator,
            table,
            key,
            cells: c,
        } => (
            *coordinator,
            StoreRequest::Put {
                table: table.clone(),
                key: key.clone(),
                cells: cells(c),
            },
        ),
        Message::RowMerge {
            coordinator,
            table,
            key,
            cells: c,
        } => (
            *coordinator,
            StoreRequest::Merge {
                table: table.clone(),
                key: key.clone(),
                cells: cells(c),
            },
        ),
        Message::RowGet {
            coordinator,
            table,
            key,
        } => (
            *coordinator,
            StoreRequest::Get {
                table: table.clone(),
                key: key.clone(),
            },
        ),
        Message::RowDelete {
            coordinator,
            table,
            key,
        } => (
            *coordinator,
            StoreRequest::Delete {
                table: table.clone(),
                key: key.clone(),
            },
        ),
        _ => return None,
    })
}

fn store_error_message(e: &StoreError) -> Message {
    let code = match e {
        StoreError::UnknownTable(_) | StoreError::TableConflict(_) => ErrorCode::Schema,
        _ => ErrorCode::Backend,
    };
    Message::error(code, e.to_string())
}

impl Service for NodeService {
    fn handle(&self, msg: &Message) -> Message {
        let Some((coordinator, req)) = row_request(msg) else {
            return self.plain.handle(msg);
        };
        match self.cluster.route(NodeId(coordinator), req) {
            Ok(StoreResult::Done) => Message::Ok,
            Ok(StoreResult::NotFound) => Message::error(ErrorCode::NotFound, "row not found"),
            Ok(StoreResult::Row(row)) => Message::Rows(row.cells.into_iter().collect()),
            Err(e) => store_error_message(&e),
        }
    }
}

/// A listening frame server. Dropping it stops accepting and closes every
/// open connection.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
    sessions: Arc<AtomicU64>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, service: Arc<dyn Service>) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();
        let sessions = Arc::new(AtomicU64::new(0));
        let accept = {
            let stop = stop.clone();
            let conns = conns.clone();
            let sessions = sessions.clone();
            std::thread::Builder::new()
                .name(format!("accept-{}", addr.port()))
                .spawn(move || {
                    for stream in listener.incoming() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = stream else { continue };
                        let id = sessions.fetch_add(1, Ordering::Relaxed);
                        let _ = stream.set_nodelay(true);
                        if let Ok(clone) = stream.try_clone() {
                            conns.lock().insert(id, clone);
                        }
                        let service = service.clone();
                        let conns = conns.clone();
                        std::thread::spawn(move || {
                            if let Err(e) = serve_connection(stream, service.as_ref()) {
                                debug!("session {id} ended: {e}");
                            }
                            conns.lock().remove(&id);
                        });
                    }
                })?
        };
        Ok(Server {
            addr,
            stop,
            accept: Some(accept),
            conns,
            sessions,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Connections accepted so far.
    pub fn sessions_accepted(&self) -> u64 {
        self.sessions.load(Ordering::Relaxed)
    }

    pub fn open_connections(&self) -> usize {
        self.conns.lock().len()
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for (_, c) in self.conns.lock().drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Serves one connection until EOF. Malformed payloads get an ERROR reply and
/// the session continues; an oversized length prefix cannot be skipped, so
/// the session is answered and then closed.
pub fn serve_connection(stream: TcpStream, service: &dyn Service) -> Result<(), NetError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let payload = match read_frame(&mut reader) {
            Ok(Some(p)) => p,
            Ok(None) => return Ok(()),
            Err(FrameError::TooLarge(n)) => {
                warn!("rejecting frame of {n} bytes");
                write_message(
                    &mut writer,
                    &Message::error(ErrorCode::Parse, format!("frame length {n} too large")),
                )?;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        let reply = match decode_payload(&payload) {
            Ok(msg) => service.handle(&msg),
            Err(e) => Message::error(ErrorCode::Parse, format!("malformed frame: {e}")),
        };
        write_message(&mut writer, &reply)?;
    }
}

/// One blocking client connection. Requests on a connection are answered in
/// order.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client, NetError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    pub fn call(&mut self, msg: &Message) -> Result<Message, NetError> {
        write_message(&mut self.writer, msg)?;
        self.recv()
    }

    /// Sends raw bytes; used to exercise malformed input.
    pub fn send_raw(&mut self, bytes: &[u8]) -> Result<(), NetError> {
        use std::io::Write;
        self.writer.write_all(bytes)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, NetError> {
        let payload = read_frame(&mut self.reader)?.ok_or(NetError::Closed)?;
        Ok(decode_payload(&payload)?)
    }
}

/// [`Backend`] speaking the row opcodes to a remote node endpoint.
pub struct RemoteCluster {
    addr: SocketAddr,
    nodes: usize,
    pool: Mutex<Vec<Client>>,
}

impl RemoteCluster {
    pub fn new(addr: SocketAddr, nodes: usize) -> Self {
        RemoteCluster {
            addr,
            nodes,
            pool: Mutex::new(Vec::new()),
        }
    }

    fn call(&self, msg: &Message) -> Result<Message, NetError> {
        let pooled = self.pool.lock().pop();
        let mut client = match pooled {
            Some(c) => c,
            None => Client::connect(self.addr)?,
        };
        let reply = client.call(msg)?;
        self.pool.lock().push(client);
        Ok(reply)
    }
}

impl Backend for RemoteCluster {
    fn node_count(&self) -> usize {
        self.nodes
    }

    fn execute(&self, coordinator: NodeId, request: StoreRequest) -> Result<StoreResult, StoreError> {
        let c = coordinator.0;
        let (msg, key) = match request {
            StoreRequest::CreateTable { table, columns } => (
                Message::RowCreate {
                    coordinator: c,
                    table,
                    columns,
                },
                Vec::new(),
            ),
            StoreRequest::Put { table, key, cells } => (
                Message::RowPut {
                    coordinator: c,
                    table,
                    key: key.clone(),
                    cells: cells.into_iter().collect(),
                },
                key,
            ),
            StoreRequest::Merge { table, key, cells } => (
                Message::RowMerge {
                    coordinator: c,
                    table,
                    key: key.clone(),
                    cells: cells.into_iter().collect(),
                },
                key,
            ),
            StoreRequest::Get { table, key } => (
                Message::RowGet {
                    coordinator: c,
                    table,
                    key: key.clone(),
                },
                key,
            ),
            StoreRequest::Delete { table, key } => (
                Message::RowDelete {
                    coordinator: c,
                    table,
                    key: key.clone(),
                },
                key,
            ),
        };
        match self.call(&msg) {
            Ok(Message::Ok) => Ok(StoreResult::Done),
            Ok(Message::Rows(cells)) => Ok(StoreResult::Row(StoredRow {
                key_ct: key,
                cells: cells.into_iter().collect(),
            })),
            Ok(Message::Error {
                code: ErrorCode::NotFound,
                ..
            }) => Ok(StoreResult::NotFound),
            Ok(Message::Error {
                code: ErrorCode::Schema,
                message,
            }) => Err(StoreError::UnknownTable(message)),
            Ok(Message::Error { message, .. }) => Err(StoreError::Invalid(message)),
            Ok(other) => Err(StoreError::Invalid(format!(
                "unexpected reply opcode {:#04x}",
                other.opcode()
            ))),
            Err(e) => Err(StoreError::Unreachable(e.to_string())),
        }
    }
}

/// Something a benchmark or client session can be opened against.
pub trait Endpoint: Send + Sync {
    fn connect(&self) -> Result<Box<dyn Session>, NetError>;
    fn describe(&self) -> String;
}

/// One ordered request/response channel.
pub trait Session: Send {
    fn call(&mut self, msg: &Message) -> Result<Message, NetError>;
}

impl Session for Client {
    fn call(&mut self, msg: &Message) -> Result<Message, NetError> {
        Client::call(self, msg)
    }
}

/// Calls a service directly, without sockets.
#[derive(Clone)]
pub struct InProcessEndpoint {
    service: Arc<dyn Service>,
    name: String,
}

impl InProcessEndpoint {
    pub fn new(service: Arc<dyn Service>, name: impl Into<String>) -> Self {
        InProcessEndpoint {
            service,
            name: name.into(),
        }
    }
}

struct InProcessSession(Arc<dyn Service>);

impl Session for InProcessSession {
    fn call(&mut self, msg: &Message) -> Result<Message, NetError> {
        Ok(self.0.handle(msg))
    }
}

impl Endpoint for InProcessEndpoint {
    fn connect(&self) -> Result<Box<dyn Session>, NetError> {
        Ok(Box::new(InProcessSession(self.service.clone())))
    }

    fn describe(&self) -> String {
        format!("in-process:{}", self.name)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TcpEndpoint(pub SocketAddr);

impl Endpoint for TcpEndpoint {
    fn connect(&self) -> Result<Box<dyn Session>, NetError> {
        Ok(Box::new(Client::connect(self.0)?))
    }

    fn describe(&self) -> String {
        format!("tcp:{}", self.0)
    }
}
