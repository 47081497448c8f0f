//! The storage daemon: one thread per connection over a shared store.
//!
//! Audits and reads take the store's read lock, writes and initialization
//! its write lock, so an audit always sees one consistent file.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use curve25519_dalek::Scalar;

use crate::error::{PorError, WireError};
use crate::field::{Field, Fp57};
use crate::parallel;
use crate::por::{ServerState, StoreLayout, StreamingIngest, WriteAck};
use crate::store::{ByteStore, FileStore, MemStore};
use crate::wire::message::{
    code, elem_width, encode_audit_head, encode_audit_tail, kind, read_frame, write_frame, Message,
    StoreInfo, FRAME_OVERHEAD, MAX_FRAME, PROTOCOL_VERSION,
};

/// Data frames the client may send before waiting for a window ack.
pub const INIT_WINDOW: u64 = 8;

const DATA_FILE: &str = "data.bin";
const CONTROL_FILE: &str = "control.bin";
const LAYOUT_FILE: &str = "layout.bin";

#[derive(Debug, Clone, Default)]
pub struct DaemonConfig {
    /// Persist the store here; in memory when unset.
    pub data_dir: Option<PathBuf>,
    /// Worker threads per audit; 0 uses the global pool.
    pub threads: usize,
}

struct Shared {
    store: RwLock<Option<ServerState>>,
    data_dir: Option<PathBuf>,
    threads: AtomicUsize,
    stop: AtomicBool,
}

/// A running daemon. Dropping the handle does not stop it; call `shutdown`.
pub struct DaemonHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl DaemonHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    pub fn set_threads(&self, threads: usize) {
        self.shared.threads.store(threads, Ordering::SeqCst);
    }

    /// Runs `f` with exclusive access to the store, for fault injection.
    pub fn with_store<R>(&self, f: impl FnOnce(Option<&mut ServerState>) -> R) -> R {
        let mut guard = self.shared.store.write().unwrap_or_else(|e| e.into_inner());
        f(guard.as_mut())
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the daemon stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves in a background thread.
pub fn spawn(addr: impl ToSocketAddrs, config: DaemonConfig) -> io::Result<DaemonHandle> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let store = match &config.data_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            load_store(dir)?
        }
        None => None,
    };
    let shared = Arc::new(Shared {
        store: RwLock::new(store),
        data_dir: config.data_dir,
        threads: AtomicUsize::new(config.threads),
        stop: AtomicBool::new(false),
    });
    let s2 = shared.clone();
    let thread = thread::Builder::new()
        .name("por-accept".into())
        .spawn(move || accept_loop(listener, s2))?;
    Ok(DaemonHandle {
        addr,
        shared,
        thread: Some(thread),
    })
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let s = shared.clone();
        let _ = thread::Builder::new()
            .name("por-session".into())
            .spawn(move || {
                let _ = Session::new(stream, s).and_then(|mut sess| sess.run());
            });
    }
}

fn load_store(dir: &Path) -> io::Result<Option<ServerState>> {
    let layout_path = dir.join(LAYOUT_FILE);
    if !layout_path.exists() {
        return Ok(None);
    }
    let layout = StoreLayout::decode(&fs::read(&layout_path)?)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "bad layout file"))?;
    let data: Box<dyn ByteStore> = Box::new(FileStore::open(dir.join(DATA_FILE))?);
    let control: Option<Box<dyn ByteStore>> = if layout.has_control() {
        Some(Box::new(FileStore::open(dir.join(CONTROL_FILE))?))
    } else {
        None
    };
    ServerState::new(layout, data, control)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

/// An upload in progress on one session.
struct Upload {
    layout: StoreLayout,
    data: Box<dyn ByteStore>,
    ingest: StreamingIngest,
    control: Vec<u8>,
    frames: u64,
}

struct Session {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    shared: Arc<Shared>,
    upload: Option<Upload>,
    greeted: bool,
}

/// Errors that end a session after (optionally) reporting them.
enum Fault {
    /// Send an ERROR frame and keep going.
    Reply(u16, String),
    /// Send an ERROR frame and close the connection.
    Fatal(u16, String),
    /// Close without replying.
    Drop,
}

impl From<PorError> for Fault {
    fn from(e: PorError) -> Self {
        let c = match &e {
            PorError::OutOfRange(_) | PorError::Merkle(_) => code::OUT_OF_RANGE,
            PorError::Io(_) => code::IO,
            PorError::Params(_) => code::FIELD,
            _ => code::BAD_REQUEST,
        };
        Fault::Reply(c, e.to_string())
    }
}

impl From<io::Error> for Fault {
    fn from(e: io::Error) -> Self {
        Fault::Reply(code::IO, e.to_string())
    }
}

impl Session {
    fn new(stream: TcpStream, shared: Arc<Shared>) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Session {
            reader: BufReader::with_capacity(1 << 16, stream.try_clone()?),
            writer: BufWriter::with_capacity(1 << 16, stream),
            shared,
            upload: None,
            greeted: false,
        })
    }

    fn send(&mut self, corr: u64, msg: &Message) -> io::Result<()> {
        write_frame(&mut self.writer, corr, msg).map_err(|e| io::Error::other(e.to_string()))?;
        Ok(())
    }

    fn run(&mut self) -> io::Result<()> {
        loop {
            let (corr, msg) = match read_frame(&mut self.reader) {
                Ok(Some((corr, msg, _))) => (corr, msg),
                Ok(None) => return Ok(()),
                Err(WireError::UnknownType(t)) => {
                    self.send(0, &err_msg(code::BAD_REQUEST, &format!("unknown message type {t:#04x}")))?;
                    self.writer.flush()?;
                    continue;
                }
                Err(WireError::Protocol(detail)) => {
                    self.send(0, &err_msg(code::BAD_REQUEST, &detail))?;
                    self.writer.flush()?;
                    continue;
                }
                Err(WireError::Oversize(n)) => {
                    let _ = self.send(0, &err_msg(code::BAD_REQUEST, &format!("frame of {n} bytes exceeds {MAX_FRAME}")));
                    let _ = self.writer.flush();
                    return Ok(());
                }
                Err(_) => return Ok(()),
            };
            match self.handle(corr, msg) {
                Ok(()) => {}
                Err(Fault::Reply(c, detail)) => self.send(corr, &err_msg(c, &detail))?,
                Err(Fault::Fatal(c, detail)) => {
                    let _ = self.send(corr, &err_msg(c, &detail));
                    let _ = self.writer.flush();
                    return Ok(());
                }
                Err(Fault::Drop) => return Ok(()),
            }
            // Stay buffered while the client streams an upload window.
            if self.upload.as_ref().is_none_or(|u| u.frames % INIT_WINDOW == 0) {
                self.writer.flush()?;
            }
        }
    }

    fn handle(&mut self, corr: u64, msg: Message) -> Result<(), Fault> {
        if !self.greeted {
            return match msg {
                Message::Hello { version } if version == PROTOCOL_VERSION => {
                    self.greeted = true;
                    self.send(corr, &Message::HelloAck { version: PROTOCOL_VERSION })?;
                    Ok(())
                }
                Message::Hello { version } => Err(Fault::Fatal(
                    code::VERSION,
                    format!("unsupported protocol version {version}"),
                )),
                _ => Err(Fault::Fatal(code::BAD_REQUEST, "expected HELLO".into())),
            };
        }
        match msg {
            Message::InfoReq => {
                let info = self.read_store(|s| {
                    Ok(StoreInfo {
                        layout: *s.layout(),
                        root_m: s.root_m(),
                        root_w: s.root_w(),
                    })
                });
                let info = match info {
                    Ok(i) => Some(i),
                    Err(Fault::Reply(code::NO_STORE, _)) => None,
                    Err(e) => return Err(e),
                };
                self.send(corr, &Message::InfoResp(info))?;
            }
            Message::InitBegin { layout, replace } => self.init_begin(corr, layout, replace)?,
            Message::InitData(bytes) => self.init_data(corr, &bytes, false)?,
            Message::InitControl(bytes) => self.init_data(corr, &bytes, true)?,
            Message::InitEnd => self.init_end(corr)?,
            Message::ReadReq { tree, first, end } => {
                if first >= end {
                    return Err(Fault::Reply(code::OUT_OF_RANGE, "empty block range".into()));
                }
                let proof = self.read_store(|s| Ok(s.prove_blocks(tree, first..end)?))?;
                self.send(corr, &Message::ReadResp(proof))?;
            }
            Message::WriteReq(req) => {
                let ack = self.write_store(|s| {
                    let ack = s.apply_write(&req)?;
                    s.flush()?;
                    Ok(ack)
                })?;
                self.send(corr, &Message::WriteResp(ack))?;
            }
            Message::AuditChallenge { field, rho } => self.audit(corr, field, &rho)?,
            Message::Hello { .. } => {
                return Err(Fault::Reply(code::BAD_REQUEST, "already greeted".into()));
            }
            other => {
                return Err(Fault::Reply(
                    code::BAD_REQUEST,
                    format!("unexpected message type {:#04x}", other.kind()),
                ))
            }
        }
        Ok(())
    }

    fn read_store<R>(&self, f: impl FnOnce(&ServerState) -> Result<R, Fault>) -> Result<R, Fault> {
        let guard = self.shared.store.read().unwrap_or_else(|e| e.into_inner());
        match guard.as_ref() {
            Some(s) => f(s),
            None => Err(Fault::Reply(code::NO_STORE, "no file stored".into())),
        }
    }

    fn write_store<R>(&self, f: impl FnOnce(&mut ServerState) -> Result<R, Fault>) -> Result<R, Fault> {
        let mut guard = self.shared.store.write().unwrap_or_else(|e| e.into_inner());
        match guard.as_mut() {
            Some(s) => f(s),
            None => Err(Fault::Reply(code::NO_STORE, "no file stored".into())),
        }
    }

    fn init_begin(&mut self, corr: u64, layout: StoreLayout, replace: bool) -> Result<(), Fault> {
        if elem_width(layout.field_id).is_none() {
            return Err(Fault::Reply(code::FIELD, "unsupported field".into()));
        }
        let exists = self.shared.store.read().unwrap_or_else(|e| e.into_inner()).is_some();
        if exists && !replace {
            return Err(Fault::Reply(code::EXISTS, "a file is already stored".into()));
        }
        if layout.control_len() > MAX_FRAME as u64 * 64 {
            return Err(Fault::Reply(code::BAD_REQUEST, "control matrix too large".into()));
        }
        let data: Box<dyn ByteStore> = match &self.shared.data_dir {
            Some(dir) => {
                let path = dir.join(format!("{DATA_FILE}.upload"));
                let f = fs::OpenOptions::new().create(true).write(true).truncate(true).open(&path)?;
                f.set_len(layout.n_bytes)?;
                Box::new(FileStore::open(&path)?)
            }
            None => {
                let len = usize::try_from(layout.n_bytes)
                    .map_err(|_| Fault::Reply(code::BAD_REQUEST, "file too large".into()))?;
                Box::new(MemStore::new(vec![0u8; len]))
            }
        };
        self.upload = Some(Upload {
            layout,
            data,
            ingest: StreamingIngest::new(&layout),
            control: Vec::new(),
            frames: 0,
        });
        self.send(corr, &Message::InitReady)?;
        Ok(())
    }

    fn init_data(&mut self, corr: u64, bytes: &[u8], control: bool) -> Result<(), Fault> {
        let Some(up) = self.upload.as_mut() else {
            return Err(Fault::Reply(code::BAD_REQUEST, "no upload in progress".into()));
        };
        if control {
            if up.control.len() as u64 + bytes.len() as u64 > up.layout.control_len() {
                self.upload = None;
                return Err(Fault::Fatal(code::OUT_OF_RANGE, "too many control bytes".into()));
            }
            up.control.extend_from_slice(bytes);
        } else {
            let at = up.ingest.received();
            if at + bytes.len() as u64 > up.layout.n_bytes {
                self.upload = None;
                return Err(Fault::Fatal(code::OUT_OF_RANGE, "too many data bytes".into()));
            }
            up.data.write_at(at, bytes)?;
            up.ingest.push(bytes);
        }
        up.frames += 1;
        if up.frames % INIT_WINDOW == 0 {
            let received = up.ingest.received() + up.control.len() as u64;
            self.send(corr, &Message::WindowAck { received })?;
        }
        Ok(())
    }

    fn init_end(&mut self, corr: u64) -> Result<(), Fault> {
        let Some(mut up) = self.upload.take() else {
            return Err(Fault::Reply(code::BAD_REQUEST, "no upload in progress".into()));
        };
        if up.ingest.received() != up.layout.n_bytes || up.control.len() as u64 != up.layout.control_len() {
            return Err(Fault::Reply(code::BAD_REQUEST, "upload incomplete".into()));
        }
        let tree = up.ingest.finish()?;
        up.data.flush()?;
        let mut guard = self.shared.store.write().unwrap_or_else(|e| e.into_inner());
        let (data, control): (Box<dyn ByteStore>, Option<Box<dyn ByteStore>>) = match &self.shared.data_dir {
            Some(dir) => {
                drop(up.data);
                fs::rename(dir.join(format!("{DATA_FILE}.upload")), dir.join(DATA_FILE))?;
                let control = if up.layout.has_control() {
                    write_atomic(&dir.join(CONTROL_FILE), &up.control)?;
                    Some(Box::new(FileStore::open(dir.join(CONTROL_FILE))?) as Box<dyn ByteStore>)
                } else {
                    let _ = fs::remove_file(dir.join(CONTROL_FILE));
                    None
                };
                let mut lb = Vec::new();
                up.layout.encode(&mut lb);
                write_atomic(&dir.join(LAYOUT_FILE), &lb)?;
                (Box::new(FileStore::open(dir.join(DATA_FILE))?), control)
            }
            None => (
                up.data,
                up.layout
                    .has_control()
                    .then(|| Box::new(MemStore::new(std::mem::take(&mut up.control))) as Box<dyn ByteStore>),
            ),
        };
        let state = ServerState::with_data_tree(up.layout, data, tree, control)?;
        let ack = WriteAck {
            root_m: state.root_m(),
            root_w: state.root_w(),
        };
        *guard = Some(state);
        drop(guard);
        self.send(corr, &Message::InitAck(ack))?;
        Ok(())
    }

    fn audit(&mut self, corr: u64, field: u8, rho: &[u8]) -> Result<(), Fault> {
        match field {
            Fp57::ID => self.audit_in::<Fp57>(corr, rho),
            <Scalar as Field>::ID => self.audit_in::<Scalar>(corr, rho),
            _ => Err(Fault::Reply(code::FIELD, "unsupported field".into())),
        }
    }

    /// Streams `y` into a single response frame as row blocks complete.
    fn audit_in<F: Field>(&mut self, corr: u64, rho: &[u8]) -> Result<(), Fault> {
        let rho = F::read_canonical(rho)
            .filter(|r| !r.is_zero())
            .ok_or_else(|| Fault::Reply(code::BAD_REQUEST, "challenge must be a canonical nonzero element".into()))?;
        let threads = self.shared.threads.load(Ordering::SeqCst);
        let shared = self.shared.clone();
        let guard = shared.store.read().unwrap_or_else(|e| e.into_inner());
        let Some(store) = guard.as_ref() else {
            return Err(Fault::Reply(code::NO_STORE, "no file stored".into()));
        };
        if store.layout().field_id != F::ID {
            return Err(Fault::Reply(code::FIELD, "challenge field does not match store".into()));
        }
        let m = store.layout().m as usize;
        let tail = encode_audit_tail(&store.control_proof()?);
        let payload = 5 + m * F::ENCODED_BYTES + tail.len();
        if payload + FRAME_OVERHEAD - 4 > MAX_FRAME {
            return Err(Fault::Reply(code::BAD_REQUEST, "response exceeds frame limit".into()));
        }
        let w = &mut self.writer;
        let mut header = Vec::with_capacity(FRAME_OVERHEAD + 5);
        header.extend_from_slice(&((payload + FRAME_OVERHEAD - 4) as u32).to_be_bytes());
        header.push(kind::AUDIT_RESPONSE);
        header.extend_from_slice(&corr.to_be_bytes());
        header.extend_from_slice(&encode_audit_head(F::ID, m as u32));
        w.write_all(&header).map_err(|_| Fault::Drop)?;
        let mut elem = vec![0u8; F::ENCODED_BYTES];
        let res = parallel::with_threads(threads, || {
            store.audit_stream(rho, |_, block| {
                for v in block {
                    v.write_canonical(&mut elem);
                    w.write_all(&elem)?;
                }
                Ok(())
            })
        });
        // Once the header is out, any failure leaves a torn frame.
        if res.is_err() {
            return Err(Fault::Drop);
        }
        w.write_all(&tail).map_err(|_| Fault::Drop)?;
        Ok(())
    }
}

fn err_msg(code: u16, detail: &str) -> Message {
    Message::Error {
        code,
        detail: detail.to_string(),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
