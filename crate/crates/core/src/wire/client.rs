//! Client end of the wire protocol.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::ops::Range;
use std::time::Duration;

use crate::error::{PorError, Reject, WireError};
use crate::field::Field;
use crate::por::{AuditReply, BlockProof, StorageServer, StoreLayout, TreeId, WriteAck, WriteRequest};
use crate::store::ByteStore;
use crate::wire::daemon::INIT_WINDOW;
use crate::wire::message::{read_frame, write_frame, Message, StoreInfo, PROTOCOL_VERSION};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
const UPLOAD_CHUNK: usize = 1 << 20;

/// Bytes moved in each direction, including framing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Traffic {
    pub up: u64,
    pub down: u64,
}

pub struct RemoteServer {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_corr: u64,
    traffic: Traffic,
}

fn connect_error(e: io::Error, endpoint: &str) -> WireError {
    match e.kind() {
        io::ErrorKind::ConnectionRefused => WireError::ConnectionRefused(endpoint.to_string()),
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => WireError::Timeout,
        _ => WireError::Io(e),
    }
}

/// Accepts `host:port` or a bare host, which gets the default port.
pub fn resolve(endpoint: &str) -> Result<Vec<SocketAddr>, WireError> {
    let with_port = if endpoint.rsplit_once(':').is_some_and(|(_, p)| p.parse::<u16>().is_ok()) {
        endpoint.to_string()
    } else {
        format!("{endpoint}:{}", crate::wire::message::DEFAULT_PORT)
    };
    Ok(with_port.to_socket_addrs().map_err(WireError::Io)?.collect())
}

impl RemoteServer {
    pub fn connect(endpoint: &str) -> Result<Self, WireError> {
        Self::connect_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn connect_timeout(endpoint: &str, timeout: Duration) -> Result<Self, WireError> {
        let mut last = WireError::ConnectionRefused(endpoint.to_string());
        for addr in resolve(endpoint)? {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => return Self::handshake(stream, timeout),
                Err(e) => last = connect_error(e, endpoint),
            }
        }
        Err(last)
    }

    fn handshake(stream: TcpStream, timeout: Duration) -> Result<Self, WireError> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        let mut s = RemoteServer {
            reader: BufReader::with_capacity(1 << 16, stream.try_clone()?),
            writer: BufWriter::with_capacity(1 << 16, stream),
            next_corr: 1,
            traffic: Traffic::default(),
        };
        match s.call(Message::Hello { version: PROTOCOL_VERSION })? {
            Message::HelloAck { version } if version == PROTOCOL_VERSION => Ok(s),
            other => Err(unexpected(&other)),
        }
    }

    pub fn traffic(&self) -> Traffic {
        self.traffic
    }

    pub fn reset_traffic(&mut self) {
        self.traffic = Traffic::default();
    }

    fn send(&mut self, msg: &Message) -> Result<u64, WireError> {
        let corr = self.next_corr;
        self.next_corr += 1;
        self.traffic.up += write_frame(&mut self.writer, corr, msg)? as u64;
        Ok(corr)
    }

    fn flush(&mut self) -> Result<(), WireError> {
        self.writer.flush().map_err(|e| match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => WireError::Timeout,
            _ => WireError::Io(e),
        })
    }

    fn receive(&mut self, corr: u64) -> Result<Message, WireError> {
        let (got, msg, size) = read_frame(&mut self.reader)?.ok_or(WireError::Truncated)?;
        self.traffic.down += size as u64;
        if let Message::Error { code, detail } = msg {
            return Err(WireError::Server { code, detail });
        }
        if got != corr {
            return Err(WireError::Protocol(format!("response to {got}, expected {corr}")));
        }
        Ok(msg)
    }

    /// One request/response exchange.
    pub fn call(&mut self, msg: Message) -> Result<Message, WireError> {
        let corr = self.send(&msg)?;
        self.flush()?;
        self.receive(corr)
    }

    pub fn info(&mut self) -> Result<Option<StoreInfo>, WireError> {
        match self.call(Message::InfoReq)? {
            Message::InfoResp(i) => Ok(i),
            other => Err(unexpected(&other)),
        }
    }

    /// Streams a file (and its control matrix, if any) to the server in
    /// windows of frames. Returns the roots the server computed.
    pub fn upload(
        &mut self,
        layout: StoreLayout,
        data: &dyn ByteStore,
        control: Option<&[u8]>,
        replace: bool,
    ) -> Result<WriteAck, PorError> {
        match self.call(Message::InitBegin { layout, replace })? {
            Message::InitReady => {}
            other => return Err(unexpected(&other).into()),
        }
        let mut frames = 0u64;
        let mut buf = vec![0u8; UPLOAD_CHUNK];
        let mut off = 0u64;
        while off < data.len() {
            let n = (data.len() - off).min(UPLOAD_CHUNK as u64) as usize;
            data.read_at(off, &mut buf[..n])?;
            self.push_frame(&Message::InitData(buf[..n].to_vec()), &mut frames)?;
            off += n as u64;
        }
        for piece in control.unwrap_or_default().chunks(UPLOAD_CHUNK) {
            self.push_frame(&Message::InitControl(piece.to_vec()), &mut frames)?;
        }
        match self.call(Message::InitEnd)? {
            Message::InitAck(ack) => Ok(ack),
            other => Err(unexpected(&other).into()),
        }
    }

    fn push_frame(&mut self, msg: &Message, frames: &mut u64) -> Result<(), WireError> {
        let corr = self.send(msg)?;
        *frames += 1;
        if *frames % INIT_WINDOW == 0 {
            self.flush()?;
            match self.receive(corr)? {
                Message::WindowAck { .. } => {}
                other => return Err(unexpected(&other)),
            }
        }
        Ok(())
    }
}

fn unexpected(msg: &Message) -> WireError {
    WireError::Protocol(format!("unexpected response type {:#04x}", msg.kind()))
}

impl StorageServer for RemoteServer {
    fn read_blocks(&mut self, tree: TreeId, blocks: Range<u64>) -> Result<BlockProof, PorError> {
        match self.call(Message::ReadReq {
            tree,
            first: blocks.start,
            end: blocks.end,
        })? {
            Message::ReadResp(p) => Ok(p),
            other => Err(unexpected(&other).into()),
        }
    }

    fn write(&mut self, req: &WriteRequest) -> Result<WriteAck, PorError> {
        match self.call(Message::WriteReq(req.clone()))? {
            Message::WriteResp(a) => Ok(a),
            other => Err(unexpected(&other).into()),
        }
    }

    fn audit<F: Field>(&mut self, rho: F) -> Result<AuditReply<F>, PorError> {
        let msg = Message::AuditChallenge {
            field: F::ID,
            rho: rho.to_canonical_vec(),
        };
        match self.call(msg)? {
            Message::AuditResponse { field, y, control } => {
                if field != F::ID {
                    return Err(WireError::Protocol("response in the wrong field".into()).into());
                }
                let y = y
                    .chunks(F::ENCODED_BYTES)
                    .map(F::read_canonical)
                    .collect::<Option<Vec<F>>>()
                    .ok_or(Reject::BadEncoding)?;
                Ok(AuditReply { y, control })
            }
            other => Err(unexpected(&other).into()),
        }
    }
}

/// Bytes on the wire for one audit of the store described by `layout`,
/// including the full control matrix and its (empty) path when the server
/// holds one.
pub fn expected_audit_bytes(layout: &StoreLayout) -> Option<u64> {
    let elem = crate::wire::message::elem_width(layout.field_id)? as u64;
    let mut total = audit_wire_bytes(layout.m, elem);
    if layout.has_control() {
        total += 4 + layout.control_len() + 2;
    }
    Some(total)
}

/// Bytes on the wire for one audit of an `m`-row store without a control
/// matrix: challenge frame plus response frame.
pub fn audit_wire_bytes(m: u64, elem_bytes: u64) -> u64 {
    let overhead = crate::wire::message::FRAME_OVERHEAD as u64;
    let challenge = overhead + 1 + elem_bytes;
    let response = overhead + 1 + 4 + m * elem_bytes + 1;
    challenge + response
}
