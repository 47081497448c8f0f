//! Frames and message schemas.
//!
//! A frame is `len u32 BE | type u8 | corr-id u64 BE | payload`, where `len`
//! counts everything after itself. Integers in payloads are big-endian;
//! field elements keep their canonical little-endian encoding.

use std::io::{self, Read, Write};

use crate::error::WireError;
use crate::merkle::{MerklePath, RootDigest, DIGEST_LEN};
use crate::por::{BlockProof, StoreLayout, TreeId, WriteAck, WriteRequest};

pub const PROTOCOL_VERSION: u16 = 1;
pub const MAX_FRAME: usize = 64 << 20;
/// Length prefix, type byte and correlation id.
pub const FRAME_OVERHEAD: usize = 4 + 1 + 8;
pub const DEFAULT_PORT: u16 = 7007;

pub mod code {
    pub const BAD_REQUEST: u16 = 1;
    pub const NO_STORE: u16 = 2;
    pub const OUT_OF_RANGE: u16 = 3;
    pub const IO: u16 = 4;
    pub const VERSION: u16 = 5;
    pub const EXISTS: u16 = 6;
    pub const FIELD: u16 = 7;
}

pub mod kind {
    pub const HELLO: u8 = 0x01;
    pub const HELLO_ACK: u8 = 0x02;
    pub const INFO_REQ: u8 = 0x03;
    pub const INFO_RESP: u8 = 0x04;
    pub const INIT_BEGIN: u8 = 0x10;
    pub const INIT_READY: u8 = 0x11;
    pub const INIT_DATA: u8 = 0x12;
    pub const INIT_CONTROL: u8 = 0x13;
    pub const WINDOW_ACK: u8 = 0x14;
    pub const INIT_END: u8 = 0x15;
    pub const INIT_ACK: u8 = 0x16;
    pub const READ_REQ: u8 = 0x20;
    pub const READ_RESP: u8 = 0x21;
    pub const WRITE_REQ: u8 = 0x22;
    pub const WRITE_RESP: u8 = 0x23;
    pub const AUDIT_CHALLENGE: u8 = 0x30;
    pub const AUDIT_RESPONSE: u8 = 0x31;
    pub const ERROR: u8 = 0x7f;
}

/// Canonical element width for the fields the daemon serves.
pub fn elem_width(field_id: u8) -> Option<usize> {
    match field_id {
        1 | 0xF0 => Some(8),
        2 => Some(32),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreInfo {
    pub layout: StoreLayout,
    pub root_m: RootDigest,
    pub root_w: Option<RootDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello { version: u16 },
    HelloAck { version: u16 },
    InfoReq,
    InfoResp(Option<StoreInfo>),
    InitBegin { layout: StoreLayout, replace: bool },
    InitReady,
    InitData(Vec<u8>),
    InitControl(Vec<u8>),
    WindowAck { received: u64 },
    InitEnd,
    InitAck(WriteAck),
    ReadReq { tree: TreeId, first: u64, end: u64 },
    ReadResp(BlockProof),
    WriteReq(WriteRequest),
    WriteResp(WriteAck),
    AuditChallenge { field: u8, rho: Vec<u8> },
    /// `y` is `count` canonical elements, concatenated.
    AuditResponse { field: u8, y: Vec<u8>, control: Option<BlockProof> },
    Error { code: u16, detail: String },
}

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_be_bytes());
}
fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}
fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_opt_root(out: &mut Vec<u8>, r: &Option<RootDigest>) {
    match r {
        Some(r) => {
            out.push(1);
            out.extend_from_slice(r.as_bytes());
        }
        None => out.push(0),
    }
}

fn put_proof(out: &mut Vec<u8>, p: &BlockProof) {
    put_bytes(out, &p.blocks);
    p.path.encode(out);
}

fn put_ack(out: &mut Vec<u8>, a: &WriteAck) {
    out.extend_from_slice(a.root_m.as_bytes());
    put_opt_root(out, &a.root_w);
}

/// Bytes of the audit response payload that follow `y`.
pub fn encode_audit_tail(control: &Option<BlockProof>) -> Vec<u8> {
    let mut out = Vec::new();
    match control {
        Some(p) => {
            out.push(1);
            put_proof(&mut out, p);
        }
        None => out.push(0),
    }
    out
}

/// Payload bytes of an audit response that precede `y`.
pub fn encode_audit_head(field: u8, count: u32) -> [u8; 5] {
    let mut h = [0u8; 5];
    h[0] = field;
    h[1..].copy_from_slice(&count.to_be_bytes());
    h
}

impl Message {
    pub fn kind(&self) -> u8 {
        use kind::*;
        match self {
            Message::Hello { .. } => HELLO,
            Message::HelloAck { .. } => HELLO_ACK,
            Message::InfoReq => INFO_REQ,
            Message::InfoResp(_) => INFO_RESP,
            Message::InitBegin { .. } => INIT_BEGIN,
            Message::InitReady => INIT_READY,
            Message::InitData(_) => INIT_DATA,
            Message::InitControl(_) => INIT_CONTROL,
            Message::WindowAck { .. } => WINDOW_ACK,
            Message::InitEnd => INIT_END,
            Message::InitAck(_) => INIT_ACK,
            Message::ReadReq { .. } => READ_REQ,
            Message::ReadResp(_) => READ_RESP,
            Message::WriteReq(_) => WRITE_REQ,
            Message::WriteResp(_) => WRITE_RESP,
            Message::AuditChallenge { .. } => AUDIT_CHALLENGE,
            Message::AuditResponse { .. } => AUDIT_RESPONSE,
            Message::Error { .. } => ERROR,
        }
    }

    pub fn encode_payload(&self, out: &mut Vec<u8>) {
        match self {
            Message::Hello { version } | Message::HelloAck { version } => put_u16(out, *version),
            Message::InfoReq | Message::InitReady | Message::InitEnd => {}
            Message::InfoResp(info) => match info {
                Some(i) => {
                    out.push(1);
                    i.layout.encode(out);
                    out.extend_from_slice(i.root_m.as_bytes());
                    put_opt_root(out, &i.root_w);
                }
                None => out.push(0),
            },
            Message::InitBegin { layout, replace } => {
                layout.encode(out);
                out.push(*replace as u8);
            }
            Message::InitData(b) | Message::InitControl(b) => out.extend_from_slice(b),
            Message::WindowAck { received } => put_u64(out, *received),
            Message::InitAck(a) | Message::WriteResp(a) => put_ack(out, a),
            Message::ReadReq { tree, first, end } => {
                out.push(*tree as u8);
                put_u64(out, *first);
                put_u64(out, *end);
            }
            Message::ReadResp(p) => put_proof(out, p),
            Message::WriteReq(w) => {
                for part in [&w.data, &w.control] {
                    match part {
                        Some((at, bytes)) => {
                            out.push(1);
                            put_u64(out, *at);
                            put_bytes(out, bytes);
                        }
                        None => out.push(0),
                    }
                }
            }
            Message::AuditChallenge { field, rho } => {
                out.push(*field);
                out.extend_from_slice(rho);
            }
            Message::AuditResponse { field, y, control } => {
                let width = elem_width(*field).unwrap_or(1);
                out.extend_from_slice(&encode_audit_head(*field, (y.len() / width) as u32));
                out.extend_from_slice(y);
                out.extend_from_slice(&encode_audit_tail(control));
            }
            Message::Error { code, detail } => {
                put_u16(out, *code);
                out.extend_from_slice(detail.as_bytes());
            }
        }
    }

    pub fn decode(kind: u8, b: &[u8]) -> Result<Self, WireError> {
        let mut r = Cursor { b };
        let msg = match kind {
            kind::HELLO => Message::Hello { version: r.u16()? },
            kind::HELLO_ACK => Message::HelloAck { version: r.u16()? },
            kind::INFO_REQ => Message::InfoReq,
            kind::INFO_RESP => Message::InfoResp(match r.u8()? {
                0 => None,
                1 => Some(StoreInfo {
                    layout: r.layout()?,
                    root_m: r.root()?,
                    root_w: r.opt_root()?,
                }),
                _ => return Err(malformed("info flag")),
            }),
            kind::INIT_BEGIN => Message::InitBegin {
                layout: r.layout()?,
                replace: r.flag()?,
            },
            kind::INIT_READY => Message::InitReady,
            kind::INIT_DATA => Message::InitData(r.rest().to_vec()),
            kind::INIT_CONTROL => Message::InitControl(r.rest().to_vec()),
            kind::WINDOW_ACK => Message::WindowAck { received: r.u64()? },
            kind::INIT_END => Message::InitEnd,
            kind::INIT_ACK => Message::InitAck(r.ack()?),
            kind::READ_REQ => Message::ReadReq {
                tree: TreeId::from_u8(r.u8()?).ok_or_else(|| malformed("tree id"))?,
                first: r.u64()?,
                end: r.u64()?,
            },
            kind::READ_RESP => Message::ReadResp(r.proof()?),
            kind::WRITE_REQ => {
                let data = r.opt_part()?;
                let control = r.opt_part()?;
                Message::WriteReq(WriteRequest { data, control })
            }
            kind::WRITE_RESP => Message::WriteResp(r.ack()?),
            kind::AUDIT_CHALLENGE => {
                let field = r.u8()?;
                let width = elem_width(field).ok_or_else(|| malformed("unknown field"))?;
                Message::AuditChallenge {
                    field,
                    rho: r.take(width)?.to_vec(),
                }
            }
            kind::AUDIT_RESPONSE => {
                let field = r.u8()?;
                let width = elem_width(field).ok_or_else(|| malformed("unknown field"))?;
                let count = r.u32()? as usize;
                let y = r.take(count.checked_mul(width).ok_or_else(|| malformed("count"))?)?.to_vec();
                let control = match r.u8()? {
                    0 => None,
                    1 => Some(r.proof()?),
                    _ => return Err(malformed("control flag")),
                };
                Message::AuditResponse { field, y, control }
            }
            kind::ERROR => Message::Error {
                code: r.u16()?,
                detail: String::from_utf8_lossy(r.rest()).into_owned(),
            },
            other => return Err(WireError::UnknownType(other)),
        };
        if !r.b.is_empty() {
            return Err(malformed("trailing bytes"));
        }
        Ok(msg)
    }
}

fn malformed(what: &str) -> WireError {
    WireError::Protocol(format!("malformed payload: {what}"))
}

struct Cursor<'a> {
    b: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.b.len() < n {
            return Err(malformed("short payload"));
        }
        let (h, t) = self.b.split_at(n);
        self.b = t;
        Ok(h)
    }
    fn rest(&mut self) -> &'a [u8] {
        std::mem::take(&mut self.b)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(malformed("flag")),
        }
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8], WireError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn root(&mut self) -> Result<RootDigest, WireError> {
        Ok(RootDigest::from_slice(self.take(DIGEST_LEN)?).unwrap())
    }
    fn opt_root(&mut self) -> Result<Option<RootDigest>, WireError> {
        Ok(if self.flag()? { Some(self.root()?) } else { None })
    }
    fn layout(&mut self) -> Result<StoreLayout, WireError> {
        StoreLayout::decode(self.take(StoreLayout::ENCODED_LEN)?).ok_or_else(|| malformed("layout"))
    }
    fn ack(&mut self) -> Result<WriteAck, WireError> {
        Ok(WriteAck {
            root_m: self.root()?,
            root_w: self.opt_root()?,
        })
    }
    fn proof(&mut self) -> Result<BlockProof, WireError> {
        let blocks = self.bytes()?.to_vec();
        let (path, used) = MerklePath::decode(self.b).map_err(|_| malformed("merkle path"))?;
        self.take(used)?;
        Ok(BlockProof { blocks, path })
    }
    fn opt_part(&mut self) -> Result<Option<(u64, Vec<u8>)>, WireError> {
        if !self.flag()? {
            return Ok(None);
        }
        let at = self.u64()?;
        Ok(Some((at, self.bytes()?.to_vec())))
    }
}

/// Serializes one frame including its length prefix.
pub fn encode_frame(corr: u64, msg: &Message) -> Vec<u8> {
    let mut out = vec![0u8; 4];
    out.push(msg.kind());
    put_u64(&mut out, corr);
    msg.encode_payload(&mut out);
    let len = (out.len() - 4) as u32;
    out[..4].copy_from_slice(&len.to_be_bytes());
    out
}

/// Parses a complete frame (with length prefix) from `b`.
pub fn decode_frame(b: &[u8]) -> Result<(u64, Message), WireError> {
    if b.len() < 4 {
        return Err(WireError::Truncated);
    }
    let len = u32::from_be_bytes(b[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(WireError::Oversize(len));
    }
    if len < 9 {
        return Err(WireError::Protocol("frame shorter than its header".into()));
    }
    match b.len() - 4 {
        have if have < len => Err(WireError::Truncated),
        have if have > len => Err(WireError::Protocol("bytes after frame".into())),
        _ => {
            let corr = u64::from_be_bytes(b[5..13].try_into().unwrap());
            Ok((corr, Message::decode(b[4], &b[13..])?))
        }
    }
}

fn map_read_err(e: io::Error) -> WireError {
    match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated,
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => WireError::Timeout,
        _ => WireError::Io(e),
    }
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before any
/// byte of a new frame, and the frame's total size on success.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(u64, Message, usize)>, WireError> {
    let mut len_buf = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len_buf[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Truncated),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(map_read_err(e)),
        }
    }
    let len = u32::from_be_bytes(len_buf) as usize;
    if len > MAX_FRAME {
        return Err(WireError::Oversize(len));
    }
    if len < 9 {
        return Err(WireError::Protocol("frame shorter than its header".into()));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(map_read_err)?;
    let corr = u64::from_be_bytes(body[1..9].try_into().unwrap());
    let msg = Message::decode(body[0], &body[9..])?;
    Ok(Some((corr, msg, len + 4)))
}

/// Writes one frame and returns its size on the wire.
pub fn write_frame<W: Write>(w: &mut W, corr: u64, msg: &Message) -> Result<usize, WireError> {
    let frame = encode_frame(corr, msg);
    if frame.len() - 4 > MAX_FRAME {
        return Err(WireError::Oversize(frame.len() - 4));
    }
    w.write_all(&frame).map_err(map_read_err)?;
    Ok(frame.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merkle::{Side, Uncle};
    use proptest::prelude::*;

    #[test]
    fn challenge_layout() {
        let f = encode_frame(
            9,
            &Message::AuditChallenge {
                field: 1,
                rho: vec![1, 0, 0, 0, 0, 0, 0, 0],
            },
        );
        assert_eq!(
            f,
            [
                &[0, 0, 0, 18][..],
                &[kind::AUDIT_CHALLENGE],
                &9u64.to_be_bytes(),
                &[1],
                &[1, 0, 0, 0, 0, 0, 0, 0]
            ]
            .concat()
        );
        assert_eq!(decode_frame(&f[..f.len() - 1]).unwrap_err().to_string(), WireError::Truncated.to_string());
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(decode_frame(&[0xff, 0xff, 0xff, 0xff]), Err(WireError::Oversize(_))));
        let mut f = encode_frame(1, &Message::InfoReq);
        f[4] = 0x55;
        assert!(matches!(decode_frame(&f), Err(WireError::UnknownType(0x55))));
        let mut f = encode_frame(1, &Message::Hello { version: 1 });
        f.push(0);
        assert!(decode_frame(&f).is_err());
        let mut r: &[u8] = &[0, 0, 0, 20, 1, 2];
        assert!(matches!(read_frame(&mut r), Err(WireError::Truncated)));
        let mut r: &[u8] = &[];
        assert!(matches!(read_frame(&mut r), Ok(None)));
    }

    fn arb_root() -> impl Strategy<Value = RootDigest> {
        any::<[u8; 28]>().prop_map(RootDigest)
    }

    fn arb_proof() -> impl Strategy<Value = BlockProof> {
        (
            prop::collection::vec(any::<u8>(), 0..200),
            prop::collection::vec((any::<bool>(), any::<[u8; 28]>()), 0..6),
        )
            .prop_map(|(blocks, uncles)| BlockProof {
                blocks,
                path: MerklePath {
                    uncles: uncles
                        .into_iter()
                        .map(|(l, digest)| Uncle {
                            side: if l { Side::Left } else { Side::Right },
                            digest,
                        })
                        .collect(),
                },
            })
    }

    fn arb_layout() -> impl Strategy<Value = StoreLayout> {
        (1u64..1 << 40, prop::sample::select(vec![(1u8, 7u32), (2, 31)]), 0u32..300).prop_map(
            |(n_bytes, (field_id, chunk), record_len)| {
                let (m, n) = crate::field::matrix_shape(n_bytes, chunk as usize);
                StoreLayout {
                    field_id,
                    n_bytes,
                    m,
                    n,
                    chunk_bytes: chunk,
                    block_bytes: crate::params::block_bytes_for(chunk as usize) as u32,
                    record_len,
                }
            },
        )
    }

    fn arb_ack() -> impl Strategy<Value = WriteAck> {
        (arb_root(), prop::option::of(arb_root())).prop_map(|(root_m, root_w)| WriteAck { root_m, root_w })
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let bytes = || prop::collection::vec(any::<u8>(), 0..300);
        prop_oneof![
            any::<u16>().prop_map(|version| Message::Hello { version }),
            any::<u16>().prop_map(|version| Message::HelloAck { version }),
            Just(Message::InfoReq),
            prop::option::of((arb_layout(), arb_root(), prop::option::of(arb_root())))
                .prop_map(|i| Message::InfoResp(i.map(|(layout, root_m, root_w)| StoreInfo { layout, root_m, root_w }))),
            (arb_layout(), any::<bool>()).prop_map(|(layout, replace)| Message::InitBegin { layout, replace }),
            Just(Message::InitReady),
            bytes().prop_map(Message::InitData),
            bytes().prop_map(Message::InitControl),
            any::<u64>().prop_map(|received| Message::WindowAck { received }),
            Just(Message::InitEnd),
            arb_ack().prop_map(Message::InitAck),
            (any::<bool>(), any::<u64>(), any::<u64>()).prop_map(|(c, first, end)| Message::ReadReq {
                tree: if c { TreeId::Control } else { TreeId::Data },
                first,
                end
            }),
            arb_proof().prop_map(Message::ReadResp),
            (prop::option::of((any::<u64>(), bytes())), prop::option::of((any::<u64>(), bytes())))
                .prop_map(|(data, control)| Message::WriteReq(WriteRequest { data, control })),
            arb_ack().prop_map(Message::WriteResp),
            (any::<bool>(), any::<[u8; 32]>()).prop_map(|(wide, r)| {
                let (field, w) = if wide { (2, 32) } else { (1, 8) };
                Message::AuditChallenge { field, rho: r[..w].to_vec() }
            }),
            (any::<bool>(), 0usize..20, any::<u8>(), prop::option::of(arb_proof())).prop_map(
                |(wide, count, fill, control)| {
                    let (field, w) = if wide { (2, 32) } else { (1, 8) };
                    Message::AuditResponse { field, y: vec![fill; count * w], control }
                }
            ),
            (any::<u16>(), "[a-z ]{0,40}").prop_map(|(code, detail)| Message::Error { code, detail }),
        ]
    }

    proptest! {
        #[test]
        fn frame_round_trip(corr in any::<u64>(), msg in arb_message()) {
            let f = encode_frame(corr, &msg);
            prop_assert_eq!(decode_frame(&f).unwrap(), (corr, msg.clone()));
            let mut r: &[u8] = &f;
            let (c2, m2, size) = read_frame(&mut r).unwrap().unwrap();
            prop_assert_eq!((c2, m2, size), (corr, msg.clone(), f.len()));
            // Re-encoding reproduces the identical bytes.
            let (_, again) = decode_frame(&f).unwrap();
            prop_assert_eq!(encode_frame(corr, &again), f.clone());
            prop_assert!(decode_frame(&f[..f.len() - 1]).is_err());
        }

        #[test]
        fn decoding_garbage_never_panics(b in prop::collection::vec(any::<u8>(), 0..120)) {
            let _ = decode_frame(&b);
            let mut r: &[u8] = &b;
            let _ = read_frame(&mut r);
        }
    }
}
