use std::io;

use thiserror::Error;

use crate::field::FieldError;
use crate::merkle::MerkleError;

/// Why the client refused a server response. Any of these is an integrity alarm.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Reject {
    #[error("merkle proof does not match the trusted root")]
    MerkleMismatch,
    #[error("control column failed authenticated decryption")]
    ControlDecrypt,
    #[error("response has {got} elements, expected {expected}")]
    ResponseLength { expected: usize, got: usize },
    #[error("response bytes have the wrong length")]
    BlockLength,
    #[error("audit equation does not hold")]
    CheckFailed,
    #[error("server reported a root that differs from the client's")]
    ServerRootMismatch,
    #[error("malformed or non-canonical element from server")]
    BadEncoding,
    #[error("server did not send the control matrix")]
    MissingControl,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("timed out")]
    Timeout,
    #[error("connection refused: {0}")]
    ConnectionRefused(String),
    #[error("frame of {0} bytes exceeds limit")]
    Oversize(usize),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("server error {code}: {detail}")]
    Server { code: u16, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum PorError {
    #[error("rejected: {0}")]
    Rejected(#[from] Reject),
    #[error("parameter constraint violated: {0}")]
    Params(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
    #[error("extraction needs at least {need} transcripts with more than half accepted; have {have} ({accepted} accepted)")]
    ExtractPrecondition { have: usize, accepted: usize, need: usize },
    #[error("extraction failed: {distinct} distinct accepted challenges, {needed} needed")]
    InsufficientPoints { distinct: usize, needed: usize },
    #[error("transcripts are inconsistent with any single file")]
    Inconsistent,
    #[error("malformed record: {0}")]
    Format(String),
    #[error("transport: {0}")]
    Transport(#[from] WireError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl PorError {
    /// True for outcomes that indicate tampering or data loss rather than an
    /// operational failure.
    pub fn is_integrity_failure(&self) -> bool {
        matches!(
            self,
            PorError::Rejected(_) | PorError::Inconsistent | PorError::InsufficientPoints { .. }
        )
    }
}
