//! Binary client/server protocol and the storage daemon.

pub mod client;
pub mod daemon;
pub mod message;

pub use client::{audit_wire_bytes, expected_audit_bytes, RemoteServer, Traffic};
pub use daemon::{spawn, DaemonConfig, DaemonHandle};
pub use message::{decode_frame, encode_frame, Message, DEFAULT_PORT, MAX_FRAME};
