//! Errors, exit codes and printed reports.

use std::fmt;

use por_core::error::{PorError, WireError};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Operational(String),
    Integrity(String),
    /// Already described in the printed report; only the exit code remains.
    Reported(u8),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Operational(_) => 1,
            CliError::Integrity(_) => 2,
            CliError::Reported(c) => *c,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Operational(_) => "operational",
            CliError::Integrity(_) => "integrity",
            CliError::Reported(_) => "reported",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Operational(m) | CliError::Integrity(m) => m,
            CliError::Reported(_) => "",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl From<PorError> for CliError {
    fn from(e: PorError) -> Self {
        if e.is_integrity_failure() {
            CliError::Integrity(e.to_string())
        } else {
            CliError::Operational(e.to_string())
        }
    }
}

impl From<WireError> for CliError {
    fn from(e: WireError) -> Self {
        PorError::from(e).into()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Operational(e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    ok: bool,
    error: ErrorBody<'a>,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    exit_code: u8,
    message: &'a str,
}

pub fn print_error(e: &CliError, json: bool) {
    if let CliError::Reported(_) = e {
        return;
    }
    if json {
        let r = ErrorReport {
            ok: false,
            error: ErrorBody {
                kind: e.kind(),
                exit_code: e.exit_code(),
                message: e.message(),
            },
        };
        println!("{}", serde_json::to_string(&r).unwrap_or_default());
    } else {
        eprintln!("por: {e}");
    }
}

/// Prints `value` as one JSON line, or `text` otherwise.
pub fn emit<T: Serialize>(json: bool, value: &T, text: impl FnOnce() -> String) {
    if json {
        println!("{}", serde_json::to_string(value).expect("report serializes"));
    } else {
        println!("{}", text());
    }
}

#[derive(Debug, Serialize)]
pub struct InitReport {
    pub ok: bool,
    pub command: &'static str,
    pub mode: &'static str,
    pub n_bytes: u64,
    pub m: u64,
    pub n: u64,
    pub t: u64,
    pub e: u64,
    pub expected_audit_bytes: u64,
    pub state: String,
    pub manifest: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AuditEntry {
    pub index: u32,
    pub rho_hash: String,
    pub verdict: &'static str,
    pub reason: Option<String>,
    pub server_s: f64,
    pub client_s: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub transcript: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct AuditReport {
    pub ok: bool,
    pub command: &'static str,
    pub mode: &'static str,
    pub m: u64,
    pub n: u64,
    pub requested: u32,
    pub accepted: u32,
    pub rejected: u32,
    pub audits: Vec<AuditEntry>,
}

#[derive(Debug, Serialize)]
pub struct ReadReport {
    pub ok: bool,
    pub command: &'static str,
    pub mode: &'static str,
    pub offset: u64,
    pub length: u64,
    pub hex: Option<String>,
    pub out: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct WriteReport {
    pub ok: bool,
    pub command: &'static str,
    pub mode: &'static str,
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Serialize)]
pub struct ExtractReport {
    pub ok: bool,
    pub command: &'static str,
    pub mode: &'static str,
    pub transcripts: usize,
    pub accepted: usize,
    pub distinct_accepted: usize,
    pub n_bytes: u64,
    pub out: String,
}

#[derive(Debug, Serialize)]
pub struct BenchRowReport {
    pub size_bytes: u64,
    pub threads: usize,
    pub median_s: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub mode: &'static str,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub ok: bool,
    pub command: &'static str,
    pub rows: Vec<BenchRowReport>,
}
