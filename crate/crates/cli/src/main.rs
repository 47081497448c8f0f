//! `por`: client and server for dynamic proof-of-retrievability storage.
//!
//! Exit codes: 0 success, 1 usage or operational failure, 2 integrity
//! failure (a rejected audit, read or write).

mod commands;
mod files;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Secret points and control matrix kept in the state file.
    PrivateLocal,
    /// Control matrix stored encrypted on the server.
    PrivateExtern,
    /// Owner of a publicly verifiable store.
    PublicWriter,
    /// Third party holding only a manifest.
    PublicVerifier,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PrivateLocal => "private-local",
            Mode::PrivateExtern => "private-extern",
            Mode::PublicWriter => "public-writer",
            Mode::PublicVerifier => "public-verifier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchModeArg {
    Private,
    PrivateExtern,
    Public,
}

#[derive(Debug, Parser)]
#[command(name = "por", version, about = "Proof-of-retrievability storage client and server")]
pub struct Cli {
    /// Server address, host:port.
    #[arg(long, global = true, env = "POR_ENDPOINT", default_value = "127.0.0.1:7007")]
    pub endpoint: String,
    /// Client state file.
    #[arg(long, global = true, default_value = "por.state")]
    pub state: PathBuf,
    /// Defaults to the mode recorded in the state file, or private-local for init.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, global = true, default_value_t = 40)]
    pub lambda: u32,
    /// Public manifest; defaults to the state path with a `.manifest` suffix.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Connection and reply timeout in seconds.
    #[arg(long, global = true, default_value_t = 60)]
    pub timeout: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Preprocess a file, upload it and write the state file.
    Init {
        file: PathBuf,
        /// Overwrite existing state and replace the server's file.
        #[arg(long)]
        force: bool,
    },
    /// Verified read of a byte range.
    Read {
        #[arg(long)]
        offset: u64,
        #[arg(long)]
        length: u64,
        /// Write the bytes here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verified write of a byte range.
    Write {
        #[arg(long)]
        offset: u64,
        #[arg(long, group = "src")]
        data: Option<String>,
        #[arg(long, group = "src")]
        hex: Option<String>,
        #[arg(long, group = "src")]
        from: Option<PathBuf>,
    },
    /// Challenge the server and check its response.
    Audit {
        #[arg(long, default_value_t = 1)]
        repeat: u32,
        /// Save one transcript file per audit in this directory.
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Rebuild the file from saved audit transcripts.
    Extract {
        /// Directory of transcript files.
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time audits against a loopback daemon.
    Bench {
        /// Comma-separated sizes such as 1MB,10MB,1GiB.
        #[arg(long, value_delimiter = ',', default_value = "1MB,10MB")]
        sizes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        threads: Vec<usize>,
        #[arg(long = "bench-mode", value_enum, default_value = "private")]
        bench_mode: BenchModeArg,
        #[arg(long, default_value_t = 11)]
        runs: usize,
        /// Holds generated files; a temporary directory when unset.
        #[arg(long)]
        work_dir: Option<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the storage daemon.
    Serve {
        #[arg(long, default_value = "0.0.0.0:7007")]
        listen: String,
        /// Persist the store here; in memory when unset.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Worker threads per audit; 0 uses all cores.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let json = cli.json;
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report::print_error(&e, json);
            ExitCode::from(e.exit_code())
        }
    }
}
