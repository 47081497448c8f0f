//! Audit latency and traffic over a loopback daemon.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use curve25519_dalek::Scalar;
use ed25519_dalek::SigningKey;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{PorError, Reject};
use crate::field::{Field, Fp57};
use crate::params::{PorParams, Strategy};
use crate::por::ClientState;
use crate::pubpor::{pub_init, PublicVerifier, Ristretto};
use crate::store::{ByteStore, FileStore};
use crate::wire::{spawn, DaemonConfig, RemoteServer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Private,
    PrivateExternalized,
    Public,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Private => "private",
            BenchMode::PrivateExternalized => "private-externalized",
            BenchMode::Public => "public",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub size_bytes: u64,
    pub threads: usize,
    pub median_s: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub mode: BenchMode,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub sizes: Vec<u64>,
    pub threads: Vec<usize>,
    pub mode: BenchMode,
    /// Timed audits per cell; the median is reported.
    pub runs: usize,
    /// Holds the generated files and the daemon's store. Files already
    /// present with the right length are reused.
    pub work_dir: PathBuf,
    pub lambda: u32,
    pub seed: u64,
}

impl BenchOptions {
    pub fn new(sizes: Vec<u64>, work_dir: impl Into<PathBuf>) -> Self {
        BenchOptions {
            sizes,
            threads: vec![1],
            mode: BenchMode::Private,
            runs: 11,
            work_dir: work_dir.into(),
            lambda: 40,
            seed: 1,
        }
    }
}

/// Writes `len` pseudorandom bytes to `path` unless a file of that length
/// already exists there.
pub fn ensure_random_file(path: &Path, len: u64, seed: u64) -> io::Result<()> {
    if fs::metadata(path).map(|m| m.len() == len).unwrap_or(false) {
        return Ok(());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = BufWriter::new(File::create(path)?);
    let mut buf = vec![0u8; 1 << 20];
    let mut left = len;
    while left > 0 {
        let n = left.min(buf.len() as u64) as usize;
        rng.fill_bytes(&mut buf[..n]);
        out.write_all(&buf[..n])?;
        left -= n as u64;
    }
    out.flush()
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let k = xs.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        xs[k / 2]
    } else {
        (xs[k / 2 - 1] + xs[k / 2]) / 2.0
    }
}

type AuditFn = Box<dyn FnMut(&mut RemoteServer) -> Result<(), PorError>>;

fn prepare(
    mode: BenchMode,
    data: &FileStore,
    lambda: u32,
    remote: &mut RemoteServer,
    rng: &mut ChaCha20Rng,
) -> Result<AuditFn, PorError> {
    let n_bytes = data.len();
    let reject = || PorError::Rejected(Reject::CheckFailed);
    match mode {
        BenchMode::Private | BenchMode::PrivateExternalized => {
            let strategy = if mode == BenchMode::Private {
                Strategy::Local
            } else {
                Strategy::Externalized
            };
            let params = PorParams::derive::<Fp57>(n_bytes, lambda, 128, strategy)?;
            let (client, blob) = ClientState::<Fp57>::init(params, data, rng)?;
            remote.upload(client.layout(), data, blob.as_deref(), true)?;
            let mut r = ChaCha20Rng::seed_from_u64(rng.next_u64());
            Ok(Box::new(move |s| {
                let rho = Fp57::random_nonzero(&mut r);
                client.audit_with(s, rho)?.accepted().then_some(()).ok_or_else(reject)
            }))
        }
        BenchMode::Public => {
            let params = PorParams::derive::<Scalar>(n_bytes, lambda, 128, Strategy::Externalized)?;
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut seed);
            let (writer, blob) = pub_init::<Ristretto, _>(params, data, SigningKey::from_bytes(&seed), rng)?;
            remote.upload(writer.layout(), data, Some(&blob), true)?;
            let verifier = PublicVerifier::new(writer.manifest(0));
            let mut r = ChaCha20Rng::seed_from_u64(rng.next_u64());
            Ok(Box::new(move |s| {
                let rho = Scalar::random_nonzero(&mut r);
                verifier.audit_with(s, rho)?.accepted().then_some(()).ok_or_else(reject)
            }))
        }
    }
}

/// Times full audits (challenge, response, verification) against a daemon on
/// loopback, for every size and thread count. Every audit must accept.
pub fn bench_audit(opts: &BenchOptions) -> Result<Vec<BenchRow>, PorError> {
    fs::create_dir_all(&opts.work_dir)?;
    let mut rows = Vec::new();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    for &size in &opts.sizes {
        let path = opts.work_dir.join(format!("file-{size}.bin"));
        ensure_random_file(&path, size, opts.seed ^ size)?;
        let data = FileStore::open_read_only(&path)?;
        let store_dir = opts.work_dir.join(format!("store-{}-{size}", opts.mode.as_str()));
        let daemon = spawn(
            "127.0.0.1:0",
            DaemonConfig {
                data_dir: Some(store_dir.clone()),
                threads: 0,
            },
        )?;
        let result = (|| -> Result<Vec<BenchRow>, PorError> {
            let mut remote = RemoteServer::connect(&daemon.endpoint())?;
            let mut audit = prepare(opts.mode, &data, opts.lambda, &mut remote, &mut rng)?;
            let mut out = Vec::new();
            for &threads in &opts.threads {
                daemon.set_threads(threads);
                audit(&mut remote)?;
                let mut times = Vec::with_capacity(opts.runs);
                let mut traffic = remote.traffic();
                for _ in 0..opts.runs.max(1) {
                    remote.reset_traffic();
                    let start = Instant::now();
                    audit(&mut remote)?;
                    times.push(start.elapsed().as_secs_f64());
                    traffic = remote.traffic();
                }
                out.push(BenchRow {
                    size_bytes: size,
                    threads,
                    median_s: median(&mut times),
                    bytes_up: traffic.up,
                    bytes_down: traffic.down,
                    mode: opts.mode,
                });
            }
            Ok(out)
        })();
        daemon.shutdown();
        let _ = fs::remove_dir_all(&store_dir);
        rows.extend(result?);
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "size_bytes,threads,median_s,bytes_up,bytes_down,mode";

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{},{}",
            r.size_bytes,
            r.threads,
            r.median_s,
            r.bytes_up,
            r.bytes_down,
            r.mode.as_str()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn small_private_bench() {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = BenchOptions::new(vec![100_000], dir.path());
        opts.runs = 3;
        let rows = bench_audit(&opts).unwrap();
        assert_eq!(rows.len(), 1);
        let m = PorParams::derive::<Fp57>(100_000, 40, 128, Strategy::Local).unwrap().m;
        assert_eq!(rows[0].bytes_up + rows[0].bytes_down, 8 * (m + 1) + 33);
        let csv = to_csv(&rows);
        assert!(csv.starts_with(CSV_HEADER) && csv.lines().count() == 2);
    }
}
