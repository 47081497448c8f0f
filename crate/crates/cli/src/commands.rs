use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use por_core::error::{PorError, Reject, WireError};
use por_core::field::{Field, Fp57};
use por_core::harness::{bench_audit, BenchMode, BenchOptions};
use por_core::params::{PorParams, Strategy};
use por_core::por::state::{
    decode_client, encode_client, peek_header, MODE_EXTERNALIZED, MODE_LOCAL, MODE_PUBLIC_WRITER,
};
use por_core::por::{AuditReply, AuditTranscript, ClientState, StorageServer, StoreLayout, Verdict, WriteAck};
use por_core::pubpor::{
    decode_writer, encode_writer, pub_init, Manifest, PublicVerifier, Ristretto, Scalar, SigningKey,
    WriterState,
};
use por_core::store::{ByteStore, FileStore};
use por_core::wire::message::code;
use por_core::wire::{expected_audit_bytes, spawn, DaemonConfig, RemoteServer};
use rand::rngs::OsRng;
use sha2::{Digest, Sha256};

use crate::files::{default_manifest, parse_size, transcript_files, write_atomic};
use crate::report::{
    emit, AuditEntry, AuditReport, BenchReport, BenchRowReport, CliError, ExtractReport, InitReport,
    ReadReport, WriteReport,
};
use crate::{BenchModeArg, Cli, Command, Mode};

struct Ctx {
    endpoint: String,
    state: PathBuf,
    manifest: PathBuf,
    mode: Option<Mode>,
    lambda: u32,
    json: bool,
    timeout: Duration,
}

enum Session {
    Private(ClientState<Fp57>),
    Writer(WriterState<Ristretto>),
    Verifier(PublicVerifier<Ristretto>),
}

impl Session {
    fn shape(&self) -> (u64, u64, u64) {
        match self {
            Session::Private(c) => (c.params().n_bytes, c.params().m, c.params().n),
            Session::Writer(w) => (w.params().n_bytes, w.params().m, w.params().n),
            Session::Verifier(v) => {
                let m = v.manifest();
                (m.n_bytes, m.m, m.n)
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Ctx {
        manifest: cli.manifest.clone().unwrap_or_else(|| default_manifest(&cli.state)),
        endpoint: cli.endpoint,
        state: cli.state,
        mode: cli.mode,
        lambda: cli.lambda,
        json: cli.json,
        timeout: Duration::from_secs(cli.timeout.max(1)),
    };
    match cli.command {
        Command::Init { file, force } => init(&ctx, &file, force),
        Command::Read { offset, length, out } => read(&ctx, offset, length, out.as_deref()),
        Command::Write {
            offset,
            data,
            hex,
            from,
        } => {
            let bytes = match (data, hex, from) {
                (Some(d), _, _) => d.into_bytes(),
                (_, Some(h), _) => ::hex::decode(h.trim()).map_err(|e| CliError::Usage(format!("--hex: {e}")))?,
                (_, _, Some(p)) => fs::read(p)?,
                _ => return Err(CliError::Usage("one of --data, --hex or --from is required".into())),
            };
            write(&ctx, offset, &bytes)
        }
        Command::Audit { repeat, save } => audit(&ctx, repeat, save.as_deref()),
        Command::Extract { transcripts, out } => extract(&ctx, &transcripts, &out),
        Command::Bench {
            sizes,
            threads,
            bench_mode,
            runs,
            work_dir,
            csv,
        } => bench(&ctx, &sizes, threads, bench_mode, runs, work_dir, csv.as_deref()),
        Command::Serve {
            listen,
            data_dir,
            threads,
        } => serve(&ctx, &listen, data_dir, threads),
    }
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn connect(ctx: &Ctx) -> Result<RemoteServer, CliError> {
    Ok(RemoteServer::connect_timeout(&ctx.endpoint, ctx.timeout)?)
}

fn mode_of(ctx: &Ctx, session: &Session) -> Mode {
    match session {
        Session::Private(c) if c.params().strategy == Strategy::Externalized => Mode::PrivateExtern,
        Session::Private(_) => Mode::PrivateLocal,
        Session::Writer(_) => Mode::PublicWriter,
        Session::Verifier(_) => ctx.mode.unwrap_or(Mode::PublicVerifier),
    }
}

fn load_manifest(ctx: &Ctx) -> Result<Manifest<Ristretto>, CliError> {
    let bytes = fs::read(&ctx.manifest)
        .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", ctx.manifest.display())))?;
    Ok(Manifest::decode(&bytes, None)?)
}

fn load(ctx: &Ctx) -> Result<Session, CliError> {
    if ctx.mode == Some(Mode::PublicVerifier) {
        return Ok(Session::Verifier(PublicVerifier::new(load_manifest(ctx)?)));
    }
    let bytes = match fs::read(&ctx.state) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(CliError::Usage(format!(
                "no state file at {}; run init, or use --mode public-verifier with a manifest",
                ctx.state.display()
            )))
        }
        Err(e) => return Err(e.into()),
    };
    let (mode_byte, _) = peek_header(&bytes)?;
    let found = match mode_byte {
        MODE_LOCAL => Mode::PrivateLocal,
        MODE_EXTERNALIZED => Mode::PrivateExtern,
        MODE_PUBLIC_WRITER => Mode::PublicWriter,
        other => return Err(CliError::Operational(format!("unknown mode {other} in state file"))),
    };
    if let Some(want) = ctx.mode {
        if want != found {
            return Err(CliError::Usage(format!(
                "--mode {} does not match the state file, which is {}",
                want.as_str(),
                found.as_str()
            )));
        }
    }
    Ok(match found {
        Mode::PublicWriter => Session::Writer(decode_writer(&bytes)?),
        _ => Session::Private(decode_client(&bytes)?),
    })
}

fn save(ctx: &Ctx, session: &Session) -> Result<(), CliError> {
    match session {
        Session::Private(c) => write_atomic(&ctx.state, &encode_client(c))?,
        Session::Writer(w) => {
            write_atomic(&ctx.state, &encode_writer(w))?;
            write_atomic(&ctx.manifest, &w.manifest(now_secs()).encode())?;
        }
        Session::Verifier(_) => {}
    }
    Ok(())
}

fn upload(
    remote: &mut RemoteServer,
    layout: StoreLayout,
    data: &dyn ByteStore,
    control: Option<&[u8]>,
    replace: bool,
) -> Result<WriteAck, CliError> {
    remote.upload(layout, data, control, replace).map_err(|e| match e {
        PorError::Transport(WireError::Server { code: code::EXISTS, .. }) => {
            CliError::Operational("the server already stores a file; pass --force to replace it".into())
        }
        other => other.into(),
    })
}

fn init(ctx: &Ctx, file: &Path, force: bool) -> Result<(), CliError> {
    let mode = ctx.mode.unwrap_or(Mode::PrivateLocal);
    if mode == Mode::PublicVerifier {
        return Err(CliError::Usage("a verifier cannot initialize a store".into()));
    }
    if !force && (ctx.state.exists() || (mode == Mode::PublicWriter && ctx.manifest.exists())) {
        return Err(CliError::Usage(format!(
            "{} already exists; pass --force to replace it",
            ctx.state.display()
        )));
    }
    let data = FileStore::open_read_only(file)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", file.display())))?;
    if data.is_empty() {
        return Err(CliError::Usage(format!("{} is empty", file.display())));
    }
    let mut remote = connect(ctx)?;
    let (session, params, layout, ack) = match mode {
        Mode::PublicWriter => {
            let params = PorParams::derive::<Scalar>(data.len(), ctx.lambda, 128, Strategy::Externalized)?;
            let signing = SigningKey::generate(&mut OsRng);
            let (writer, blob) = pub_init::<Ristretto, _>(params.clone(), &data, signing, &mut OsRng)?;
            let layout = writer.layout();
            let ack = upload(&mut remote, layout, &data, Some(&blob), force)?;
            (Session::Writer(writer), params, layout, ack)
        }
        _ => {
            let strategy = if mode == Mode::PrivateExtern {
                Strategy::Externalized
            } else {
                Strategy::Local
            };
            let params = PorParams::derive::<Fp57>(data.len(), ctx.lambda, 128, strategy)?;
            let (client, blob) = ClientState::<Fp57>::init(params.clone(), &data, &mut OsRng)?;
            let layout = client.layout();
            let ack = upload(&mut remote, layout, &data, blob.as_deref(), force)?;
            (Session::Private(client), params, layout, ack)
        }
    };
    let expected_root = match &session {
        Session::Private(c) => c.root_m(),
        Session::Writer(w) => w.roots().0,
        Session::Verifier(_) => unreachable!(),
    };
    if ack.root_m != expected_root {
        return Err(CliError::Integrity("the server computed a different root for the uploaded file".into()));
    }
    save(ctx, &session)?;
    let report = InitReport {
        ok: true,
        command: "init",
        mode: mode.as_str(),
        n_bytes: params.n_bytes,
        m: params.m,
        n: params.n,
        t: params.t,
        e: params.extraction_count(),
        expected_audit_bytes: expected_audit_bytes(&layout).unwrap_or(0),
        state: ctx.state.display().to_string(),
        manifest: (mode == Mode::PublicWriter).then(|| ctx.manifest.display().to_string()),
    };
    emit(ctx.json, &report, || {
        format!(
            "initialized {} bytes ({})\nm={} n={} t={} e={} expected_audit_bytes={}",
            report.n_bytes, report.mode, report.m, report.n, report.t, report.e, report.expected_audit_bytes
        )
    });
    Ok(())
}

fn read(ctx: &Ctx, offset: u64, length: u64, out: Option<&Path>) -> Result<(), CliError> {
    let session = load(ctx)?;
    let (n_bytes, _, _) = session.shape();
    if offset.checked_add(length).is_none_or(|end| end > n_bytes) {
        return Err(CliError::Usage(format!("range {offset}+{length} is beyond the file ({n_bytes} bytes)")));
    }
    let mut remote = connect(ctx)?;
    let bytes = match &session {
        Session::Private(c) => c.read_bytes(&mut remote, offset, length)?,
        Session::Writer(w) => w.read_bytes(&mut remote, offset, length)?,
        Session::Verifier(v) => v.read_bytes(&mut remote, offset, length)?,
    };
    if let Some(p) = out {
        fs::write(p, &bytes)?;
    }
    if ctx.json || out.is_some() {
        let report = ReadReport {
            ok: true,
            command: "read",
            mode: mode_of(ctx, &session).as_str(),
            offset,
            length,
            hex: out.is_none().then(|| ::hex::encode(&bytes)),
            out: out.map(|p| p.display().to_string()),
        };
        emit(ctx.json, &report, || format!("read {length} verified bytes into {}", report.out.as_deref().unwrap_or("")));
    } else {
        io::stdout().write_all(&bytes)?;
    }
    Ok(())
}

fn write(ctx: &Ctx, offset: u64, bytes: &[u8]) -> Result<(), CliError> {
    let mut session = load(ctx)?;
    let (n_bytes, _, _) = session.shape();
    if offset.checked_add(bytes.len() as u64).is_none_or(|end| end > n_bytes) {
        return Err(CliError::Usage(format!(
            "range {offset}+{} is beyond the file ({n_bytes} bytes)",
            bytes.len()
        )));
    }
    let mut remote = connect(ctx)?;
    // Cells are committed one at a time, so a failure part-way still leaves
    // earlier cells written on the server. Persist whatever was committed.
    let result = match &mut session {
        Session::Private(c) => {
            let before = c.clone();
            let r = c.write_bytes(&mut remote, offset, bytes);
            if *c != before {
                save(ctx, &session)?;
            }
            r
        }
        Session::Writer(w) => {
            let before = w.epoch();
            let r = w.write_bytes(&mut remote, offset, bytes);
            if w.epoch() != before {
                save(ctx, &session)?;
            }
            r
        }
        Session::Verifier(_) => return Err(CliError::Usage("a verifier cannot write".into())),
    };
    result?;
    let report = WriteReport {
        ok: true,
        command: "write",
        mode: mode_of(ctx, &session).as_str(),
        offset,
        length: bytes.len() as u64,
    };
    emit(ctx.json, &report, || format!("wrote {} bytes at {offset}", bytes.len()));
    Ok(())
}

fn rho_hash<F: Field>(rho: &F) -> String {
    ::hex::encode(Sha256::digest(rho.to_canonical_vec()))
}

struct AuditRun {
    entries: Vec<AuditEntry>,
    accepted: u32,
    rejected: u32,
}

fn audit_loop<F: Field>(
    remote: &mut RemoteServer,
    repeat: u32,
    save: Option<&Path>,
    check: impl Fn(F, &AuditReply<F>) -> Result<(), Reject>,
) -> Result<AuditRun, CliError> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let mut run = AuditRun {
        entries: Vec::new(),
        accepted: 0,
        rejected: 0,
    };
    for k in 0..repeat {
        let rho = F::random_nonzero(&mut OsRng);
        remote.reset_traffic();
        let start = Instant::now();
        let reply = remote.audit::<F>(rho);
        let server_s = start.elapsed().as_secs_f64();
        let traffic = remote.traffic();
        let (y, outcome, client_s) = match reply {
            Ok(reply) => {
                let start = Instant::now();
                let outcome = check(rho, &reply);
                (Some(reply.y), outcome, start.elapsed().as_secs_f64())
            }
            Err(PorError::Rejected(r)) => (None, Err(r), 0.0),
            Err(e) => return Err(e.into()),
        };
        let verdict = if outcome.is_ok() {
            Verdict::Accept
        } else {
            Verdict::Reject
        };
        let mut saved = None;
        if let (Some(dir), Some(y)) = (save, y) {
            let mut buf = Vec::new();
            AuditTranscript { rho, y, verdict }.encode(&mut buf);
            let path = dir.join(format!("audit-{stamp}-{k:06}.port"));
            write_atomic(&path, &buf)?;
            saved = Some(path.display().to_string());
        }
        run.entries.push(AuditEntry {
            index: k,
            rho_hash: rho_hash(&rho),
            verdict: if verdict.accepted() { "accept" } else { "reject" },
            reason: outcome.as_ref().err().map(|r| r.to_string()),
            server_s,
            client_s,
            bytes_up: traffic.up,
            bytes_down: traffic.down,
            transcript: saved,
        });
        if verdict.accepted() {
            run.accepted += 1;
        } else {
            run.rejected += 1;
            break;
        }
    }
    Ok(run)
}

fn audit(ctx: &Ctx, repeat: u32, save: Option<&Path>) -> Result<(), CliError> {
    let session = load(ctx)?;
    if let Some(dir) = save {
        fs::create_dir_all(dir)?;
    }
    let mut remote = connect(ctx)?;
    let run = match &session {
        Session::Private(c) => audit_loop::<Fp57>(&mut remote, repeat, save, |r, y| c.check_reply(r, y))?,
        Session::Writer(w) => audit_loop::<Scalar>(&mut remote, repeat, save, |r, y| w.check_reply(r, y))?,
        Session::Verifier(v) => audit_loop::<Scalar>(&mut remote, repeat, save, |r, y| v.check_reply(r, y))?,
    };
    let (_, m, n) = session.shape();
    let report = AuditReport {
        ok: run.rejected == 0,
        command: "audit",
        mode: mode_of(ctx, &session).as_str(),
        m,
        n,
        requested: repeat,
        accepted: run.accepted,
        rejected: run.rejected,
        audits: run.entries,
    };
    emit(ctx.json, &report, || {
        let mut s = String::new();
        for a in &report.audits {
            s.push_str(&format!(
                "audit {}/{}: {}{} (server {:.4} s, client {:.4} s, up {} B, down {} B)\n",
                a.index + 1,
                repeat,
                a.verdict,
                a.reason.as_ref().map(|r| format!(": {r}")).unwrap_or_default(),
                a.server_s,
                a.client_s,
                a.bytes_up,
                a.bytes_down
            ));
        }
        s.push_str(&format!("{} accepted, {} rejected", report.accepted, report.rejected));
        s
    });
    if report.rejected > 0 {
        return Err(CliError::Reported(2));
    }
    Ok(())
}

fn load_transcripts<F: Field>(files: &[PathBuf]) -> Result<Vec<AuditTranscript<F>>, CliError> {
    let mut out = Vec::new();
    for f in files {
        let bytes = fs::read(f)?;
        let ts = AuditTranscript::<F>::decode_all(&bytes)
            .map_err(|e| CliError::Operational(format!("{}: {e}", f.display())))?;
        out.extend(ts);
    }
    Ok(out)
}

fn extract_with<F: Field>(
    ctx: &Ctx,
    mode: Mode,
    files: &[PathBuf],
    out: &Path,
    run: impl Fn(&[AuditTranscript<F>]) -> Result<Vec<u8>, PorError>,
) -> Result<(), CliError> {
    let ts = load_transcripts::<F>(files)?;
    let accepted: Vec<_> = ts.iter().filter(|t| t.verdict.accepted()).collect();
    let mut distinct: Vec<Vec<u8>> = accepted.iter().map(|t| t.rho.to_canonical_vec()).collect();
    distinct.sort();
    distinct.dedup();
    let bytes = run(&ts).map_err(|e| {
        let msg = format!(
            "{e} ({} transcripts, {} accepted, {} distinct accepted challenges)",
            ts.len(),
            accepted.len(),
            distinct.len()
        );
        if e.is_integrity_failure() {
            CliError::Integrity(msg)
        } else {
            CliError::Operational(msg)
        }
    })?;
    write_atomic(out, &bytes)?;
    let report = ExtractReport {
        ok: true,
        command: "extract",
        mode: mode.as_str(),
        transcripts: ts.len(),
        accepted: accepted.len(),
        distinct_accepted: distinct.len(),
        n_bytes: bytes.len() as u64,
        out: out.display().to_string(),
    };
    emit(ctx.json, &report, || {
        format!(
            "extracted {} bytes to {} from {} transcripts ({} distinct accepted)",
            report.n_bytes, report.out, report.transcripts, report.distinct_accepted
        )
    });
    Ok(())
}

fn extract(ctx: &Ctx, dir: &Path, out: &Path) -> Result<(), CliError> {
    let session = load(ctx)?;
    let files = transcript_files(dir)
        .map_err(|e| CliError::Usage(format!("cannot list {}: {e}", dir.display())))?;
    if files.is_empty() {
        return Err(CliError::Usage(format!("no .port transcript files in {}", dir.display())));
    }
    let mode = mode_of(ctx, &session);
    match &session {
        Session::Private(c) => extract_with::<Fp57>(ctx, mode, &files, out, |ts| c.extract(ts)),
        Session::Writer(w) => {
            let v = PublicVerifier::new(w.manifest(now_secs()));
            extract_with::<Scalar>(ctx, mode, &files, out, |ts| v.extract(ts))
        }
        Session::Verifier(v) => extract_with::<Scalar>(ctx, mode, &files, out, |ts| v.extract(ts)),
    }
}

fn bench(
    ctx: &Ctx,
    sizes: &[String],
    threads: Vec<usize>,
    mode: BenchModeArg,
    runs: usize,
    work_dir: Option<PathBuf>,
    csv: Option<&Path>,
) -> Result<(), CliError> {
    let sizes = sizes
        .iter()
        .map(|s| parse_size(s).ok_or_else(|| CliError::Usage(format!("bad size {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if sizes.contains(&0) || threads.is_empty() || runs == 0 {
        return Err(CliError::Usage("sizes, thread counts and runs must be nonzero".into()));
    }
    let temp = work_dir.is_none();
    let dir = work_dir.unwrap_or_else(|| std::env::temp_dir().join(format!("por-bench-{}", std::process::id())));
    let mut opts = BenchOptions::new(sizes, &dir);
    opts.threads = threads;
    opts.runs = runs;
    opts.lambda = ctx.lambda;
    opts.mode = match mode {
        BenchModeArg::Private => BenchMode::Private,
        BenchModeArg::PrivateExtern => BenchMode::PrivateExternalized,
        BenchModeArg::Public => BenchMode::Public,
    };
    let rows = bench_audit(&opts);
    if temp {
        let _ = fs::remove_dir_all(&dir);
    }
    let rows = rows?;
    let table = por_core::harness::to_csv(&rows);
    if let Some(p) = csv {
        write_atomic(p, table.as_bytes())?;
    }
    let report = BenchReport {
        ok: true,
        command: "bench",
        rows: rows
            .iter()
            .map(|r| BenchRowReport {
                size_bytes: r.size_bytes,
                threads: r.threads,
                median_s: r.median_s,
                bytes_up: r.bytes_up,
                bytes_down: r.bytes_down,
                mode: r.mode.as_str(),
            })
            .collect(),
    };
    emit(ctx.json, &report, || table.trim_end().to_string());
    Ok(())
}

fn serve(ctx: &Ctx, listen: &str, data_dir: Option<PathBuf>, threads: usize) -> Result<(), CliError> {
    let handle = spawn(listen, DaemonConfig { data_dir, threads })?;
    if ctx.json {
        println!("{{\"ok\":true,\"command\":\"serve\",\"listen\":\"{}\"}}", handle.local_addr());
    } else {
        println!("listening on {}", handle.local_addr());
    }
    let _ = io::stdout().flush();
    handle.join();
    Ok(())
}
