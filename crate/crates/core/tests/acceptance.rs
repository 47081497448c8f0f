//! Acceptance checks, run in order on one thread so the timing criteria are
//! not disturbed by each other. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use por_core::field::{Field, Fp57, Zmod};
use por_core::harness::{
    bench_audit, forgery_bound, run_authenticity_game, run_retrievability_game, Adversary,
    BenchMode, BenchOptions, BenchRow, GameConfig,
};
use por_core::merkle::{hash_blocks, mt_verify, root_from_leaves, MerkleTree, Side};
use por_core::params::{ParamOptions, PorParams, Strategy};
use por_core::por::{extract_file, AuditTranscript, ClientState, ExtractShape, ServerState, Verdict};
use por_core::pubpor::{
    pub_init, pub_init_with_secrets, Group, PublicVerifier, Ristretto, Scalar, SigningKey, Toy23,
    WriterState,
};
use por_core::store::{ByteStore, MemStore};
use por_core::wire::{audit_wire_bytes, spawn, DaemonConfig, RemoteServer};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = Result<String, String>;

struct Line {
    id: &'static str,
    status: &'static str,
    title: &'static str,
    detail: String,
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_bytes(len: usize, r: &mut impl RngCore) -> Vec<u8> {
    let mut b = vec![0u8; len];
    r.fill_bytes(&mut b);
    b
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(id: &'static str, title: &'static str, f: impl FnOnce() -> Check) -> Line {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (status, detail) = match outcome {
        Ok(d) => ("PASS", format!("{d} [{secs:.1} s]")),
        Err(d) => ("FAIL", format!("{d} [{secs:.1} s]")),
    };
    let line = Line {
        id,
        status,
        title,
        detail,
    };
    print_line(&line);
    line
}

fn print_line(l: &Line) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{}] {} {}: {}", l.status, l.id, l.title, l.detail);
    let _ = out.flush();
}

// End-to-end correctness over the wire.

fn private_store(bytes: &[u8], strategy: Strategy, seed: u64) -> (por_core::wire::DaemonHandle, ClientState<Fp57>) {
    let daemon = spawn("127.0.0.1:0", DaemonConfig::default()).unwrap();
    let params = PorParams::derive::<Fp57>(bytes.len() as u64, 40, 128, strategy).unwrap();
    let data = MemStore::new(bytes.to_vec());
    let (client, blob) = ClientState::<Fp57>::init(params, &data, &mut rng(seed)).unwrap();
    let mut remote = RemoteServer::connect(&daemon.endpoint()).unwrap();
    let ack = remote.upload(client.layout(), &data, blob.as_deref(), false).unwrap();
    assert_eq!(ack.root_m, client.root_m());
    (daemon, client)
}

fn end_to_end() -> Check {
    let start = Instant::now();
    let mut r = rng(100);
    let (mut ops, mut audits, mut stores) = (0, 0, 0);
    for (label, len) in [("1KB", 1_000usize), ("1MB", 1_000_000), ("10MB", 10_000_000)] {
        for strategy in [Strategy::Local, Strategy::Externalized] {
            let mut oracle = random_bytes(len, &mut r);
            let (daemon, mut client) = private_store(&oracle, strategy, r.gen());
            let mut remote = RemoteServer::connect(&daemon.endpoint()).map_err(|e| e.to_string())?;
            for op in 0..100 {
                let span = r.gen_range(1..=64.min(len));
                let off = r.gen_range(0..=len - span);
                if op % 2 == 0 {
                    let new = random_bytes(span, &mut r);
                    client
                        .write_bytes(&mut remote, off as u64, &new)
                        .map_err(|e| format!("{label} {strategy:?} write {op}: {e}"))?;
                    oracle[off..off + span].copy_from_slice(&new);
                } else {
                    let got = client
                        .read_bytes(&mut remote, off as u64, span as u64)
                        .map_err(|e| format!("{label} {strategy:?} read {op}: {e}"))?;
                    ensure(got == oracle[off..off + span], || format!("{label} read {op} returned wrong bytes"))?;
                }
                ops += 1;
            }
            for k in 0..50 {
                let out = client.audit(&mut remote, &mut r).map_err(|e| e.to_string())?;
                ensure(out.accepted(), || format!("{label} {strategy:?} audit {k} rejected: {:?}", out.reason))?;
                audits += 1;
            }
            daemon.shutdown();
            stores += 1;
        }
    }

    let mut extracted = Vec::new();
    for len in [1_000usize, 64 * 64 * 7] {
        let mut oracle = random_bytes(len, &mut r);
        let (daemon, mut client) = private_store(&oracle, Strategy::Local, r.gen());
        let mut remote = RemoteServer::connect(&daemon.endpoint()).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let off = r.gen_range(0..len - 8);
            let new = random_bytes(8, &mut r);
            client.write_bytes(&mut remote, off as u64, &new).map_err(|e| e.to_string())?;
            oracle[off..off + 8].copy_from_slice(&new);
        }
        let p = client.params().clone();
        ensure(p.n <= 64, || format!("n = {} exceeds 64", p.n))?;
        let e = p.extraction_count();
        let mut ts = Vec::with_capacity(e as usize);
        for _ in 0..e {
            let out = client.audit(&mut remote, &mut r).map_err(|e| e.to_string())?;
            ensure(out.accepted(), || "honest audit rejected".into())?;
            ts.push(out.transcript);
        }
        let file = client.extract(&ts).map_err(|e| format!("extract n={}: {e}", p.n))?;
        ensure(file == oracle, || format!("extraction with n={} returned different bytes", p.n))?;
        extracted.push(format!("n={} from e={}", p.n, e));
        daemon.shutdown();
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 120.0, || format!("took {secs:.1} s, limit 120 s"))?;
    Ok(format!(
        "{stores} stores (1KB/1MB/10MB x local/externalized), {ops} verified ops, {audits} audits, 0 rejects; \
         exact extraction ({})",
        extracted.join(", ")
    ))
}

// Authenticity at reduced scale.

fn authenticity() -> Check {
    let start = Instant::now();
    type Q = Zmod<1009>;
    let mut parts = Vec::new();
    for t in [1u64, 2] {
        let cfg = GameConfig {
            t: Some(t),
            insecure_test_parameters: true,
            seed: 7 + t,
            ..GameConfig::new(900, 10)
        };
        let p = cfg.params::<Q>().map_err(|e| e.to_string())?;
        ensure((p.m, p.n, p.t) == (30, 30, t), || format!("shape {:?}", (p.m, p.n, p.t)))?;
        let bound = forgery_bound::<Q>(p.m, t);
        for adv in [Adversary::ForgeUniformY, Adversary::RootForger] {
            let rep = run_authenticity_game::<Q>(&cfg, &adv, 100_000).map_err(|e| e.to_string())?;
            ensure(rep.pass, || format!("t={t} {rep}"))?;
            if adv == Adversary::RootForger {
                // The strongest one-shot forger must actually be observed near
                // its exact rate, or the bound check above proves nothing.
                let (m1, q1) = (p.m as f64 - 1.0, 1008.0);
                let exact = if t == 1 { m1 / q1 } else { m1 * (m1 - 1.0) / (q1 * (q1 - 1.0)) };
                let sd = (exact * (1.0 - exact) / rep.trials as f64).sqrt();
                ensure((rep.empirical_rate - exact).abs() <= 4.0 * sd, || {
                    format!("t={t} root forger rate {:.3e} far from exact {exact:.3e}", rep.empirical_rate)
                })?;
            }
            parts.push(format!(
                "t={t} {}: {:.3e} <= {:.3e}+{:.1e}",
                rep.adversary, rep.empirical_rate, bound, rep.slack
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs <= 300.0, || format!("took {secs:.1} s, limit 300 s"))?;
    Ok(format!("q=1009 m=30, 10^5 trials each; {}", parts.join("; ")))
}

// Corruption at production parameters.

fn corruption() -> Check {
    let cfg = GameConfig {
        fresh_state: false,
        seed: 3,
        ..GameConfig::new(10_000_000, 40)
    };
    let p = cfg.params::<Fp57>().map_err(|e| e.to_string())?;
    let rep = run_authenticity_game::<Fp57>(&cfg, &Adversary::BitFlip { cells: 1 }, 1000).map_err(|e| e.to_string())?;
    ensure(rep.rejects == 1000, || format!("{rep}"))?;
    Ok(format!(
        "10MB store (m={}), one flipped cell: {}/1000 rejected; m/q = 2^{:.1}",
        p.m,
        rep.rejects,
        (p.m as f64).log2() - Fp57::log2_modulus()
    ))
}

// Merkle layer.

fn merkle() -> Check {
    let mut r = rng(4);
    let (mut tampers, mut rejected, mut honest) = (0u64, 0u64, 0u64);
    let mut counts: Vec<u64> = vec![1, 2, 3, 4, 5, 7, 8, 9, 511, 512, 513, 1023, 1024];
    counts.extend((0..287).map(|_| r.gen_range(1..=1024)));
    for leaves in counts {
        let bb = [1usize, 7, 32, 64][r.gen_range(0..4)];
        let len = (leaves as usize - 1) * bb + r.gen_range(1..=bb);
        let data = random_bytes(len, &mut r);
        let tree = MerkleTree::build(&data, bb).map_err(|e| e.to_string())?;
        let root = tree.root();
        for _ in 0..4 {
            let first = r.gen_range(0..leaves);
            let end = r.gen_range(first + 1..=leaves.min(first + 16));
            let path = tree.prove(first..end).map_err(|e| e.to_string())?;
            let lo = first as usize * bb;
            let hi = (end as usize * bb).min(len);
            let blocks = &data[lo..hi];
            ensure(mt_verify(&root, leaves, first, blocks, bb, &path), || {
                format!("honest proof failed: {leaves} leaves, range {first}..{end}")
            })?;
            honest += 1;

            let mut variants: Vec<(Vec<u8>, u64, por_core::merkle::MerklePath, por_core::merkle::RootDigest)> = Vec::new();
            let mut b = blocks.to_vec();
            let k = r.gen_range(0..b.len());
            b[k] ^= 1 << r.gen_range(0..8);
            variants.push((b, first, path.clone(), root));
            let mut rt = root;
            rt.0[r.gen_range(0..rt.0.len())] ^= 1 << r.gen_range(0..8);
            variants.push((blocks.to_vec(), first, path.clone(), rt));
            if !path.uncles.is_empty() {
                let u = r.gen_range(0..path.uncles.len());
                let mut p = path.clone();
                p.uncles[u].digest[r.gen_range(0..28)] ^= 1 << r.gen_range(0..8);
                variants.push((blocks.to_vec(), first, p, root));
                let mut p = path.clone();
                p.uncles[u].side = match p.uncles[u].side {
                    Side::Left => Side::Right,
                    Side::Right => Side::Left,
                };
                variants.push((blocks.to_vec(), first, p, root));
                let mut p = path.clone();
                p.uncles.remove(u);
                variants.push((blocks.to_vec(), first, p, root));
            }
            let mut p = path.clone();
            p.uncles.push(p.uncles.first().copied().unwrap_or(por_core::merkle::Uncle {
                side: Side::Right,
                digest: [0; 28],
            }));
            variants.push((blocks.to_vec(), first, p, root));
            if end < leaves && hi - lo >= bb {
                variants.push((blocks.to_vec(), first + 1, path.clone(), root));
            }
            for (b, f, p, rt) in variants {
                tampers += 1;
                if !mt_verify(&rt, leaves, f, &b, bb, &p) {
                    rejected += 1;
                }
            }
        }
    }
    ensure(rejected == tampers, || format!("{} of {tampers} tampered proofs accepted", tampers - rejected))?;

    let mut updates = 0;
    for case in 0..1000 {
        let leaves = r.gen_range(1..=1024u64);
        let bb = [7usize, 16, 32][case % 3];
        let len = (leaves as usize - 1) * bb + r.gen_range(1..=bb);
        let mut data = random_bytes(len, &mut r);
        let mut tree = MerkleTree::build(&data, bb).map_err(|e| e.to_string())?;
        let first = r.gen_range(0..leaves);
        let end = r.gen_range(first + 1..=leaves.min(first + 8));
        let old_path = tree.prove(first..end).map_err(|e| e.to_string())?;
        let (lo, hi) = (first as usize * bb, (end as usize * bb).min(len));
        let new = random_bytes(hi - lo, &mut r);
        data[lo..hi].copy_from_slice(&new);
        let incremental = tree.update(first, &new).map_err(|e| e.to_string())?;
        let rebuilt = MerkleTree::build(&data, bb).map_err(|e| e.to_string())?.root();
        let client_side = root_from_leaves(leaves, first, &hash_blocks(&new, bb), &old_path);
        ensure(incremental == rebuilt && client_side == Some(rebuilt), || {
            format!("update mismatch: {leaves} leaves, range {first}..{end}")
        })?;
        updates += 1;
    }
    Ok(format!(
        "{honest} honest proofs accepted, {rejected}/{tampers} tampered proofs rejected (up to 1024 leaves); \
         {updates}/1000 incremental roots equal rebuilt and client-recomputed roots"
    ))
}

// Public-verification algebra.

type E22 = Zmod<22>;

fn toy_writer(bytes: Vec<u8>, secrets: &[u64]) -> (WriterState<Toy23>, ServerState) {
    let opts = ParamOptions {
        insecure_test_parameters: true,
        t_override: Some(secrets.len() as u64),
    };
    let params = PorParams::derive_with::<E22>(bytes.len() as u64, 10, 10, Strategy::Externalized, &opts).unwrap();
    let data = MemStore::new(bytes);
    let secrets = secrets.iter().map(|&s| E22::new(s)).collect();
    let (w, blob) = pub_init_with_secrets::<Toy23>(params, &data, SigningKey::from_bytes(&[1; 32]), secrets).unwrap();
    let server = ServerState::new(w.layout(), Box::new(data), Some(Box::new(MemStore::new(blob)))).unwrap();
    (w, server)
}

fn stored_control(server: &mut ServerState) -> Vec<u8> {
    let c = server.control_store_mut().unwrap();
    let mut b = vec![0u8; c.len() as usize];
    c.read_at(0, &mut b).unwrap();
    b
}

/// `g^(U M)` column by column, from a double loop over the cells.
fn oracle_control<G: Group>(secrets: &[G::Scalar], bytes: &[u8], m: u64, n: u64) -> Vec<u8> {
    let c = G::Scalar::CHUNK_BYTES;
    let cell = |i: u64, j: u64| {
        let off = ((i * n + j) as usize) * c;
        if off >= bytes.len() {
            G::Scalar::zero()
        } else {
            G::Scalar::decode_chunk(&bytes[off..(off + c).min(bytes.len())])
        }
    };
    let mut out = Vec::new();
    for j in 0..n {
        for s in secrets {
            let mut v = G::Scalar::zero();
            let mut p = *s;
            for i in 0..m {
                v += p * cell(i, j);
                p = p * *s;
            }
            out.extend(G::gen_exp(&v).to_bytes());
        }
    }
    out
}

fn public_algebra() -> Check {
    // Hand-computed vectors in Z*_23 with g = 5, u = 2, M = [3].
    let (mut w, mut server) = toy_writer(vec![3], &[2]);
    ensure(stored_control(&mut server) == [8], || "w != 8".into())?;
    ensure(w.public_key_matrix() == vec![vec![Toy23::new(2).unwrap()]], || "K != 2".into())?;
    let verifier = PublicVerifier::new(w.manifest(0));
    let r = E22::new(2);
    let mut reply = server.compute_audit(r).unwrap();
    ensure(reply.y == [E22::new(6)], || "y != [6]".into())?;
    ensure(Toy23::new(2).unwrap().exp(&E22::new(6)) == Toy23::new(18).unwrap(), || "K^y != 18".into())?;
    ensure(Toy23::new(8).unwrap().exp(&E22::new(2)) == Toy23::new(18).unwrap(), || "W^x != 18".into())?;
    ensure(verifier.check_reply(r, &reply).is_ok(), || "toy audit rejected".into())?;
    reply.y[0] = E22::new(7);
    ensure(Toy23::new(2).unwrap().exp(&E22::new(7)) == Toy23::new(13).unwrap(), || "K^7 != 13".into())?;
    ensure(verifier.check_reply(r, &reply).is_err(), || "toy forgery accepted".into())?;
    w.write_cell(&mut server, 0, 0, E22::new(4)).map_err(|e| e.to_string())?;
    ensure(stored_control(&mut server) == [16], || "w' != 16".into())?;
    ensure(Toy23::gen_exp(&E22::new(8)) == Toy23::new(16).unwrap(), || "5^8 != 16".into())?;
    let shape = ExtractShape {
        n_bytes: 1,
        m: 1,
        n: 1,
        chunk_bytes: 31,
        required: 1,
    };
    let t = AuditTranscript {
        rho: Scalar::from(2u64),
        y: vec![Scalar::from(6u64)],
        verdict: Verdict::Accept,
    };
    ensure(extract_file(&shape, &[t]).map_err(|e| e.to_string())? == [3], || "toy extraction != [3]".into())?;

    // ristretto255: honest audits and single-coordinate forgeries.
    let mut r = rng(5);
    let mut bytes = random_bytes(31 * 100 - 5, &mut r);
    let params = PorParams::derive::<Scalar>(bytes.len() as u64, 40, 128, Strategy::Externalized).unwrap();
    let data = MemStore::new(bytes.clone());
    let (mut writer, blob) = pub_init::<Ristretto, _>(params, &data, SigningKey::from_bytes(&[2; 32]), &mut r).unwrap();
    let mut server = ServerState::new(writer.layout(), Box::new(data), Some(Box::new(MemStore::new(blob)))).unwrap();
    for _ in 0..10 {
        let off = r.gen_range(0..bytes.len() - 40);
        let new = random_bytes(40, &mut r);
        writer.write_bytes(&mut server, off as u64, &new).map_err(|e| e.to_string())?;
        bytes[off..off + 40].copy_from_slice(&new);
    }
    let verifier = PublicVerifier::new(writer.manifest(1));
    let (mut accepted, mut forged_rejected) = (0, 0);
    for _ in 0..1000 {
        let rho = Scalar::random_nonzero(&mut r);
        let mut reply = server.compute_audit(rho).map_err(|e| e.to_string())?;
        if verifier.check_reply(rho, &reply).is_ok() {
            accepted += 1;
        }
        let k = r.gen_range(0..reply.y.len());
        reply.y[k] += Scalar::random_nonzero(&mut r);
        if verifier.check_reply(rho, &reply).is_err() {
            forged_rejected += 1;
        }
    }
    ensure(accepted == 1000 && forged_rejected == 1000, || {
        format!("ristretto: {accepted}/1000 honest accepted, {forged_rejected}/1000 forgeries rejected")
    })?;

    // Homomorphic updates against exponent recomputation, m, n <= 8.
    let mut instances = 0;
    for case in 0..120u64 {
        let t = 1 + case % 2;
        let cells = r.gen_range(1..=64usize);
        if case % 2 == 0 {
            let mut b = random_bytes(cells * 31 - r.gen_range(0..31), &mut r);
            let opts = ParamOptions {
                insecure_test_parameters: false,
                t_override: Some(t),
            };
            let p = PorParams::derive_with::<Scalar>(b.len() as u64, 40, 128, Strategy::Externalized, &opts).unwrap();
            ensure(p.m <= 8 && p.n <= 8, || format!("shape {}x{}", p.m, p.n))?;
            let data = MemStore::new(b.clone());
            let (mut wr, blob) = pub_init::<Ristretto, _>(p.clone(), &data, SigningKey::from_bytes(&[3; 32]), &mut r).unwrap();
            let mut srv = ServerState::new(wr.layout(), Box::new(data), Some(Box::new(MemStore::new(blob)))).unwrap();
            for _ in 0..r.gen_range(1..6) {
                let span = r.gen_range(1..=b.len().min(70));
                let off = r.gen_range(0..=b.len() - span);
                let new = random_bytes(span, &mut r);
                wr.write_bytes(&mut srv, off as u64, &new).map_err(|e| e.to_string())?;
                b[off..off + span].copy_from_slice(&new);
            }
            let expect = oracle_control::<Ristretto>(wr.secrets(), &b, p.m, p.n);
            ensure(stored_control(&mut srv) == expect, || format!("ristretto case {case}: W' != g^(U M')"))?;
        } else {
            let mut b = random_bytes(cells, &mut r);
            let secrets: Vec<u64> = (0..t).map(|k| [3u64, 5, 7, 9, 13, 15, 17, 19, 21][(case as usize + k as usize) % 9]).collect();
            let (mut wr, mut srv) = toy_writer(b.clone(), &secrets);
            let (m, n) = (wr.params().m, wr.params().n);
            ensure(m <= 8 && n <= 8, || format!("shape {m}x{n}"))?;
            for _ in 0..r.gen_range(1..6) {
                let k = r.gen_range(0..b.len());
                let v = r.gen_range(0..22u8);
                wr.write_bytes(&mut srv, k as u64, &[v]).map_err(|e| e.to_string())?;
                b[k] = v;
            }
            let expect = oracle_control::<Toy23>(wr.secrets(), &b, m, n);
            ensure(stored_control(&mut srv) == expect, || format!("toy case {case}: W' != g^(U M')"))?;
        }
        instances += 1;
    }
    Ok(format!(
        "toy vectors exact (w=8, K=2, w'=16, 18=18, forged 13 rejected, M=[3]); ristretto255 {accepted}/1000 honest \
         accepted, {forged_rejected}/1000 single-coordinate forgeries rejected; {instances} update instances match g^(U M')"
    ))
}

// Communication and performance, measured in one bench run.

const REFERENCE_1GB_BYTES: f64 = 187_000.0;

fn communication(rows: &[BenchRow]) -> Check {
    let one: Vec<&BenchRow> = rows.iter().filter(|r| r.threads == 1).collect();
    let mut parts = Vec::new();
    for r in &one {
        let m = PorParams::derive::<Fp57>(r.size_bytes, 40, 128, Strategy::Local).unwrap().m;
        let total = r.bytes_up + r.bytes_down;
        ensure(total == audit_wire_bytes(m, 8) && total == 8 * (m + 1) + 33, || {
            format!("{} bytes: measured {total}, closed form {}", r.size_bytes, 8 * (m + 1) + 33)
        })?;
        parts.push(format!("{}B->{}", r.size_bytes, total));
    }
    for w in one.windows(2) {
        let got = (w[1].bytes_up + w[1].bytes_down) as f64 / (w[0].bytes_up + w[0].bytes_down) as f64;
        let want = (w[1].size_bytes as f64 / w[0].size_bytes as f64).sqrt();
        let ratio = got / want;
        ensure((1.0 / 1.5..=1.5).contains(&ratio), || {
            format!("{} -> {}: growth {got:.3} vs sqrt {want:.3}", w[0].size_bytes, w[1].size_bytes)
        })?;
    }
    let gb = one.iter().find(|r| r.size_bytes == 1_000_000_000).ok_or("no 1GB row")?;
    let total = (gb.bytes_up + gb.bytes_down) as f64;
    let factor = (REFERENCE_1GB_BYTES / total).max(total / REFERENCE_1GB_BYTES);
    ensure(factor <= 2.0, || format!("1GB audit {total} bytes is {factor:.3}x from 187 KB"))?;
    let p = PorParams::derive::<Fp57>(gb.size_bytes, 40, 128, Strategy::Local).unwrap();
    let full_x = 8 * (p.m + p.n);
    Ok(format!(
        "exact closed form 8(m+1)+33 at {}; sqrt(N) growth within 1.5x; 1GB = {total} B, {factor:.3}x from 187 KB \
         (sending the full x as well would be {full_x} B = {:.1} KiB)",
        parts.join(", "),
        full_x as f64 / 1024.0
    ))
}

fn single_thread(rows: &[BenchRow]) -> Check {
    let gb = rows
        .iter()
        .find(|r| r.size_bytes == 1_000_000_000 && r.threads == 1)
        .ok_or("no 1GB row")?;
    ensure(gb.median_s <= 2.5, || format!("median {:.3} s > 2.5 s", gb.median_s))?;
    let t = |size: u64| rows.iter().find(|r| r.size_bytes == size && r.threads == 1).map(|r| r.median_s);
    let scaling = match (t(10_000_000), t(100_000_000)) {
        (Some(a), Some(b)) => format!("; time(100MB)/time(10MB) = {:.1}", b / a),
        _ => String::new(),
    };
    Ok(format!("1GB private audit, 1 thread, median of 11 = {:.3} s{scaling}", gb.median_s))
}

fn read_time(path: &std::path::Path) -> f64 {
    let f = por_core::store::FileStore::open_read_only(path).unwrap();
    let mut buf = vec![0u8; 8 << 20];
    let start = Instant::now();
    let mut off = 0;
    while off < f.len() {
        let n = (f.len() - off).min(buf.len() as u64) as usize;
        f.read_at(off, &mut buf[..n]).unwrap();
        off += n as u64;
    }
    start.elapsed().as_secs_f64()
}

/// `None` when fewer than four cores are available and the comparison
/// cannot be made.
fn four_threads(rows: &[BenchRow], cores: usize, file: &std::path::Path) -> Option<Check> {
    if cores < 4 {
        return None;
    }
    let t = |th: usize| rows.iter().find(|r| r.size_bytes == 1_000_000_000 && r.threads == th);
    let (Some(one), Some(four)) = (t(1), t(4)) else {
        return Some(Err("missing 1GB rows".into()));
    };
    let speedup = one.median_s / four.median_s;
    let read = read_time(file);
    let io_bound = read >= 0.5 * one.median_s;
    Some(if speedup >= 2.0 || io_bound {
        Ok(format!(
            "speedup {speedup:.2}x ({:.3} s -> {:.3} s); plain read {read:.3} s{}",
            one.median_s,
            four.median_s,
            if speedup < 2.0 { ", I/O-bound" } else { "" }
        ))
    } else {
        Err(format!(
            "speedup {speedup:.2}x < 2 and not I/O-bound (plain read {read:.3} s vs audit {:.3} s)",
            one.median_s
        ))
    })
}

// Retrievability.

fn retrievability() -> Check {
    let cfg = GameConfig {
        seed: 8,
        ..GameConfig::new(16 * 16 * 7, 10)
    };
    let p = cfg.params::<Fp57>().map_err(|e| e.to_string())?;
    ensure(p.n == 16 && p.extraction_count() == 304, || format!("n={} e={}", p.n, p.extraction_count()))?;
    let rep = run_retrievability_game::<Fp57>(&cfg, &Adversary::Honest, Some(304), 100).map_err(|e| e.to_string())?;
    ensure(rep.won >= 99, || format!("{rep}"))?;
    Ok(format!(
        "n=16, lambda=10, e=304: extraction exact in {}/100 repetitions; at least {} distinct accepted challenges each",
        rep.won, rep.min_distinct_accepted
    ))
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut lines = vec![
        run("C1", "end-to-end correctness", end_to_end),
        run("C2", "authenticity bound at q=1009", authenticity),
        run("C3", "corruption detection at production parameters", corruption),
        run("C4", "Merkle tamper suite and incremental updates", merkle),
        run("C5", "public-verification algebra", public_algebra),
    ];

    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let dir = tempfile::tempdir().expect("temp dir");
    let mut opts = BenchOptions::new(vec![1_000_000, 10_000_000, 100_000_000, 1_000_000_000], dir.path());
    opts.threads = if cores >= 4 { vec![1, 4] } else { vec![1] };
    opts.mode = BenchMode::Private;
    let bench_start = Instant::now();
    let rows = bench_audit(&opts);
    let bench_secs = bench_start.elapsed();
    match rows {
        Ok(rows) => {
            lines.push(run("C6", "communication scaling", || communication(&rows)));
            lines.push(run("C7a", "1GB single-thread audit time", || single_thread(&rows)));
            let gb_file = dir.path().join("file-1000000000.bin");
            match four_threads(&rows, cores, &gb_file) {
                Some(check) => lines.push(run("C7b", "4-thread speedup", || check)),
                None => {
                    let l = Line {
                        id: "C7b",
                        status: "BLOCKED",
                        title: "4-thread speedup",
                        detail: format!(
                            "only {cores} CPU available to this process; a 4-thread comparison cannot be measured here"
                        ),
                    };
                    print_line(&l);
                    lines.push(l);
                }
            }
        }
        Err(e) => {
            for (id, title) in [("C6", "communication scaling"), ("C7a", "1GB single-thread audit time")] {
                lines.push(run(id, title, || Err(format!("bench failed: {e}"))));
            }
        }
    }
    drop(dir);
    lines.push(run("C8", "retrievability game", retrievability));

    let failed: Vec<&str> = lines.iter().filter(|l| l.status == "FAIL").map(|l| l.id).collect();
    let blocked: Vec<&str> = lines.iter().filter(|l| l.status == "BLOCKED").map(|l| l.id).collect();
    println!(
        "acceptance: {} passed, {} failed, {} blocked in {:.1} s (bench {:.1} s)",
        lines.iter().filter(|l| l.status == "PASS").count(),
        failed.len(),
        blocked.len(),
        total.elapsed().as_secs_f64(),
        Duration::as_secs_f64(&bench_secs)
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
