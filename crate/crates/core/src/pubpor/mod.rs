//! Publicly verifiable audits: the control vectors are published in the
//! exponent of a prime-order group, so anyone holding the signed manifest
//! can check a server's response.

pub mod group;
pub mod manifest;

pub use group::{Group, Ristretto, Toy23};
pub use manifest::Manifest;

pub use curve25519_dalek::Scalar;
pub use ed25519_dalek::{SigningKey, VerifyingKey};

use rand::{CryptoRng, RngCore};

use crate::error::{PorError, Reject};
use crate::field::{powers, vec_mat_stream, Field, FieldError, MatrixView};
use crate::merkle::{hash_leaf, mt_verify, root_from_leaves, MerkleTree, RootDigest};
use crate::params::{block_bytes_for, PorParams, Strategy};
use crate::por::client::{block_span, fetch_verified, read_verified, sample_secrets, TreeGeometry};
use crate::por::state::{peek_header, Reader, MAGIC, MODE_PUBLIC_WRITER, VERSION};
use crate::por::{
    extract_file, AuditOutcome, AuditReply, AuditTranscript, ExtractShape, StorageServer,
    StoreLayout, TreeId, Verdict, WriteRequest,
};
use crate::store::ByteStore;

/// The data owner's secrets: the evaluation points behind `K`, the trusted
/// roots, and the key that signs manifests.
#[derive(Clone)]
pub struct WriterState<G: Group> {
    params: PorParams,
    secrets: Vec<G::Scalar>,
    root_m: RootDigest,
    root_w: RootDigest,
    signing: SigningKey,
    epoch: u64,
}

impl<G: Group> std::fmt::Debug for WriterState<G> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WriterState")
            .field("params", &self.params)
            .field("root_m", &self.root_m)
            .field("root_w", &self.root_w)
            .field("epoch", &self.epoch)
            .finish_non_exhaustive()
    }
}

impl<G: Group> PartialEq for WriterState<G> {
    fn eq(&self, o: &Self) -> bool {
        self.params == o.params
            && self.secrets == o.secrets
            && self.root_m == o.root_m
            && self.root_w == o.root_w
            && self.signing.to_bytes() == o.signing.to_bytes()
            && self.epoch == o.epoch
    }
}

fn record_len<G: Group>(t: u64) -> usize {
    t as usize * G::ENCODED_BYTES
}

/// Encodes column `j` of `w` (one element per control row).
fn encode_column<G: Group>(column: &[G]) -> Vec<u8> {
    let mut out = Vec::with_capacity(column.len() * G::ENCODED_BYTES);
    for e in column {
        out.extend_from_slice(&e.to_bytes());
    }
    out
}

fn decode_column<G: Group>(record: &[u8]) -> Result<Vec<G>, Reject> {
    record
        .chunks(G::ENCODED_BYTES)
        .map(G::decode)
        .collect::<Option<Vec<G>>>()
        .ok_or(Reject::BadEncoding)
}

/// Preprocesses `data`: `v = U M` over the exponents, `w = g^v`. Returns the
/// writer state and the encoded `w` columns the server must store.
pub fn pub_init<G: Group, R: RngCore + CryptoRng>(
    params: PorParams,
    data: &dyn ByteStore,
    signing: SigningKey,
    rng: &mut R,
) -> Result<(WriterState<G>, Vec<u8>), PorError> {
    let secrets = sample_secrets::<G::Scalar, _>(params.t, rng);
    pub_init_with_secrets(params, data, signing, secrets)
}

pub fn pub_init_with_secrets<G: Group>(
    params: PorParams,
    data: &dyn ByteStore,
    signing: SigningKey,
    secrets: Vec<G::Scalar>,
) -> Result<(WriterState<G>, Vec<u8>), PorError> {
    if data.len() != params.n_bytes || params.chunk_bytes != G::Scalar::CHUNK_BYTES {
        return Err(PorError::Params("file does not match parameters".into()));
    }
    if secrets.len() as u64 != params.t || secrets.iter().any(Field::is_zero) {
        return Err(PorError::Params("need t nonzero secrets".into()));
    }
    let (m, n) = (params.m as usize, params.n as usize);
    let u: Vec<Vec<G::Scalar>> = secrets
        .iter()
        .map(|s| powers(*s, m))
        .collect::<Result<_, _>>()?;
    let v = vec_mat_stream(&MatrixView::<G::Scalar>::new(data, m, n), &u)?;
    drop(u);
    let w: Vec<Vec<G>> = crate::parallel::map_range(0..v.len(), |k| {
        v[k].iter().map(G::gen_exp).collect()
    });
    let mut blob = Vec::with_capacity(n * record_len::<G>(params.t));
    for j in 0..n {
        let column: Vec<G> = w.iter().map(|row| row[j]).collect();
        blob.extend_from_slice(&encode_column(&column));
    }
    let root_w = MerkleTree::build(&blob, record_len::<G>(params.t))?.root();
    let root_m = MerkleTree::from_store(data, params.block_bytes)?.root();
    let params = PorParams {
        strategy: Strategy::Externalized,
        ..params
    };
    Ok((
        WriterState {
            params,
            secrets,
            root_m,
            root_w,
            signing,
            epoch: 0,
        },
        blob,
    ))
}

impl<G: Group> WriterState<G> {
    pub fn params(&self) -> &PorParams {
        &self.params
    }

    pub fn secrets(&self) -> &[G::Scalar] {
        &self.secrets
    }

    pub fn roots(&self) -> (RootDigest, RootDigest) {
        (self.root_m, self.root_w)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn layout(&self) -> StoreLayout {
        StoreLayout {
            field_id: G::Scalar::ID,
            n_bytes: self.params.n_bytes,
            m: self.params.m,
            n: self.params.n,
            chunk_bytes: self.params.chunk_bytes as u32,
            block_bytes: self.params.block_bytes as u32,
            record_len: record_len::<G>(self.params.t) as u32,
        }
    }

    /// `K = g^U`, regenerated from the secrets.
    pub fn public_key_matrix(&self) -> Vec<Vec<G>> {
        let m = self.params.m as usize;
        self.secrets
            .iter()
            .map(|s| {
                let exps = powers(*s, m).expect("secrets are nonzero");
                crate::parallel::map_range(0..m, |i| G::gen_exp(&exps[i]))
            })
            .collect()
    }

    pub fn manifest(&self, timestamp: u64) -> Manifest<G> {
        let p = &self.params;
        Manifest::sign(
            p.lambda,
            p.n_bytes,
            (p.m, p.n, p.t),
            self.epoch,
            timestamp,
            self.public_key_matrix(),
            self.root_m,
            self.root_w,
            &self.signing,
        )
    }

    fn data_geometry(&self) -> TreeGeometry {
        TreeGeometry {
            root: self.root_m,
            leaf_count: self.params.leaf_count(),
            block_bytes: self.params.block_bytes,
            total: self.params.n_bytes,
        }
    }

    fn control_geometry(&self) -> TreeGeometry {
        let rl = record_len::<G>(self.params.t);
        TreeGeometry {
            root: self.root_w,
            leaf_count: self.params.n,
            block_bytes: rl,
            total: self.params.n * rl as u64,
        }
    }

    pub fn read_bytes<S: StorageServer + ?Sized>(
        &self,
        server: &mut S,
        offset: u64,
        len: u64,
    ) -> Result<Vec<u8>, PorError> {
        read_verified(server, &self.data_geometry(), offset, len)
    }

    /// Sets cell `(i, j)` (0-based).
    pub fn write_cell<S: StorageServer + ?Sized>(
        &mut self,
        server: &mut S,
        i: u64,
        j: u64,
        value: G::Scalar,
    ) -> Result<(), PorError> {
        let (_, width) = self.cell_extent(i, j)?;
        let mut enc = vec![0u8; G::Scalar::CHUNK_BYTES];
        value
            .encode_chunk(&mut enc)
            .map_err(|_| PorError::OutOfRange("value does not fit in a cell".into()))?;
        if enc[width..].iter().any(|&b| b != 0) {
            return Err(PorError::OutOfRange("value does not fit in the final partial cell".into()));
        }
        self.patch_cell(server, i, j, |cell| cell.copy_from_slice(&enc[..cell.len()]))
    }

    pub fn write_bytes<S: StorageServer + ?Sized>(
        &mut self,
        server: &mut S,
        offset: u64,
        data: &[u8],
    ) -> Result<(), PorError> {
        let end = offset
            .checked_add(data.len() as u64)
            .filter(|e| *e <= self.params.n_bytes)
            .ok_or_else(|| PorError::OutOfRange(format!("bytes {offset}+{}", data.len())))?;
        let c = self.params.chunk_bytes as u64;
        let mut pos = offset;
        while pos < end {
            let idx = pos / c;
            let upto = (idx * c + c).min(end);
            let src = &data[(pos - offset) as usize..(upto - offset) as usize];
            let within = (pos - idx * c) as usize;
            self.patch_cell(server, idx / self.params.n, idx % self.params.n, |cell| {
                cell[within..within + src.len()].copy_from_slice(src)
            })?;
            pos = upto;
        }
        Ok(())
    }

    fn cell_extent(&self, i: u64, j: u64) -> Result<(u64, usize), PorError> {
        let off = self.params.cell_offset(i, j);
        if i >= self.params.m || j >= self.params.n || off >= self.params.n_bytes {
            return Err(PorError::OutOfRange(format!("cell ({i}, {j})")));
        }
        let width = (self.params.n_bytes - off).min(self.params.chunk_bytes as u64);
        Ok((off, width as usize))
    }

    fn patch_cell<S: StorageServer + ?Sized>(
        &mut self,
        server: &mut S,
        i: u64,
        j: u64,
        patch: impl FnOnce(&mut [u8]),
    ) -> Result<(), PorError> {
        let (off, width) = self.cell_extent(i, j)?;
        let bb = self.params.block_bytes as u64;
        let block = block_span(off, width as u64, bb).start;
        let (mut bytes, path) = fetch_verified(server, TreeId::Data, block..block + 1, &self.data_geometry())?;
        let within = (off - block * bb) as usize;
        let cell = &mut bytes[within..within + width];
        let old = G::Scalar::decode_chunk(cell);
        patch(cell);
        let new = G::Scalar::decode_chunk(cell);
        let new_cell = cell.to_vec();
        let delta = new - old;
        let new_root_m = root_from_leaves(
            self.params.leaf_count(),
            block,
            &[hash_leaf(&bytes, self.params.block_bytes)],
            &path,
        )
        .ok_or(Reject::MerkleMismatch)?;

        let cg = self.control_geometry();
        let (record, wpath) = fetch_verified(server, TreeId::Control, j..j + 1, &cg)?;
        let column: Vec<G> = decode_column(&record)?;
        // w'_kj = w_kj * g^(delta * s_k^(i+1))
        let updated: Vec<G> = column
            .iter()
            .zip(&self.secrets)
            .map(|(w, s)| w.op(&G::gen_exp(&(s.pow(i + 1) * delta))))
            .collect();
        let new_record = encode_column(&updated);
        let new_root_w = root_from_leaves(self.params.n, j, &[hash_leaf(&new_record, cg.block_bytes)], &wpath)
            .ok_or(Reject::MerkleMismatch)?;

        let ack = server.write(&WriteRequest {
            data: Some((off, new_cell)),
            control: Some((j, new_record)),
        })?;
        if ack.root_m != new_root_m || ack.root_w != Some(new_root_w) {
            return Err(Reject::ServerRootMismatch.into());
        }
        self.root_m = new_root_m;
        self.root_w = new_root_w;
        self.epoch += 1;
        Ok(())
    }

    /// The writer's cheaper check: `g^(U y) = w^x`, one exponentiation per
    /// row instead of an `m`-term multi-exponentiation.
    pub fn check_reply(&self, r: G::Scalar, reply: &AuditReply<G::Scalar>) -> Result<(), Reject> {
        let w = verified_columns::<G>(&self.control_geometry(), self.params.t, reply)?;
        check_lengths(self.params.m, &reply.y)?;
        let x = powers(r, self.params.n as usize).map_err(|_| Reject::BadEncoding)?;
        for (s, w_row) in self.secrets.iter().zip(&w) {
            let mut p = *s;
            let mut uy = G::Scalar::zero();
            for yi in &reply.y {
                uy += p * *yi;
                p = p * *s;
            }
            if G::gen_exp(&uy) != G::multi_exp(w_row, &x) {
                return Err(Reject::CheckFailed);
            }
        }
        Ok(())
    }

    pub fn audit_with<S: StorageServer + ?Sized>(
        &self,
        server: &mut S,
        r: G::Scalar,
    ) -> Result<AuditOutcome<G::Scalar>, PorError> {
        run_audit(server, r, |reply| self.check_reply(r, reply))
    }
}

fn check_lengths<F>(m: u64, y: &[F]) -> Result<(), Reject> {
    if y.len() as u64 != m {
        return Err(Reject::ResponseLength {
            expected: m as usize,
            got: y.len(),
        });
    }
    Ok(())
}

/// Checks the `w` columns in a reply against `root_w` and returns them as
/// `t` rows.
fn verified_columns<G: Group>(
    geom: &TreeGeometry,
    t: u64,
    reply: &AuditReply<G::Scalar>,
) -> Result<Vec<Vec<G>>, Reject> {
    let proof = reply.control.as_ref().ok_or(Reject::MissingControl)?;
    if proof.blocks.len() as u64 != geom.total {
        return Err(Reject::BlockLength);
    }
    if !mt_verify(&geom.root, geom.leaf_count, 0, &proof.blocks, geom.block_bytes, &proof.path) {
        return Err(Reject::MerkleMismatch);
    }
    let mut rows = vec![Vec::with_capacity(geom.leaf_count as usize); t as usize];
    for record in proof.blocks.chunks(geom.block_bytes) {
        for (row, e) in rows.iter_mut().zip(decode_column::<G>(record)?) {
            row.push(e);
        }
    }
    Ok(rows)
}

fn run_audit<F: Field, S: StorageServer + ?Sized>(
    server: &mut S,
    r: F,
    check: impl FnOnce(&AuditReply<F>) -> Result<(), Reject>,
) -> Result<AuditOutcome<F>, PorError> {
    if r.is_zero() {
        return Err(FieldError::ZeroChallenge.into());
    }
    let reply = server.audit(r)?;
    let reason = check(&reply).err();
    Ok(AuditOutcome {
        transcript: AuditTranscript {
            rho: r,
            y: reply.y,
            verdict: if reason.is_none() { Verdict::Accept } else { Verdict::Reject },
        },
        reason,
    })
}

/// Anyone holding a manifest: audits, reads, and extracts without secrets.
#[derive(Debug, Clone)]
pub struct PublicVerifier<G: Group> {
    manifest: Manifest<G>,
}

impl<G: Group> PublicVerifier<G> {
    pub fn new(manifest: Manifest<G>) -> Self {
        PublicVerifier { manifest }
    }

    pub fn manifest(&self) -> &Manifest<G> {
        &self.manifest
    }

    fn control_geometry(&self) -> TreeGeometry {
        let rl = record_len::<G>(self.manifest.t);
        TreeGeometry {
            root: self.manifest.root_w,
            leaf_count: self.manifest.n,
            block_bytes: rl,
            total: self.manifest.n * rl as u64,
        }
    }

    /// `prod_i K_ki^(y_i) = prod_j w_kj^(x_j)` for every row `k`.
    pub fn check_reply(&self, r: G::Scalar, reply: &AuditReply<G::Scalar>) -> Result<(), Reject> {
        let w = verified_columns::<G>(&self.control_geometry(), self.manifest.t, reply)?;
        check_lengths(self.manifest.m, &reply.y)?;
        let x = powers(r, self.manifest.n as usize).map_err(|_| Reject::BadEncoding)?;
        for (k_row, w_row) in self.manifest.k.iter().zip(&w) {
            if G::multi_exp(k_row, &reply.y) != G::multi_exp(w_row, &x) {
                return Err(Reject::CheckFailed);
            }
        }
        Ok(())
    }

    pub fn audit_with<S: StorageServer + ?Sized>(
        &self,
        server: &mut S,
        r: G::Scalar,
    ) -> Result<AuditOutcome<G::Scalar>, PorError> {
        run_audit(server, r, |reply| self.check_reply(r, reply))
    }

    pub fn audit<S: StorageServer + ?Sized, R: RngCore + ?Sized>(
        &self,
        server: &mut S,
        rng: &mut R,
    ) -> Result<AuditOutcome<G::Scalar>, PorError> {
        self.audit_with(server, G::Scalar::random_nonzero(rng))
    }

    pub fn read_bytes<S: StorageServer + ?Sized>(
        &self,
        server: &mut S,
        offset: u64,
        len: u64,
    ) -> Result<Vec<u8>, PorError> {
        let geom = TreeGeometry {
            root: self.manifest.root_m,
            leaf_count: self.manifest.layout().leaf_count(),
            block_bytes: block_bytes_for(G::Scalar::CHUNK_BYTES),
            total: self.manifest.n_bytes,
        };
        read_verified(server, &geom, offset, len)
    }

    pub fn extract_shape(&self) -> ExtractShape {
        ExtractShape {
            n_bytes: self.manifest.n_bytes,
            m: self.manifest.m,
            n: self.manifest.n,
            chunk_bytes: G::Scalar::CHUNK_BYTES,
            required: 4 * self.manifest.n + 24 * self.manifest.lambda as u64,
        }
    }

    pub fn extract(&self, transcripts: &[AuditTranscript<G::Scalar>]) -> Result<Vec<u8>, PorError> {
        extract_file(&self.extract_shape(), transcripts)
    }
}

/// Writer state file: the client-state header with mode 2, then
/// `s[t] | root_M | root_w | signing key[32] | epoch u64`.
pub fn encode_writer<G: Group>(w: &WriterState<G>) -> Vec<u8> {
    let p = &w.params;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(MODE_PUBLIC_WRITER);
    out.push(G::ID);
    out.extend_from_slice(&(p.lambda as u16).to_le_bytes());
    out.extend_from_slice(&(p.kappa as u16).to_le_bytes());
    for v in [p.m, p.n, p.t, p.n_bytes] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &w.secrets {
        out.extend_from_slice(&s.to_canonical_vec());
    }
    out.extend_from_slice(w.root_m.as_bytes());
    out.extend_from_slice(w.root_w.as_bytes());
    out.extend_from_slice(&w.signing.to_bytes());
    out.extend_from_slice(&w.epoch.to_le_bytes());
    out
}

pub fn decode_writer<G: Group>(b: &[u8]) -> Result<WriterState<G>, PorError> {
    let (mode, group) = peek_header(b)?;
    if mode != MODE_PUBLIC_WRITER || group != G::ID {
        return Err(PorError::Format("not a public writer state for this group".into()));
    }
    let mut r = Reader::new(&b[7..], "writer state");
    let lambda = r.u16()? as u32;
    let kappa = r.u16()? as u32;
    let (m, n, t, n_bytes) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    if n_bytes == 0 || t == 0 || crate::field::matrix_shape(n_bytes, G::Scalar::CHUNK_BYTES) != (m, n) {
        return Err(PorError::Format("writer state has an inconsistent shape".into()));
    }
    let secrets = r.elems::<G::Scalar>(t)?;
    let root_m = r.digest()?;
    let root_w = r.digest()?;
    let signing = SigningKey::from_bytes(r.take(32)?.try_into().unwrap());
    let epoch = r.u64()?;
    r.finish()?;
    Ok(WriterState {
        params: PorParams {
            lambda,
            kappa,
            n_bytes,
            m,
            n,
            t,
            chunk_bytes: G::Scalar::CHUNK_BYTES,
            block_bytes: block_bytes_for(G::Scalar::CHUNK_BYTES),
            strategy: Strategy::Externalized,
        },
        secrets,
        root_m,
        root_w,
        signing,
        epoch,
    })
}
