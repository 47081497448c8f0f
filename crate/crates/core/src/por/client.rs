//! Client side of the private protocol.

use std::ops::Range;

use rand::{CryptoRng, RngCore};

use crate::error::{PorError, Reject};
use crate::field::{powers, vec_mat_stream, Field, MatrixView};
use crate::merkle::{hash_leaf, mt_verify, root_from_leaves, MerklePath, MerkleTree, RootDigest};
use crate::params::{PorParams, Strategy};
use crate::por::control::{record_len, ControlCipher, KEY_BYTES};
use crate::por::extract::{extract_file, ExtractShape};
use crate::por::server::{AuditReply, StorageServer, StoreLayout, TreeId, WriteRequest};
use crate::por::transcript::{AuditTranscript, Verdict};
use crate::store::ByteStore;

/// Where the client's control matrix `V` lives.
#[derive(Clone, PartialEq, Eq)]
pub enum ClientControl<F> {
    /// `t` rows of length `n`.
    Local { v: Vec<Vec<F>> },
    Externalized {
        key: [u8; KEY_BYTES],
        root_w: RootDigest,
    },
}

impl<F> std::fmt::Debug for ClientControl<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClientControl::Local { v } => write!(f, "Local({} rows)", v.len()),
            ClientControl::Externalized { root_w, .. } => write!(f, "Externalized({root_w:?})"),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct ClientState<F> {
    params: PorParams,
    secrets: Vec<F>,
    root_m: RootDigest,
    control: ClientControl<F>,
}

impl<F> std::fmt::Debug for ClientState<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientState")
            .field("params", &self.params)
            .field("root_m", &self.root_m)
            .field("control", &self.control)
            .finish_non_exhaustive()
    }
}

/// Result of one audit: the transcript, and why it was rejected if it was.
#[derive(Debug, Clone)]
pub struct AuditOutcome<F> {
    pub transcript: AuditTranscript<F>,
    pub reason: Option<Reject>,
}

impl<F> AuditOutcome<F> {
    pub fn accepted(&self) -> bool {
        self.reason.is_none()
    }
}

/// `t` distinct nonzero field elements.
pub fn sample_secrets<F: Field, R: RngCore + ?Sized>(t: u64, rng: &mut R) -> Vec<F> {
    let mut out: Vec<F> = Vec::with_capacity(t as usize);
    while out.len() < t as usize {
        let s = F::random_nonzero(rng);
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// `sum_i s^(i+1) y_i` for each secret.
fn secret_combination<F: Field>(secrets: &[F], y: &[F]) -> Vec<F> {
    secrets
        .iter()
        .map(|s| {
            let mut p = *s;
            let mut acc = F::zero();
            for v in y {
                acc += p * *v;
                p = p * *s;
            }
            acc
        })
        .collect()
}

fn control_combination<F: Field>(v: &[Vec<F>], x: &[F]) -> Vec<F> {
    v.iter()
        .map(|row| row.iter().zip(x).fold(F::zero(), |a, (p, q)| a + *p * *q))
        .collect()
}

/// Block range covering bytes `[off, off + len)`.
pub(crate) fn block_span(off: u64, len: u64, block_bytes: u64) -> Range<u64> {
    off / block_bytes..(off + len - 1) / block_bytes + 1
}

/// What a client trusts about one of the server's trees.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeGeometry {
    pub root: RootDigest,
    pub leaf_count: u64,
    pub block_bytes: usize,
    pub total: u64,
}

/// Fetches blocks from one tree and checks them against the trusted root.
pub(crate) fn fetch_verified<S: StorageServer + ?Sized>(
    server: &mut S,
    tree: TreeId,
    blocks: Range<u64>,
    geom: &TreeGeometry,
) -> Result<(Vec<u8>, MerklePath), PorError> {
    let proof = server.read_blocks(tree, blocks.clone())?;
    let bb = geom.block_bytes as u64;
    let expected = (blocks.end * bb).min(geom.total) - blocks.start * bb;
    if proof.blocks.len() as u64 != expected {
        return Err(Reject::BlockLength.into());
    }
    if !mt_verify(&geom.root, geom.leaf_count, blocks.start, &proof.blocks, geom.block_bytes, &proof.path) {
        return Err(Reject::MerkleMismatch.into());
    }
    Ok((proof.blocks, proof.path))
}

/// Reads `len` bytes at `offset` from the data tree.
pub(crate) fn read_verified<S: StorageServer + ?Sized>(
    server: &mut S,
    geom: &TreeGeometry,
    offset: u64,
    len: u64,
) -> Result<Vec<u8>, PorError> {
    if offset.checked_add(len).is_none_or(|end| end > geom.total) {
        return Err(PorError::OutOfRange(format!("bytes {offset}+{len} beyond {}", geom.total)));
    }
    if len == 0 {
        return Ok(Vec::new());
    }
    let bb = geom.block_bytes as u64;
    let span = block_span(offset, len, bb);
    let (blocks, _) = fetch_verified(server, TreeId::Data, span.clone(), geom)?;
    let start = (offset - span.start * bb) as usize;
    Ok(blocks[start..start + len as usize].to_vec())
}

impl<F: Field> ClientState<F> {
    /// Preprocesses `data` with fresh secrets. Returns the client state and,
    /// for the externalized strategy, the encrypted control matrix the server
    /// must store.
    pub fn init<R: RngCore + CryptoRng>(
        params: PorParams,
        data: &dyn ByteStore,
        rng: &mut R,
    ) -> Result<(Self, Option<Vec<u8>>), PorError> {
        let secrets = sample_secrets(params.t, rng);
        Self::init_with_secrets(params, data, secrets, rng)
    }

    /// As [`ClientState::init`] with caller-chosen secrets.
    pub fn init_with_secrets<R: RngCore + CryptoRng>(
        params: PorParams,
        data: &dyn ByteStore,
        secrets: Vec<F>,
        rng: &mut R,
    ) -> Result<(Self, Option<Vec<u8>>), PorError> {
        if data.len() != params.n_bytes || params.chunk_bytes != F::CHUNK_BYTES {
            return Err(PorError::Params("file does not match parameters".into()));
        }
        if secrets.len() as u64 != params.t || secrets.iter().any(F::is_zero) {
            return Err(PorError::Params("need t nonzero secrets".into()));
        }
        let m = params.m as usize;
        let n = params.n as usize;
        let u: Vec<Vec<F>> = secrets
            .iter()
            .map(|s| powers(*s, m))
            .collect::<Result<_, _>>()?;
        let view = MatrixView::<F>::new(data, m, n);
        let v = vec_mat_stream(&view, &u)?;
        drop(u);
        let root_m = MerkleTree::from_store(data, params.block_bytes)?.root();

        let (control, blob) = match params.strategy {
            Strategy::Local => (ClientControl::Local { v }, None),
            Strategy::Externalized => {
                let mut key = [0u8; KEY_BYTES];
                rng.fill_bytes(&mut key);
                let cipher = ControlCipher::new(&key);
                let rl = record_len::<F>(secrets.len());
                let mut blob = Vec::with_capacity(n * rl);
                let mut column = vec![F::zero(); secrets.len()];
                for j in 0..n {
                    for (c, row) in column.iter_mut().zip(&v) {
                        *c = row[j];
                    }
                    blob.extend_from_slice(&cipher.seal(j as u64, 0, &column));
                }
                let root_w = MerkleTree::build(&blob, rl)?.root();
                (ClientControl::Externalized { key, root_w }, Some(blob))
            }
        };
        Ok((
            ClientState {
                params,
                secrets,
                root_m,
                control,
            },
            blob,
        ))
    }

    pub fn from_parts(
        params: PorParams,
        secrets: Vec<F>,
        root_m: RootDigest,
        control: ClientControl<F>,
    ) -> Result<Self, PorError> {
        let ok = secrets.len() as u64 == params.t
            && match &control {
                ClientControl::Local { v } => {
                    v.len() == secrets.len() && v.iter().all(|r| r.len() as u64 == params.n)
                }
                ClientControl::Externalized { .. } => params.strategy == Strategy::Externalized,
            };
        if !ok {
            return Err(PorError::Format("client state does not match parameters".into()));
        }
        Ok(ClientState {
            params,
            secrets,
            root_m,
            control,
        })
    }

    pub fn params(&self) -> &PorParams {
        &self.params
    }

    pub fn secrets(&self) -> &[F] {
        &self.secrets
    }

    pub fn root_m(&self) -> RootDigest {
        self.root_m
    }

    pub fn control(&self) -> &ClientControl<F> {
        &self.control
    }

    pub fn layout(&self) -> StoreLayout {
        StoreLayout {
            field_id: F::ID,
            n_bytes: self.params.n_bytes,
            m: self.params.m,
            n: self.params.n,
            chunk_bytes: self.params.chunk_bytes as u32,
            block_bytes: self.params.block_bytes as u32,
            record_len: match self.control {
                ClientControl::Local { .. } => 0,
                ClientControl::Externalized { .. } => record_len::<F>(self.secrets.len()) as u32,
            },
        }
    }

    fn record_len(&self) -> usize {
        record_len::<F>(self.secrets.len())
    }

    /// Fetches blocks from one tree and checks them against `root`.
    fn verified_blocks<S: StorageServer + ?Sized>(
        &self,
        server: &mut S,
        tree: TreeId,
        blocks: Range<u64>,
    ) -> Result<(Vec<u8>, MerklePath), PorError> {
        let (root, leaf_count, block_bytes, total) = match (tree, &self.control) {
            (TreeId::Data, _) => (
                self.root_m,
                self.params.leaf_count(),
                self.params.block_bytes,
                self.params.n_bytes,
            ),
            (TreeId::Control, ClientControl::Externalized { root_w, .. }) => {
                let rl = self.record_len();
                (*root_w, self.params.n, rl, self.params.n * rl as u64)
            }
            (TreeId::Control, ClientControl::Local { .. }) => {
                return Err(PorError::OutOfRange("no remote control matrix".into()))
            }
        };
        let geom = TreeGeometry {
            root,
            leaf_count,
            block_bytes,
            total,
        };
        fetch_verified(server, tree, blocks, &geom)
    }

    fn data_geometry(&self) -> TreeGeometry {
        TreeGeometry {
            root: self.root_m,
            leaf_count: self.params.leaf_count(),
            block_bytes: self.params.block_bytes,
            total: self.params.n_bytes,
        }
    }

    /// Reads `len` bytes at `offset`, verified against the data root.
    pub fn read_bytes<S: StorageServer + ?Sized>(
        &self,
        server: &mut S,
        offset: u64,
        len: u64,
    ) -> Result<Vec<u8>, PorError> {
        read_verified(server, &self.data_geometry(), offset, len)
    }

    /// Byte offset and stored width of cell `(i, j)` (0-based).
    fn cell_extent(&self, i: u64, j: u64) -> Result<(u64, usize), PorError> {
        if i >= self.params.m || j >= self.params.n {
            return Err(PorError::OutOfRange(format!("cell ({i}, {j})")));
        }
        let off = self.params.cell_offset(i, j);
        if off >= self.params.n_bytes {
            return Err(PorError::OutOfRange(format!("cell ({i}, {j}) is past the end of the file")));
        }
        let width = (self.params.n_bytes - off).min(self.params.chunk_bytes as u64);
        Ok((off, width as usize))
    }

    pub fn read_cell<S: StorageServer + ?Sized>(&self, server: &mut S, i: u64, j: u64) -> Result<F, PorError> {
        let (off, width) = self.cell_extent(i, j)?;
        let bytes = self.read_bytes(server, off, width as u64)?;
        Ok(F::decode_chunk(&bytes))
    }

    pub fn write_cell<S: StorageServer + ?Sized>(
        &mut self,
        server: &mut S,
        i: u64,
        j: u64,
        value: F,
    ) -> Result<(), PorError> {
        let (_, width) = self.cell_extent(i, j)?;
        let mut enc = vec![0u8; F::CHUNK_BYTES];
        value
            .encode_chunk(&mut enc)
            .map_err(|_| PorError::OutOfRange("value does not fit in a cell".into()))?;
        if enc[width..].iter().any(|&b| b != 0) {
            return Err(PorError::OutOfRange("value does not fit in the final partial cell".into()));
        }
        self.patch_cell(server, i, j, |cell| cell.copy_from_slice(&enc[..cell.len()]))
    }

    /// Overwrites `data.len()` bytes at `offset`, one cell at a time.
    pub fn write_bytes<S: StorageServer + ?Sized>(
        &mut self,
        server: &mut S,
        offset: u64,
        data: &[u8],
    ) -> Result<(), PorError> {
        if offset
            .checked_add(data.len() as u64)
            .is_none_or(|end| end > self.params.n_bytes)
        {
            return Err(PorError::OutOfRange(format!(
                "bytes {offset}+{} beyond {}",
                data.len(),
                self.params.n_bytes
            )));
        }
        let c = self.params.chunk_bytes as u64;
        let mut pos = offset;
        let end = offset + data.len() as u64;
        while pos < end {
            let idx = pos / c;
            let cell_start = idx * c;
            let upto = (cell_start + c).min(end);
            let src = &data[(pos - offset) as usize..(upto - offset) as usize];
            let within = (pos - cell_start) as usize;
            let (i, j) = (idx / self.params.n, idx % self.params.n);
            self.patch_cell(server, i, j, |cell| {
                cell[within..within + src.len()].copy_from_slice(src)
            })?;
            pos = upto;
        }
        Ok(())
    }

    /// One verified read-modify-write of a single cell, updating the
    /// control matrix by the rank-one correction for the change.
    fn patch_cell<S: StorageServer + ?Sized>(
        &mut self,
        server: &mut S,
        i: u64,
        j: u64,
        patch: impl FnOnce(&mut [u8]),
    ) -> Result<(), PorError> {
        let (off, width) = self.cell_extent(i, j)?;
        let bb = self.params.block_bytes as u64;
        let block = off / bb;
        let (mut bytes, path) = self.verified_blocks(server, TreeId::Data, block..block + 1)?;
        let within = (off - block * bb) as usize;
        let cell = &mut bytes[within..within + width];
        let old = F::decode_chunk(cell);
        patch(cell);
        let new = F::decode_chunk(cell);
        let new_cell = cell.to_vec();
        let delta = new - old;

        let leaf = hash_leaf(&bytes, self.params.block_bytes);
        let new_root_m = root_from_leaves(self.params.leaf_count(), block, &[leaf], &path)
            .ok_or(Reject::MerkleMismatch)?;

        // Column j gains delta * [s_k^(i+1)]_k.
        let shift: Vec<F> = self.secrets.iter().map(|s| s.pow(i + 1) * delta).collect();
        let mut req = WriteRequest {
            data: Some((off, new_cell)),
            control: None,
        };
        let new_control = match &self.control {
            ClientControl::Local { v } => {
                let mut v = v.clone();
                for (row, d) in v.iter_mut().zip(&shift) {
                    row[j as usize] += *d;
                }
                ClientControl::Local { v }
            }
            ClientControl::Externalized { key, .. } => {
                let key = *key;
                let rl = self.record_len();
                let (record, wpath) = self.verified_blocks(server, TreeId::Control, j..j + 1)?;
                let cipher = ControlCipher::new(&key);
                let (counter, mut column) = cipher.open::<F>(j, &record, self.secrets.len())?;
                for (c, d) in column.iter_mut().zip(&shift) {
                    *c += *d;
                }
                let sealed = cipher.seal(j, counter + 1, &column);
                let root_w = root_from_leaves(self.params.n, j, &[hash_leaf(&sealed, rl)], &wpath)
                    .ok_or(Reject::MerkleMismatch)?;
                req.control = Some((j, sealed));
                ClientControl::Externalized { key, root_w }
            }
        };

        let ack = server.write(&req)?;
        let expected_w = match &new_control {
            ClientControl::Externalized { root_w, .. } => Some(*root_w),
            ClientControl::Local { .. } => None,
        };
        if ack.root_m != new_root_m || (expected_w.is_some() && ack.root_w != expected_w) {
            return Err(Reject::ServerRootMismatch.into());
        }
        self.root_m = new_root_m;
        self.control = new_control;
        Ok(())
    }

    /// Judges a server reply to challenge `rho`.
    pub fn check_reply(&self, rho: F, reply: &AuditReply<F>) -> Result<(), Reject> {
        let m = self.params.m as usize;
        let n = self.params.n as usize;
        if reply.y.len() != m {
            return Err(Reject::ResponseLength {
                expected: m,
                got: reply.y.len(),
            });
        }
        let x = powers(rho, n).map_err(|_| Reject::BadEncoding)?;
        let lhs = secret_combination(&self.secrets, &reply.y);
        let rhs = match &self.control {
            ClientControl::Local { v } => control_combination(v, &x),
            ClientControl::Externalized { key, root_w } => {
                let proof = reply.control.as_ref().ok_or(Reject::MissingControl)?;
                let rl = self.record_len();
                if proof.blocks.len() != n * rl {
                    return Err(Reject::BlockLength);
                }
                if !mt_verify(root_w, self.params.n, 0, &proof.blocks, rl, &proof.path) {
                    return Err(Reject::MerkleMismatch);
                }
                let cipher = ControlCipher::new(key);
                let mut acc = vec![F::zero(); self.secrets.len()];
                for (j, (rec, xj)) in proof.blocks.chunks(rl).zip(&x).enumerate() {
                    let (_, column) = cipher.open::<F>(j as u64, rec, self.secrets.len())?;
                    for (a, c) in acc.iter_mut().zip(column) {
                        *a += c * *xj;
                    }
                }
                acc
            }
        };
        if lhs == rhs {
            Ok(())
        } else {
            Err(Reject::CheckFailed)
        }
    }

    /// Audits with a caller-chosen challenge. Rejections are recorded in the
    /// outcome; transport and server errors are returned as `Err`.
    pub fn audit_with<S: StorageServer + ?Sized>(&self, server: &mut S, rho: F) -> Result<AuditOutcome<F>, PorError> {
        if rho.is_zero() {
            return Err(crate::field::FieldError::ZeroChallenge.into());
        }
        let reply = server.audit(rho)?;
        let reason = self.check_reply(rho, &reply).err();
        Ok(AuditOutcome {
            transcript: AuditTranscript {
                rho,
                y: reply.y,
                verdict: if reason.is_none() { Verdict::Accept } else { Verdict::Reject },
            },
            reason,
        })
    }

    pub fn audit<S: StorageServer + ?Sized, R: RngCore + ?Sized>(
        &self,
        server: &mut S,
        rng: &mut R,
    ) -> Result<AuditOutcome<F>, PorError> {
        self.audit_with(server, F::random_nonzero(rng))
    }

    pub fn extract_shape(&self) -> ExtractShape {
        ExtractShape {
            n_bytes: self.params.n_bytes,
            m: self.params.m,
            n: self.params.n,
            chunk_bytes: self.params.chunk_bytes,
            required: self.params.extraction_count(),
        }
    }

    pub fn extract(&self, transcripts: &[AuditTranscript<F>]) -> Result<Vec<u8>, PorError> {
        extract_file(&self.extract_shape(), transcripts)
    }
}
