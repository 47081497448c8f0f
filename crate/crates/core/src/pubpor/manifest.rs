//! Signed public key material.
//!
//! `"PORK" | version u8 | group id u8 | lambda u16 | effective kappa f64 |
//! m, n, t, n_bytes, epoch, timestamp (u64) | K[t][m] | root_M | root_w |
//! writer key[32] | signature[64]`. Integers are little-endian; the
//! signature covers every preceding byte.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};

use crate::error::PorError;
use crate::field::{matrix_shape, Field};
use crate::merkle::RootDigest;
use crate::params::block_bytes_for;
use crate::por::state::Reader;
use crate::por::StoreLayout;
use crate::pubpor::group::Group;

const MAGIC: &[u8; 4] = b"PORK";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest<G> {
    pub lambda: u32,
    pub effective_kappa: f64,
    pub n_bytes: u64,
    pub m: u64,
    pub n: u64,
    pub t: u64,
    /// Increases with every write so verifiers can refuse stale manifests.
    pub epoch: u64,
    /// Seconds since the Unix epoch at signing time.
    pub timestamp: u64,
    /// `K = g^U`, `t` rows of length `m`.
    pub k: Vec<Vec<G>>,
    pub root_m: RootDigest,
    pub root_w: RootDigest,
    pub writer_key: VerifyingKey,
    pub signature: Signature,
}

fn bad(msg: &str) -> PorError {
    PorError::Format(format!("manifest: {msg}"))
}

impl<G: Group> Manifest<G> {
    /// Everything the signature covers.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn body(
        lambda: u32,
        effective_kappa: f64,
        dims: [u64; 6],
        k: &[Vec<G>],
        root_m: &RootDigest,
        root_w: &RootDigest,
        writer_key: &VerifyingKey,
    ) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(G::ID);
        out.extend_from_slice(&(lambda as u16).to_le_bytes());
        out.extend_from_slice(&effective_kappa.to_le_bytes());
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for row in k {
            for e in row {
                out.extend_from_slice(&e.to_bytes());
            }
        }
        out.extend_from_slice(root_m.as_bytes());
        out.extend_from_slice(root_w.as_bytes());
        out.extend_from_slice(writer_key.as_bytes());
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn sign(
        lambda: u32,
        n_bytes: u64,
        (m, n, t): (u64, u64, u64),
        epoch: u64,
        timestamp: u64,
        k: Vec<Vec<G>>,
        root_m: RootDigest,
        root_w: RootDigest,
        key: &SigningKey,
    ) -> Self {
        let effective_kappa = G::effective_kappa(m);
        let writer_key = key.verifying_key();
        let body = Self::body(
            lambda,
            effective_kappa,
            [m, n, t, n_bytes, epoch, timestamp],
            &k,
            &root_m,
            &root_w,
            &writer_key,
        );
        Manifest {
            lambda,
            effective_kappa,
            n_bytes,
            m,
            n,
            t,
            epoch,
            timestamp,
            k,
            root_m,
            root_w,
            writer_key,
            signature: key.sign(&body),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Self::body(
            self.lambda,
            self.effective_kappa,
            [self.m, self.n, self.t, self.n_bytes, self.epoch, self.timestamp],
            &self.k,
            &self.root_m,
            &self.root_w,
            &self.writer_key,
        );
        out.extend_from_slice(&self.signature.to_bytes());
        out
    }

    /// Parses and checks the signature. With `trusted` set, the manifest must
    /// also be signed by that key; otherwise the embedded key is taken as is.
    pub fn decode(b: &[u8], trusted: Option<&VerifyingKey>) -> Result<Self, PorError> {
        if b.len() < 6 || &b[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        if b[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        if b[5] != G::ID {
            return Err(bad("group mismatch"));
        }
        let mut r = Reader::new(&b[6..], "manifest");
        let lambda = r.u16()? as u32;
        let effective_kappa = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        let (m, n, t, n_bytes) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let (epoch, timestamp) = (r.u64()?, r.u64()?);
        if n_bytes == 0 || t == 0 || matrix_shape(n_bytes, G::Scalar::CHUNK_BYTES) != (m, n) {
            return Err(bad("inconsistent shape"));
        }
        let k_bytes = t
            .checked_mul(m)
            .and_then(|c| c.checked_mul(G::ENCODED_BYTES as u64))
            .ok_or_else(|| bad("inconsistent shape"))?;
        let k_raw = r.take(usize::try_from(k_bytes).map_err(|_| bad("too large"))?)?;
        let k = k_raw
            .chunks(G::ENCODED_BYTES * m as usize)
            .map(|row| row.chunks(G::ENCODED_BYTES).map(G::decode).collect::<Option<Vec<G>>>())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("non-canonical group element"))?;
        let root_m = r.digest()?;
        let root_w = r.digest()?;
        let writer_key = VerifyingKey::from_bytes(r.take(32)?.try_into().unwrap())
            .map_err(|_| bad("invalid writer key"))?;
        let signed_len = b.len() - 64;
        let signature = Signature::from_bytes(r.take(64)?.try_into().unwrap());
        r.finish()?;
        if let Some(tk) = trusted {
            if tk != &writer_key {
                return Err(bad("signed by an untrusted key"));
            }
        }
        writer_key
            .verify(&b[..signed_len], &signature)
            .map_err(|_| bad("bad signature"))?;
        Ok(Manifest {
            lambda,
            effective_kappa,
            n_bytes,
            m,
            n,
            t,
            epoch,
            timestamp,
            k,
            root_m,
            root_w,
            writer_key,
            signature,
        })
    }

    pub fn layout(&self) -> StoreLayout {
        StoreLayout {
            field_id: G::Scalar::ID,
            n_bytes: self.n_bytes,
            m: self.m,
            n: self.n,
            chunk_bytes: G::Scalar::CHUNK_BYTES as u32,
            block_bytes: block_bytes_for(G::Scalar::CHUNK_BYTES) as u32,
            record_len: (self.t as usize * G::ENCODED_BYTES) as u32,
        }
    }
}
