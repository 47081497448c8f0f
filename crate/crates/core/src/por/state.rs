//! Client state file.
//!
//! `"PORC" | version u8 | mode u8 | field id u8 | lambda u16 | kappa u16 |
//! m, n, t, n_bytes (u64 LE) | s[t] | root_M | V[t][n]` for the local mode, or
//! `... | root_M | key[32] | root_W` for the externalized one.

use crate::error::PorError;
use crate::field::{matrix_shape, Field};
use crate::merkle::{RootDigest, DIGEST_LEN};
use crate::params::{block_bytes_for, PorParams, Strategy};
use crate::por::client::{ClientControl, ClientState};
use crate::por::control::KEY_BYTES;

pub const MAGIC: &[u8; 4] = b"PORC";
pub const VERSION: u8 = 1;
pub const MODE_LOCAL: u8 = 0;
pub const MODE_EXTERNALIZED: u8 = 1;
pub const MODE_PUBLIC_WRITER: u8 = 2;

/// Reads the mode and field bytes without parsing the rest.
pub fn peek_header(b: &[u8]) -> Result<(u8, u8), PorError> {
    if b.len() < 7 || &b[..4] != MAGIC {
        return Err(PorError::Format("not a client state file".into()));
    }
    if b[4] != VERSION {
        return Err(PorError::Format(format!("unsupported state version {}", b[4])));
    }
    Ok((b[5], b[6]))
}

pub(crate) struct Reader<'a> {
    b: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(b: &'a [u8], what: &'static str) -> Self {
        Reader { b, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], PorError> {
        if self.b.len() < n {
            return Err(PorError::Format(format!("{} is truncated", self.what)));
        }
        let (h, t) = self.b.split_at(n);
        self.b = t;
        Ok(h)
    }

    pub(crate) fn u16(&mut self) -> Result<u16, PorError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, PorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn elem<F: Field>(&mut self) -> Result<F, PorError> {
        let what = self.what;
        F::read_canonical(self.take(F::ENCODED_BYTES)?)
            .ok_or_else(|| PorError::Format(format!("{what} has a non-canonical element")))
    }

    pub(crate) fn elems<F: Field>(&mut self, count: u64) -> Result<Vec<F>, PorError> {
        // Bound the allocation by what is actually present.
        if count.saturating_mul(F::ENCODED_BYTES as u64) > self.b.len() as u64 {
            return Err(PorError::Format(format!("{} is truncated", self.what)));
        }
        (0..count).map(|_| self.elem()).collect()
    }

    pub(crate) fn digest(&mut self) -> Result<RootDigest, PorError> {
        Ok(RootDigest::from_slice(self.take(DIGEST_LEN)?).unwrap())
    }

    pub(crate) fn finish(self) -> Result<(), PorError> {
        if self.b.is_empty() {
            Ok(())
        } else {
            Err(PorError::Format(format!("{} has trailing bytes", self.what)))
        }
    }
}

pub fn encode_client<F: Field>(c: &ClientState<F>) -> Vec<u8> {
    let p = c.params();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match c.control() {
        ClientControl::Local { .. } => MODE_LOCAL,
        ClientControl::Externalized { .. } => MODE_EXTERNALIZED,
    });
    out.push(F::ID);
    out.extend_from_slice(&(p.lambda as u16).to_le_bytes());
    out.extend_from_slice(&(p.kappa as u16).to_le_bytes());
    for v in [p.m, p.n, p.t, p.n_bytes] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in c.secrets() {
        out.extend_from_slice(&s.to_canonical_vec());
    }
    out.extend_from_slice(c.root_m().as_bytes());
    match c.control() {
        ClientControl::Local { v } => {
            for row in v {
                for e in row {
                    out.extend_from_slice(&e.to_canonical_vec());
                }
            }
        }
        ClientControl::Externalized { key, root_w } => {
            out.extend_from_slice(key);
            out.extend_from_slice(root_w.as_bytes());
        }
    }
    out
}

pub fn decode_client<F: Field>(b: &[u8]) -> Result<ClientState<F>, PorError> {
    let (mode, field) = peek_header(b)?;
    if field != F::ID {
        return Err(PorError::Format("state file is for a different field".into()));
    }
    let mut r = Reader::new(&b[7..], "client state");
    let lambda = r.u16()? as u32;
    let kappa = r.u16()? as u32;
    let (m, n, t, n_bytes) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    if n_bytes == 0 || matrix_shape(n_bytes, F::CHUNK_BYTES) != (m, n) || t == 0 {
        return Err(PorError::Format("client state has an inconsistent shape".into()));
    }
    let strategy = match mode {
        MODE_LOCAL => Strategy::Local,
        MODE_EXTERNALIZED => Strategy::Externalized,
        other => return Err(PorError::Format(format!("mode {other} is not a private client"))),
    };
    let params = PorParams {
        lambda,
        kappa,
        n_bytes,
        m,
        n,
        t,
        chunk_bytes: F::CHUNK_BYTES,
        block_bytes: block_bytes_for(F::CHUNK_BYTES),
        strategy,
    };
    let secrets = r.elems::<F>(t)?;
    let root_m = r.digest()?;
    let control = match strategy {
        Strategy::Local => {
            let v = (0..t).map(|_| r.elems::<F>(n)).collect::<Result<_, _>>()?;
            ClientControl::Local { v }
        }
        Strategy::Externalized => {
            let key: [u8; KEY_BYTES] = r.take(KEY_BYTES)?.try_into().unwrap();
            ClientControl::Externalized {
                key,
                root_w: r.digest()?,
            }
        }
    };
    r.finish()?;
    ClientState::from_parts(params, secrets, root_m, control)
}
