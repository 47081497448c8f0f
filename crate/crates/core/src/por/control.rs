//! Encrypted control columns for the externalized strategy.
//!
//! Column `j` of `V` is stored as `counter (u64 LE) || ciphertext || tag`.
//! The counter increases on each rewrite so nonces never repeat for a key.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};

use crate::error::Reject;
use crate::field::Field;

pub const KEY_BYTES: usize = 32;
const TAG_BYTES: usize = 16;
const COUNTER_BYTES: usize = 8;

pub fn record_len<F: Field>(t: usize) -> usize {
    COUNTER_BYTES + t * F::ENCODED_BYTES + TAG_BYTES
}

pub struct ControlCipher {
    aead: ChaCha20Poly1305,
}

fn nonce(column: u64, counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&(column as u32).to_le_bytes());
    n[4..].copy_from_slice(&counter.to_le_bytes());
    Nonce::from(n)
}

impl ControlCipher {
    pub fn new(key: &[u8; KEY_BYTES]) -> Self {
        ControlCipher {
            aead: ChaCha20Poly1305::new(Key::from_slice(key)),
        }
    }

    pub fn seal<F: Field>(&self, column: u64, counter: u64, values: &[F]) -> Vec<u8> {
        let mut plain = Vec::with_capacity(values.len() * F::ENCODED_BYTES);
        for v in values {
            plain.extend_from_slice(&v.to_canonical_vec());
        }
        let aad = column.to_le_bytes();
        let ct = self
            .aead
            .encrypt(&nonce(column, counter), Payload { msg: &plain, aad: &aad })
            .expect("in-memory encryption cannot fail");
        let mut out = Vec::with_capacity(COUNTER_BYTES + ct.len());
        out.extend_from_slice(&counter.to_le_bytes());
        out.extend_from_slice(&ct);
        out
    }

    /// Returns the record's counter and its `t` decrypted values.
    pub fn open<F: Field>(&self, column: u64, record: &[u8], t: usize) -> Result<(u64, Vec<F>), Reject> {
        if record.len() != record_len::<F>(t) {
            return Err(Reject::BlockLength);
        }
        let counter = u64::from_le_bytes(record[..COUNTER_BYTES].try_into().unwrap());
        let aad = column.to_le_bytes();
        let plain = self
            .aead
            .decrypt(
                &nonce(column, counter),
                Payload {
                    msg: &record[COUNTER_BYTES..],
                    aad: &aad,
                },
            )
            .map_err(|_| Reject::ControlDecrypt)?;
        let values = plain
            .chunks(F::ENCODED_BYTES)
            .map(F::read_canonical)
            .collect::<Option<Vec<F>>>()
            .ok_or(Reject::BadEncoding)?;
        Ok((counter, values))
    }
}
