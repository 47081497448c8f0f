//! Audit transcripts and their on-disk form.
//!
//! A transcript file holds one or more records back to back:
//! `"PORT" | version u8 | field id u8 | rho | m u64 LE | y[m] | verdict u8`.

use crate::error::PorError;
use crate::field::Field;

const MAGIC: &[u8; 4] = b"PORT";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject,
}

impl Verdict {
    pub fn accepted(self) -> bool {
        self == Verdict::Accept
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditTranscript<F> {
    pub rho: F,
    pub y: Vec<F>,
    pub verdict: Verdict,
}

impl<F: Field> AuditTranscript<F> {
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(F::ID);
        out.extend_from_slice(&self.rho.to_canonical_vec());
        out.extend_from_slice(&(self.y.len() as u64).to_le_bytes());
        for v in &self.y {
            out.extend_from_slice(&v.to_canonical_vec());
        }
        out.push(self.verdict.accepted() as u8);
    }

    /// Parses one record, returning it and the bytes consumed.
    pub fn decode(b: &[u8]) -> Result<(Self, usize), PorError> {
        let bad = |what: &str| PorError::Format(format!("transcript: {what}"));
        let e = F::ENCODED_BYTES;
        let head = 4 + 2 + e + 8;
        if b.len() < head || &b[..4] != MAGIC {
            return Err(bad("missing header"));
        }
        if b[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        if b[5] != F::ID {
            return Err(bad("field mismatch"));
        }
        let rho = F::read_canonical(&b[6..6 + e]).ok_or_else(|| bad("bad challenge"))?;
        let m = u64::from_le_bytes(b[6 + e..head].try_into().unwrap());
        let body = (m as usize)
            .checked_mul(e)
            .filter(|len| b.len() - head > *len)
            .ok_or_else(|| bad("truncated"))?;
        let y = b[head..head + body]
            .chunks(e)
            .map(F::read_canonical)
            .collect::<Option<Vec<F>>>()
            .ok_or_else(|| bad("bad response element"))?;
        let verdict = match b[head + body] {
            1 => Verdict::Accept,
            0 => Verdict::Reject,
            _ => return Err(bad("bad verdict")),
        };
        Ok((AuditTranscript { rho, y, verdict }, head + body + 1))
    }

    pub fn decode_all(mut b: &[u8]) -> Result<Vec<Self>, PorError> {
        let mut out = Vec::new();
        while !b.is_empty() {
            let (t, used) = Self::decode(b)?;
            out.push(t);
            b = &b[used..];
        }
        Ok(out)
    }
}
