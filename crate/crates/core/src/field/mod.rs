//! Finite-field arithmetic for audits.
//!
//! The file is never re-encoded: a run of `CHUNK_BYTES` little-endian bytes is
//! read directly as one field element. Two moduli are used in production, the
//! largest 57-bit prime (private audits, 7-byte cells) and the ristretto255
//! group order (public audits, 31-byte cells). [`Zmod`] also admits small
//! moduli so failure probabilities can be measured in tests.

mod interp;
mod matrix;
mod scalar;
mod zmod;

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::RngCore;
use thiserror::Error;

pub use interp::interpolate_rows;
pub use matrix::{
    mat_vec_naive, mat_vec_stream, mat_vec_stream_with, matrix_shape, vec_mat_stream, MatrixView,
};
pub use zmod::{Fp57, Zmod, P57};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("chunk must be {expected} bytes, got {got}")]
    WrongChunkLength { expected: usize, got: usize },
    #[error("challenge element must be nonzero")]
    ZeroChallenge,
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("interpolation points are not distinct and nonzero")]
    SingularSystem,
    #[error("value does not fit in a {0}-byte cell")]
    ValueTooLarge(usize),
    #[error("non-canonical field encoding")]
    NonCanonical,
}

/// Arithmetic needed by the audit protocol, plus the raw-byte mapping.
///
/// Implementors with a composite modulus (only the toy test group) return
/// `None` from [`Field::inverse`] for non-units.
pub trait Field:
    Copy
    + Eq
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    /// Bytes of file data packed into one element.
    const CHUNK_BYTES: usize;
    /// Length of the canonical little-endian serialization.
    const ENCODED_BYTES: usize;
    /// Tag identifying the modulus in persisted and wire formats.
    const ID: u8;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_u64(v: u64) -> Self;
    fn inverse(&self) -> Option<Self>;

    /// log2 of the modulus.
    fn log2_modulus() -> f64;
    /// Whether the modulus is at least `bound`.
    fn modulus_at_least(bound: u128) -> bool;

    /// Reads up to `CHUNK_BYTES` little-endian bytes; missing high bytes are zero.
    fn decode_chunk(bytes: &[u8]) -> Self;
    /// Writes the element as exactly `CHUNK_BYTES` bytes, or fails if it does not fit.
    fn encode_chunk(&self, out: &mut [u8]) -> Result<(), FieldError>;

    fn write_canonical(&self, out: &mut [u8]);
    fn read_canonical(bytes: &[u8]) -> Option<Self>;

    /// Uniform sample from the nonzero elements.
    fn random_nonzero<R: RngCore + ?Sized>(rng: &mut R) -> Self;

    fn is_zero(&self) -> bool {
        *self == Self::zero()
    }

    /// Dot product of a packed row of cells with `x`. Cells past the end of
    /// `row` count as zero, as does a zero-extended partial last cell.
    fn row_dot(row: &[u8], x: &[Self]) -> Self {
        let mut acc = Self::zero();
        for (chunk, xi) in row.chunks(Self::CHUNK_BYTES).zip(x) {
            acc += Self::decode_chunk(chunk) * *xi;
        }
        acc
    }

    /// `acc[j] += scale * row[j]` over a packed row of cells.
    fn axpy_row(acc: &mut [Self], scale: Self, row: &[u8]) {
        for (a, chunk) in acc.iter_mut().zip(row.chunks(Self::CHUNK_BYTES)) {
            *a += scale * Self::decode_chunk(chunk);
        }
    }

    fn to_canonical_vec(&self) -> Vec<u8> {
        let mut out = vec![0u8; Self::ENCODED_BYTES];
        self.write_canonical(&mut out);
        out
    }

    fn pow(&self, mut exp: u64) -> Self {
        let mut base = *self;
        let mut acc = Self::one();
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            exp >>= 1;
        }
        acc
    }
}

/// Interprets one cell of file data, checking the cell width.
pub fn elem_from_chunk<F: Field>(bytes: &[u8]) -> Result<F, FieldError> {
    if bytes.len() != F::CHUNK_BYTES {
        return Err(FieldError::WrongChunkLength {
            expected: F::CHUNK_BYTES,
            got: bytes.len(),
        });
    }
    Ok(F::decode_chunk(bytes))
}

pub fn chunk_from_elem<F: Field>(elem: &F) -> Result<Vec<u8>, FieldError> {
    let mut out = vec![0u8; F::CHUNK_BYTES];
    elem.encode_chunk(&mut out)?;
    Ok(out)
}

/// `[rho, rho^2, ..., rho^n]`.
pub fn powers<F: Field>(rho: F, n: usize) -> Result<Vec<F>, FieldError> {
    if rho.is_zero() {
        return Err(FieldError::ZeroChallenge);
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = rho;
    for _ in 0..n {
        out.push(acc);
        acc = acc * rho;
    }
    Ok(out)
}

pub fn dot<F: Field>(a: &[F], b: &[F]) -> Result<F, FieldError> {
    if a.len() != b.len() {
        return Err(FieldError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut acc = F::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    Ok(acc)
}

/// Serializes a vector as concatenated canonical encodings.
pub fn encode_vec<F: Field>(elems: &[F]) -> Vec<u8> {
    let mut out = vec![0u8; elems.len() * F::ENCODED_BYTES];
    for (e, slot) in elems.iter().zip(out.chunks_exact_mut(F::ENCODED_BYTES)) {
        e.write_canonical(slot);
    }
    out
}

pub fn decode_vec<F: Field>(bytes: &[u8]) -> Result<Vec<F>, FieldError> {
    if bytes.len() % F::ENCODED_BYTES != 0 {
        return Err(FieldError::NonCanonical);
    }
    bytes
        .chunks_exact(F::ENCODED_BYTES)
        .map(|c| F::read_canonical(c).ok_or(FieldError::NonCanonical))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type F101 = Zmod<101>;
    type F97 = Zmod<97>;

    fn v<const Q: u64>(xs: &[u64]) -> Vec<Zmod<Q>> {
        xs.iter().map(|&x| Zmod::<Q>::from_u64(x)).collect()
    }

    #[test]
    fn chunk_examples() {
        let one: Fp57 = elem_from_chunk(&[1, 0, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(one.value(), 1);
        let zero: Fp57 = elem_from_chunk(&[0; 7]).unwrap();
        assert_eq!(zero.value(), 0);
        let max: Fp57 = elem_from_chunk(&[0xff; 7]).unwrap();
        assert_eq!(max.value(), 72057594037927935);
        assert!(max.value() < P57);
        assert_eq!(
            elem_from_chunk::<Fp57>(&[0; 8]),
            Err(FieldError::WrongChunkLength { expected: 7, got: 8 })
        );
    }

    #[test]
    fn powers_examples() {
        assert_eq!(powers(Fp57::from_u64(2), 3).unwrap(), v::<P57>(&[2, 4, 8]));
        assert_eq!(powers(Fp57::one(), 4).unwrap(), v::<P57>(&[1, 1, 1, 1]));
        assert_eq!(powers(F101::from_u64(3), 3).unwrap(), v::<101>(&[3, 9, 27]));
        assert_eq!(powers(Fp57::zero(), 3), Err(FieldError::ZeroChallenge));
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&v::<97>(&[2, 3]), &v::<97>(&[4, 5])).unwrap(), F97::from_u64(23));
        assert_eq!(dot(&v::<97>(&[7, 8, 9]), &v::<97>(&[0, 0, 0])).unwrap(), F97::zero());
        assert_eq!(
            dot(&v::<P57>(&[1, 1, 1]), &v::<P57>(&[5, 6, 7])).unwrap(),
            Fp57::from_u64(18)
        );
        assert!(matches!(
            dot(&v::<97>(&[1]), &v::<97>(&[1, 2])),
            Err(FieldError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn chunk_round_trip(x in 0u64..(1 << 56)) {
            let mut bytes = x.to_le_bytes()[..7].to_vec();
            let e: Fp57 = elem_from_chunk(&bytes).unwrap();
            prop_assert_eq!(e.value(), x);
            let back = chunk_from_elem(&e).unwrap();
            prop_assert_eq!(&back, &bytes);
            bytes.push(0);
            prop_assert!(elem_from_chunk::<Fp57>(&bytes).is_err());
        }

        #[test]
        fn arithmetic_is_canonical(a in any::<u64>(), b in any::<u64>()) {
            let (x, y) = (Fp57::from_u64(a), Fp57::from_u64(b));
            for r in [x + y, x - y, x * y, -x] {
                prop_assert!(r.value() < P57);
            }
            let naive = ((a as u128 % P57 as u128) * (b as u128 % P57 as u128) % P57 as u128) as u64;
            prop_assert_eq!((x * y).value(), naive);
        }

        #[test]
        fn canonical_vec_round_trip(xs in proptest::collection::vec(0u64..P57, 0..20)) {
            let elems: Vec<Fp57> = xs.iter().map(|&x| Fp57::from_u64(x)).collect();
            prop_assert_eq!(decode_vec::<Fp57>(&encode_vec(&elems)).unwrap(), elems);
        }
    }
}
