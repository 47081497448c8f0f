use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use rand::RngCore;

use super::{Field, FieldError};

/// Largest prime below 2^57. Every 7-byte chunk is already a canonical element.
pub const P57: u64 = 144_115_188_075_855_859;

/// Integers modulo `Q`, stored canonically in a `u64`.
///
/// `Q` must be below 2^63. For prime `Q` this is a field; composite moduli
/// are only meant for the toy discrete-log group used in tests.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Zmod<const Q: u64>(u64);

/// The private-mode audit field.
pub type Fp57 = Zmod<P57>;

const fn floor_log2(x: u64) -> u32 {
    63 - x.leading_zeros()
}

const fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

impl<const Q: u64> Zmod<Q> {
    const CHUNK: usize = {
        let c = (floor_log2(Q) / 8) as usize;
        if c == 0 {
            1
        } else {
            c
        }
    };

    /// Products accumulated in a `u128` between reductions. Raw chunk values
    /// are below `max(Q, 256)`.
    const LAZY_TERMS: usize = {
        let bits = if ceil_log2(Q) < 8 { 8 } else { ceil_log2(Q) };
        let headroom = 126 - 2 * bits as i64;
        if headroom >= 16 {
            1 << 16
        } else if headroom <= 0 {
            1
        } else {
            1 << headroom
        }
    };

    const BITS: u32 = ceil_log2(Q);
    /// `2^BITS - Q`; reduction folds high bits back in multiplied by this.
    const FOLD: u128 = (1u128 << ceil_log2(Q)) - Q as u128;
    const FAST_REDUCE: bool = Self::FOLD < (1u128 << (ceil_log2(Q) / 2));

    #[inline(always)]
    fn reduce(mut x: u128) -> u64 {
        if Self::FAST_REDUCE {
            let mask = (1u128 << Self::BITS) - 1;
            while x >> Self::BITS != 0 {
                x = (x & mask) + (x >> Self::BITS) * Self::FOLD;
            }
            let mut r = x as u64;
            if r >= Q {
                r -= Q;
            }
            r
        } else {
            (x % Q as u128) as u64
        }
    }

    pub const fn new(v: u64) -> Self {
        Zmod(v % Q)
    }

    pub const fn value(self) -> u64 {
        self.0
    }

    pub const fn modulus() -> u64 {
        Q
    }

    #[inline(always)]
    fn read_raw(chunk: &[u8]) -> u64 {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        u64::from_le_bytes(buf)
    }
}

impl<const Q: u64> fmt::Debug for Zmod<Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const Q: u64> fmt::Display for Zmod<Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const Q: u64> Add for Zmod<Q> {
    type Output = Self;
    #[inline(always)]
    fn add(self, rhs: Self) -> Self {
        let s = self.0 + rhs.0;
        Zmod(if s >= Q { s - Q } else { s })
    }
}

impl<const Q: u64> AddAssign for Zmod<Q> {
    #[inline(always)]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const Q: u64> Sub for Zmod<Q> {
    type Output = Self;
    #[inline(always)]
    fn sub(self, rhs: Self) -> Self {
        Zmod(if self.0 >= rhs.0 {
            self.0 - rhs.0
        } else {
            self.0 + Q - rhs.0
        })
    }
}

impl<const Q: u64> Neg for Zmod<Q> {
    type Output = Self;
    fn neg(self) -> Self {
        Zmod(if self.0 == 0 { 0 } else { Q - self.0 })
    }
}

impl<const Q: u64> Mul for Zmod<Q> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, rhs: Self) -> Self {
        Zmod(Self::reduce(self.0 as u128 * rhs.0 as u128))
    }
}

impl<const Q: u64> Field for Zmod<Q> {
    const CHUNK_BYTES: usize = Self::CHUNK;
    const ENCODED_BYTES: usize = 8;
    const ID: u8 = if Q == P57 { 1 } else { 0xF0 };

    fn zero() -> Self {
        Zmod(0)
    }

    fn one() -> Self {
        Zmod(1 % Q)
    }

    fn from_u64(v: u64) -> Self {
        Zmod(v % Q)
    }

    fn inverse(&self) -> Option<Self> {
        // Extended Euclid; works for composite moduli too.
        let (mut r0, mut r1) = (Q as i128, self.0 as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (t0, t1) = (t1, t0 - q * t1);
        }
        if r0 != 1 {
            return None;
        }
        Some(Zmod(t0.rem_euclid(Q as i128) as u64))
    }

    fn log2_modulus() -> f64 {
        (Q as f64).log2()
    }

    fn modulus_at_least(bound: u128) -> bool {
        Q as u128 >= bound
    }

    #[inline(always)]
    fn decode_chunk(bytes: &[u8]) -> Self {
        debug_assert!(bytes.len() <= Self::CHUNK);
        Zmod(Self::read_raw(bytes) % Q)
    }

    fn encode_chunk(&self, out: &mut [u8]) -> Result<(), FieldError> {
        let c = Self::CHUNK;
        if c < 8 && self.0 >> (8 * c) != 0 {
            return Err(FieldError::ValueTooLarge(c));
        }
        out[..c].copy_from_slice(&self.0.to_le_bytes()[..c]);
        Ok(())
    }

    fn write_canonical(&self, out: &mut [u8]) {
        out[..8].copy_from_slice(&self.0.to_le_bytes());
    }

    fn read_canonical(bytes: &[u8]) -> Option<Self> {
        let v = u64::from_le_bytes(bytes.get(..8)?.try_into().ok()?);
        (v < Q).then_some(Zmod(v))
    }

    fn random_nonzero<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let bits = ceil_log2(Q);
        let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
        loop {
            let v = rng.next_u64() & mask;
            if v != 0 && v < Q {
                return Zmod(v);
            }
        }
    }

    fn row_dot(row: &[u8], x: &[Self]) -> Self {
        let c = Self::CHUNK;
        let full = (row.len() / c).min(x.len());
        let mut total: u128 = 0;
        for (cells, xs) in row[..full * c]
            .chunks(c * Self::LAZY_TERMS)
            .zip(x[..full].chunks(Self::LAZY_TERMS))
        {
            let mut acc: u128 = 0;
            for (chunk, xi) in cells.chunks_exact(c).zip(xs) {
                acc += Self::read_raw(chunk) as u128 * xi.0 as u128;
            }
            total += Self::reduce(acc) as u128;
        }
        // Partial trailing cell, zero-extended.
        if full < x.len() && full * c < row.len() {
            let raw = Self::read_raw(&row[full * c..]) % Q;
            total += raw as u128 * x[full].0 as u128;
        }
        Zmod(Self::reduce(total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chunk_widths() {
        assert_eq!(Fp57::CHUNK_BYTES, 7);
        assert_eq!(Zmod::<1009>::CHUNK_BYTES, 1);
        assert_eq!(Zmod::<22>::CHUNK_BYTES, 1);
        assert!(Fp57::modulus_at_least(1 << 56));
        assert!((Fp57::log2_modulus() - 57.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_prime_and_composite() {
        for a in 1..1009u64 {
            let x = Zmod::<1009>::new(a);
            assert_eq!(x * x.inverse().unwrap(), Zmod::one());
        }
        assert!(Zmod::<22>::new(2).inverse().is_none());
        assert_eq!(Zmod::<22>::new(3).inverse(), Some(Zmod::new(15)));
        assert!(Fp57::zero().inverse().is_none());
        let x = Fp57::new(123_456_789_012_345);
        assert_eq!(x * x.inverse().unwrap(), Fp57::one());
    }

    #[test]
    fn random_nonzero_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let v = Zmod::<1009>::random_nonzero(&mut rng).value();
            assert!(v != 0 && v < 1009);
        }
    }

    #[test]
    fn lazy_row_dot_matches_naive_across_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cells = Fp57::LAZY_TERMS * 2 + 5;
        let mut row = vec![0xffu8; cells * 7 - 3];
        rng.fill_bytes(&mut row[..100]);
        let x: Vec<Fp57> = (0..cells).map(|_| Fp57::random_nonzero(&mut rng)).collect();
        let mut naive = Fp57::zero();
        for (j, xi) in x.iter().enumerate() {
            let start = j * 7;
            if start < row.len() {
                let end = (start + 7).min(row.len());
                naive += Fp57::decode_chunk(&row[start..end]) * *xi;
            }
        }
        assert_eq!(Fp57::row_dot(&row, &x), naive);
    }

    #[test]
    fn folded_reduction_matches_division() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100_000 {
            let x = ((rng.next_u64() as u128) << 64 | rng.next_u64() as u128) >> 1;
            assert_eq!(Fp57::reduce(x) as u128, x % P57 as u128);
            assert_eq!(Zmod::<1009>::reduce(x) as u128, x % 1009);
            assert_eq!(Zmod::<1_000_003>::reduce(x) as u128, x % 1_000_003);
        }
        assert!(Fp57::FAST_REDUCE);
        assert_eq!(Fp57::reduce((P57 as u128 - 1) * (P57 as u128 - 1)), 1);
    }

    #[test]
    fn canonical_rejects_out_of_range() {
        assert!(Fp57::read_canonical(&P57.to_le_bytes()).is_none());
        assert_eq!(
            Fp57::read_canonical(&(P57 - 1).to_le_bytes()),
            Some(Fp57::new(P57 - 1))
        );
        let mut out = [0u8; 7];
        assert!(Fp57::new(1 << 56).encode_chunk(&mut out).is_err());
    }
}
