//! Prime-order groups for hiding control vectors in the exponent.

use std::fmt::Debug;

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::traits::{Identity, VartimeMultiscalarMul};
use curve25519_dalek::Scalar;

use crate::field::{Field, Zmod};

pub trait Group: Copy + Eq + Debug + Send + Sync + 'static {
    /// Exponents, i.e. integers modulo the group order.
    type Scalar: Field;
    const ENCODED_BYTES: usize;
    const ID: u8;

    fn identity() -> Self;
    /// `g^s` for the fixed generator.
    fn gen_exp(s: &Self::Scalar) -> Self;
    fn op(&self, other: &Self) -> Self;
    fn exp(&self, s: &Self::Scalar) -> Self;

    /// `prod_i bases[i]^exps[i]`.
    fn multi_exp(bases: &[Self], exps: &[Self::Scalar]) -> Self {
        bases
            .iter()
            .zip(exps)
            .fold(Self::identity(), |acc, (b, e)| acc.op(&b.exp(e)))
    }

    fn encode(&self, out: &mut [u8]);
    /// Rejects anything but the canonical encoding of a group element.
    fn decode(bytes: &[u8]) -> Option<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; Self::ENCODED_BYTES];
        self.encode(&mut out);
        out
    }

    /// Effective computational security for `m` rows: `(log2 p - log2 m) / 2`.
    fn effective_kappa(m: u64) -> f64 {
        (Self::Scalar::log2_modulus() - (m.max(1) as f64).log2()) / 2.0
    }
}

/// ristretto255, order `2^252 + 27742317777372353535851937790883648493`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ristretto(pub RistrettoPoint);

impl Group for Ristretto {
    type Scalar = Scalar;
    const ENCODED_BYTES: usize = 32;
    const ID: u8 = 2;

    fn identity() -> Self {
        Ristretto(RistrettoPoint::identity())
    }

    fn gen_exp(s: &Scalar) -> Self {
        Ristretto(s * RISTRETTO_BASEPOINT_TABLE)
    }

    fn op(&self, other: &Self) -> Self {
        Ristretto(self.0 + other.0)
    }

    fn exp(&self, s: &Scalar) -> Self {
        Ristretto(self.0 * s)
    }

    fn multi_exp(bases: &[Self], exps: &[Scalar]) -> Self {
        let n = bases.len().min(exps.len());
        Ristretto(RistrettoPoint::vartime_multiscalar_mul(
            &exps[..n],
            bases[..n].iter().map(|b| b.0),
        ))
    }

    fn encode(&self, out: &mut [u8]) {
        out[..32].copy_from_slice(self.0.compress().as_bytes());
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        CompressedRistretto::from_slice(bytes.get(..32)?)
            .ok()?
            .decompress()
            .map(Ristretto)
    }
}

/// The multiplicative group of integers modulo 23 with generator 5.
/// Only for hand-checkable tests: discrete logs are trivial here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Toy23(u8);

impl Toy23 {
    pub const GENERATOR: u8 = 5;

    pub fn new(v: u8) -> Option<Self> {
        (1..23).contains(&v).then_some(Toy23(v))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl Group for Toy23 {
    /// 5 generates all 22 units, so exponents live modulo 22.
    type Scalar = Zmod<22>;
    const ENCODED_BYTES: usize = 1;
    const ID: u8 = 0xF1;

    fn identity() -> Self {
        Toy23(1)
    }

    fn gen_exp(s: &Zmod<22>) -> Self {
        Toy23(Self::GENERATOR).exp(s)
    }

    fn op(&self, other: &Self) -> Self {
        Toy23(((self.0 as u32 * other.0 as u32) % 23) as u8)
    }

    fn exp(&self, s: &Zmod<22>) -> Self {
        let mut acc = 1u32;
        let mut base = self.0 as u32;
        let mut e = s.value();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % 23;
            }
            base = base * base % 23;
            e >>= 1;
        }
        Toy23(acc as u8)
    }

    fn encode(&self, out: &mut [u8]) {
        out[0] = self.0;
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        match bytes {
            [v] => Toy23::new(*v),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn z(v: u64) -> Zmod<22> {
        Zmod::new(v)
    }

    #[test]
    fn toy_exponentiation() {
        assert_eq!(Toy23::gen_exp(&z(6)), Toy23(8));
        assert_eq!(Toy23::gen_exp(&z(2)), Toy23(2));
        assert_eq!(Toy23(2).exp(&z(6)), Toy23(18));
        assert_eq!(Toy23(8).exp(&z(2)), Toy23(18));
        assert_eq!(Toy23(2).exp(&z(7)), Toy23(13));
        assert_eq!(Toy23(8).op(&Toy23::gen_exp(&z(2))), Toy23(16));
        assert_eq!(Toy23::gen_exp(&z(8)), Toy23(16));
        // Generator has full order.
        let orbit: std::collections::HashSet<_> = (0..22).map(|e| Toy23::gen_exp(&z(e))).collect();
        assert_eq!(orbit.len(), 22);
    }

    #[test]
    fn toy_encoding() {
        for v in 0..=255u8 {
            assert_eq!(Toy23::decode(&[v]).is_some(), (1..23).contains(&v));
        }
        assert!(Toy23::decode(&[1, 2]).is_none());
    }

    #[test]
    fn ristretto_encoding_round_trip_and_canonicity() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = Ristretto::gen_exp(&Scalar::random_nonzero(&mut rng));
            assert_eq!(Ristretto::decode(&p.to_bytes()), Some(p));
        }
        // The field element p + 1 is not a canonical encoding.
        let mut bad = [0xffu8; 32];
        bad[0] = 0xee;
        bad[31] = 0x7f;
        assert!(Ristretto::decode(&bad).is_none());
        // Negative field elements (odd low bit) are rejected.
        let mut odd = [0u8; 32];
        odd[0] = 1;
        assert!(Ristretto::decode(&odd).is_none());
        assert!(Ristretto::decode(&[0u8; 31]).is_none());
    }

    #[test]
    fn ristretto_multi_exp_matches_naive() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let bases: Vec<_> = (0..9).map(|_| Ristretto::gen_exp(&Scalar::random_nonzero(&mut rng))).collect();
        let exps: Vec<Scalar> = (0..9).map(|_| Scalar::random_nonzero(&mut rng)).collect();
        let naive = bases
            .iter()
            .zip(&exps)
            .fold(Ristretto::identity(), |acc, (b, e)| acc.op(&b.exp(e)));
        assert_eq!(Ristretto::multi_exp(&bases, &exps), naive);
    }

    #[test]
    fn effective_kappa_for_large_files() {
        let k = Ristretto::effective_kappa(5680);
        assert!(k > 119.0 && k < 120.0, "{k}");
    }
}
