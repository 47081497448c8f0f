//! The ristretto255 scalar field, used as the exponent space of public audits.

use curve25519_dalek::Scalar;
use rand::RngCore;

use super::{Field, FieldError};

impl Field for Scalar {
    // 248-bit cells keep every data element below the group order.
    const CHUNK_BYTES: usize = 31;
    const ENCODED_BYTES: usize = 32;
    const ID: u8 = 2;

    fn zero() -> Self {
        Scalar::ZERO
    }

    fn one() -> Self {
        Scalar::ONE
    }

    fn from_u64(v: u64) -> Self {
        Scalar::from(v)
    }

    fn inverse(&self) -> Option<Self> {
        (*self != Scalar::ZERO).then(|| self.invert())
    }

    fn log2_modulus() -> f64 {
        // 2^252 + 27742317777372353535851937790883648493
        252.0 + (1.0 + 2.774_231_777_737_235_4e37 / 2f64.powi(252)).log2()
    }

    fn modulus_at_least(bound: u128) -> bool {
        let _ = bound;
        true
    }

    fn decode_chunk(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 32];
        buf[..bytes.len()].copy_from_slice(bytes);
        Scalar::from_bytes_mod_order(buf)
    }

    fn encode_chunk(&self, out: &mut [u8]) -> Result<(), FieldError> {
        let bytes = self.to_bytes();
        if bytes[31] != 0 {
            return Err(FieldError::ValueTooLarge(31));
        }
        out[..31].copy_from_slice(&bytes[..31]);
        Ok(())
    }

    fn write_canonical(&self, out: &mut [u8]) {
        out[..32].copy_from_slice(self.as_bytes());
    }

    fn read_canonical(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; 32] = bytes.get(..32)?.try_into().ok()?;
        Option::from(Scalar::from_canonical_bytes(arr))
    }

    fn random_nonzero<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        loop {
            let mut wide = [0u8; 64];
            rng.fill_bytes(&mut wide);
            let s = Scalar::from_bytes_mod_order_wide(&wide);
            if s != Scalar::ZERO {
                return s;
            }
        }
    }
}
