//! Protocol parameters derived from file size and security levels.

use crate::error::PorError;
use crate::field::{matrix_shape, Field};

/// Largest cell-aligned Merkle block not exceeding 8 KiB.
pub fn block_bytes_for(chunk_bytes: usize) -> usize {
    8192 - 8192 % chunk_bytes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Client keeps the control matrix `V`.
    Local,
    /// Server keeps `V` encrypted, under its own Merkle tree.
    Externalized,
}

#[derive(Debug, Clone, Default)]
pub struct ParamOptions {
    /// Skip the field-size and row-count checks. Only for measuring failure
    /// rates with deliberately tiny moduli.
    pub insecure_test_parameters: bool,
    /// Use this many control rows instead of the derived count.
    pub t_override: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PorParams {
    pub lambda: u32,
    pub kappa: u32,
    pub n_bytes: u64,
    pub m: u64,
    pub n: u64,
    pub t: u64,
    pub chunk_bytes: usize,
    pub block_bytes: usize,
    pub strategy: Strategy,
}

impl PorParams {
    pub fn derive<F: Field>(
        n_bytes: u64,
        lambda: u32,
        kappa: u32,
        strategy: Strategy,
    ) -> Result<Self, PorError> {
        Self::derive_with::<F>(n_bytes, lambda, kappa, strategy, &ParamOptions::default())
    }

    pub fn derive_with<F: Field>(
        n_bytes: u64,
        lambda: u32,
        kappa: u32,
        strategy: Strategy,
        opts: &ParamOptions,
    ) -> Result<Self, PorError> {
        if n_bytes == 0 {
            return Err(PorError::Params("file must be nonempty".into()));
        }
        let (m, n) = matrix_shape(n_bytes, F::CHUNK_BYTES);
        let field_floor = 16 * n as u128 + 96 * lambda as u128;
        if !opts.insecure_test_parameters && !F::modulus_at_least(field_floor) {
            return Err(PorError::Params(format!(
                "q >= 16n + 96*lambda requires q >= {field_floor}"
            )));
        }
        let t = match opts.t_override {
            Some(t) if t >= 1 => t,
            Some(_) => return Err(PorError::Params("t must be at least 1".into())),
            None => control_rows::<F>(lambda, m)?,
        };
        Ok(PorParams {
            lambda,
            kappa,
            n_bytes,
            m,
            n,
            t,
            chunk_bytes: F::CHUNK_BYTES,
            block_bytes: block_bytes_for(F::CHUNK_BYTES),
            strategy,
        })
    }

    /// Transcripts the extractor is guaranteed to succeed with: `4n + 24*lambda`.
    pub fn extraction_count(&self) -> u64 {
        4 * self.n + 24 * self.lambda as u64
    }

    pub fn leaf_count(&self) -> u64 {
        self.n_bytes.div_ceil(self.block_bytes as u64)
    }

    pub fn cell_offset(&self, i: u64, j: u64) -> u64 {
        (i * self.n + j) * self.chunk_bytes as u64
    }
}

/// `t = ceil(lambda / (log2 q - log2 m))`, the number of secret rows needed so
/// a forged response survives with probability at most `2^-lambda`.
pub fn control_rows<F: Field>(lambda: u32, m: u64) -> Result<u64, PorError> {
    let margin = F::log2_modulus() - (m as f64).log2();
    if margin <= 0.0 {
        return Err(PorError::Params(format!(
            "log2 q must exceed log2 m = {:.2}",
            (m as f64).log2()
        )));
    }
    Ok(((lambda as f64 / margin).ceil() as u64).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Fp57, Zmod};
    use curve25519_dalek::Scalar;

    #[test]
    fn gigabyte_private() {
        let p = PorParams::derive::<Fp57>(1_000_000_000, 40, 128, Strategy::Local).unwrap();
        assert_eq!((p.m, p.n, p.t), (11952, 11953, 1));
        assert_eq!(p.block_bytes, 8190);
    }

    #[test]
    fn extraction_count_formula() {
        let p = PorParams::derive::<Fp57>(64 * 64 * 7, 40, 128, Strategy::Local).unwrap();
        assert_eq!(p.n, 64);
        assert_eq!(p.extraction_count(), 1216);
    }

    #[test]
    fn lambda_80_needs_two_rows() {
        assert_eq!(control_rows::<Fp57>(80, 1 << 13).unwrap(), 2);
        assert_eq!(control_rows::<Fp57>(40, 1 << 13).unwrap(), 1);
    }

    #[test]
    fn block_sizes_align_with_cells() {
        assert_eq!(block_bytes_for(7), 8190);
        assert_eq!(block_bytes_for(31), 8184);
        assert_eq!(block_bytes_for(1), 8192);
        let p = PorParams::derive::<Scalar>(10_000, 40, 128, Strategy::Externalized).unwrap();
        assert_eq!(p.chunk_bytes, 31);
        assert_eq!(p.block_bytes, 8184);
    }

    #[test]
    fn small_field_is_refused_without_flag() {
        let err = PorParams::derive::<Zmod<1009>>(900, 40, 128, Strategy::Local).unwrap_err();
        assert!(err.to_string().contains("16n + 96*lambda"));
        let opts = ParamOptions {
            insecure_test_parameters: true,
            t_override: Some(2),
        };
        let p = PorParams::derive_with::<Zmod<1009>>(900, 40, 128, Strategy::Local, &opts).unwrap();
        assert_eq!((p.m, p.n, p.t), (30, 30, 2));
        assert!(PorParams::derive::<Fp57>(0, 40, 128, Strategy::Local).is_err());
    }
}
