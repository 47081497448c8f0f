//! Recovering the file from audit transcripts.

use std::collections::HashMap;

use crate::error::PorError;
use crate::field::{interpolate_rows, mat_vec_naive, powers, Field};
use crate::por::transcript::AuditTranscript;

/// Dimensions the extractor needs.
#[derive(Debug, Clone, Copy)]
pub struct ExtractShape {
    pub n_bytes: u64,
    pub m: u64,
    pub n: u64,
    pub chunk_bytes: usize,
    /// Minimum number of transcripts before extraction is attempted.
    pub required: u64,
}

/// Interpolates `M` from the accepted responses and returns the file bytes.
///
/// Needs at least `required` transcripts with a strict majority accepted and
/// `n` distinct accepted challenges. Every accepted response beyond the
/// first `n` must agree with the recovered matrix.
pub fn extract_file<F: Field>(
    shape: &ExtractShape,
    transcripts: &[AuditTranscript<F>],
) -> Result<Vec<u8>, PorError> {
    let accepted: Vec<&AuditTranscript<F>> =
        transcripts.iter().filter(|t| t.verdict.accepted()).collect();
    if (transcripts.len() as u64) < shape.required || accepted.len() * 2 <= transcripts.len() {
        return Err(PorError::ExtractPrecondition {
            have: transcripts.len(),
            accepted: accepted.len(),
            need: shape.required as usize,
        });
    }
    let m = shape.m as usize;
    let n = shape.n as usize;

    // One response per distinct challenge; repeats must agree.
    let mut seen: HashMap<Vec<u8>, &Vec<F>> = HashMap::new();
    let mut distinct = Vec::new();
    for t in &accepted {
        if t.y.len() != m {
            return Err(PorError::Inconsistent);
        }
        match seen.get(&t.rho.to_canonical_vec()) {
            Some(prev) if **prev != t.y => return Err(PorError::Inconsistent),
            Some(_) => {}
            None => {
                seen.insert(t.rho.to_canonical_vec(), &t.y);
                distinct.push(*t);
            }
        }
    }
    if distinct.len() < n {
        return Err(PorError::InsufficientPoints {
            distinct: distinct.len(),
            needed: n,
        });
    }

    let (basis, rest) = distinct.split_at(n);
    let points: Vec<F> = basis.iter().map(|t| t.rho).collect();
    let y_rows: Vec<Vec<F>> = (0..m)
        .map(|i| basis.iter().map(|t| t.y[i]).collect())
        .collect();
    let matrix = interpolate_rows(&points, &y_rows)?;

    for t in rest {
        let x = powers(t.rho, n)?;
        if mat_vec_naive(&matrix, &x) != t.y {
            return Err(PorError::Inconsistent);
        }
    }

    let c = shape.chunk_bytes;
    let mut out = vec![0u8; m * n * c];
    for (row, cells) in matrix.iter().zip(out.chunks_mut(n * c)) {
        for (v, cell) in row.iter().zip(cells.chunks_mut(c)) {
            v.encode_chunk(cell).map_err(|_| PorError::Inconsistent)?;
        }
    }
    let keep = shape.n_bytes as usize;
    if out[keep..].iter().any(|&b| b != 0) {
        return Err(PorError::Inconsistent);
    }
    out.truncate(keep);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Zmod;
    use crate::por::transcript::Verdict;

    type F = Zmod<23>;

    fn t(rho: u64, y: &[u64], ok: bool) -> AuditTranscript<F> {
        AuditTranscript {
            rho: F::from_u64(rho),
            y: y.iter().map(|&v| F::from_u64(v)).collect(),
            verdict: if ok { Verdict::Accept } else { Verdict::Reject },
        }
    }

    fn shape() -> ExtractShape {
        ExtractShape {
            n_bytes: 4,
            m: 2,
            n: 2,
            chunk_bytes: 1,
            required: 2,
        }
    }

    #[test]
    fn two_by_two_example() {
        // M = [[1,2],[3,4]]: rho=1 -> [3,7], rho=2 -> [10,22].
        let ts = [t(1, &[3, 7], true), t(2, &[10, 22], true)];
        assert_eq!(extract_file(&shape(), &ts).unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn preconditions() {
        let ts = [t(1, &[3, 7], true)];
        assert!(matches!(
            extract_file(&shape(), &ts),
            Err(PorError::ExtractPrecondition { .. })
        ));
        let ts = [t(1, &[3, 7], true), t(1, &[3, 7], true), t(2, &[0, 0], false)];
        assert!(matches!(
            extract_file(&shape(), &ts),
            Err(PorError::InsufficientPoints { distinct: 1, needed: 2 })
        ));
        let ts = [t(1, &[3, 7], true), t(2, &[10, 22], false)];
        assert!(matches!(
            extract_file(&shape(), &ts),
            Err(PorError::ExtractPrecondition { .. })
        ));
    }

    #[test]
    fn disagreement_is_inconsistent() {
        let ts = [t(1, &[3, 7], true), t(2, &[10, 22], true), t(3, &[0, 0], true)];
        assert!(matches!(extract_file(&shape(), &ts), Err(PorError::Inconsistent)));
        let ts = [t(1, &[3, 7], true), t(1, &[3, 8], true), t(2, &[10, 22], true)];
        assert!(matches!(extract_file(&shape(), &ts), Err(PorError::Inconsistent)));
    }

    #[test]
    fn nonzero_padding_is_inconsistent() {
        let mut s = shape();
        s.n_bytes = 3;
        let ts = [t(1, &[3, 7], true), t(2, &[10, 22], true)];
        assert!(matches!(extract_file(&s, &ts), Err(PorError::Inconsistent)));
    }
}
