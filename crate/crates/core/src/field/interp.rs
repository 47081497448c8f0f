use super::{Field, FieldError};
use crate::parallel;

/// Recovers `M` (m x n) from `Y = M X`, where column `l` of `X` is
/// `[p_l, p_l^2, ..., p_l^n]` for `points[l]`.
///
/// `y_rows` is `Y` in row-major form: `y_rows[i][l] = sum_j M[i][j] p_l^(j+1)`.
/// Row `i` is the coefficient vector of `z * P_i(z)` with `deg P_i < n`, so
/// each row is one Lagrange interpolation through `(p_l, Y[i][l] / p_l)`.
pub fn interpolate_rows<F: Field>(
    points: &[F],
    y_rows: &[Vec<F>],
) -> Result<Vec<Vec<F>>, FieldError> {
    let n = points.len();
    for row in y_rows {
        if row.len() != n {
            return Err(FieldError::LengthMismatch {
                left: row.len(),
                right: n,
            });
        }
    }
    let basis = inverse_vandermonde(points)?;
    Ok(parallel::map_range(0..y_rows.len(), |i| {
        let mut out = vec![F::zero(); n];
        for (y, b) in y_rows[i].iter().zip(&basis) {
            if y.is_zero() {
                continue;
            }
            for (o, c) in out.iter_mut().zip(b) {
                *o += *y * *c;
            }
        }
        out
    }))
}

/// Rows of `X^{-1}`: `basis[l][j]` is the coefficient of `z^j` in
/// `L_l(z) / p_l`, where `L_l` is the Lagrange basis polynomial for point `l`.
fn inverse_vandermonde<F: Field>(points: &[F]) -> Result<Vec<Vec<F>>, FieldError> {
    let n = points.len();
    if points.iter().any(|p| p.is_zero()) {
        return Err(FieldError::SingularSystem);
    }
    // prod_k (z - p_k), ascending coefficients.
    let mut master = vec![F::zero(); n + 1];
    master[0] = F::one();
    for (deg, p) in points.iter().enumerate() {
        for k in (1..=deg + 1).rev() {
            master[k] = master[k - 1] - *p * master[k];
        }
        master[0] = -(*p * master[0]);
    }

    let mut basis = Vec::with_capacity(n);
    for p in points {
        // Synthetic division of master by (z - p).
        let mut quot = vec![F::zero(); n];
        let mut carry = F::zero();
        for k in (0..n).rev() {
            carry = master[k + 1] + *p * carry;
            quot[k] = carry;
        }
        let mut denom = F::zero();
        for c in quot.iter().rev() {
            denom = denom * *p + *c;
        }
        let scale = (denom * *p).inverse().ok_or(FieldError::SingularSystem)?;
        basis.push(quot.into_iter().map(|c| c * scale).collect());
    }
    Ok(basis)
}
