use std::io;
use std::marker::PhantomData;

use super::{Field, FieldError};
use crate::parallel;
use crate::store::ByteStore;

/// Target bytes of file data read by one worker task.
const TASK_BYTES: usize = 1 << 20;

/// Square-ish shape for `n_bytes` of data packed `chunk_bytes` per cell:
/// `n = ceil(sqrt(cells))`, `m = ceil(cells / n)`.
pub fn matrix_shape(n_bytes: u64, chunk_bytes: usize) -> (u64, u64) {
    let cells = n_bytes.div_ceil(chunk_bytes as u64).max(1);
    let mut n = (cells as f64).sqrt() as u64;
    while n * n < cells {
        n += 1;
    }
    while n > 1 && (n - 1) * (n - 1) >= cells {
        n -= 1;
    }
    let m = cells.div_ceil(n);
    (m, n)
}

/// A byte store read in place as an `m x n` row-major matrix of cells.
/// Cells beyond the end of the store read as zero.
pub struct MatrixView<'a, F> {
    store: &'a dyn ByteStore,
    m: usize,
    n: usize,
    _field: PhantomData<F>,
}

impl<'a, F: Field> MatrixView<'a, F> {
    pub fn new(store: &'a dyn ByteStore, m: usize, n: usize) -> Self {
        MatrixView {
            store,
            m,
            n,
            _field: PhantomData,
        }
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    fn byte_range(&self, rows: std::ops::Range<usize>) -> (u64, u64) {
        let row_bytes = (self.n * F::CHUNK_BYTES) as u64;
        let len = self.store.len();
        let start = (rows.start as u64 * row_bytes).min(len);
        let end = (rows.end as u64 * row_bytes).min(len);
        (start, end)
    }

    /// Raw bytes of a run of rows, truncated at end of file.
    pub fn read_rows(&self, rows: std::ops::Range<usize>) -> io::Result<Vec<u8>> {
        let (start, end) = self.byte_range(rows);
        let mut buf = vec![0u8; (end - start) as usize];
        self.store.read_at(start, &mut buf)?;
        Ok(buf)
    }

    /// One cell, 0-based.
    pub fn cell(&self, i: usize, j: usize) -> io::Result<F> {
        let c = F::CHUNK_BYTES as u64;
        let off = (i as u64 * self.n as u64 + j as u64) * c;
        let len = self.store.len();
        if off >= len {
            return Ok(F::zero());
        }
        let mut buf = vec![0u8; (len - off).min(c) as usize];
        self.store.read_at(off, &mut buf)?;
        Ok(F::decode_chunk(&buf))
    }

    fn rows_dot(&self, rows: std::ops::Range<usize>, x: &[F]) -> io::Result<Vec<F>> {
        let buf = self.read_rows(rows.clone())?;
        let row_bytes = self.n * F::CHUNK_BYTES;
        let mut out = Vec::with_capacity(rows.len());
        for r in 0..rows.len() {
            let start = (r * row_bytes).min(buf.len());
            let end = ((r + 1) * row_bytes).min(buf.len());
            out.push(F::row_dot(&buf[start..end], x));
        }
        Ok(out)
    }
}

/// `y = M x`, computed in parallel over disjoint row ranges. `on_block` is
/// called with consecutive, in-order slices of `y` as soon as each wave of
/// row blocks completes, so callers can stream the result.
pub fn mat_vec_stream_with<F, S>(
    view: &MatrixView<'_, F>,
    x: &[F],
    mut on_block: S,
) -> io::Result<()>
where
    F: Field,
    S: FnMut(usize, &[F]) -> io::Result<()>,
{
    if x.len() != view.n {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            FieldError::LengthMismatch {
                left: x.len(),
                right: view.n,
            },
        ));
    }
    let row_bytes = (view.n * F::CHUNK_BYTES).max(1);
    let rows_per_task = (TASK_BYTES / row_bytes).max(1);
    let tasks = view.m.div_ceil(rows_per_task);
    let wave = (parallel::current_threads() * 4).max(1);

    let mut task = 0;
    while task < tasks {
        let wave_end = (task + wave).min(tasks);
        let results = parallel::map_range(task..wave_end, |t| {
            let start = t * rows_per_task;
            let end = (start + rows_per_task).min(view.m);
            view.rows_dot(start..end, x)
        });
        for (k, block) in results.into_iter().enumerate() {
            on_block((task + k) * rows_per_task, &block?)?;
        }
        task = wave_end;
    }
    Ok(())
}

/// `y = M x` collected into a vector.
pub fn mat_vec_stream<F: Field>(view: &MatrixView<'_, F>, x: &[F]) -> io::Result<Vec<F>> {
    let mut y = Vec::with_capacity(view.m);
    mat_vec_stream_with(view, x, |_, block| {
        y.extend_from_slice(block);
        Ok(())
    })?;
    Ok(y)
}

/// `W = U M` for `U` given as `t` rows of length `m`, in one pass over the
/// file. Partial products of disjoint row ranges are summed.
pub fn vec_mat_stream<F: Field>(view: &MatrixView<'_, F>, u: &[Vec<F>]) -> io::Result<Vec<Vec<F>>> {
    for row in u {
        if row.len() != view.m {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                FieldError::LengthMismatch {
                    left: row.len(),
                    right: view.m,
                },
            ));
        }
    }
    let row_bytes = (view.n * F::CHUNK_BYTES).max(1);
    let rows_per_task = (TASK_BYTES / row_bytes).max(1);
    let tasks = view.m.div_ceil(rows_per_task);
    let wave = (parallel::current_threads() * 2).max(1);
    let mut total = vec![vec![F::zero(); view.n]; u.len()];

    let mut task = 0;
    while task < tasks {
        let wave_end = (task + wave).min(tasks);
        let partials = parallel::map_range(task..wave_end, |t| -> io::Result<Vec<Vec<F>>> {
            let start = t * rows_per_task;
            let end = (start + rows_per_task).min(view.m);
            let buf = view.read_rows(start..end)?;
            let mut acc = vec![vec![F::zero(); view.n]; u.len()];
            for (r, row) in buf.chunks(row_bytes).enumerate() {
                for (k, urow) in u.iter().enumerate() {
                    F::axpy_row(&mut acc[k], urow[start + r], row);
                }
            }
            Ok(acc)
        });
        for part in partials {
            for (tot, p) in total.iter_mut().zip(part?) {
                for (a, b) in tot.iter_mut().zip(p) {
                    *a += b;
                }
            }
        }
        task = wave_end;
    }
    Ok(total)
}

/// Double-loop reference product over an explicit matrix.
pub fn mat_vec_naive<F: Field>(rows: &[Vec<F>], x: &[F]) -> Vec<F> {
    rows.iter()
        .map(|row| {
            row.iter()
                .zip(x)
                .fold(F::zero(), |acc, (a, b)| acc + *a * *b)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{powers, Fp57, Zmod};
    use crate::store::MemStore;
    use proptest::prelude::*;

    fn store_from_cells(cells: &[u64]) -> MemStore {
        MemStore::new(cells.iter().flat_map(|c| c.to_le_bytes()[..7].to_vec()).collect())
    }

    #[test]
    fn shape_rule() {
        assert_eq!(matrix_shape(1_000_000_000, 7), (11952, 11953));
        assert_eq!(matrix_shape(1 << 20, 7), (387, 388));
        assert_eq!(matrix_shape(900, 1), (30, 30));
        assert_eq!(matrix_shape(1, 7), (1, 1));
        for len in 1..2000u64 {
            let (m, n) = matrix_shape(len, 7);
            assert!(m * n >= len.div_ceil(7));
            assert!(m <= n);
        }
    }

    #[test]
    fn small_products() {
        let s = store_from_cells(&[1, 2, 3, 4]);
        let view = MatrixView::<Fp57>::new(&s, 2, 2);
        let ones = vec![Fp57::new(1); 2];
        assert_eq!(mat_vec_stream(&view, &ones).unwrap(), vec![Fp57::new(3), Fp57::new(7)]);
        let x = powers(Fp57::new(2), 2).unwrap();
        assert_eq!(mat_vec_stream(&view, &x).unwrap(), vec![Fp57::new(10), Fp57::new(22)]);
        let zeros = MemStore::new(vec![0; 28]);
        let zview = MatrixView::<Fp57>::new(&zeros, 2, 2);
        assert_eq!(mat_vec_stream(&zview, &x).unwrap(), vec![Fp57::new(0); 2]);
    }

    #[test]
    fn tail_reads_as_zero() {
        // 3 full cells + a 2-byte partial cell in a 2x3 shape.
        let mut bytes = store_from_cells(&[5, 6, 7]).0;
        bytes.extend_from_slice(&[9, 1]);
        let s = MemStore::new(bytes);
        let view = MatrixView::<Fp57>::new(&s, 2, 3);
        let y = mat_vec_stream(&view, &[Fp57::new(1); 3]).unwrap();
        assert_eq!(y, vec![Fp57::new(18), Fp57::new(9 + 256)]);
        assert_eq!(view.cell(1, 2).unwrap(), Fp57::new(0));
    }

    #[test]
    fn wrong_challenge_length() {
        let s = store_from_cells(&[1, 2, 3, 4]);
        let view = MatrixView::<Fp57>::new(&s, 2, 2);
        assert!(mat_vec_stream(&view, &[Fp57::new(1)]).is_err());
    }

    #[test]
    fn control_vector_example() {
        // u = [2, 4] (s = 2), M = [[1, 2], [3, 4]]  =>  u M = [14, 20]
        let s = store_from_cells(&[1, 2, 3, 4]);
        let view = MatrixView::<Fp57>::new(&s, 2, 2);
        let u = vec![powers(Fp57::new(2), 2).unwrap()];
        assert_eq!(vec_mat_stream(&view, &u).unwrap(), vec![vec![Fp57::new(14), Fp57::new(20)]]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn vec_mat_matches_transpose_products(m in 1usize..30, n in 1usize..30, t in 1usize..3, seed in any::<u64>()) {
            use rand::{RngCore, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut bytes = vec![0u8; m * n * 7];
            rng.fill_bytes(&mut bytes);
            let s = MemStore::new(bytes);
            let view = MatrixView::<Fp57>::new(&s, m, n);
            let u: Vec<Vec<Fp57>> = (0..t).map(|_| (0..m).map(|_| Fp57::random_nonzero(&mut rng)).collect()).collect();
            let w = vec_mat_stream(&view, &u).unwrap();
            for (k, urow) in u.iter().enumerate() {
                for j in 0..n {
                    let mut acc = Fp57::zero();
                    for (i, ui) in urow.iter().enumerate() {
                        acc += *ui * view.cell(i, j).unwrap();
                    }
                    prop_assert_eq!(w[k][j], acc);
                }
            }
        }

        #[test]
        fn matches_naive(m in 1usize..64, n in 1usize..64, seed in any::<u64>(), trim in 0usize..7) {
            use rand::{RngCore, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut bytes = vec![0u8; m * n * 7 - trim.min(m * n * 7 - 1)];
            rng.fill_bytes(&mut bytes);
            let s = MemStore::new(bytes.clone());
            let view = MatrixView::<Fp57>::new(&s, m, n);
            let x: Vec<Fp57> = (0..n).map(|_| Fp57::random_nonzero(&mut rng)).collect();
            let rows: Vec<Vec<Fp57>> = (0..m).map(|i| (0..n).map(|j| view.cell(i, j).unwrap()).collect()).collect();
            prop_assert_eq!(mat_vec_stream(&view, &x).unwrap(), mat_vec_naive(&rows, &x));
        }

        #[test]
        fn partition_invariant(m in 1usize..40, n in 1usize..40, split in 0usize..40, seed in any::<u64>()) {
            use rand::{RngCore, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut bytes = vec![0u8; m * n];
            rng.fill_bytes(&mut bytes);
            let s = MemStore::new(bytes);
            let view = MatrixView::<Zmod<1009>>::new(&s, m, n);
            let x: Vec<Zmod<1009>> = (0..n).map(|_| Zmod::random_nonzero(&mut rng)).collect();
            let whole = mat_vec_stream(&view, &x).unwrap();
            let split = split.min(m);
            let mut parts = view.rows_dot(0..split, &x).unwrap();
            parts.extend(view.rows_dot(split..m, &x).unwrap());
            prop_assert_eq!(whole, parts);
        }
    }
}
