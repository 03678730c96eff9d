use std::sync::Arc;

use super::Scalar;
use crate::error::{Error, Result};

/// Row offsets and sorted column indices, shareable between matrices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
}

impl SparsityPattern {
    /// Builds a pattern from per-row column lists; columns are sorted and
    /// deduplicated.
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::new();
        row_offsets.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            debug_assert!(cols.last().map_or(true, |&c| c < n));
            col_indices.extend_from_slice(&cols);
            row_offsets.push(col_indices.len());
        }
        Self { n, row_offsets, col_indices }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Position of `(row, col)` in the value array.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.row_offsets[row];
        self.row(row).binary_search(&col).ok().map(|k| start + k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    pattern: Arc<SparsityPattern>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    pub fn new(pattern: Arc<SparsityPattern>, values: Vec<T>) -> Self {
        assert_eq!(pattern.nnz(), values.len());
        Self { pattern, values }
    }

    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self { pattern, values: vec![T::zero(); nnz] }
    }

    /// Sums duplicate entries; entries are ordered by `(row, col)`.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows = vec![Vec::new(); n];
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                rows[r].push(c);
                values.push(v);
                last = Some((r, c));
            }
        }
        Self::new(Arc::new(SparsityPattern::from_rows(rows)), values)
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let triplets: Vec<_> = diag.iter().enumerate().map(|(i, &d)| (i, i, d)).collect();
        Self::from_triplets(diag.len(), &triplets)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![T::from_real(1.0); n])
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim()
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.pattern.find(row, col).map_or(T::zero(), |k| self.values[k])
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: x.len() });
        }
        let mut y = vec![T::zero(); self.dim()];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x`, summing each row left to right.
    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let offsets = self.pattern.row_offsets();
        let cols = self.pattern.col_indices();
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in offsets[i]..offsets[i + 1] {
                acc += self.values[k] * x[cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim()).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// `max |A - A^H| / max |A|`.
    pub fn hermitian_defect(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            let start = self.pattern.row_offsets()[i];
            for (k, &j) in self.pattern.row(i).iter().enumerate() {
                let d = self.values[start + k] - self.get(j, i).conj();
                worst = worst.max(d.abs());
            }
        }
        worst / scale
    }

    /// `self + alpha * other`, on the union of both patterns.
    pub fn add_scaled(&self, other: &CsrMatrix<T>, alpha: T) -> CsrMatrix<T> {
        assert_eq!(self.dim(), other.dim());
        if Arc::ptr_eq(&self.pattern, &other.pattern) || self.pattern == other.pattern {
            let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + alpha * b).collect();
            return CsrMatrix::new(Arc::clone(&self.pattern), values);
        }
        let mut triplets = Vec::with_capacity(self.values.len() + other.values.len());
        for (m, s) in [(self, T::from_real(1.0)), (other, alpha)] {
            for i in 0..m.dim() {
                let start = m.pattern.row_offsets()[i];
                for (k, &j) in m.pattern.row(i).iter().enumerate() {
                    triplets.push((i, j, s * m.values[start + k]));
                }
            }
        }
        CsrMatrix::from_triplets(self.dim(), &triplets)
    }

    /// Dense row-major copy, for tests and small problems.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        let mut out = vec![vec![T::zero(); n]; n];
        for (i, row) in out.iter_mut().enumerate() {
            let start = self.pattern.row_offsets()[i];
            for (k, &j) in self.pattern.row(i).iter().enumerate() {
                row[j] = self.values[start + k];
            }
        }
        out
    }
}

impl CsrMatrix<f64> {
    /// Real matrix applied to a complex vector.
    pub fn matvec_complex(&self, x: &[num_complex::Complex64]) -> Vec<num_complex::Complex64> {
        assert_eq!(x.len(), self.dim());
        let offsets = self.pattern.row_offsets();
        let cols = self.pattern.col_indices();
        (0..self.dim())
            .map(|i| {
                let mut acc = num_complex::Complex64::new(0.0, 0.0);
                for k in offsets[i]..offsets[i + 1] {
                    acc += self.values[k] * x[cols[k]];
                }
                acc
            })
            .collect()
    }
}
