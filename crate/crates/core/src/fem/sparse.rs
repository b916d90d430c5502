//! Row-compressed sparse storage and a banded direct solver for FEM tangents.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Square row-compressed sparse matrix. Column indices are sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// The FEM tangent `dR/du` restricted to free dofs.
pub type SparseJacobian = CsrMatrix;

impl CsrMatrix {
    /// Builds a zero-valued matrix from per-row column sets.
    pub fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut cols in rows {
            cols.sort_unstable();
            cols.dedup();
            debug_assert!(cols.iter().all(|&c| c < n));
            col_idx.extend(cols);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(r, c, _) in triplets {
            rows[r].push(c);
        }
        let mut m = Self::from_pattern(rows);
        for &(r, c, v) in triplets {
            let pos = m.position(r, c).expect("pattern contains triplet");
            m.values[pos] += v;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row_cols(&self, row: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    pub fn row_values(&self, row: usize) -> &[f64] {
        &self.values[self.row_ptr[row]..self.row_ptr[row + 1]]
    }

    /// Index into the value array for entry `(row, col)`, if it is in the pattern.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let start = self.row_ptr[row];
        self.row_cols(row)
            .binary_search(&col)
            .ok()
            .map(|offset| start + offset)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |p| self.values[p])
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `A x`
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        DVector::from_iterator(
            self.n,
            (0..self.n).map(|r| {
                self.row_cols(r)
                    .iter()
                    .zip(self.row_values(r))
                    .map(|(&c, &v)| v * x[c])
                    .sum::<f64>()
            }),
        )
    }

    /// `Aᵀ x`
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let mut out = DVector::zeros(self.n);
        for r in 0..self.n {
            let xr = x[r];
            for (&c, &v) in self.row_cols(r).iter().zip(self.row_values(r)) {
                out[c] += v * xr;
            }
        }
        out
    }

    /// `A B` for a dense right-hand side, one sparse product per column.
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.n);
        let mut out = DMatrix::zeros(self.n, b.ncols());
        for j in 0..b.ncols() {
            let col = b.column(j);
            for r in 0..self.n {
                out[(r, j)] = self
                    .row_cols(r)
                    .iter()
                    .zip(self.row_values(r))
                    .map(|(&c, &v)| v * col[c])
                    .sum();
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (&c, &v) in self.row_cols(r).iter().zip(self.row_values(r)) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Lower and upper bandwidths of the pattern.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for r in 0..self.n {
            for &c in self.row_cols(r) {
                if c < r {
                    lower = lower.max(r - c);
                } else {
                    upper = upper.max(c - r);
                }
            }
        }
        (lower, upper)
    }

    /// Whether the sparsity pattern (not the values) is symmetric.
    pub fn has_symmetric_pattern(&self) -> bool {
        (0..self.n).all(|r| self.row_cols(r).iter().all(|&c| self.position(c, r).is_some()))
    }

    /// Solves `A x = b` with a banded LU factorization.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        BandedLu::factor(self)?.solve(b)
    }
}

/// LU factors of a banded matrix, computed without pivoting.
///
/// FEM tangents of stable hyperelastic states are symmetric positive definite, so
/// pivoting is unnecessary there. A pivot that collapses relative to the matrix scale
/// triggers a dense partial-pivoting fallback instead.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    // row-major band storage: entry (i, j) lives at i * width + (j + lower - i)
    band: Vec<f64>,
    dense_fallback: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        let (lower, upper) = a.bandwidths();
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = 0.0_f64;
        for r in 0..n {
            for (&c, &v) in a.row_cols(r).iter().zip(a.row_values(r)) {
                band[r * width + (c + lower - r)] = v;
                scale = scale.max(v.abs());
            }
        }
        if !scale.is_finite() {
            return Err(Error::InvalidInput("non-finite matrix entries".into()));
        }
        let pivot_floor = 1e-13 * scale;

        for k in 0..n {
            let pivot = band[k * width + lower];
            if pivot.abs() <= pivot_floor {
                let lu = a.to_dense().lu();
                return Ok(BandedLu {
                    n,
                    lower,
                    upper,
                    band: Vec::new(),
                    dense_fallback: Some(lu),
                });
            }
            let row_end = (k + upper).min(n - 1);
            for i in (k + 1)..=(k + lower).min(n - 1) {
                let lik_pos = i * width + (k + lower - i);
                let factor = band[lik_pos] / pivot;
                if factor == 0.0 {
                    continue;
                }
                band[lik_pos] = factor;
                for j in (k + 1)..=row_end {
                    let ukj = band[k * width + (j + lower - k)];
                    band[i * width + (j + lower - i)] -= factor * ukj;
                }
            }
        }
        Ok(BandedLu {
            n,
            lower,
            upper,
            band,
            dense_fallback: None,
        })
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        if let Some(lu) = &self.dense_fallback {
            return lu
                .solve(b)
                .ok_or(Error::SingularReducedSystem {
                    condition_estimate: f64::INFINITY,
                });
        }
        let width = self.lower + self.upper + 1;
        let mut x = b.clone();
        for i in 0..self.n {
            let start = i.saturating_sub(self.lower);
            let mut s = x[i];
            for j in start..i {
                s -= self.band[i * width + (j + self.lower - i)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..self.n).rev() {
            let end = (i + self.upper).min(self.n - 1);
            let mut s = x[i];
            for j in (i + 1)..=end {
                s -= self.band[i * width + (j + self.lower - i)] * x[j];
            }
            x[i] = s / self.band[i * width + self.lower];
        }
        Ok(x)
    }
}
