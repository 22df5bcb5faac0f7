//! Compressed sparse row matrices for graph propagation.
//!
//! The encoders only ever multiply a fixed sparse operator against a dense
//! embedding table, so a minimal CSR with `S·X` and `Sᵀ·X` kernels is all
//! that is needed. Row iteration order is fixed, which keeps accumulation
//! deterministic.

use ndarray::Array2;

/// Sparse matrix in compressed sparse row layout.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a CSR matrix from `(row, col, weight)` entries.
    /// Duplicate coordinates are summed.
    pub fn from_entries(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(sorted.len());
        let mut data: Vec<f64> = Vec::with_capacity(sorted.len());

        let mut prev: Option<(usize, usize)> = None;
        for &(r, c, w) in &sorted {
            assert!(r < nrows && c < ncols, "entry ({r}, {c}) out of bounds");
            if prev == Some((r, c)) {
                *data.last_mut().unwrap() += w;
            } else {
                indices.push(c);
                data.push(w);
                indptr[r + 1] = indices.len();
                prev = Some((r, c));
            }
        }
        // forward-fill pointers for rows without entries
        for r in 0..nrows {
            if indptr[r + 1] < indptr[r] {
                indptr[r + 1] = indptr[r];
            }
        }

        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Dense product `self · x`, where `x` is `(ncols × d)`.
    pub fn mul_dense(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.ncols, "dimension mismatch in S·X");
        let d = x.ncols();
        let mut out = Array2::<f64>::zeros((self.nrows, d));
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let w = self.data[k];
                let src = x.row(c);
                let mut dst = out.row_mut(r);
                for j in 0..d {
                    dst[j] += w * src[j];
                }
            }
        }
        out
    }

    /// Dense product `selfᵀ · x`, where `x` is `(nrows × d)`.
    pub fn mul_dense_transposed(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.nrows, "dimension mismatch in Sᵀ·X");
        let d = x.ncols();
        let mut out = Array2::<f64>::zeros((self.ncols, d));
        for r in 0..self.nrows {
            let src = x.row(r);
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k];
                let w = self.data[k];
                let mut dst = out.row_mut(c);
                for j in 0..d {
                    dst[j] += w * src[j];
                }
            }
        }
        out
    }
}
