//! Minimal compressed-sparse-row matrix used for the truncated prior
//! covariance. Only the handful of operations the pipeline needs are
//! implemented; everything dense goes through `nalgebra`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Real matrix in compressed sparse row layout.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble from per-row entry lists. Entries within a row must carry
    /// column indices in strictly increasing order.
    pub fn from_rows(nrows: usize, ncols: usize, rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if rows.len() != nrows {
            return Err(Error::Shape(format!(
                "expected {nrows} rows, got {}",
                rows.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let mut prev: Option<u32> = None;
            for (c, v) in row {
                if c as usize >= ncols {
                    return Err(Error::Shape(format!("column {c} out of {ncols}")));
                }
                if let Some(p) = prev {
                    if c <= p {
                        return Err(Error::Shape(format!("unsorted column {c} after {p}")));
                    }
                }
                prev = Some(c);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter_map(|j| {
                        let v = m[(i, j)];
                        (v != 0.0).then_some((j as u32, v))
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(m.nrows(), m.ncols(), rows).expect("dense conversion is well formed")
    }

    pub fn identity(n: usize) -> Self {
        let rows = (0..n).map(|i| vec![(i as u32, 1.0)]).collect();
        Self::from_rows(n, n, rows).expect("identity is well formed")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c as usize];
            }
            y[i] = acc;
        }
        y
    }

    /// Extract the square sub-matrix on `ids` (sorted, unique indices into
    /// both rows and columns). Used for the ROI/RONI diagonal blocks of the
    /// prior covariance.
    pub fn principal_block(&self, ids: &[usize]) -> Result<Self> {
        let mut lookup = vec![-1i64; self.ncols];
        for (new, &old) in ids.iter().enumerate() {
            if old >= self.nrows.min(self.ncols) {
                return Err(Error::Shape(format!("block index {old} out of range")));
            }
            lookup[old] = new as i64;
        }
        let rows = ids
            .iter()
            .map(|&old| {
                let (cols, vals) = self.row(old);
                cols.iter()
                    .zip(vals)
                    .filter_map(|(c, v)| {
                        let n = lookup[*c as usize];
                        (n >= 0).then_some((n as u32, *v))
                    })
                    .collect()
            })
            .collect();
        Self::from_rows(ids.len(), ids.len(), rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                m[(i, *c as usize)] = *v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        // [1 0 2]
        // [0 3 0]
        CsrMatrix::from_rows(2, 3, vec![vec![(0, 1.0), (2, 2.0)], vec![(1, 3.0)]]).unwrap()
    }

    #[test]
    fn matvec_matches_dense() {
        let a = sample();
        let x = [1.0, -1.0, 0.5];
        let y = a.matvec(&x);
        assert_eq!(y, vec![2.0, -3.0]);
    }

    #[test]
    fn dense_round_trip() {
        let a = sample();
        let d = a.to_dense();
        let b = CsrMatrix::from_dense(&d);
        assert_eq!(b.to_dense(), d);
        assert_eq!(b.nnz(), 3);
    }

    #[test]
    fn principal_block_extracts() {
        let d = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0, 0.5, 0.0, //
                0.5, 2.0, 0.1, //
                0.0, 0.1, 3.0,
            ],
        );
        let a = CsrMatrix::from_dense(&d);
        let b = a.principal_block(&[0, 2]).unwrap();
        assert_eq!(
            b.to_dense(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0])
        );
    }

    #[test]
    fn rejects_unsorted_columns() {
        let r = CsrMatrix::from_rows(1, 3, vec![vec![(2, 1.0), (0, 1.0)]]);
        assert!(r.is_err());
    }
}
