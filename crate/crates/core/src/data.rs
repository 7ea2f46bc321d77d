//! Row-major observation matrices.

use serde::{Deserialize, Serialize};

use crate::error::{IsdeError, Result};

/// An `n_rows × n_cols` matrix of observations stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n_rows: usize, n_cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(IsdeError::structural(format!(
                "expected {} values for a {n_rows}x{n_cols} matrix, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        Ok(DataMatrix { n_rows, n_cols, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(IsdeError::Data(format!(
                    "row {} has {} columns, expected {n_cols}",
                    i + 1,
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(DataMatrix { n_rows: rows.len(), n_cols, values })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact panics on a zero chunk size
        let width = self.n_cols.max(1);
        self.values.chunks_exact(width).take(self.n_rows)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn select_rows(&self, indices: &[usize]) -> DataMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        DataMatrix { n_rows: indices.len(), n_cols: self.n_cols, values }
    }

    /// Errors on the first entry outside `[0, 1]` (rows and columns reported
    /// 1-based).
    pub fn check_unit_cube(&self) -> Result<()> {
        for (r, row) in self.rows().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(IsdeError::DataRange { row: r + 1, col: c + 1, value: v });
                }
            }
        }
        Ok(())
    }

    /// Per-column affine map onto `[0, 1]`. Constant columns map to 0.5.
    pub fn min_max_rescale(&self) -> (DataMatrix, AffineMap) {
        let mut lo = vec![f64::INFINITY; self.n_cols];
        let mut hi = vec![f64::NEG_INFINITY; self.n_cols];
        for row in self.rows() {
            for (j, &v) in row.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        let mut offset = Vec::with_capacity(self.n_cols);
        let mut scale = Vec::with_capacity(self.n_cols);
        for j in 0..self.n_cols {
            let span = hi[j] - lo[j];
            if span > 0.0 && span.is_finite() {
                offset.push(lo[j]);
                scale.push(1.0 / span);
            } else {
                offset.push(lo[j] - 0.5);
                scale.push(1.0);
            }
        }
        let map = AffineMap { offset, scale };
        let mut values = self.values.clone();
        for row in values.chunks_exact_mut(self.n_cols.max(1)) {
            map.apply_in_place(row);
        }
        (DataMatrix { n_rows: self.n_rows, n_cols: self.n_cols, values }, map)
    }
}

/// `x' = (x - offset) * scale`, columnwise, clamped into `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineMap {
    pub fn apply_in_place(&self, row: &mut [f64]) {
        for ((v, o), s) in row.iter_mut().zip(&self.offset).zip(&self.scale) {
            *v = ((*v - o) * s).clamp(0.0, 1.0);
        }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        let mut out = row.to_vec();
        self.apply_in_place(&mut out);
        out
    }
}
