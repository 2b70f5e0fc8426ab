use crate::error::{Error, Result};
use crate::numerics::dense::{axpy, DenseMatrix};

/// A 0-1 matrix stored as sorted `(row, col)` coordinates.
///
/// Entries are kept in row-major order and grouped by row through
/// `row_ptr`, so `spmm` sums each output row over columns in increasing
/// order, the same order `DenseMatrix::matmul` uses on the densified form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseLevelMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl SparseLevelMatrix {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
        }
    }

    pub fn from_entries(rows: usize, cols: usize, entries: &[(usize, usize)]) -> Result<Self> {
        let mut sorted = entries.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidArgument(format!(
                    "duplicate sparse entry {:?}",
                    w[0]
                )));
            }
        }
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        for &(r, c) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Columns holding a 1 in row `i`, ascending.
    pub fn row_entries(&self, i: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |i| self.row_entries(i).iter().map(move |&j| (i, j)))
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row_entries(i).binary_search(&j).is_ok()
    }

    pub fn transpose(&self) -> Self {
        let swapped: Vec<_> = self.entries().map(|(i, j)| (j, i)).collect();
        Self::from_entries(self.cols, self.rows, &swapped).expect("transpose of valid matrix")
    }

    pub fn densify(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for (i, j) in self.entries() {
            out[(i, j)] = 1.0;
        }
        out
    }

    /// `self · d`.
    pub fn spmm(&self, d: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != d.rows() {
            return Err(Error::Shape {
                op: "spmm",
                left: (self.rows, self.cols),
                right: d.shape(),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, d.cols());
        for i in 0..self.rows {
            let out_row = out.row_mut(i);
            for &k in self.row_entries(i) {
                axpy(1.0, d.row(k), out_row);
            }
        }
        Ok(out)
    }
}
