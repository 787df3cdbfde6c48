//! Numeric blocks and paired samples.
//!
//! A [`Block`] is a dense row-major `n × d` matrix of observations; a
//! [`PairedSample`] couples two blocks with the same number of rows, one
//! row per joint observation `(X_i, Y_i)`.

use crate::error::{DcovError, Result};

/// Dense row-major matrix, one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Block {
    /// Builds a block from row-major data.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(DcovError::InvalidArgument(
                "blocks need at least one column".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(DcovError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(DcovError::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// A single-column block.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    /// Index of the first row holding a NaN or infinity, if any.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        self.rows().position(|r| r.iter().any(|v| !v.is_finite()))
    }

    /// New block made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Block {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Block {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Applies `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Block {
        Block {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Applies a `cols × cols` linear map (row-major) to every row: `row ↦ M row`.
    pub fn transform(&self, matrix: &[f64]) -> Result<Block> {
        let d = self.cols;
        if matrix.len() != d * d {
            return Err(DcovError::DimensionMismatch {
                expected: d * d,
                found: matrix.len(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len());
        for r in self.rows() {
            for k in 0..d {
                data.push((0..d).map(|j| matrix[k * d + j] * r[j]).sum());
            }
        }
        Ok(Block {
            rows: self.rows,
            cols: d,
            data,
        })
    }
}

/// One joint observation `(x, y)` borrowed from a sample or supplied directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
}

impl<'a> Observation<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64]) -> Self {
        Self { x, y }
    }
}

/// `n` aligned joint observations: `x` is `n × p`, `y` is `n × q`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    x: Block,
    y: Block,
}

impl PairedSample {
    /// Validates row alignment and finiteness.
    pub fn new(x: Block, y: Block) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(DcovError::DimensionMismatch {
                expected: x.nrows(),
                found: y.nrows(),
            });
        }
        if x.nrows() == 0 {
            return Err(DcovError::SampleTooSmall {
                needed: 1,
                found: 0,
            });
        }
        if let Some(row) = x.first_non_finite_row() {
            return Err(DcovError::NonFinite { block: "x", row });
        }
        if let Some(row) = y.first_non_finite_row() {
            return Err(DcovError::NonFinite { block: "y", row });
        }
        Ok(Self { x, y })
    }

    /// Scalar pairs `(x_i, y_i)`.
    pub fn from_columns(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(Block::column(x), Block::column(y))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn x(&self) -> &Block {
        &self.x
    }

    pub fn y(&self) -> &Block {
        &self.y
    }

    pub fn observation(&self, i: usize) -> Observation<'_> {
        Observation::new(self.x.row(i), self.y.row(i))
    }

    pub fn into_blocks(self) -> (Block, Block) {
        (self.x, self.y)
    }

    /// Roles of `X` and `Y` exchanged.
    pub fn swapped(&self) -> PairedSample {
        PairedSample {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }

    /// Keeps `X` in place and re-pairs it with `Y` rows `perm[0], perm[1], …`.
    pub fn with_y_permuted(&self, perm: &[usize]) -> PairedSample {
        PairedSample {
            x: self.x.clone(),
            y: self.y.select_rows(perm),
        }
    }

    /// Subsample of the given rows (both blocks).
    pub fn select(&self, idx: &[usize]) -> PairedSample {
        PairedSample {
            x: self.x.select_rows(idx),
            y: self.y.select_rows(idx),
        }
    }

    /// The first `n` observations.
    pub fn truncated(&self, n: usize) -> Result<PairedSample> {
        if n == 0 || n > self.n() {
            return Err(DcovError::InvalidArgument(format!(
                "cannot truncate a sample of {} rows to {n}",
                self.n()
            )));
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(self.select(&idx))
    }

    pub(crate) fn require(&self, needed: usize) -> Result<()> {
        if self.n() < needed {
            Err(DcovError::SampleTooSmall {
                needed,
                found: self.n(),
            })
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_misaligned_blocks() {
        let x = Block::column(&[1.0, 2.0, 3.0]);
        let y = Block::column(&[1.0, 2.0]);
        assert!(matches!(
            PairedSample::new(x, y),
            Err(DcovError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn names_the_non_finite_row() {
        let x = Block::column(&[1.0, 2.0, 3.0]);
        let y = Block::column(&[1.0, f64::NAN, 2.0]);
        match PairedSample::new(x, y) {
            Err(DcovError::NonFinite { block, row }) => {
                assert_eq!(block, "y");
                assert_eq!(row, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Block::from_rows(&rows).is_err());
    }

    #[test]
    fn permuting_y_keeps_x() {
        let s = PairedSample::from_columns(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        let t = s.with_y_permuted(&[2, 0, 1]);
        assert_eq!(t.x(), s.x());
        assert_eq!(t.y().as_slice(), &[30.0, 10.0, 20.0]);
    }
}
