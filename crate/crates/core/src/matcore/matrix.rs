//! Dense row-major `f64` matrices with deterministic arithmetic.
//!
//! Every operation accumulates in a fixed left-to-right order so repeated
//! calls on identical inputs are bit-identical. No internal parallelism.

use crate::error::{Error, Result};

/// Dense matrix, row-major storage, 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Square identity matrix.
    pub fn identity(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data; length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument {
                what: "matrix data",
                details: format!(
                    "data length {} does not match {}x{}",
                    data.len(),
                    rows,
                    cols
                ),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Build from nested rows; rows must be nonempty and equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::InvalidArgument {
                    what: "matrix rows",
                    details: "ragged row lengths".to_string(),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Bit-level equality (compares `f64::to_bits` entrywise).
    pub fn bits_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute entrywise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Matrix product with fixed k-ascending accumulation per entry.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let (m, p, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * n];
        // i-k-j loop order: each output entry still accumulates over k in
        // ascending order, identical to the naive triple loop, while reading
        // rhs row-wise.
        for i in 0..m {
            let lhs_row = &self.data[i * p..(i + 1) * p];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (k, &aik) in lhs_row.iter().enumerate() {
                let rhs_row = &rhs.data[k * n..(k + 1) * n];
                for (o, &bkj) in out_row.iter_mut().zip(rhs_row.iter()) {
                    *o += aik * bkj;
                }
            }
        }
        Ok(Matrix {
            rows: m,
            cols: n,
            data: out,
        })
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.rows * self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `self += s * rhs`, entrywise.
    pub fn add_scaled_in_place(&mut self, rhs: &Matrix, s: f64) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimMismatch {
                op: "add_scaled",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(rhs.data.iter())
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// Frobenius norm, summed in index order.
    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for x in &self.data {
            acc += x * x;
        }
        acc.sqrt()
    }

    /// Sum of squared entries (no sqrt), summed in index order.
    pub fn frobenius_norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for x in &self.data {
            acc += x * x;
        }
        acc
    }

    /// Split rows at `at`: returns (top `at` rows, remaining rows).
    pub fn vslice(&self, at: usize) -> Result<(Matrix, Matrix)> {
        if at == 0 || at >= self.rows {
            return Err(Error::BadBoundary { at, len: self.rows });
        }
        let top = Matrix {
            rows: at,
            cols: self.cols,
            data: self.data[..at * self.cols].to_vec(),
        };
        let bottom = Matrix {
            rows: self.rows - at,
            cols: self.cols,
            data: self.data[at * self.cols..].to_vec(),
        };
        Ok((top, bottom))
    }

    /// Split columns at `at`: returns (left `at` columns, remaining columns).
    pub fn hslice(&self, at: usize) -> Result<(Matrix, Matrix)> {
        if at == 0 || at >= self.cols {
            return Err(Error::BadBoundary { at, len: self.cols });
        }
        let mut left = Vec::with_capacity(self.rows * at);
        let mut right = Vec::with_capacity(self.rows * (self.cols - at));
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        Ok((
            Matrix {
                rows: self.rows,
                cols: at,
                data: left,
            },
            Matrix {
                rows: self.rows,
                cols: self.cols - at,
                data: right,
            },
        ))
    }

    /// Stack `bottom` below `self`; column counts must agree.
    pub fn vconcat(&self, bottom: &Matrix) -> Result<Matrix> {
        if self.cols != bottom.cols {
            return Err(Error::DimMismatch {
                op: "vconcat",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: bottom.rows,
                rhs_cols: bottom.cols,
            });
        }
        let mut data = Vec::with_capacity((self.rows + bottom.rows) * self.cols);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&bottom.data);
        Ok(Matrix {
            rows: self.rows + bottom.rows,
            cols: self.cols,
            data,
        })
    }

    /// Place `right` to the right of `self`; row counts must agree.
    pub fn hconcat(&self, right: &Matrix) -> Result<Matrix> {
        if self.rows != right.rows {
            return Err(Error::DimMismatch {
                op: "hconcat",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: right.rows,
                rhs_cols: right.cols,
            });
        }
        let cols = self.cols + right.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
            data.extend_from_slice(&right.data[i * right.cols..(i + 1) * right.cols]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Copy `block` into `self` with its top-left corner at `(row, col)`.
    pub fn write_block(&mut self, row: usize, col: usize, block: &Matrix) {
        assert!(row + block.rows <= self.rows && col + block.cols <= self.cols);
        for i in 0..block.rows {
            let src = &block.data[i * block.cols..(i + 1) * block.cols];
            let start = (row + i) * self.cols + col;
            self.data[start..start + block.cols].copy_from_slice(src);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::{gaussian, SeededRng};

    /// Independent naive triple-loop product, the reference for `matmul`.
    fn matmul_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn identity_times_matrix_is_matrix() {
        let mut rng = SeededRng::new(5);
        let m = gaussian(3, 7, &mut rng, 1.0).unwrap();
        let prod = Matrix::identity(3).matmul(&m).unwrap();
        assert!(prod.bits_eq(&m));
    }

    #[test]
    fn zero_matrix_annihilates() {
        let mut rng = SeededRng::new(6);
        let m = gaussian(2, 2, &mut rng, 1.0).unwrap();
        let prod = Matrix::zeros(2, 2).matmul(&m).unwrap();
        assert!(prod.bits_eq(&Matrix::zeros(2, 2)));
    }

    #[test]
    fn matmul_matches_triple_loop_oracle_exactly() {
        let mut rng = SeededRng::new(11);
        let a = gaussian(5, 4, &mut rng, 1.0).unwrap();
        let b = gaussian(4, 3, &mut rng, 1.0).unwrap();
        let fast = a.matmul(&b).unwrap();
        let slow = matmul_oracle(&a, &b);
        assert_eq!(fast.max_abs_diff(&slow), 0.0);
    }

    #[test]
    fn matmul_dimension_mismatch_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "message: {msg}");
    }

    #[test]
    fn matmul_associativity_within_tolerance() {
        let mut rng = SeededRng::new(21);
        for _ in 0..5 {
            let a = gaussian(6, 5, &mut rng, 1.0).unwrap();
            let b = gaussian(5, 7, &mut rng, 1.0).unwrap();
            let c = gaussian(7, 4, &mut rng, 1.0).unwrap();
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let rel = left.sub(&right).unwrap().frobenius_norm() / left.frobenius_norm();
            assert!(rel < 1e-10, "relative error {rel}");
        }
    }

    #[test]
    fn product_transpose_identity() {
        let mut rng = SeededRng::new(31);
        let a = gaussian(4, 6, &mut rng, 1.0).unwrap();
        let b = gaussian(6, 5, &mut rng, 1.0).unwrap();
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn frobenius_norm_values() {
        assert_eq!(Matrix::zeros(3, 5).frobenius_norm(), 0.0);
        assert_eq!(Matrix::identity(4).frobenius_norm(), 2.0);
        let m = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(m.frobenius_norm(), 5.0);
    }

    #[test]
    fn vslice_then_vconcat_round_trips() {
        let mut rng = SeededRng::new(41);
        let m = gaussian(6, 4, &mut rng, 1.0).unwrap();
        let (top, bottom) = m.vslice(2).unwrap();
        assert_eq!(top.shape(), (2, 4));
        assert_eq!(bottom.shape(), (4, 4));
        assert!(top.vconcat(&bottom).unwrap().bits_eq(&m));
    }

    #[test]
    fn hslice_shapes_and_round_trip() {
        let mut rng = SeededRng::new(42);
        let m = gaussian(4, 6, &mut rng, 1.0).unwrap();
        let (left, right) = m.hslice(3).unwrap();
        assert_eq!(left.shape(), (4, 3));
        assert_eq!(right.shape(), (4, 3));
        assert!(left.hconcat(&right).unwrap().bits_eq(&m));
    }

    #[test]
    fn vconcat_shape_arithmetic() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(5, 3);
        assert_eq!(a.vconcat(&b).unwrap().shape(), (7, 3));
    }

    #[test]
    fn slice_boundary_errors() {
        let m = Matrix::zeros(4, 4);
        assert!(matches!(m.vslice(0), Err(Error::BadBoundary { .. })));
        assert!(matches!(m.vslice(4), Err(Error::BadBoundary { .. })));
        assert!(matches!(m.hslice(0), Err(Error::BadBoundary { .. })));
        assert!(matches!(m.hslice(5), Err(Error::BadBoundary { .. })));
    }
}
