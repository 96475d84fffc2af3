use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

/// Reduction axis. `Row` reduces across each row (one value per row),
/// `Col` across each column, `All` to a single scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Row,
    Col,
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(dim_err(
                "from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(dim_err("from_rows", "ragged rows"));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Permutation matrix with `P[i][mapping[i]] = 1`.
    pub fn permutation(mapping: &[usize]) -> Self {
        let n = mapping.len();
        let mut m = Self::zeros(n, n);
        for (i, &j) in mapping.iter().enumerate() {
            m.data[i * n + j] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(dim_err("zip_map", format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(dim_err("matmul", format!("{:?} x {:?}", self.shape(), other.shape())));
        }
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: n,
            cols: m,
            data: out,
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, &x) in sums.iter_mut().zip(self.row(i)) {
                *s += x;
            }
        }
        sums
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// In-place log-softmax along `axis`, stabilised by max subtraction.
    pub fn log_softmax_in_place(&mut self, axis: Axis) {
        match axis {
            Axis::Row => {
                for i in 0..self.rows {
                    log_normalize(self.row_mut(i));
                }
            }
            Axis::Col => {
                let (r, c) = (self.rows, self.cols);
                let mut maxes = vec![f64::NEG_INFINITY; c];
                for i in 0..r {
                    for (m, &x) in maxes.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                        *m = m.max(x);
                    }
                }
                let mut sums = vec![0.0; c];
                for i in 0..r {
                    for ((s, &x), &m) in sums.iter_mut().zip(&self.data[i * c..(i + 1) * c]).zip(&maxes) {
                        *s += (x - m).exp();
                    }
                }
                let lse: Vec<f64> = maxes.iter().zip(&sums).map(|(m, s)| m + s.ln()).collect();
                for i in 0..r {
                    for (x, &l) in self.data[i * c..(i + 1) * c].iter_mut().zip(&lse) {
                        *x -= l;
                    }
                }
            }
        }
    }

    /// Log-softmax together with the softmax itself, sharing one pass of
    /// exponentials. The log values are bitwise equal to [`log_softmax`](Self::log_softmax).
    pub fn log_softmax_with_probs(&self, axis: Axis) -> (Matrix, Matrix) {
        let (r, c) = (self.rows, self.cols);
        let mut y = self.clone();
        let mut p = Matrix::zeros(r, c);
        match axis {
            Axis::Row => {
                for i in 0..r {
                    let xs = &mut y.data[i * c..(i + 1) * c];
                    let ps = &mut p.data[i * c..(i + 1) * c];
                    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    for (e, &x) in ps.iter_mut().zip(xs.iter()) {
                        *e = (x - m).exp();
                    }
                    let s: f64 = ps.iter().sum();
                    let lse = m + s.ln();
                    let inv = 1.0 / s;
                    for (x, e) in xs.iter_mut().zip(ps.iter_mut()) {
                        *x -= lse;
                        *e *= inv;
                    }
                }
            }
            Axis::Col => {
                let mut maxes = vec![f64::NEG_INFINITY; c];
                for i in 0..r {
                    for (m, &x) in maxes.iter_mut().zip(&y.data[i * c..(i + 1) * c]) {
                        *m = m.max(x);
                    }
                }
                let mut sums = vec![0.0; c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    for (((s, e), &x), &m) in sums
                        .iter_mut()
                        .zip(&mut p.data[row.clone()])
                        .zip(&y.data[row])
                        .zip(&maxes)
                    {
                        *e = (x - m).exp();
                        *s += *e;
                    }
                }
                let lse: Vec<f64> = maxes.iter().zip(&sums).map(|(m, s)| m + s.ln()).collect();
                let inv: Vec<f64> = sums.iter().map(|s| 1.0 / s).collect();
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    for (((x, e), &l), &k) in y.data[row.clone()].iter_mut().zip(&mut p.data[row]).zip(&lse).zip(&inv) {
                        *x -= l;
                        *e *= k;
                    }
                }
            }
        }
        (y, p)
    }

    pub fn log_softmax(&self, axis: Axis) -> Matrix {
        let mut out = self.clone();
        out.log_softmax_in_place(axis);
        out
    }
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = crate::Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

fn log_normalize(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    let lse = m + s.ln();
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for x in self.row(i) {
                write!(f, "{x:>10.5} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_log_softmax_matches() {
        let m = Matrix::from_fn(4, 5, |i, j| ((i * 5 + j) as f64 * 0.37).sin() * 3.0);
        for axis in [Axis::Row, Axis::Col] {
            let (y, p) = m.log_softmax_with_probs(axis);
            assert_eq!(y, m.log_softmax(axis));
            assert!(p.max_abs_diff(&y.map(f64::exp)) < 1e-15);
        }
    }

    #[test]
    fn shape_must_match_storage() {
        assert!(Matrix::from_vec(2, 3, vec![0.0; 5]).is_err());
        assert!(Matrix::from_vec(2, 3, vec![0.0; 6]).is_ok());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_identity_and_permutation() {
        let x = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        assert_eq!(Matrix::identity(3).matmul(&x).unwrap(), x);
        // rows of P·X are X reordered by the mapping
        let p = Matrix::permutation(&[2, 0, 1]);
        let px = p.matmul(&x).unwrap();
        assert_eq!(px.row(0), x.row(2));
        assert_eq!(px.row(1), x.row(0));
        assert_eq!(px.row(2), x.row(1));
        assert!(Matrix::zeros(2, 3).matmul(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn log_softmax_is_stable() {
        let m = Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let l = m.log_softmax(Axis::Row);
        assert!(l.get(0, 0).abs() < 1e-12);
        assert!((l.get(0, 1) + 1000.0).abs() < 1e-9);
        let u = Matrix::zeros(1, 3).log_softmax(Axis::Row);
        for &x in u.as_slice() {
            assert!((x - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn col_log_softmax_matches_transposed_row() {
        let m = Matrix::from_fn(3, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let a = m.log_softmax(Axis::Col);
        let b = m.transpose().log_softmax(Axis::Row).transpose();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }
}
