//! Dense row-major `f64` matrices sized for this workload: observation
//! batches, small MLP weights and GP covariance windows (N up to a few
//! hundred). Vectors are `(n, 1)` columns; scalars are `(1, 1)`.

use crate::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Tensor { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn col(values: &[f64]) -> Self {
        Tensor::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Tensor::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar {}x{}", self.rows, self.cols);
        self.data[0]
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    fn assert_same_shape(&self, other: &Tensor, op: &str) {
        assert_eq!(
            self.shape(),
            other.shape(),
            "{op}: shape mismatch {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        self.assert_same_shape(other, "zip");
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        self.assert_same_shape(other, "add_assign");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Tensor) {
        self.assert_same_shape(other, "axpy");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.assert_same_shape(other, "dot");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Matrix product. Inner loop runs over contiguous rows of `other`
    /// so the compiler can vectorize it; this is the training hot path.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        assert_eq!(
            self.cols, other.rows,
            "matmul: inner dims {}x{} vs {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Tensor::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Adds a column vector to every column of `self`.
    pub fn add_col_broadcast(&self, col: &Tensor) -> Tensor {
        assert_eq!(col.cols, 1, "add_col_broadcast: rhs must be a column");
        assert_eq!(col.rows, self.rows, "add_col_broadcast: row mismatch");
        let mut out = self.clone();
        for i in 0..self.rows {
            let b = col.data[i];
            for v in &mut out.data[i * self.cols..(i + 1) * self.cols] {
                *v += b;
            }
        }
        out
    }

    /// Sums each column, returning a `(1, cols)` row.
    pub fn col_sum(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j] += self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Sums each row, returning an `(rows, 1)` column.
    pub fn row_sum(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, 1);
        for i in 0..self.rows {
            out.data[i] = self.row_slice(i).iter().sum();
        }
        out
    }

    pub fn row(&self, i: usize) -> Tensor {
        Tensor::from_vec(1, self.cols, self.row_slice(i).to_vec())
    }

    pub fn column(&self, j: usize) -> Tensor {
        let mut out = Tensor::zeros(self.rows, 1);
        for i in 0..self.rows {
            out.data[i] = self.data[i * self.cols + j];
        }
        out
    }

    pub fn diag(&self) -> Tensor {
        assert_eq!(self.rows, self.cols, "diag: square matrix required");
        Tensor::from_vec(self.rows, 1, (0..self.rows).map(|i| self.get(i, i)).collect())
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "trace: square matrix required");
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    /// Stacks rows of two tensors with equal column counts.
    pub fn vcat(&self, below: &Tensor) -> Tensor {
        assert_eq!(self.cols, below.cols, "vcat: column mismatch");
        let mut data = Vec::with_capacity(self.data.len() + below.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&below.data);
        Tensor {
            rows: self.rows + below.rows,
            cols: self.cols,
            data,
        }
    }

    /// Rows `[lo, hi)` as a new tensor.
    pub fn row_range(&self, lo: usize, hi: usize) -> Tensor {
        assert!(lo <= hi && hi <= self.rows);
        Tensor {
            rows: hi - lo,
            cols: self.cols,
            data: self.data[lo * self.cols..hi * self.cols].to_vec(),
        }
    }

    /// Stacks columns of several tensors with equal row counts.
    pub fn hcat(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let rows = parts[0].rows;
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            assert_eq!(p.rows, rows, "hcat: row mismatch");
            for i in 0..rows {
                out.data[i * cols + off..i * cols + off + p.cols].copy_from_slice(p.row_slice(i));
            }
            off += p.cols;
        }
        out
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Fails (returns `None`) on a non-positive pivot.
pub fn cholesky(a: &Tensor) -> Option<Tensor> {
    let n = a.rows();
    assert_eq!(n, a.cols(), "cholesky: square matrix required");
    let mut l = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Jitter escalation schedule; the plain matrix is tried first so
/// well-conditioned solves stay exact.
pub const JITTER_SCHEDULE: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Cholesky of `a + jitter*I`, escalating the jitter through
/// [`JITTER_SCHEDULE`] until the factorization succeeds.
pub fn cholesky_jittered(a: &Tensor) -> Result<(Tensor, f64)> {
    for &jitter in &JITTER_SCHEDULE {
        let mut aj = a.clone();
        if jitter > 0.0 {
            for i in 0..a.rows() {
                let v = aj.get(i, i);
                aj.set(i, i, v + jitter);
            }
        }
        if let Some(l) = cholesky(&aj) {
            return Ok((l, jitter));
        }
    }
    Err(CoreError::CholeskyFailure {
        size: a.rows(),
        max_jitter: *JITTER_SCHEDULE.last().unwrap(),
    })
}

/// Solves `L L^T x = b` for each column of `b` given the lower factor `L`.
pub fn chol_solve(l: &Tensor, b: &Tensor) -> Tensor {
    let n = l.rows();
    assert_eq!(b.rows(), n, "chol_solve: dimension mismatch");
    let m = b.cols();
    let mut x = b.clone();
    // forward: L y = b
    for i in 0..n {
        for k in 0..i {
            let lik = l.get(i, k);
            if lik == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = x.get(i, j) - lik * x.get(k, j);
                x.set(i, j, v);
            }
        }
        let d = l.get(i, i);
        for j in 0..m {
            x.set(i, j, x.get(i, j) / d);
        }
    }
    // backward: L^T x = y
    for i in (0..n).rev() {
        for k in i + 1..n {
            let lki = l.get(k, i);
            if lki == 0.0 {
                continue;
            }
            for j in 0..m {
                let v = x.get(i, j) - lki * x.get(k, j);
                x.set(i, j, v);
            }
        }
        let d = l.get(i, i);
        for j in 0..m {
            x.set(i, j, x.get(i, j) / d);
        }
    }
    x
}

/// Overflow-safe softplus `log(1 + exp(t))`.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}
