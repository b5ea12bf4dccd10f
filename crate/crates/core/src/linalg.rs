//! Dense real linear algebra.
//!
//! A small row-major [`Matrix`] type plus the handful of factorizations the
//! optimizer needs: a cyclic Jacobi symmetric eigensolver, Cholesky solves for
//! SPD systems, and Kronecker-product identities that avoid materializing
//! `A ⊗ B`.
//!
//! Vectorization follows the column-stacking convention: `vec(X)` lists the
//! first column of `X`, then the second, and so on. Under that convention
//! `(A ⊗ B) vec(X) = vec(B X Aᵀ)`.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest row or column count [`dense_kron`] will materialize.
pub const DENSE_KRON_CAP: usize = 4096;

/// Dense matrix stored row-major: `data[i * cols + j] = A[i, j]`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::new",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite entry {} at ({}, {})",
                data[pos],
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
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

    /// Builds a matrix from row slices.
    ///
    /// # Panics
    /// Panics if the rows are ragged.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), ncols, "row {i} has {} columns, expected {ncols}", r.len());
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols: ncols,
            data,
        }
    }

    /// Inverse of [`Matrix::to_col_vec`]: fills a `rows × cols` matrix column by column.
    pub fn from_col_vec(rows: usize, cols: usize, v: &[f64]) -> Result<Self> {
        if v.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::from_col_vec",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, v.len()),
            ));
        }
        Ok(Self::from_fn(rows, cols, |i, j| v[j * rows + i]))
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
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// `vec(self)`: columns stacked top to bottom.
    pub fn to_col_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self[(i, j)]);
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dim(
                "matmul",
                format!("{}x{} * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ`, the Gram-style product used for covariance estimates.
    pub fn matmul_transpose(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(Error::dim(
                "matmul_transpose",
                format!("{}x{} * ({}x{})ᵀ", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out.data[i * rhs.rows + j] = dot(a, rhs.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`.
    pub fn transpose_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::dim(
                "transpose_matmul",
                format!("({}x{})ᵀ * {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim(
                "matvec",
                format!("{}x{} * vector of length {}", self.rows, self.cols, x.len()),
            ));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(
                op,
                format!("{}x{} vs {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self ← a·self + b·rhs`, elementwise.
    pub fn blend_in_place(&mut self, a: f64, rhs: &Matrix, b: f64) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(
                "blend",
                format!("{}x{} vs {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            ));
        }
        for (s, &r) in self.data.iter_mut().zip(&rhs.data) {
            *s = a * *s + b * r;
        }
        Ok(())
    }

    /// `self + shift·I`. Square matrices only.
    pub fn add_diag(&self, shift: f64) -> Matrix {
        debug_assert!(self.is_square());
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] += shift;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        debug_assert!(self.is_square());
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigendecomposition `A = Q Λ Qᵀ` of a symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymEig {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn reconstruct(&self) -> Matrix {
        let q = &self.eigenvectors;
        let n = q.rows();
        Matrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| q[(i, k)] * self.eigenvalues[k] * q[(j, k)])
                .sum()
        })
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + Aᵀ)/2` first. Eigenvalues come back in
/// ascending order with matching eigenvector columns.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(Error::dim(
            "sym_eig",
            format!("matrix must be square, got {}x{}", a.rows(), a.cols()),
        ));
    }
    if !a.is_finite() {
        return Err(Error::Numerical("sym_eig: input has non-finite entries".into()));
    }
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut q = Matrix::identity(n);
    let scale = m.frobenius_norm();
    if n <= 1 || scale == 0.0 {
        return Ok(sorted_eig(&m, q));
    }

    let off_norm = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&m) <= 1e-15 * scale {
            return Ok(sorted_eig(&m, q));
        }
        for p in 0..n - 1 {
            for r in p + 1..n {
                let apr = m[(p, r)];
                if apr.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = m[(p, p)];
                let arr = m[(r, r)];
                // Rotation angle that zeroes m[p][r].
                let theta = (arr - app) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkr = m[(k, r)];
                    m[(k, p)] = c * mkp - s * mkr;
                    m[(k, r)] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mrk = m[(r, k)];
                    m[(p, k)] = c * mpk - s * mrk;
                    m[(r, k)] = s * mpk + c * mrk;
                }
                m[(p, r)] = 0.0;
                m[(r, p)] = 0.0;
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }

    let residual = off_norm(&m);
    if residual <= 1e-12 * scale {
        return Ok(sorted_eig(&m, q));
    }
    Err(Error::Numerical(format!(
        "sym_eig: Jacobi did not converge on {n}x{n} matrix after {JACOBI_MAX_SWEEPS} sweeps \
         (off-diagonal norm {residual:.3e}, Frobenius norm {scale:.3e}, trace {:.3e})",
        a.trace()
    )))
}

fn sorted_eig(diag: &Matrix, q: Matrix) -> SymEig {
    let n = diag.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[(i, i)].total_cmp(&diag[(j, j)]));
    let eigenvalues = order.iter().map(|&i| diag[(i, i)]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |i, k| q[(i, order[k])]);
    SymEig {
        eigenvalues,
        eigenvectors,
    }
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Factorizes a symmetric positive-definite matrix. Only the lower triangle is read.
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::dim(
                "cholesky",
                format!("matrix must be square, got {}x{}", a.rows(), a.cols()),
            ));
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numerical(format!(
                    "cholesky: matrix is not positive definite, pivot {j} of {n} is {d:.6e}"
                )));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor_l(&self) -> &Matrix {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::dim(
                "cholesky solve",
                format!("system of size {n}, right-hand side of length {}", b.len()),
            ));
        }
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        Ok(y)
    }

    /// `A⁻¹ B`, column by column.
    pub fn solve_matrix(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.dim() {
            return Err(Error::dim(
                "cholesky solve_matrix",
                format!("system of size {}, right-hand side {}x{}", self.dim(), b.rows(), b.cols()),
            ));
        }
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.column(j))?;
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        Ok(out)
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn spd_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::dim(
            "spd_solve",
            format!("{}x{} system with right-hand side of length {}", a.rows(), a.cols(), b.len()),
        ));
    }
    Cholesky::factor(a)?.solve(b)
}

/// `(A ⊗ B) x` computed as `vec(B X Aᵀ)`, never forming `A ⊗ B`.
///
/// `x` is read as the column-stacked `cols(B) × cols(A)` matrix `X`.
pub fn kron_apply(a: &Matrix, b: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.cols() * b.cols() {
        return Err(Error::dim(
            "kron_apply",
            format!(
                "({}x{}) ⊗ ({}x{}) needs a vector of length {}, got {}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols(),
                a.cols() * b.cols(),
                x.len()
            ),
        ));
    }
    let xm = Matrix::from_col_vec(b.cols(), a.cols(), x)?;
    let bx = b.matmul(&xm)?;
    Ok(bx.matmul_transpose(a)?.to_col_vec())
}

/// Sum of all entries of `A ⊗ B`, which factors as `(Σ A)(Σ B)`.
pub fn kron_elem_sum(a: &Matrix, b: &Matrix) -> f64 {
    a.sum() * b.sum()
}

/// Materialized Kronecker product. Capped at [`DENSE_KRON_CAP`] per side.
pub fn dense_kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    dense_kron_capped(a, b, DENSE_KRON_CAP)
}

pub fn dense_kron_capped(a: &Matrix, b: &Matrix, cap: usize) -> Result<Matrix> {
    let rows = a.rows() * b.rows();
    let cols = a.cols() * b.cols();
    if rows > cap || cols > cap {
        return Err(Error::Size(format!(
            "dense Kronecker product would be {rows}x{cols}, cap is {cap}x{cap}"
        )));
    }
    let (br, bc) = b.shape();
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    }))
}
