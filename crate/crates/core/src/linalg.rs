//! Dense 64-bit vectors and matrices plus a cyclic Jacobi eigensolver for
//! real symmetric matrices.
//!
//! Matrices are stored row-major. Everything here is a pure function of its
//! inputs and safe to call concurrently.

use std::ops::{Index, IndexMut};

use crate::error::{PsaError, Result};

/// Maximum number of full cyclic sweeps before [`eigh_symmetric`] gives up.
pub const MAX_JACOBI_SWEEPS: usize = 50;

/// Largest tolerated `max |A - A^T|` for input to [`eigh_symmetric`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector {
            data: vec![0.0; len],
        }
    }

    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(PsaError::domain(format!(
                "vector entry {i} is not finite ({})",
                data[i]
            )));
        }
        Ok(Vector { data })
    }

    /// Standard basis vector `e_i` of length `len`.
    pub fn basis(len: usize, i: usize) -> Self {
        let mut v = Vector::zeros(len);
        v.data[i] = 1.0;
        v
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        dot(&self.data, &other.data)
    }

    pub fn norm2(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn scaled(&self, factor: f64) -> Vector {
        Vector::from_vec_unchecked(self.data.iter().map(|v| v * factor).collect())
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    pub fn normalized(&self) -> Option<Vector> {
        let n = self.norm2();
        (n > 0.0).then(|| self.scaled(1.0 / n))
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps a row-major buffer. Fails on a length mismatch or non-finite entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(PsaError::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(PsaError::domain(format!(
                "matrix entry ({}, {}) is not finite",
                i / cols.max(1),
                i % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(PsaError::dim("ragged rows"));
        }
        Matrix::from_row_major(rows.len(), cols, rows.concat())
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vector]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vector::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(PsaError::dim("columns of differing length"));
        }
        let mut m = Matrix::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            for i in 0..rows {
                m[(i, j)] = col[i];
            }
        }
        Ok(m)
    }

    pub(crate) fn from_row_major_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Matrix { rows, cols, data }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        Vector::from_vec_unchecked((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn diagonal(&self) -> Vector {
        let n = self.rows.min(self.cols);
        Vector::from_vec_unchecked((0..n).map(|i| self[(i, i)]).collect())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// First `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        let k = k.min(self.cols);
        let mut out = Matrix::zeros(self.rows, k);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[..k]);
        }
        out
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(PsaError::dim(format!(
            "dot of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn frobenius(m: &Matrix) -> f64 {
    norm2(m.as_slice())
}

pub fn outer(a: &Vector, b: &Vector) -> Matrix {
    let mut m = Matrix::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for (j, bj) in b.iter().enumerate() {
            m[(i, j)] = a[i] * bj;
        }
    }
    m
}

pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    if m.cols() != v.len() {
        return Err(PsaError::dim(format!(
            "{}x{} matrix times vector of length {}",
            m.rows(),
            m.cols(),
            v.len()
        )));
    }
    Ok(Vector::from_vec_unchecked(
        (0..m.rows())
            .map(|i| m.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum())
            .collect(),
    ))
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(PsaError::dim(format!(
            "{}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// `v^T A v` for square `A`.
pub fn quadratic_form(a: &Matrix, v: &[f64]) -> Result<f64> {
    if !a.is_square() || a.rows() != v.len() {
        return Err(PsaError::dim(format!(
            "quadratic form of {}x{} matrix with vector of length {}",
            a.rows(),
            a.cols(),
            v.len()
        )));
    }
    let mut total = 0.0;
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row_dot: f64 = a.row(i).iter().zip(v).map(|(x, y)| x * y).sum();
        total += vi * row_dot;
    }
    Ok(total)
}

/// Full spectrum of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EighResult {
    /// Sorted in descending order.
    pub eigenvalues: Vector,
    /// Column `k` pairs with `eigenvalues[k]`.
    pub eigenvectors: Matrix,
    pub sweeps: usize,
}

/// Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + A^T) / 2` first. Eigenvalues come back in
/// descending order; each eigenvector is signed so that its entry of largest
/// magnitude (first one on ties) is non-negative, which makes the output a
/// deterministic function of the input bytes.
pub fn eigh_symmetric(a: &Matrix) -> Result<EighResult> {
    if !a.is_square() {
        return Err(PsaError::dim(format!(
            "eigh needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(PsaError::domain("eigh input has non-finite entries"));
    }
    let asym = a.max_abs_asymmetry();
    if asym > SYMMETRY_TOLERANCE {
        return Err(PsaError::domain(format!(
            "eigh input is not symmetric (max |A - A^T| = {asym:.3e})"
        )));
    }

    let n = a.rows();
    let mut w = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (w[(i, j)] + w[(j, i)]);
            w[(i, j)] = m;
            w[(j, i)] = m;
        }
    }
    // Rows of `basis` are the eigenvectors so rotations touch contiguous memory.
    let mut basis = Matrix::identity(n);
    let sweeps = jacobi_sweeps(&mut w, &mut basis)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]));

    let mut eigenvalues = Vector::zeros(n);
    let mut eigenvectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        eigenvalues[k] = w[(src, src)];
        let row = basis.row(src);
        let pivot = row
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        let sign = if row.get(pivot).copied().unwrap_or(0.0) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for (i, v) in row.iter().enumerate() {
            eigenvectors[(i, k)] = sign * v;
        }
    }
    Ok(EighResult {
        eigenvalues,
        eigenvectors,
        sweeps,
    })
}

fn off_diagonal_norm(w: &Matrix) -> f64 {
    let n = w.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 2.0 * w[(i, j)] * w[(i, j)];
        }
    }
    sum.sqrt()
}

fn jacobi_sweeps(w: &mut Matrix, basis: &mut Matrix) -> Result<usize> {
    let n = w.rows();
    let scale = frobenius(w);
    if n < 2 || scale == 0.0 {
        return Ok(0);
    }
    let target = (n as f64) * f64::EPSILON * scale;
    // Entries this small are left alone: together they stay below eps * ||A||_F.
    let negligible = f64::EPSILON * scale / n as f64;

    for sweep in 0..MAX_JACOBI_SWEEPS {
        let off = off_diagonal_norm(w);
        if off <= target {
            return Ok(sweep);
        }
        // Early sweeps only chase entries well above the RMS off-diagonal size.
        let threshold = if sweep < 3 {
            negligible.max(0.2 * off / n as f64)
        } else {
            negligible
        };
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = w[(p, q)];
                if apq.abs() <= threshold {
                    continue;
                }
                rotate(w, basis, p, q, apq);
            }
        }
    }
    let off_norm = off_diagonal_norm(w);
    if off_norm <= target {
        Ok(MAX_JACOBI_SWEEPS)
    } else {
        Err(PsaError::Convergence {
            sweeps: MAX_JACOBI_SWEEPS,
            off_norm,
        })
    }
}

/// Applies the rotation that annihilates `w[p][q]`, i.e. `W <- J^T W J`.
fn rotate(w: &mut Matrix, basis: &mut Matrix, p: usize, q: usize, apq: f64) {
    let n = w.rows();
    let app = w[(p, p)];
    let aqq = w[(q, q)];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    {
        let data = w.as_mut_slice();
        let (head, tail) = data.split_at_mut(q * n);
        let row_p = &mut head[p * n..(p + 1) * n];
        let row_q = &mut tail[..n];
        for r in 0..n {
            if r == p || r == q {
                continue;
            }
            let arp = row_p[r];
            let arq = row_q[r];
            row_p[r] = c * arp - s * arq;
            row_q[r] = s * arp + c * arq;
        }
        row_p[p] = app - t * apq;
        row_q[q] = aqq + t * apq;
        row_p[q] = 0.0;
        row_q[p] = 0.0;
    }
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        w[(r, p)] = w[(p, r)];
        w[(r, q)] = w[(q, r)];
    }

    let data = basis.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * n);
    let vp = &mut head[p * n..(p + 1) * n];
    let vq = &mut tail[..n];
    for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}
