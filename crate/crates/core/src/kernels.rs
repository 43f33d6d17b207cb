//! Small dense linear algebra and the constraint-geometry matrices.
//!
//! Everything here works on tiny matrices (a handful of constraints, a
//! handful of variables), so the routines favour exactness properties over
//! asymptotic speed. Empty stacks follow one convention throughout: the
//! determinant of a 0x0 matrix is 1 and its adjugate is the empty matrix,
//! which makes `H = I_n` when there are no equality constraints.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Threshold for positive-definiteness decisions on determinants.
pub const TOL_PD: f64 = 1e-10;

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors; every row must have `cols` entries.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn diag(v: &[f64]) -> Self {
        let mut m = Self::zeros(v.len(), v.len());
        for (i, &x) in v.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `self' * v`
    pub fn tr_matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * self'`
    pub fn gram(&self) -> Self {
        Self::from_fn(self.rows, self.rows, |i, j| dot(self.row(i), self.row(j)))
    }

    fn minor(&self, skip_row: usize, skip_col: usize) -> Self {
        let n = self.rows;
        let mut data = Vec::with_capacity((n - 1) * (n - 1));
        for i in (0..n).filter(|&i| i != skip_row) {
            for j in (0..n).filter(|&j| j != skip_col) {
                data.push(self[(i, j)]);
            }
        }
        Self {
            rows: n - 1,
            cols: n - 1,
            data,
        }
    }
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

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matrix product shape mismatch");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(l, j)];
                }
            }
        }
        out
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Entrywise `max(0, v_i)`.
pub fn pos_part(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

/// Entrywise `min(0, v_i)`.
pub fn neg_part(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.min(0.0)).collect()
}

/// Determinant by LU factorisation with partial pivoting. `det` of the
/// empty matrix is 1.
pub fn det(m: &Matrix) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    let mut a = m.data.clone();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        let p = a[pivot * n + col];
        if p == 0.0 {
            return Ok(0.0);
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            det = -det;
        }
        det *= p;
        for i in col + 1..n {
            let factor = a[i * n + col] / p;
            if factor == 0.0 {
                continue;
            }
            for j in col + 1..n {
                a[i * n + j] -= factor * a[col * n + j];
            }
        }
    }
    Ok(det)
}

/// Solves `m x = rhs` by Gaussian elimination with partial pivoting.
/// Returns `None` for an exactly singular system.
pub fn solve(m: &Matrix, rhs: &[f64]) -> Result<Option<Vec<f64>>> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    if rhs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rhs.len(),
        });
    }
    let mut a = m.data.clone();
    let mut b = rhs.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        let p = a[pivot * n + col];
        if p == 0.0 {
            return Ok(None);
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            b.swap(col, pivot);
        }
        for i in col + 1..n {
            let factor = a[i * n + col] / p;
            for j in col..n {
                a[i * n + j] -= factor * a[col * n + j];
            }
            b[i] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i * n + i];
    }
    Ok(Some(x))
}

/// Adjugate (transposed cofactor matrix). Closed-form cofactors up to 3x3,
/// the Faddeev-LeVerrier recursion above that. Finite for singular input.
pub fn adjugate(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::NonSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    Ok(match n {
        0 => Matrix::zeros(0, 0),
        1 => Matrix::identity(1),
        2 => Matrix::from_fn(2, 2, |i, j| {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[(1 - j, 1 - i)]
        }),
        3 => Matrix::from_fn(3, 3, |i, j| {
            // cofactor C_{ji}
            let minor = m.minor(j, i);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * (minor[(0, 0)] * minor[(1, 1)] - minor[(0, 1)] * minor[(1, 0)])
        }),
        _ => faddeev_leverrier(m).1,
    })
}

/// Runs the Faddeev-LeVerrier recursion and returns `(det, adj)`.
pub fn faddeev_leverrier(m: &Matrix) -> (f64, Matrix) {
    let n = m.rows;
    let ident = Matrix::identity(n);
    // M_1 = I, c_{n-1} = -tr(A)
    let mut mk = ident.clone();
    let mut c = -m.trace();
    for k in 2..=n {
        let am = m * &mk;
        mk = &am + &ident.scale(c);
        c = -(m * &mk).trace() / k as f64;
    }
    let sign = if n % 2 == 1 { 1.0 } else { -1.0 };
    // c_0 = (-1)^n det(A), adj(A) = (-1)^{n-1} M_n
    let det = if n % 2 == 0 { c } else { -c };
    (det, mk.scale(sign))
}

/// `H = det(AA') I_n - A' adj(AA') A`; `A` is m x n with m < n.
/// For m = 0 this is `I_n`.
pub fn h_matrix(a: &Matrix) -> Result<Matrix> {
    let (m, n) = (a.rows, a.cols);
    if m > 0 && m >= n {
        return Err(Error::TooManyEqualities { m, n });
    }
    let aa = a.gram();
    let d = det(&aa)?;
    let adj = adjugate(&aa)?;
    let at_adj_a = &(&a.transpose() * &adj) * a;
    Ok(&Matrix::identity(n).scale(d) - &at_adj_a)
}

fn check_constraint_shapes(a: &Matrix, b: &Matrix, g: &[f64]) -> Result<()> {
    if b.rows != g.len() {
        return Err(Error::DimensionMismatch {
            expected: b.rows,
            got: g.len(),
        });
    }
    if a.rows > 0 && b.rows > 0 && a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            expected: a.cols,
            got: b.cols,
        });
    }
    Ok(())
}

fn q_from_parts(d: f64, h: &Matrix, b: &Matrix, g: &[f64]) -> Matrix {
    let bhb = &(b * h) * &b.transpose();
    let gm = neg_part(g);
    let mut q = bhb.scale(d);
    for (j, gj) in gm.iter().enumerate() {
        q[(j, j)] -= d * d * gj;
    }
    q
}

/// `Q = det(AA') B H B' - det(AA')^2 diag(g^-)`, a k x k PSD matrix.
pub fn q_matrix(a: &Matrix, b: &Matrix, g: &[f64]) -> Result<Matrix> {
    check_constraint_shapes(a, b, g)?;
    let h = h_matrix(a)?;
    let d = det(&a.gram())?;
    Ok(q_from_parts(d, &h, b, g))
}

/// `R = H B' adj(Q)`, an n x k matrix.
pub fn r_matrix(a: &Matrix, b: &Matrix, g: &[f64]) -> Result<Matrix> {
    check_constraint_shapes(a, b, g)?;
    let h = h_matrix(a)?;
    let d = det(&a.gram())?;
    let q = q_from_parts(d, &h, b, g);
    Ok(&(&h * &b.transpose()) * &adjugate(&q)?)
}

/// Linear independence of the equality gradients and the gradients of
/// inequalities with `g_j >= 0`, decided through `det(Q)`.
pub fn licq_test(a: &Matrix, b: &Matrix, g: &[f64]) -> Result<bool> {
    let geo = ConstraintGeometry::new(a, b, g)?;
    Ok(geo.licq())
}

/// All matrices derived from the constraint Jacobians at one point.
#[derive(Debug, Clone)]
pub struct ConstraintGeometry {
    /// `det(AA')`, 1 when there are no equalities.
    pub det_aa: f64,
    /// n x n
    pub h: Matrix,
    /// k x k
    pub q: Matrix,
    pub det_q: f64,
    pub adj_q: Matrix,
    /// n x k
    pub r: Matrix,
    has_equalities: bool,
}

impl ConstraintGeometry {
    /// `a` is m x n, `b` is k x n. Either may have zero rows, but both
    /// must report the same column count `n`.
    pub fn new(a: &Matrix, b: &Matrix, g: &[f64]) -> Result<Self> {
        check_constraint_shapes(a, b, g)?;
        if a.cols != b.cols {
            return Err(Error::DimensionMismatch {
                expected: a.cols,
                got: b.cols,
            });
        }
        let h = h_matrix(a)?;
        let det_aa = det(&a.gram())?;
        let q = q_from_parts(det_aa, &h, b, g);
        let det_q = det(&q)?;
        let adj_q = adjugate(&q)?;
        let r = &(&h * &b.transpose()) * &adj_q;
        Ok(Self {
            det_aa,
            h,
            q,
            det_q,
            adj_q,
            r,
            has_equalities: a.rows > 0,
        })
    }

    pub fn licq(&self) -> bool {
        (!self.has_equalities || self.det_aa > TOL_PD) && self.det_q > TOL_PD
    }
}
