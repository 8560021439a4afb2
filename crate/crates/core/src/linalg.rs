//! Dense row-major matrices plus the ridge solver and rank-update inverse
//! maintenance used by the analytic learners.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Relative tolerance below which a pivot or update denominator is treated as zero.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("singular normal equations")]
    SingularNormalEquations,
    #[error("rank-one update singular (denominator {0:e})")]
    RankOneSingular(f64),
    #[error("singular capacitance matrix in block update")]
    SingularCapacitance,
    #[error("singular matrix")]
    Singular,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn dim_err(op: &'static str, detail: String) -> LinalgError {
    LinalgError::Dimension { op, detail }
}

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows * cols != data.len() {
            return Err(dim_err(
                "from_vec",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Matrix { rows: values.len(), cols: 1, data: values.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(dim_err(
                "matmul",
                format!("{}x{} * {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(dim_err(
                "t_matmul",
                format!("({}x{})ᵀ * {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        let n = other.cols;
        for r in 0..self.rows {
            let b_row = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.cols {
            return Err(dim_err(
                "matmul_t",
                format!("{}x{} * ({}x{})ᵀ", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.cols != v.len() {
            return Err(dim_err("matvec", format!("{}x{} * {}", self.rows, self.cols, v.len())));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn t_matvec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if self.rows != v.len() {
            return Err(dim_err("t_matvec", format!("({}x{})ᵀ * {}", self.rows, self.cols, v.len())));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &s) in v.iter().enumerate() {
            axpy(s, self.row(r), &mut out);
        }
        Ok(out)
    }

    fn check_same(&self, other: &Matrix, op: &'static str) -> Result<(), LinalgError> {
        if self.shape() != other.shape() {
            return Err(dim_err(
                op,
                format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<(), LinalgError> {
        self.check_same(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy_assign(&mut self, alpha: f64, other: &Matrix) -> Result<(), LinalgError> {
        self.check_same(other, "axpy_assign")?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn scale_assign(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_same(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    /// Columnwise concatenation `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.rows != other.rows {
            return Err(dim_err("hstack", format!("{} rows vs {} rows", self.rows, other.rows)));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Row concatenation.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.cols && self.rows != 0 && other.rows != 0 {
            return Err(dim_err("vstack", format!("{} cols vs {} cols", self.cols, other.cols)));
        }
        let cols = if self.rows == 0 { other.cols } else { self.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix { rows: self.rows + other.rows, cols, data })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix { rows: self.rows, cols: end - start, data }
    }

    /// Appends `extra` zero columns on the right.
    pub fn pad_columns(&self, extra: usize) -> Matrix {
        let cols = self.cols + extra;
        let mut out = Matrix::zeros(self.rows, cols);
        for r in 0..self.rows {
            out.data[r * cols..r * cols + self.cols].copy_from_slice(self.row(r));
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..i {
                let m = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Lower Cholesky factor, or `None` when the matrix is not positive definite.
    pub fn cholesky(&self) -> Option<Matrix> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Some(l)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_some()
    }

    /// Solves `self · X = rhs` by LU with partial pivoting.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        let lu = Lu::factor(self)?;
        lu.solve(rhs)
    }

    pub fn inverse(&self) -> Result<Matrix, LinalgError> {
        self.solve(&Matrix::identity(self.rows))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// LU factorization with partial pivoting.
struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &Matrix) -> Result<Lu, LinalgError> {
        if a.rows != a.cols {
            return Err(dim_err("lu", format!("non-square {}x{}", a.rows, a.cols)));
        }
        let n = a.rows;
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv < SINGULAR_TOL * scale || !pv.is_finite() {
                return Err(LinalgError::Singular);
            }
            if p != k {
                for c in 0..n {
                    lu.data.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        let v = lu[(k, c)];
                        lu[(i, c)] -= f * v;
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    fn solve(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        if rhs.rows != self.n {
            return Err(dim_err("lu_solve", format!("{} rows vs system of {}", rhs.rows, self.n)));
        }
        let n = self.n;
        let m = rhs.cols;
        let mut x = rhs.select_rows(&self.perm);
        for i in 0..n {
            for k in 0..i {
                let f = self.lu[(i, k)];
                if f != 0.0 {
                    for c in 0..m {
                        let v = x[(k, c)];
                        x[(i, c)] -= f * v;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let f = self.lu[(i, k)];
                if f != 0.0 {
                    for c in 0..m {
                        let v = x[(k, c)];
                        x[(i, c)] -= f * v;
                    }
                }
            }
            let d = self.lu[(i, i)];
            for c in 0..m {
                x[(i, c)] /= d;
            }
        }
        Ok(x)
    }
}

/// Minimizer of `‖Y − XW‖_F² + γ‖W‖_F²`, i.e. `(XᵀX + γI)⁻¹XᵀY`.
pub fn ridge_solve(x: &Matrix, y: &Matrix, gamma: f64) -> Result<Matrix, LinalgError> {
    if x.rows() != y.rows() {
        return Err(dim_err("ridge_solve", format!("X has {} rows, Y has {}", x.rows(), y.rows())));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(LinalgError::InvalidArgument(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let mut gram = x.t_matmul(x)?;
    for i in 0..gram.rows() {
        gram[(i, i)] += gamma;
    }
    let rhs = x.t_matmul(y)?;
    match gram.solve(&rhs) {
        Ok(w) => Ok(w),
        Err(LinalgError::Singular) => Err(LinalgError::SingularNormalEquations),
        Err(e) => Err(e),
    }
}

/// `(A + uvᵀ)⁻¹` from `A⁻¹`.
pub fn sherman_morrison_update(a_inv: &Matrix, u: &[f64], v: &[f64]) -> Result<Matrix, LinalgError> {
    let d = a_inv.rows();
    if a_inv.cols() != d || u.len() != d || v.len() != d {
        return Err(dim_err(
            "sherman_morrison_update",
            format!("A_inv {}x{}, u {}, v {}", a_inv.rows(), a_inv.cols(), u.len(), v.len()),
        ));
    }
    let a_u = a_inv.matvec(u)?;
    let v_a = a_inv.t_matvec(v)?;
    let quad = dot(v, &a_u);
    let denom = 1.0 + quad;
    let scale = 1.0f64.max(quad.abs());
    if denom.abs() < SINGULAR_TOL * scale {
        return Err(LinalgError::RankOneSingular(denom));
    }
    let mut out = a_inv.clone();
    for i in 0..d {
        let f = a_u[i] / denom;
        if f != 0.0 {
            axpy(-f, &v_a, out.row_mut(i));
        }
    }
    Ok(out)
}

/// `(βA + UᵀU)⁻¹` from `A⁻¹`, where `U` holds one observation per row (`m×d`).
///
/// Only the `m×m` capacitance system `βI + U A⁻¹ Uᵀ` is solved.
pub fn woodbury_block_update(a_inv: &Matrix, u: &Matrix, beta: f64) -> Result<Matrix, LinalgError> {
    let d = a_inv.rows();
    if a_inv.cols() != d || u.cols() != d {
        return Err(dim_err(
            "woodbury_block_update",
            format!("A_inv {}x{}, U {}x{}", a_inv.rows(), a_inv.cols(), u.rows(), u.cols()),
        ));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LinalgError::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
    }
    if u.rows() == 0 {
        return Err(LinalgError::InvalidArgument("block update needs at least one row".into()));
    }
    // A⁻¹Uᵀ is d×m
    let a_ut = a_inv.matmul_t(u)?;
    let mut cap = u.matmul(&a_ut)?;
    for i in 0..cap.rows() {
        cap[(i, i)] += beta;
    }
    let rhs = a_ut.transpose();
    let solved = match cap.solve(&rhs) {
        Ok(s) => s,
        Err(LinalgError::Singular) => return Err(LinalgError::SingularCapacitance),
        Err(e) => return Err(e),
    };
    let correction = a_ut.matmul(&solved)?;
    let mut out = a_inv.sub(&correction)?;
    out.scale_assign(1.0 / beta);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Gradient descent on the ridge objective, independent of the normal equations.
    fn ridge_by_gradient_descent(x: &Matrix, y: &Matrix, gamma: f64) -> Matrix {
        let mut w = Matrix::zeros(x.cols(), y.cols());
        // step below 1/L where L bounds the Hessian 2(XᵀX + γI)
        let lip = 2.0 * (x.frobenius_norm().powi(2) + gamma);
        let step = 1.0 / lip;
        for _ in 0..200_000 {
            let resid = x.matmul(&w).unwrap().sub(y).unwrap();
            let mut grad = x.t_matmul(&resid).unwrap().scale(2.0);
            grad.axpy_assign(2.0 * gamma, &w).unwrap();
            if grad.max_abs() < 1e-13 {
                break;
            }
            w.axpy_assign(-step, &grad).unwrap();
        }
        w
    }

    #[test]
    fn ridge_identity_cases() {
        let x = Matrix::identity(2);
        let y = Matrix::diag(&[2.0, 3.0]);
        assert_eq!(ridge_solve(&x, &y, 0.0).unwrap(), Matrix::diag(&[2.0, 3.0]));
        let w = ridge_solve(&x, &y, 1.0).unwrap();
        assert!(w.max_abs_diff(&Matrix::diag(&[1.0, 1.5])) < 1e-15);
    }

    #[test]
    fn ridge_matches_gradient_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(8, 3, &mut rng);
        let y = random(8, 2, &mut rng);
        let w = ridge_solve(&x, &y, 0.1).unwrap();
        let oracle = ridge_by_gradient_descent(&x, &y, 0.1);
        assert!(w.max_abs_diff(&oracle) < 1e-6, "diff {}", w.max_abs_diff(&oracle));
    }

    #[test]
    fn ridge_singular_at_zero_gamma() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]);
        let y = Matrix::from_rows(&[[1.0], [2.0]]);
        assert_eq!(ridge_solve(&x, &y, 0.0), Err(LinalgError::SingularNormalEquations));
        assert!(ridge_solve(&x, &y, 1e-3).is_ok());
        assert!(ridge_solve(&x, &y, -1.0).is_err());
    }

    #[test]
    fn sherman_morrison_trivial_cases() {
        let i2 = Matrix::identity(2);
        let out = sherman_morrison_update(&i2, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(out, Matrix::diag(&[0.5, 1.0]));
        let out = sherman_morrison_update(&i2, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(out, i2);
    }

    #[test]
    fn sherman_morrison_singular_denominator() {
        let i2 = Matrix::identity(2);
        let err = sherman_morrison_update(&i2, &[-1.0, 0.0], &[1.0, 0.0]).unwrap_err();
        assert!(matches!(err, LinalgError::RankOneSingular(_)));
    }

    #[test]
    fn woodbury_trivial_cases() {
        let i3 = Matrix::identity(3);
        let out = woodbury_block_update(&i3, &Matrix::zeros(2, 3), 1.0).unwrap();
        assert_eq!(out, i3);
        let out = woodbury_block_update(&Matrix::identity(1), &Matrix::identity(1), 1.0).unwrap();
        assert_eq!(out[(0, 0)], 0.5);
    }

    #[test]
    fn woodbury_rejects_bad_beta() {
        let i2 = Matrix::identity(2);
        assert!(woodbury_block_update(&i2, &Matrix::identity(2), 0.0).is_err());
        assert!(woodbury_block_update(&i2, &Matrix::identity(2), 1.5).is_err());
    }

    #[test]
    fn woodbury_singular_capacitance() {
        // βI + U A⁻¹ Uᵀ = 1 + (-2) = -1 + ... pick A⁻¹ = -I so the capacitance is 1 - 1 = 0
        let a_inv = Matrix::diag(&[-1.0]);
        let u = Matrix::from_rows(&[[1.0]]);
        assert_eq!(woodbury_block_update(&a_inv, &u, 1.0), Err(LinalgError::SingularCapacitance));
    }

    #[test]
    fn lu_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = random(6, 6, &mut rng);
        for i in 0..6 {
            a[(i, i)] += 4.0;
        }
        let inv = a.inverse().unwrap();
        let eye = a.matmul(&inv).unwrap();
        assert!(eye.max_abs_diff(&Matrix::identity(6)) < 1e-12);
    }

    #[test]
    fn cholesky_detects_indefinite() {
        assert!(Matrix::diag(&[1.0, 2.0]).is_positive_definite());
        assert!(!Matrix::diag(&[1.0, -2.0]).is_positive_definite());
    }

    #[test]
    fn shape_helpers() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[5.0], [6.0]]);
        let h = a.hstack(&b).unwrap();
        assert_eq!(h.row(1), &[3.0, 4.0, 6.0]);
        assert_eq!(a.pad_columns(2).row(0), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(a.t_matmul(&a).unwrap(), a.transpose().matmul(&a).unwrap());
        assert_eq!(a.matmul_t(&a).unwrap(), a.matmul(&a.transpose()).unwrap());
        assert_eq!(a.columns(1, 2).as_slice(), &[2.0, 4.0]);
        assert!(a.matmul(&Matrix::zeros(3, 1)).is_err());
    }
}
