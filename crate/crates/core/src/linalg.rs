//! Small dense complex/real linear algebra used by the model and the solvers.
//!
//! Matrices here are at most a few tens of rows (antenna counts), so plain
//! row-major storage with cyclic Jacobi and partial-pivot elimination is
//! sufficient and keeps everything generic over [`Real`].

use num_complex::Complex;

use crate::scalar::{cast, Real};

/// Dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| {
            if r == c {
                Complex::new(T::one(), T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> Complex<T>,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row vectors; `None` if the rows are ragged.
    pub fn from_rows(rows: &[Vec<Complex<T>>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Builds an `n x k` matrix whose columns are the given vectors.
    pub fn from_columns(n: usize, columns: &[Vec<Complex<T>>]) -> Option<Self> {
        if columns.iter().any(|c| c.len() != n) {
            return None;
        }
        Some(Self::from_fn(n, columns.len(), |r, c| columns[c][r]))
    }

    /// Real diagonal matrix.
    pub fn diag(d: &[T]) -> Self {
        Self::from_fn(d.len(), d.len(), |r, c| {
            if r == c {
                Complex::new(d[r], T::zero())
            } else {
                Complex::new(T::zero(), T::zero())
            }
        })
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
    pub fn get(&self, r: usize, c: usize) -> Complex<T> {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex<T>) {
        self.data[r * self.cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[Complex<T>]) {
        for (r, x) in v.iter().enumerate() {
            self.set(r, c, *x);
        }
    }

    /// Euclidean norm of row `r` (the transmit magnitude at antenna `r`).
    pub fn row_norm(&self, r: usize) -> T {
        self.data[r * self.cols..(r + 1) * self.cols]
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<T>()
            .sqrt()
    }

    pub fn fro_norm_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// Elementwise sum; panics on shape mismatch.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.is_square()
            && (0..self.rows).all(|r| {
                (r..self.cols).all(|c| (self.get(r, c) - self.get(c, r).conj()).norm() <= tol)
            })
    }

    /// `x^H A x` for square `A` (real part).
    pub fn quad_form(&self, x: &[Complex<T>]) -> T {
        let mut acc = Complex::new(T::zero(), T::zero());
        for r in 0..self.rows {
            let mut row = Complex::new(T::zero(), T::zero());
            for c in 0..self.cols {
                row = row + self.get(r, c) * x[c];
            }
            acc = acc + x[r].conj() * row;
        }
        acc.re
    }

    /// `tr(W^H A W)` for square `A` and an `n x k` matrix `W`.
    pub fn trace_form(&self, w: &CMatrix<T>) -> T {
        (0..w.cols()).map(|k| self.quad_form(&w.column(k))).sum()
    }

    pub fn mat_vec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        (0..self.rows)
            .map(|r| {
                (0..self.cols).fold(Complex::new(T::zero(), T::zero()), |acc, c| {
                    acc + self.get(r, c) * x[c]
                })
            })
            .collect()
    }

    /// Real symmetric `2n x 2n` embedding `[[A, -B], [B, A]]` of `A + iB`,
    /// row-major. For Hermitian input it is symmetric and
    /// `[re; im]^T M [re; im] = x^H (A + iB) x`.
    pub fn real_embedding(&self) -> Vec<T> {
        let n = self.rows;
        debug_assert!(self.is_square());
        let m = 2 * n;
        let mut out = vec![T::zero(); m * m];
        for r in 0..n {
            for c in 0..n {
                let z = self.get(r, c);
                out[r * m + c] = z.re;
                out[r * m + n + c] = -z.im;
                out[(n + r) * m + c] = z.im;
                out[(n + r) * m + n + c] = z.re;
            }
        }
        out
    }
}

/// `h^H w`.
pub fn inner<T: Real>(h: &[Complex<T>], w: &[Complex<T>]) -> Complex<T> {
    h.iter()
        .zip(w)
        .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| {
            acc + a.conj() * b
        })
}

pub fn norm_sqr<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    /// Eigenvalues in ascending order.
    pub values: Vec<T>,
    /// Eigenvectors, `vectors[k]` pairs with `values[k]`.
    pub vectors: Vec<Vec<T>>,
}

/// Cyclic Jacobi eigen-decomposition of a row-major symmetric `n x n` matrix.
pub fn sym_eigen<T: Real>(a: &[T], n: usize) -> SymEigen<T> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let scale = m.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
    let thresh = T::epsilon() * scale * cast(0.1);
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= thresh || scale == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= thresh {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (cast::<T>(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].partial_cmp(&m[j * n + j]).unwrap());
    SymEigen {
        values: order.iter().map(|&k| m[k * n + k]).collect(),
        vectors: order
            .iter()
            .map(|&k| (0..n).map(|r| v[r * n + k]).collect())
            .collect(),
    }
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn hermitian_min_eigenvalue<T: Real>(q: &CMatrix<T>) -> T {
    let n = q.rows();
    if n == 0 {
        return T::zero();
    }
    sym_eigen(&q.real_embedding(), 2 * n).values[0]
}

/// Solves `A x = b` (row-major `n x n`) by Gaussian elimination with partial
/// pivoting. `None` when a pivot vanishes.
pub fn solve_real<T: Real>(mut a: Vec<T>, n: usize, mut b: Vec<T>) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let scale = a.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let tiny = T::epsilon() * scale * from_n::<T>(n);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| {
                a[i * n + col]
                    .abs()
                    .partial_cmp(&a[j * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if a[piv * n + col].abs() <= tiny || a[piv * n + col] == T::zero() {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col * n + k];
                a[r * n + k] -= f * v;
            }
            let bc = b[col];
            b[r] -= f * bc;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r * n + k] * x[k];
        }
        x[r] = s / a[r * n + r];
    }
    Some(x)
}

fn from_n<T: Real>(n: usize) -> T {
    T::from_usize(n.max(1)).unwrap()
}

/// Solves the complex system `A x = b` through its real embedding.
pub fn solve_complex<T: Real>(a: &CMatrix<T>, b: &[Complex<T>]) -> Option<Vec<Complex<T>>> {
    let n = a.rows();
    let mut rhs = Vec::with_capacity(2 * n);
    rhs.extend(b.iter().map(|z| z.re));
    rhs.extend(b.iter().map(|z| z.im));
    let x = solve_real(a.real_embedding(), 2 * n, rhs)?;
    Some((0..n).map(|k| Complex::new(x[k], x[n + k])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn jacobi_diagonalizes_known_matrix() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let e = sym_eigen(&[2.0f64, 1.0, 1.0, 2.0], 2);
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 3.0).abs() < 1e-14);
        let v = &e.vectors[1];
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-14);
    }

    #[test]
    fn hermitian_eigen_via_embedding() {
        // [[2, i],[-i, 2]] has eigenvalues 1 and 3.
        let q = CMatrix::from_rows(&[
            vec![c(2.0, 0.0), c(0.0, 1.0)],
            vec![c(0.0, -1.0), c(2.0, 0.0)],
        ])
        .unwrap();
        assert!(q.is_hermitian(0.0));
        assert!((hermitian_min_eigenvalue(&q) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn embedding_reproduces_quadratic_form() {
        let q = CMatrix::from_rows(&[
            vec![c(2.0, 0.0), c(0.5, 1.0)],
            vec![c(0.5, -1.0), c(3.0, 0.0)],
        ])
        .unwrap();
        let x = [c(0.3, -1.2), c(2.0, 0.7)];
        let m = q.real_embedding();
        let xr = [x[0].re, x[1].re, x[0].im, x[1].im];
        let mut acc = 0.0;
        for r in 0..4 {
            for k in 0..4 {
                acc += xr[r] * m[r * 4 + k] * xr[k];
            }
        }
        assert!((acc - q.quad_form(&x)).abs() < 1e-12);
    }

    #[test]
    fn complex_solve_round_trips() {
        let a = CMatrix::from_rows(&[
            vec![c(4.0, 0.0), c(1.0, 2.0)],
            vec![c(-1.0, 0.5), c(3.0, -1.0)],
        ])
        .unwrap();
        let x = [c(1.0, -1.0), c(0.25, 2.0)];
        let b = a.mat_vec(&x);
        let y = solve_complex(&a, &b).unwrap();
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).norm() < 1e-13);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        assert!(solve_real(vec![1.0, 2.0, 2.0, 4.0], 2, vec![1.0, 1.0]).is_none());
    }

    #[test]
    fn row_norms_and_inner_products() {
        let w = CMatrix::from_rows(&[
            vec![c(3.0, 4.0), c(0.0, 0.0)],
            vec![c(1.0, 0.0), c(0.0, 1.0)],
        ])
        .unwrap();
        assert!((w.row_norm(0) - 5.0).abs() < 1e-15);
        assert!((w.row_norm(1) - 2f64.sqrt()).abs() < 1e-15);
        let z = inner(&[c(0.0, 1.0)], &[c(2.0, 0.0)]);
        assert_eq!(z, c(0.0, -2.0));
    }
}
