use crate::linalg::{sym_eigen, CMatrix};
use crate::scalar::{cast, eig_tolerance, Real};

use super::program::{AffineExpr, Constraint, Var, VarBlock};
use super::ConicError;

/// A complex vector variable stored as real and imaginary blocks of equal length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComplexVarVec {
    pub re: VarBlock,
    pub im: VarBlock,
}

impl ComplexVarVec {
    pub fn len(&self) -> usize {
        self.re.len
    }

    pub fn is_empty(&self) -> bool {
        self.re.len == 0
    }

    /// Rows of the real map `x -> [Re(h^H x), Im(h^H x)]`.
    pub fn inner_rows<T: Real>(&self, h: &[num_complex::Complex<T>]) -> [AffineExpr<T>; 2] {
        let mut re = AffineExpr::zero();
        let mut im = AffineExpr::zero();
        // h^H x = sum (a - ib)(u + iv) = sum (a u + b v) + i (a v - b u)
        for (n, z) in h.iter().enumerate() {
            re = re.plus(self.re.at(n), z.re).plus(self.im.at(n), z.im);
            im = im.plus(self.im.at(n), z.re).plus(self.re.at(n), -z.im);
        }
        [re, im]
    }
}

/// Encodes `sum_k w_k^H Q w_k + sum_n a_n t_n^2 <= rhs` as the rotated cone
/// `||(L^H w_k, sqrt(a_n) t_n)||^2 <= 2 (rhs / 2) 1`, where `Q = L L^H` comes
/// from an eigen-decomposition of its real embedding.
pub fn embed_quadratic<T: Real>(
    columns: &[ComplexVarVec],
    q: &CMatrix<T>,
    extra: &[(Var, T)],
    rhs: AffineExpr<T>,
) -> Result<Constraint<T>, ConicError> {
    let n = q.rows();
    if !q.is_square() || columns.iter().any(|c| c.len() != n || c.im.len != n) {
        return Err(ConicError::InvalidProgram(format!(
            "quadratic form of size {}x{} does not match the column blocks",
            q.rows(),
            q.cols()
        )));
    }
    let scale = q.max_abs();
    let tol = eig_tolerance(scale);
    if !q.is_hermitian(tol) {
        return Err(ConicError::InvalidProgram(
            "quadratic form is not Hermitian".into(),
        ));
    }
    let factors = factor_rows(q, tol)?;
    let mut rows = Vec::with_capacity(columns.len() * factors.len() + extra.len());
    for col in columns {
        for f in &factors {
            let mut e = AffineExpr::zero();
            for (k, &c) in f.iter().enumerate() {
                let v = if k < n {
                    col.re.at(k)
                } else {
                    col.im.at(k - n)
                };
                e = e.plus(v, c);
            }
            rows.push(e);
        }
    }
    for &(t, a) in extra {
        if a < T::zero() {
            return Err(ConicError::InvalidProgram(format!(
                "negative weight {a:e} on t-term"
            )));
        }
        if a > T::zero() {
            rows.push(AffineExpr::term(t, a.sqrt()));
        }
    }
    Ok(Constraint::RotatedSoc {
        v: rhs.scaled(cast(0.5)),
        w: AffineExpr::constant(T::one()),
        rows,
    })
}

/// Rows `sqrt(lambda) v^T` of the real embedding with `lambda > tol`.
/// Diagonal inputs bypass the eigen-solver.
fn factor_rows<T: Real>(q: &CMatrix<T>, tol: T) -> Result<Vec<Vec<T>>, ConicError> {
    let n = q.rows();
    let is_diag = (0..n).all(|r| (0..n).all(|c| r == c || q.get(r, c).norm() == T::zero()));
    if is_diag {
        let mut out = Vec::new();
        for part in 0..2 {
            for k in 0..n {
                let d = q.get(k, k).re;
                if d < -tol {
                    return Err(ConicError::NotPsd(d.to_f64().unwrap_or(f64::NAN)));
                }
                if d > tol {
                    let mut row = vec![T::zero(); 2 * n];
                    row[part * n + k] = d.sqrt();
                    out.push(row);
                }
            }
        }
        return Ok(out);
    }
    let eig = sym_eigen(&q.real_embedding(), 2 * n);
    if let Some(&lo) = eig.values.first() {
        if lo < -tol {
            return Err(ConicError::NotPsd(lo.to_f64().unwrap_or(f64::NAN)));
        }
    }
    let drop = T::epsilon() * cast(16.0);
    Ok(eig
        .values
        .iter()
        .zip(&eig.vectors)
        .filter(|(&l, _)| l > tol)
        .map(|(&l, v)| {
            let s = l.sqrt();
            v.iter()
                .map(|&x| if x.abs() <= drop { T::zero() } else { s * x })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ConicProgram;
    use num_complex::Complex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn complex_block(p: &mut ConicProgram<f64>, name: &str, n: usize) -> ComplexVarVec {
        ComplexVarVec {
            re: p.add_block(format!("{name}.re"), n),
            im: p.add_block(format!("{name}.im"), n),
        }
    }

    fn assign(x: &mut [f64], c: &ComplexVarVec, w: &[Complex<f64>]) {
        for (k, z) in w.iter().enumerate() {
            x[c.re.at(k).0] = z.re;
            x[c.im.at(k).0] = z.im;
        }
    }

    /// `||rows||^2` and `2 v w` of a rotated-cone constraint at `x`.
    fn sides(c: &Constraint<f64>, x: &[f64]) -> (f64, f64) {
        match c {
            Constraint::RotatedSoc { v, w, rows } => (
                rows.iter().map(|r| r.eval(x).powi(2)).sum(),
                2.0 * v.eval(x) * w.eval(x),
            ),
            _ => panic!("expected rotated cone"),
        }
    }

    #[test]
    fn identity_scalar_gives_power_bound() {
        let mut p = ConicProgram::<f64>::new();
        let w = complex_block(&mut p, "w", 1);
        let beta = p.add_scalar("beta");
        let c = embed_quadratic(
            &[w.clone()],
            &CMatrix::identity(1),
            &[],
            AffineExpr::var(beta),
        )
        .unwrap();
        let mut x = vec![0.0; p.n_vars()];
        assign(&mut x, &w, &[Complex::new(3.0f64.sqrt(), 0.0)]);
        x[beta.0] = 3.0;
        let (lhs, rhs) = sides(&c, &x);
        assert!((lhs - 3.0).abs() < 1e-12 && (rhs - 3.0).abs() < 1e-12);
    }

    #[test]
    fn selector_reduces_to_row_norm() {
        let mut p = ConicProgram::<f64>::new();
        let w0 = complex_block(&mut p, "w0", 3);
        let w1 = complex_block(&mut p, "w1", 3);
        let t = p.add_scalar("t");
        let sel = CMatrix::diag(&[0.0, 1.0, 0.0]);
        let c = embed_quadratic(
            &[w0.clone(), w1.clone()],
            &sel,
            &[(t, 0.25)],
            AffineExpr::constant(10.0),
        )
        .unwrap();
        let mut x = vec![0.0; p.n_vars()];
        assign(
            &mut x,
            &w0,
            &[
                Complex::new(5.0, 0.0),
                Complex::new(1.0, 2.0),
                Complex::new(7.0, 0.0),
            ],
        );
        assign(
            &mut x,
            &w1,
            &[
                Complex::new(0.0, 0.0),
                Complex::new(0.0, -1.0),
                Complex::new(0.0, 3.0),
            ],
        );
        x[t.0] = 2.0;
        let (lhs, rhs) = sides(&c, &x);
        assert!((lhs - (5.0 + 1.0 + 0.25 * 4.0)).abs() < 1e-12);
        assert!((rhs - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_matches_direct_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..5usize);
            let v: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let q = CMatrix::from_fn(n, n, |r, c| v[r] * v[c].conj());
            let mut p = ConicProgram::<f64>::new();
            let w = complex_block(&mut p, "w", n);
            let beta = p.add_scalar("beta");
            let cons = embed_quadratic(&[w.clone()], &q, &[], AffineExpr::term(beta, 1.0)).unwrap();
            if let Constraint::RotatedSoc { rows, .. } = &cons {
                // the real embedding doubles the rank
                assert_eq!(rows.len(), 2);
            }
            let wv: Vec<Complex<f64>> = (0..n)
                .map(|_| Complex::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
                .collect();
            let direct = q.quad_form(&wv);
            let mut x = vec![0.0; p.n_vars()];
            assign(&mut x, &w, &wv);
            x[beta.0] = rng.random::<f64>() * 2.0 * direct;
            let (lhs, rhs) = sides(&cons, &x);
            assert!((lhs - direct).abs() <= 1e-10 * (1.0 + direct));
            if (x[beta.0] - direct).abs() > 1e-9 {
                assert_eq!(lhs <= rhs, direct <= x[beta.0]);
            }
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut p = ConicProgram::<f64>::new();
        let w = complex_block(&mut p, "w", 2);
        let q = CMatrix::from_rows(&[
            vec![Complex::new(1.0, 0.0), Complex::new(2.0, 0.0)],
            vec![Complex::new(2.0, 0.0), Complex::new(1.0, 0.0)],
        ])
        .unwrap();
        assert!(matches!(
            embed_quadratic(&[w.clone()], &q, &[], AffineExpr::constant(1.0)),
            Err(ConicError::NotPsd(_))
        ));
        assert!(matches!(
            embed_quadratic(
                &[w],
                &CMatrix::diag(&[1.0, -1.0]),
                &[],
                AffineExpr::constant(1.0)
            ),
            Err(ConicError::NotPsd(_))
        ));
    }
}
