//! Small dense complex linear algebra.
//!
//! Everything here is sized for the recovery pipeline: Hermitian positive
//! definite systems of order `M <= 16`, rank-one outer products and vector
//! norms. Complex scalars are `Complex64`, i.e. a `(re, im)` pair of `f64`.

use std::ops::{Deref, DerefMut, Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative pivot floor for the Cholesky factorization.
pub const PIVOT_FLOOR: f64 = 1e-12;
/// Absolute tolerance on `|a_ij - conj(a_ji)|`, scaled by `max(1, max |a|)`.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CVector(pub Vec<C64>);

impl CVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![C64::new(0.0, 0.0); n])
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Self {
        assert_eq!(re.len(), im.len());
        Self(re.iter().zip(im).map(|(&r, &i)| C64::new(r, i)).collect())
    }

    pub fn norm2(&self) -> f64 {
        vec_norm2(self)
    }

    /// `sum_i conj(self_i) * other_i`
    pub fn dot_h(&self, other: &[C64]) -> C64 {
        self.iter().zip(other).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(self.iter().map(|z| z * factor).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Deref for CVector {
    type Target = Vec<C64>;
    fn deref(&self) -> &Vec<C64> {
        &self.0
    }
}

impl DerefMut for CVector {
    fn deref_mut(&mut self) -> &mut Vec<C64> {
        &mut self.0
    }
}

impl From<Vec<C64>> for CVector {
    fn from(v: Vec<C64>) -> Self {
        Self(v)
    }
}

/// Dense complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix whose `j`-th column is `columns[j]`.
    pub fn from_columns(columns: &[CVector]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Dimension("ragged columns".into()));
        }
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            for (i, z) in c.iter().enumerate() {
                m[(i, j)] = *z;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> CVector {
        CVector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn columns(&self) -> Vec<CVector> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn conj_transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)].conj();
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[C64]) -> CVector {
        assert_eq!(x.len(), self.cols);
        CVector(
            (0..self.rows)
                .map(|i| self.data[i * self.cols..(i + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum())
                .collect(),
        )
    }

    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &CMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `A = L L^H` of a Hermitian positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<C64>,
}

impl Cholesky {
    pub fn factor(a: &CMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Dimension(format!("expected square matrix, got {}x{}", n, a.cols())));
        }
        check_hermitian(a)?;

        let max_diag = (0..n).map(|i| a[(i, i)].re).fold(0.0_f64, f64::max);
        let floor = PIVOT_FLOOR * max_diag;
        let mut l = vec![C64::new(0.0, 0.0); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > floor) || d <= 0.0 {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let ljj = d.sqrt();
            l[j * n + j] = C64::new(ljj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[C64]) -> Result<CVector> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::Dimension(format!("rhs length {} for order {n}", b.len())));
        }
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[i * n + k] * y[k];
            }
            y[i] = s / l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[k * n + i].conj() * y[k];
            }
            y[i] = s / l[i * n + i].re;
        }
        Ok(CVector(y))
    }
}

fn check_hermitian(a: &CMatrix) -> Result<()> {
    let n = a.rows();
    let scale = a.as_slice().iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    for i in 0..n {
        for j in i..n {
            let deviation = (a[(i, j)] - a[(j, i)].conj()).norm();
            if deviation > HERMITIAN_TOL * scale {
                return Err(Error::NotHermitian { row: i, col: j, deviation });
            }
        }
    }
    Ok(())
}

/// Solves `A x = b` for Hermitian positive definite `A`.
pub fn hermitian_pd_solve(a: &CMatrix, b: &[C64]) -> Result<CVector> {
    Cholesky::factor(a)?.solve(b)
}

/// `h h^H`
pub fn outer_hermitian(h: &[C64]) -> CMatrix {
    let n = h.len();
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = h[i] * h[j].conj();
        }
    }
    m
}

pub fn vec_norm2(h: &[C64]) -> f64 {
    h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_cvec(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector((0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect())
    }

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> CMatrix {
        let cols: Vec<CVector> = (0..n).map(|_| random_cvec(rng, n)).collect();
        let b = CMatrix::from_columns(&cols).unwrap();
        let mut a = b.mul(&b.conj_transpose());
        a.add_scaled(1.0, &CMatrix::identity(n));
        a
    }

    fn residual(a: &CMatrix, x: &[C64], b: &[C64]) -> f64 {
        let ax = a.mul_vec(x);
        let diff: Vec<C64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
        vec_norm2(&diff)
    }

    #[test]
    fn solve_identity() {
        let b = [c(1.0, 0.0), c(0.0, 1.0), c(-2.0, 0.0)];
        let x = hermitian_pd_solve(&CMatrix::identity(3), &b).unwrap();
        assert_eq!(x.0, b.to_vec());
    }

    #[test]
    fn solve_diagonal_scaling() {
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 0)] = c(2.0, 0.0);
        a[(1, 1)] = c(2.0, 0.0);
        let x = hermitian_pd_solve(&a, &[c(4.0, 0.0), c(0.0, 2.0)]).unwrap();
        for (got, want) in x.iter().zip([c(2.0, 0.0), c(0.0, 1.0)]) {
            assert!((got - want).norm() < 1e-15);
        }
    }

    #[test]
    fn solve_residual_random_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000 {
            let n = 1 + trial % 8;
            let a = random_pd(&mut rng, n);
            let b = random_cvec(&mut rng, n);
            let x = hermitian_pd_solve(&a, &b).unwrap();
            let r = residual(&a, &x, &b);
            assert!(r <= 1e-9 * vec_norm2(&b), "trial {trial}: residual {r}");
            if n == 4 {
                assert!(r < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_indefinite_with_pivot() {
        let mut a = CMatrix::identity(3);
        a[(2, 2)] = c(-1.0, 0.0);
        match hermitian_pd_solve(&a, &[c(1.0, 0.0); 3]) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 2),
            other => panic!("unexpected {other:?}"),
        }
        // rank deficient: h h^H alone
        let h = [c(1.0, 0.0), c(0.0, 1.0)];
        match hermitian_pd_solve(&outer_hermitian(&h), &h) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut a = CMatrix::identity(2);
        a[(0, 1)] = c(0.5, 0.0);
        assert!(matches!(hermitian_pd_solve(&a, &[c(1.0, 0.0); 2]), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn outer_product_cases() {
        assert_eq!(outer_hermitian(&[c(1.0, 0.0)]).as_slice(), &[c(1.0, 0.0)]);
        let m = outer_hermitian(&[c(1.0, 0.0), c(0.0, 1.0)]);
        assert_eq!(m.as_slice(), &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_cvec(&mut rng, 5);
        let m = outer_hermitian(&h);
        assert_eq!(m, m.conj_transpose());
    }

    #[test]
    fn norms() {
        assert_eq!(vec_norm2(&[c(3.0, 0.0), c(0.0, 4.0)]), 5.0);
        assert_eq!(vec_norm2(&CVector::zeros(4)), 0.0);
        for k in 0..50 {
            let theta = k as f64 * 0.37;
            assert!((vec_norm2(&[C64::from_polar(1.0, theta)]) - 1.0).abs() <= f64::EPSILON);
        }
    }

    proptest::proptest! {
        #[test]
        fn norm_is_absolutely_homogeneous(
            alpha in -1e3f64..1e3,
            parts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..12),
        ) {
            let h: Vec<C64> = parts.iter().map(|&(r, i)| c(r, i)).collect();
            let scaled: Vec<C64> = h.iter().map(|z| z * alpha).collect();
            let lhs = vec_norm2(&scaled);
            let rhs = alpha.abs() * vec_norm2(&h);
            proptest::prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn outer_is_exactly_hermitian(parts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..9)) {
            let h: Vec<C64> = parts.iter().map(|&(r, i)| c(r, i)).collect();
            let m = outer_hermitian(&h);
            proptest::prop_assert_eq!(m.clone(), m.conj_transpose());
        }
    }
}
