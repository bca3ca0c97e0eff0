//! Small dense linear-algebra kernel: Cholesky, triangular solves, inverse
//! traces, power-iteration spectral norms and seeded Gaussian sampling.

use std::ops::{Index, IndexMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = value;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale(factor);
        self
    }

    pub fn add_to_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn frobenius(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("operands differ in shape".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (l, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(l), out_row);
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "vector length must match column count");
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `selfᵀ v`.
    pub fn matvec_transposed(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "vector length must match row count");
        let mut out = vec![0.0; self.cols];
        for (r, &x) in v.iter().enumerate() {
            axpy(x, self.row(r), &mut out);
        }
        out
    }

    /// `selfᵀ self` (cols × cols), symmetric.
    pub fn gram_cols(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for p in 0..n {
                let a = row[p];
                if a != 0.0 {
                    axpy(a, &row[p..], &mut g.data[p * n + p..(p + 1) * n]);
                }
            }
        }
        g.mirror_upper();
        g
    }

    /// `self selfᵀ` (rows × rows), symmetric.
    pub fn gram_rows(&self) -> Self {
        let m = self.rows;
        let mut g = Self::zeros(m, m);
        for p in 0..m {
            for q in p..m {
                g.data[p * m + q] = dot(self.row(p), self.row(q));
            }
        }
        g.mirror_upper();
        g
    }

    fn mirror_upper(&mut self) {
        let n = self.rows;
        for p in 0..n {
            for q in 0..p {
                self.data[p * n + q] = self.data[q * n + p];
            }
        }
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = rel_tol * self.max_abs().max(f64::MIN_POSITIVE);
        (0..self.rows).all(|r| (0..r).all(|c| (self[(r, c)] - self[(c, r)]).abs() <= tol))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += a x`.
#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Lower-triangular `R` with strictly positive diagonal and `R Rᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    r: DenseMatrix,
}

impl CholeskyFactor {
    pub fn factor(&self) -> &DenseMatrix {
        &self.r
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.r.rows
    }

    /// `R Rᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.r.gram_rows()
    }

    /// `‖R⁻¹‖_F² = tr(A⁻¹)`.
    pub fn inverse_trace(&self) -> f64 {
        let n = self.dim();
        let r = &self.r;
        let mut x = vec![0.0; n];
        let mut total = 0.0;
        // Row i of R⁻ᵀ solves R xᵀ = e_i; entries before i vanish.
        for i in 0..n {
            x[i] = 1.0 / r[(i, i)];
            for j in i + 1..n {
                let s = dot(&r.row(j)[i..j], &x[i..j]);
                x[j] = -s / r[(j, j)];
            }
            total += dot(&x[i..], &x[i..]);
        }
        total
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn cholesky(a: &DenseMatrix) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    if !a.is_symmetric(1e-12) {
        return Err(Error::InvalidArgument("cholesky needs a symmetric matrix".into()));
    }
    let n = a.rows;
    let mut r = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&r.row(i)[..j], &r.row(j)[..j]);
            let v = a[(i, j)] - s;
            if i == j {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: v });
                }
                r[(i, i)] = v.sqrt();
            } else {
                r[(i, j)] = v / r[(j, j)];
            }
        }
    }
    Ok(CholeskyFactor { r })
}

fn check_solve_shapes(w: &DenseMatrix, r: &CholeskyFactor) -> Result<()> {
    if w.cols != r.dim() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} columns, factor is {}x{}",
            w.cols,
            r.dim(),
            r.dim()
        )));
    }
    if let Some(i) = (0..r.dim()).find(|&i| r.r[(i, i)] == 0.0) {
        return Err(Error::Singular(i));
    }
    Ok(())
}

/// Solves `X R = W` by back-substitution.
pub fn tri_solve_right(w: &DenseMatrix, r: &CholeskyFactor) -> Result<DenseMatrix> {
    check_solve_shapes(w, r)?;
    let n = r.dim();
    let rt = r.r.transpose();
    let mut x = DenseMatrix::zeros(w.rows, n);
    for row in 0..w.rows {
        let rhs = w.row(row);
        let out = x.row_mut(row);
        for j in (0..n).rev() {
            // column j of R below the diagonal is row j of Rᵀ past j
            let s = dot(&rt.row(j)[j + 1..], &out[j + 1..]);
            out[j] = (rhs[j] - s) / rt[(j, j)];
        }
    }
    Ok(x)
}

/// Solves `X Rᵀ = W` by forward substitution, i.e. `X = W R⁻ᵀ`.
pub fn tri_solve_right_transposed(w: &DenseMatrix, r: &CholeskyFactor) -> Result<DenseMatrix> {
    check_solve_shapes(w, r)?;
    let n = r.dim();
    let mut x = DenseMatrix::zeros(w.rows, n);
    for row in 0..w.rows {
        let rhs = w.row(row);
        let out = x.row_mut(row);
        for j in 0..n {
            let s = dot(&r.r.row(j)[..j], &out[..j]);
            out[j] = (rhs[j] - s) / r.r[(j, j)];
        }
    }
    Ok(x)
}

/// `tr(A⁻¹)` for symmetric positive-definite `A`, via `‖R⁻¹‖_F²`.
pub fn trace_of_inverse(a: &DenseMatrix) -> Result<f64> {
    Ok(cholesky(a)?.inverse_trace())
}

pub const DEFAULT_POWER_ITERS: usize = 500;
pub const DEFAULT_POWER_TOL: f64 = 1e-10;
const POWER_START_SEED: u64 = 0x05ee_d0f9_07e4;

/// Largest singular value by power iteration on `AᵀA`, from a fixed-seed
/// random start. Stops once the estimate changes by less than `tol`
/// relative. A zero matrix gives 0.
pub fn spectral_norm(a: &DenseMatrix, iters: usize, tol: f64) -> f64 {
    if a.max_abs() == 0.0 || a.cols == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_START_SEED);
    let mut v: Vec<f64> = (0..a.cols).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let av = a.matvec(&v);
        let next = dot(&av, &av).sqrt();
        if next == 0.0 {
            // start vector in the null space; restart along a new direction
            v = (0..a.cols).map(|_| rng.sample(StandardNormal)).collect();
            normalize(&mut v);
            continue;
        }
        v = a.matvec_transposed(&av);
        normalize(&mut v);
        let converged = (next - estimate).abs() <= tol * next;
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// IID `N(0, sigma²)` entries drawn from `rng`.
pub fn gaussian_matrix_from<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseMatrix { rows, cols, data }
}

/// IID `N(0, sigma²)` entries from a ChaCha stream seeded with `seed`.
pub fn gaussian_matrix(rows: usize, cols: usize, sigma: f64, seed: u64) -> Result<DenseMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be finite and non-negative, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gaussian_matrix_from(rows, cols, sigma, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_frobenius(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.sub(b).unwrap().frobenius() / b.frobenius()
    }

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut a = gaussian_matrix(n, n, 1.0, seed).unwrap().gram_cols();
        a.add_to_diagonal(1.0);
        a
    }

    /// Gauss-Jordan inverse with partial pivoting.
    fn dense_inverse(a: &DenseMatrix) -> DenseMatrix {
        let n = a.rows();
        let mut aug = a.clone();
        let mut inv = DenseMatrix::identity(n);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| aug[(x, col)].abs().total_cmp(&aug[(y, col)].abs()))
                .unwrap();
            for c in 0..n {
                let t = aug[(col, c)];
                aug[(col, c)] = aug[(pivot, c)];
                aug[(pivot, c)] = t;
                let t = inv[(col, c)];
                inv[(col, c)] = inv[(pivot, c)];
                inv[(pivot, c)] = t;
            }
            let d = aug[(col, col)];
            for c in 0..n {
                aug[(col, c)] /= d;
                inv[(col, c)] /= d;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[(r, col)];
                    for c in 0..n {
                        aug[(r, c)] -= f * aug[(col, c)];
                        inv[(r, c)] -= f * inv[(col, c)];
                    }
                }
            }
        }
        inv
    }

    #[test]
    fn cholesky_identity() {
        let r = cholesky(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(r.factor(), &DenseMatrix::identity(3));
    }

    #[test]
    fn cholesky_hand_example() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let r = cholesky(&a).unwrap();
        let expected = DenseMatrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 2f64.sqrt()]]).unwrap();
        assert!(rel_frobenius(r.factor(), &expected) < 1e-15);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let indefinite = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&indefinite),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        let asym = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, 2.0]]).unwrap();
        assert!(matches!(cholesky(&asym), Err(Error::InvalidArgument(_))));
        assert!(cholesky(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn cholesky_of_shifted_gram_succeeds() {
        for seed in 0..20 {
            let w = gaussian_matrix(7, 5, 3.0, seed).unwrap();
            let mut a = w.gram_cols();
            a.add_to_diagonal(1.0);
            let r = cholesky(&a).unwrap();
            assert!(rel_frobenius(&r.reconstruct(), &a) <= 1e-12);
        }
    }

    #[test]
    fn right_solves() {
        let a = random_spd(4, 3);
        let r = cholesky(&a).unwrap();
        let x = tri_solve_right(r.factor(), &r).unwrap();
        assert!(rel_frobenius(&x, &DenseMatrix::identity(4)) < 1e-12);

        let zero = tri_solve_right(&DenseMatrix::zeros(3, 4), &r).unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let w = gaussian_matrix(4, 4, 1.0, 99).unwrap();
        let x = tri_solve_right(&w, &r).unwrap();
        let residual = x.matmul(r.factor()).unwrap().sub(&w).unwrap().frobenius();
        assert!(residual <= 1e-10 * w.frobenius());

        let x = tri_solve_right_transposed(&w, &r).unwrap();
        let residual = x.matmul(&r.factor().transpose()).unwrap().sub(&w).unwrap().frobenius();
        assert!(residual <= 1e-10 * w.frobenius());

        assert!(matches!(
            tri_solve_right(&DenseMatrix::zeros(2, 3), &r),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn singular_factor_rejected() {
        let r = CholeskyFactor {
            r: DenseMatrix::diagonal(&[1.0, 0.0]),
        };
        assert!(matches!(
            tri_solve_right(&DenseMatrix::identity(2), &r),
            Err(Error::Singular(1))
        ));
    }

    #[test]
    fn inverse_traces() {
        let d = DenseMatrix::diagonal(&[1.0, 2.0, 4.0]);
        assert!((trace_of_inverse(&d).unwrap() - 1.75).abs() < 1e-15);
        let s = DenseMatrix::scaled_identity(5, 2.0);
        assert!((trace_of_inverse(&s).unwrap() - 2.5).abs() < 1e-15);
        for seed in 0..5 {
            let a = random_spd(6, seed);
            let oracle = dense_inverse(&a).trace();
            let got = trace_of_inverse(&a).unwrap();
            assert!((got - oracle).abs() <= 1e-10 * oracle.abs(), "{got} vs {oracle}");
        }
    }

    #[test]
    fn spectral_norm_examples() {
        let d = DenseMatrix::diagonal(&[3.0, 1.0]);
        assert!((spectral_norm(&d, DEFAULT_POWER_ITERS, DEFAULT_POWER_TOL) - 3.0).abs() < 1e-8);
        let th = 0.7f64;
        let rot = DenseMatrix::from_rows(&[vec![th.cos(), -th.sin()], vec![th.sin(), th.cos()]]).unwrap();
        assert!((spectral_norm(&rot, DEFAULT_POWER_ITERS, DEFAULT_POWER_TOL) - 1.0).abs() < 1e-8);
        assert_eq!(spectral_norm(&DenseMatrix::zeros(3, 3), 10, 1e-10), 0.0);
    }

    #[test]
    fn spectral_norm_matches_long_run() {
        for seed in 0..5 {
            let a = gaussian_matrix(8, 8, 1.0, seed).unwrap();
            let quick = spectral_norm(&a, DEFAULT_POWER_ITERS, DEFAULT_POWER_TOL);
            let long = spectral_norm(&a, 10_000, 0.0);
            assert!((quick - long).abs() <= 1e-6 * long);
        }
    }

    #[test]
    fn gaussian_sampling() {
        assert_eq!(gaussian_matrix(3, 4, 0.0, 1).unwrap().max_abs(), 0.0);
        assert_eq!(
            gaussian_matrix(5, 5, 1.0, 42).unwrap(),
            gaussian_matrix(5, 5, 1.0, 42).unwrap()
        );
        assert_ne!(
            gaussian_matrix(5, 5, 1.0, 42).unwrap(),
            gaussian_matrix(5, 5, 1.0, 43).unwrap()
        );
        assert!(gaussian_matrix(2, 2, -1.0, 0).is_err());
    }

    #[test]
    fn gram_sides() {
        let w = gaussian_matrix(3, 5, 1.0, 7).unwrap();
        let t = w.transpose();
        assert!(rel_frobenius(&w.gram_cols(), &t.matmul(&w).unwrap()) < 1e-14);
        assert!(rel_frobenius(&w.gram_rows(), &w.matmul(&t).unwrap()) < 1e-14);
    }
}
