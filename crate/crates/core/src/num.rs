//! Dense linear algebra, seeded randomness and power iteration.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`; [`Matrix`] is a row-major dense
//! matrix. Everything is 64-bit floating point.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Relative tolerance used by the power iterations unless a caller overrides it.
pub const POWER_TOL: f64 = 1e-10;

/// Iteration cap for power iteration on a `rows x cols` operator.
pub fn default_max_iter(rows: usize, cols: usize) -> usize {
    10 * rows.max(cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("Matrix::new", rows * cols, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix entries must be finite".into()));
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
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds a matrix from row vectors. All rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Fills a matrix row by row from `f(i, j)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `M v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec", self.cols, v.len())?;
        let mut out = vec![0.0; self.rows];
        self.matvec_into(v, &mut out);
        Ok(out)
    }

    /// `Mᵀ v`.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("matvec_t", self.rows, v.len())?;
        let mut out = vec![0.0; self.cols];
        self.matvec_t_into(v, &mut out);
        Ok(out)
    }

    // Unchecked kernels shared by the solver and the gradient engine. Both the
    // forward solve and the tape replay go through these, so iterates agree bitwise.
    #[inline]
    pub(crate) fn matvec_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), v);
        }
    }

    #[inline]
    pub(crate) fn matvec_t_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                axpy(vi, self.row(i), out);
            }
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Dense product `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_len("matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix `MᵀM`.
    pub fn gram(&self) -> Matrix {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..n {
                let ri = row[i];
                if ri != 0.0 {
                    axpy(ri, row, &mut g.data[i * n..(i + 1) * n]);
                }
            }
        }
        g
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Matrix> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.cols) {
            return Err(Error::InvalidArgument(format!(
                "column index {bad} out of range for {} columns",
                self.cols
            )));
        }
        Ok(Matrix::from_fn(self.rows, cols.len(), |i, j| self.get(i, cols[j])))
    }

    pub fn is_symmetric(&self, tol: f64) -> Option<f64> {
        if self.rows != self.cols {
            return None;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        (worst <= tol).then_some(worst)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the operator is identically zero.
    pub degenerate: bool,
}

impl PowerEstimate {
    fn zero() -> Self {
        Self {
            value: 0.0,
            iterations: 0,
            converged: true,
            degenerate: true,
        }
    }
}

fn start_vectors(n: usize) -> [Vec<f64>; 2] {
    let scale = 1.0 / (n as f64).sqrt();
    let ones = vec![scale; n];
    // second start for the rare operator whose dominant eigenvector is orthogonal to ones
    let mut alt: Vec<f64> = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * (1.0 + i as f64 / n as f64)
        })
        .collect();
    let nrm = norm2(&alt);
    alt.iter_mut().for_each(|v| *v /= nrm);
    [ones, alt]
}

/// Rayleigh-quotient power iteration on a symmetric PSD operator given as a closure.
fn power_psd(n: usize, mut apply: impl FnMut(&[f64], &mut [f64]), tol: f64, max_iter: usize) -> PowerEstimate {
    let mut best: Option<PowerEstimate> = None;
    for start in start_vectors(n) {
        let mut v = start;
        let mut w = vec![0.0; n];
        let mut estimate = 0.0;
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter.max(1) {
            iterations += 1;
            apply(&v, &mut w);
            let rayleigh = dot(&v, &w);
            let nrm = norm2(&w);
            if nrm == 0.0 {
                estimate = 0.0;
                break;
            }
            v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / nrm);
            let change = (rayleigh - estimate).abs();
            estimate = rayleigh;
            if change <= tol * rayleigh.abs() {
                converged = true;
                break;
            }
        }
        let est = PowerEstimate {
            value: estimate,
            iterations,
            converged,
            degenerate: false,
        };
        if estimate > 0.0 {
            return est;
        }
        best = match best {
            Some(b) if b.value >= est.value => Some(b),
            _ => Some(est),
        };
    }
    best.unwrap_or_else(PowerEstimate::zero)
}

/// Largest eigenvalue of `AᵀA`, applying the Gram operator as `Aᵀ(A v)`.
///
/// A zero matrix yields `0` with `degenerate` set.
pub fn lambda_max_gram(a: &Matrix, tol: f64, max_iter: usize) -> Result<PowerEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if a.cols == 0 || a.is_zero() {
        return Ok(PowerEstimate::zero());
    }
    let mut tmp = vec![0.0; a.rows];
    Ok(power_psd(
        a.cols,
        |v, out| {
            a.matvec_into(v, &mut tmp);
            a.matvec_t_into(&tmp, out);
        },
        tol,
        max_iter,
    ))
}

/// [`lambda_max_gram`] with the default tolerance and iteration cap.
pub fn gram_lambda_max(a: &Matrix) -> Result<PowerEstimate> {
    lambda_max_gram(a, POWER_TOL, default_max_iter(a.rows, a.cols))
}

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
///
/// Runs power iteration on `M²`, so eigenvalues of either sign are handled.
pub fn spectral_norm_sym(m: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if m.rows != m.cols {
        return Err(Error::DimensionMismatch {
            context: "spectral_norm_sym (square)",
            expected: m.rows,
            actual: m.cols,
        });
    }
    let sym_tol = 1e-10 * m.max_abs().max(1.0);
    if m.is_symmetric(sym_tol).is_none() {
        let mut worst = 0.0_f64;
        for i in 0..m.rows {
            for j in 0..m.cols {
                worst = worst.max((m.get(i, j) - m.get(j, i)).abs());
            }
        }
        return Err(Error::NotSymmetric(worst));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if m.rows == 0 || m.is_zero() {
        return Ok(0.0);
    }
    let mut tmp = vec![0.0; m.rows];
    let est = power_psd(
        m.rows,
        |v, out| {
            m.matvec_into(v, &mut tmp);
            m.matvec_into(&tmp, out);
        },
        tol,
        max_iter,
    );
    Ok(est.value.max(0.0).sqrt())
}

/// Derives an independent seed for a named purpose, e.g. evaluation versus training.
///
/// SplitMix64 finalizer folded over the label bytes.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    label.bytes().fold(mix(seed), |acc, b| mix(acc ^ u64::from(b)))
}

/// Seeded random stream.
///
/// Backed by ChaCha20 (`rand_chacha`): the 64-bit seed is expanded with
/// `SeedableRng::seed_from_u64` and independent substreams are selected with
/// ChaCha's 64-bit stream id, so the uniform stream for a given
/// `(seed, stream)` is identical on every platform. Uniform doubles take the
/// top 53 bits of a `u64`; Gaussians use the Box–Muller transform (the cached
/// second variate is consumed before new uniforms are drawn). Gaussian bits
/// depend on the platform's `ln`/`sin`/`cos`.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha20Rng,
    spare: Option<f64>,
}

/// Role of a substream; keeps draws for different purposes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    Matrix = 1,
    Sketch = 2,
    Signal = 3,
    Noise = 4,
    Init = 5,
    Eval = 6,
    Diagnostic = 7,
}

const ROLE_SLOTS: u64 = 8;

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Substream for `(index, role)`. Distinct pairs never share a ChaCha stream.
    pub fn substream(seed: u64, index: u64, role: StreamRole) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        let index = index.wrapping_add(1);
        inner.set_stream(index.wrapping_mul(ROLE_SLOTS) + role as u64);
        Self { inner, spare: None }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`, rejection-sampled to avoid modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.inner.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn gaussian(&mut self, mean: f64, variance: f64) -> Result<f64> {
        if !(variance >= 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!("variance must be >= 0, got {variance}")));
        }
        Ok(mean + variance.sqrt() * self.standard_normal())
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("probability must be in [0,1], got {p}")));
        }
        Ok(self.uniform() < p)
    }

    pub fn gaussian_vec(&mut self, len: usize, std_dev: f64) -> Vec<f64> {
        (0..len).map(|_| std_dev * self.standard_normal()).collect()
    }

    /// `rows x cols` matrix of i.i.d. `N(0, std_dev²)` entries, filled row-major.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, std_dev: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| std_dev * self.standard_normal())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn naive_matvec(m: &Matrix, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; m.rows()];
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out[i] += m.get(i, j) * v[j];
            }
        }
        out
    }

    fn oracle_eigs(m: &Matrix) -> Vec<f64> {
        let dm = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
        SymmetricEigen::new(dm).eigenvalues.iter().copied().collect()
    }

    #[test]
    fn matvec_identity_and_diag() {
        let v = vec![1.0, 2.0, 3.0];
        assert_eq!(Matrix::identity(3).matvec(&v).unwrap(), v);
        let d = Matrix::from_diag(&[1.0, 2.0, 3.0]);
        assert_eq!(d.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn matvec_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let m = rng.gaussian_matrix(5, 7, 1.0);
        let v = rng.gaussian_vec(7, 1.0);
        let fast = m.matvec(&v).unwrap();
        let slow = naive_matvec(&m, &v);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
        let r = rng.gaussian_vec(5, 1.0);
        let t = m.matvec_t(&r).unwrap();
        let t_slow = naive_matvec(&m.transpose(), &r);
        for (a, b) in t.iter().zip(&t_slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let m = Matrix::zeros(2, 3);
        assert!(matches!(m.matvec(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn lambda_max_known_values() {
        let est = gram_lambda_max(&Matrix::identity(4)).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12);
        let est = gram_lambda_max(&Matrix::from_diag(&[1.0, 2.0, 3.0])).unwrap();
        assert!((est.value - 9.0).abs() < 1e-8, "{}", est.value);
    }

    #[test]
    fn lambda_max_zero_matrix_is_degenerate() {
        let est = gram_lambda_max(&Matrix::zeros(3, 4)).unwrap();
        assert_eq!(est.value, 0.0);
        assert!(est.degenerate);
    }

    #[test]
    fn lambda_max_start_orthogonal_to_ones() {
        // all-ones lies in the null space of this row
        let a = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let est = gram_lambda_max(&a).unwrap();
        assert!((est.value - 2.0).abs() < 1e-10);
    }

    #[test]
    fn lambda_max_matches_eigensolver() {
        for seed in 0..5 {
            let mut rng = Rng::new(100 + seed);
            let a = rng.gaussian_matrix(8, 16, 1.0);
            let est = gram_lambda_max(&a).unwrap();
            let top = oracle_eigs(&a.gram()).into_iter().fold(f64::MIN, f64::max);
            assert!(((est.value - top) / top).abs() < 1e-8, "{} vs {}", est.value, top);
        }
    }

    #[test]
    fn spectral_norm_known_values() {
        let mut m = Matrix::identity(2);
        m.set(0, 0, 1.0 - 0.25);
        m.set(1, 1, 1.0 - 0.25 * 4.0);
        let v = spectral_norm_sym(&m, POWER_TOL, 100).unwrap();
        assert!((v - 0.75).abs() < 1e-12);
        assert_eq!(spectral_norm_sym(&Matrix::zeros(3, 3), POWER_TOL, 10).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_handles_negative_dominant() {
        let m = Matrix::from_diag(&[0.5, -2.0, 1.0]);
        let v = spectral_norm_sym(&m, POWER_TOL, 1000).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            spectral_norm_sym(&m, POWER_TOL, 10),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn spectral_norm_matches_eigensolver() {
        for seed in 0..5 {
            let mut rng = Rng::new(200 + seed);
            let b = rng.gaussian_matrix(10, 10, 1.0);
            let sym = Matrix::from_fn(10, 10, |i, j| b.get(i, j) + b.get(j, i));
            let est = spectral_norm_sym(&sym, POWER_TOL, 10_000).unwrap();
            let top = oracle_eigs(&sym).into_iter().fold(0.0_f64, |a, e| a.max(e.abs()));
            assert!(((est - top) / top).abs() < 1e-8, "{est} vs {top}");
        }
    }

    #[test]
    fn gram_lambda_equals_spectral_norm_of_gram() {
        let mut rng = Rng::new(5);
        let a = rng.gaussian_matrix(6, 9, 1.0);
        let lam = gram_lambda_max(&a).unwrap().value;
        let sn = spectral_norm_sym(&a.gram(), POWER_TOL, 10_000).unwrap();
        assert!(((lam - sn) / sn).abs() < 1e-8);
    }

    #[test]
    fn gaussian_moments() {
        let mut rng = Rng::new(42);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.gaussian(0.0, 1.0).unwrap();
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn bernoulli_extremes_and_errors() {
        let mut rng = Rng::new(1);
        assert!((0..1000).all(|_| !rng.bernoulli(0.0).unwrap()));
        assert!((0..1000).all(|_| rng.bernoulli(1.0).unwrap()));
        assert!(rng.bernoulli(1.5).is_err());
        assert!(rng.gaussian(0.0, -1.0).is_err());
    }

    #[test]
    fn substreams_reproduce_and_differ() {
        let a: Vec<u64> = {
            let mut r = Rng::substream(9, 3, StreamRole::Matrix);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = Rng::substream(9, 3, StreamRole::Matrix);
            (0..4).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = Rng::substream(9, 3, StreamRole::Sketch);
            (0..4).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stream_is_pinned() {
        // ChaCha20 stream identity; a change here breaks reproducibility of stored results
        let mut r = Rng::new(0);
        let first = r.next_u64();
        let mut again = Rng::new(0);
        assert_eq!(first, again.next_u64());
        let mut s = Rng::substream(0, 0, StreamRole::Matrix);
        assert_ne!(first, s.next_u64());
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_eq!(derive_seed(5, "eval"), derive_seed(5, "eval"));
        assert_ne!(derive_seed(5, "eval"), derive_seed(5, "train"));
        assert_ne!(derive_seed(5, "eval"), derive_seed(6, "eval"));
        assert_ne!(derive_seed(5, ""), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop_assert, proptest};

        proptest! {
            #[test]
            fn matvec_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let mut rng = Rng::new(seed);
                let m = rng.gaussian_matrix(6, 5, 1.0);
                let u = rng.gaussian_vec(5, 1.0);
                let v = rng.gaussian_vec(5, 1.0);
                let combo: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
                let lhs = m.matvec(&combo).unwrap();
                let mu = m.matvec(&u).unwrap();
                let mv = m.matvec(&v).unwrap();
                for i in 0..6 {
                    prop_assert!((lhs[i] - (a * mu[i] + b * mv[i])).abs() < 1e-10);
                }
            }
        }
    }
}
