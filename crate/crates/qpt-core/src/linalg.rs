//! Dense complex linear algebra.
//!
//! Conventions used everywhere in the crate:
//! * matrices are stored row-major;
//! * `(A ⊗ B)[(i·p + k), (j·q + l)] = A[i, j] · B[k, l]` for `B` of shape `p × q`;
//! * Hermitian operators are real-vectorized by [`HermitianOperator::svec`], an
//!   isometry with `⟨svec A, svec B⟩ = Tr[A B]`.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Relative tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-8;

/// Dense complex matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Real diagonal matrix.
    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Outer product `|u⟩⟨v|`.
    pub fn outer(u: &[C64], v: &[C64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j].conj())
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

    /// Row-major entries.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    /// `self + s·other` in place.
    pub fn add_scaled(&mut self, s: C64, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Matrix product.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let prod = self.to_faer() * other.to_faer();
        Self::from_faer(prod.as_ref())
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "vector length differs");
        self.data.chunks(self.cols).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// `Tr[self · other]` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        assert_eq!((self.cols, self.rows), (other.rows, other.cols), "shape mismatch");
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * other[(k, i)];
            }
        }
        acc
    }

    /// Column-major faer copy.
    pub fn to_faer(&self) -> Mat<C64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }

    pub fn from_faer(m: MatRef<'_, C64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// Maximum absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols), "shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        if self.rows == 0 || self.cols == 0 {
            return Ok(Vec::new());
        }
        let mut s = self
            .to_faer()
            .singular_values()
            .map_err(|_| Error::EigenNoConvergence { dim: self.rows.max(self.cols) })?;
        s.sort_by(|a, b| b.total_cmp(a));
        Ok(s)
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out.add_scaled(ONE, rhs);
        out
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        let mut out = self.clone();
        out.add_scaled(-ONE, rhs);
        out
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Serialize for ComplexMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr {
            rows: self.rows,
            cols: self.cols,
            re: self.data.iter().map(|z| z.re).collect(),
            im: self.data.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MatrixRepr::deserialize(d)?;
        if r.re.len() != r.im.len() {
            return Err(serde::de::Error::custom("re and im lengths differ"));
        }
        let data = r.re.iter().zip(&r.im).map(|(&a, &b)| C64::new(a, b)).collect();
        ComplexMatrix::from_vec(r.rows, r.cols, data).map_err(serde::de::Error::custom)
    }
}

/// Dense Hermitian operator.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    matrix: ComplexMatrix,
}

impl HermitianOperator {
    /// Accepts a matrix that is Hermitian up to [`HERMITIAN_TOL`] (relative) and
    /// symmetrizes it exactly.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare { rows: matrix.rows, cols: matrix.cols });
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite);
        }
        let deviation = (&matrix - &matrix.adjoint()).frobenius_norm();
        if deviation > HERMITIAN_TOL * matrix.frobenius_norm().max(1.0) {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self::hermitian_part(&matrix))
    }

    /// `(M + M†)/2` of a square matrix.
    pub fn hermitian_part(matrix: &ComplexMatrix) -> Self {
        assert!(matrix.is_square(), "hermitian_part needs a square matrix");
        let n = matrix.rows;
        let m = ComplexMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(matrix[(i, i)].re, 0.0)
            } else {
                (matrix[(i, j)] + matrix[(j, i)].conj()) * 0.5
            }
        });
        Self { matrix: m }
    }

    pub fn zeros(n: usize) -> Self {
        Self { matrix: ComplexMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: ComplexMatrix::identity(n) }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self { matrix: ComplexMatrix::from_diag(diag) }
    }

    /// Projector `|ψ⟩⟨ψ|`.
    pub fn projector(psi: &StateVector) -> Self {
        Self::hermitian_part(&ComplexMatrix::outer(psi.amplitudes(), psi.amplitudes()))
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.frobenius_norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { matrix: self.matrix.scale_real(s) }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix + &other.matrix }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { matrix: &self.matrix - &other.matrix }
    }

    /// Real combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Self {
        let mut m = self.matrix.scale_real(a);
        m.add_scaled(C64::new(b, 0.0), &other.matrix);
        Self { matrix: m }
    }

    /// Real `Tr[self · other]`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.matrix.trace_product(&other.matrix).re
    }

    /// Transpose (equivalently the complex conjugate).
    pub fn transpose(&self) -> Self {
        Self { matrix: self.matrix.transpose() }
    }

    /// Isometric real vectorization of length `dim²`.
    ///
    /// Entry `i·d + j` holds `H[i,i]` on the diagonal, `√2·Re H[i,j]` above it
    /// and `√2·Im H[j,i]` below it.
    pub fn svec(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        svec_pack(d, |i, j| self.matrix[(i, j)], &mut out);
        out
    }

    /// Inverse of [`HermitianOperator::svec`].
    pub fn from_svec(d: usize, v: &[f64]) -> Result<Self> {
        if v.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, found: v.len() });
        }
        let mut m = ComplexMatrix::zeros(d, d);
        svec_unpack(d, v, |i, j, z| m[(i, j)] = z);
        Ok(Self { matrix: m })
    }

    pub fn to_faer(&self) -> Mat<C64> {
        self.matrix.to_faer()
    }
}

impl Serialize for HermitianOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.matrix.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(d)?;
        HermitianOperator::new(m).map_err(serde::de::Error::custom)
    }
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Packs a Hermitian matrix given by `get(i, j)` into `out` (length `d²`).
pub(crate) fn svec_pack(d: usize, get: impl Fn(usize, usize) -> C64, out: &mut [f64]) {
    for i in 0..d {
        out[i * d + i] = get(i, i).re;
        for j in i + 1..d {
            let z = get(i, j);
            out[i * d + j] = SQRT2 * z.re;
            out[j * d + i] = SQRT2 * z.im;
        }
    }
}

/// Unpacks `v` calling `set(i, j, H[i,j])` for every entry.
pub(crate) fn svec_unpack(d: usize, v: &[f64], mut set: impl FnMut(usize, usize, C64)) {
    for i in 0..d {
        set(i, i, C64::new(v[i * d + i], 0.0));
        for j in i + 1..d {
            let z = C64::new(v[i * d + j], v[j * d + i]) / SQRT2;
            set(i, j, z);
            set(j, i, z.conj());
        }
    }
}

/// Normalized pure state.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(into = "Vec<[f64; 2]>")]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    /// Normalizes the given amplitudes; fails on the zero vector.
    pub fn new(mut amplitudes: Vec<C64>) -> Result<Self> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite);
        }
        if norm == 0.0 {
            return Err(invalid("zero state vector"));
        }
        amplitudes.iter_mut().for_each(|z| *z /= norm);
        Ok(Self { amplitudes })
    }

    /// Computational basis state `|k⟩`.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut amplitudes = vec![ZERO; n];
        amplitudes[k] = ONE;
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// Kronecker product of states.
    pub fn tensor(&self, other: &Self) -> Self {
        let mut amplitudes = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amplitudes.push(a * b);
            }
        }
        Self { amplitudes }
    }
}

impl From<StateVector> for Vec<[f64; 2]> {
    fn from(s: StateVector) -> Self {
        s.amplitudes.iter().map(|z| [z.re, z.im]).collect()
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<[f64; 2]> = Vec::deserialize(d)?;
        StateVector::new(v.iter().map(|p| C64::new(p[0], p[1])).collect()).map_err(serde::de::Error::custom)
    }
}

/// Eigendecomposition `H = V diag(λ) V†` with eigenvalues in descending order.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

/// Ascending eigenvalues and eigenvectors (columns) of a Hermitian faer matrix,
/// reading the lower triangle.
pub(crate) fn eigh(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
    let n = a.nrows();
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|_| Error::EigenNoConvergence { dim: n })?;
    let s = evd.S();
    let values: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    Ok((values, evd.U().to_owned()))
}

/// Hermitian eigendecomposition, eigenvalues descending.
pub fn herm_eig(h: &HermitianOperator) -> Result<HermEig> {
    let n = h.dim();
    let (vals, vecs) = eigh(h.to_faer().as_ref())?;
    let values: Vec<f64> = vals.iter().rev().copied().collect();
    let vectors = ComplexMatrix::from_fn(n, n, |i, j| vecs[(i, n - 1 - j)]);
    Ok(HermEig { values, vectors })
}

impl HermEig {
    /// `V diag(f(λ)) V†`.
    pub fn reassemble(&self, f: impl Fn(f64) -> f64) -> HermitianOperator {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let s = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        HermitianOperator::hermitian_part(&scaled.matmul(&self.vectors.adjoint()))
    }

    /// Eigenvector `j` as a column.
    pub fn vector(&self, j: usize) -> Vec<C64> {
        (0..self.values.len()).map(|i| self.vectors[(i, j)]).collect()
    }
}

/// Kronecker product.
pub fn tensor_product(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (p, q) = (b.rows, b.cols);
    ComplexMatrix::from_fn(a.rows * p, a.cols * q, |r, c| a[(r / p, c / q)] * b[(r % p, c % q)])
}

/// Kronecker product of Hermitian operators.
pub fn tensor_product_herm(a: &HermitianOperator, b: &HermitianOperator) -> HermitianOperator {
    HermitianOperator { matrix: tensor_product(&a.matrix, &b.matrix) }
}

fn check_bipartite(m: &ComplexMatrix, d1: usize, d2: usize) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.rows, cols: m.cols });
    }
    if m.rows != d1 * d2 {
        return Err(Error::DimensionMismatch { expected: d1 * d2, found: m.rows });
    }
    Ok(())
}

/// `Tr₁` of a square matrix on `ℂ^{d1} ⊗ ℂ^{d2}`.
pub fn partial_trace_first_matrix(x: &ComplexMatrix, d1: usize, d2: usize) -> Result<ComplexMatrix> {
    check_bipartite(x, d1, d2)?;
    Ok(ComplexMatrix::from_fn(d2, d2, |a, b| (0..d1).map(|o| x[(o * d2 + a, o * d2 + b)]).sum()))
}

/// `Tr₂` of a square matrix on `ℂ^{d1} ⊗ ℂ^{d2}`.
pub fn partial_trace_second_matrix(x: &ComplexMatrix, d1: usize, d2: usize) -> Result<ComplexMatrix> {
    check_bipartite(x, d1, d2)?;
    Ok(ComplexMatrix::from_fn(d1, d1, |a, b| (0..d2).map(|k| x[(a * d2 + k, b * d2 + k)]).sum()))
}

/// Partial trace over the first tensor factor.
pub fn partial_trace_first(x: &HermitianOperator, d1: usize, d2: usize) -> Result<HermitianOperator> {
    Ok(HermitianOperator::hermitian_part(&partial_trace_first_matrix(&x.matrix, d1, d2)?))
}

/// Partial trace over the second tensor factor.
pub fn partial_trace_second(x: &HermitianOperator, d1: usize, d2: usize) -> Result<HermitianOperator> {
    Ok(HermitianOperator::hermitian_part(&partial_trace_second_matrix(&x.matrix, d1, d2)?))
}

/// Schatten norm index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schatten {
    One,
    Two,
    Inf,
}

/// Schatten `p`-norm from singular values (`p = 2` computed entrywise).
pub fn schatten_norm(a: &ComplexMatrix, p: Schatten) -> Result<f64> {
    match p {
        Schatten::Two => Ok(a.frobenius_norm()),
        Schatten::One => Ok(a.singular_values()?.iter().sum()),
        Schatten::Inf => Ok(a.singular_values()?.first().copied().unwrap_or(0.0)),
    }
}

/// Schatten norm of a Hermitian operator via its eigenvalues.
pub fn schatten_norm_herm(h: &HermitianOperator, p: Schatten) -> Result<f64> {
    if p == Schatten::Two {
        return Ok(h.frobenius_norm());
    }
    if h.dim() == 0 {
        return Ok(0.0);
    }
    let (vals, _) = eigh(h.to_faer().as_ref())?;
    Ok(match p {
        Schatten::One => vals.iter().map(|v| v.abs()).sum(),
        _ => vals.iter().map(|v| v.abs()).fold(0.0, f64::max),
    })
}

/// Standard complex Gaussian `(x + iy)/√2` with `x, y ~ N(0, 1)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random unitary: QR of a complex Gaussian matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    assert!(n >= 1, "haar_unitary needs n >= 1");
    let g = Mat::from_fn(n, n, |_, _| complex_gaussian(rng));
    let qr = g.qr();
    let q = qr.compute_Q();
    let r = qr.R();
    let phases: Vec<C64> = (0..n)
        .map(|j| {
            let d = r[(j, j)];
            let a = d.norm();
            if a > 0.0 { d / a } else { ONE }
        })
        .collect();
    ComplexMatrix::from_fn(n, n, |i, j| q[(i, j)] * phases[j])
}

/// Haar-random pure state.
pub fn haar_state<R: Rng + ?Sized>(n: usize, rng: &mut R) -> StateVector {
    assert!(n >= 1, "haar_state needs n >= 1");
    loop {
        let v: Vec<C64> = (0..n).map(|_| complex_gaussian(rng)).collect();
        if let Ok(s) = StateVector::new(v) {
            return s;
        }
    }
}

/// Hermitian matrix with i.i.d. Gaussian entries (GUE up to scaling).
pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> HermitianOperator {
    let g = ComplexMatrix::from_fn(n, n, |_, _| complex_gaussian(rng));
    HermitianOperator::hermitian_part(&g)
}

/// Row index map of the operator permuting `k` tensor factors of `ℂⁿ`:
/// `R|i₀ … i_{k−1}⟩ = |i_{perm[0]} … i_{perm[k−1]}⟩`.
pub fn permute_index(idx: usize, perm: &[usize], n: usize) -> usize {
    let k = perm.len();
    let mut digits = [0usize; 8];
    let mut r = idx;
    for a in (0..k).rev() {
        digits[a] = r % n;
        r /= n;
    }
    perm.iter().fold(0, |acc, &p| acc * n + digits[p])
}

/// Permutation operator on `(ℂⁿ)^{⊗k}`, see [`permute_index`].
pub fn permutation_operator(perm: &[usize], n: usize) -> ComplexMatrix {
    let k = perm.len();
    assert!(k <= 8, "at most 8 tensor factors");
    let dim = n.pow(k as u32);
    let mut m = ComplexMatrix::zeros(dim, dim);
    for col in 0..dim {
        m[(permute_index(col, perm, n), col)] = ONE;
    }
    m
}

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Flip (swap) operator `𝔽|a⟩|b⟩ = |b⟩|a⟩` on `ℂⁿ ⊗ ℂⁿ`.
pub fn flip_operator(n: usize) -> HermitianOperator {
    HermitianOperator { matrix: permutation_operator(&[1, 0], n) }
}

/// Projector onto the symmetric subspace of `(ℂⁿ)^{⊗k}`, `k ∈ {2, 4}`.
pub fn sym_projector(k: usize, n: usize) -> Result<HermitianOperator> {
    if k != 2 && k != 4 {
        return Err(invalid(format!("sym_projector supports k in {{2, 4}}, got {k}")));
    }
    if n == 0 {
        return Err(invalid("sym_projector needs n >= 1"));
    }
    let perms = permutations(k);
    let w = 1.0 / perms.len() as f64;
    let dim = n.pow(k as u32);
    let mut m = ComplexMatrix::zeros(dim, dim);
    for col in 0..dim {
        for p in &perms {
            m[(permute_index(col, p, n), col)] += C64::new(w, 0.0);
        }
    }
    Ok(HermitianOperator { matrix: m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sigma_x() -> ComplexMatrix {
        ComplexMatrix::from_vec(2, 2, vec![ZERO, ONE, ONE, ZERO]).unwrap()
    }

    fn random_matrix(r: usize, cdim: usize, seed: u64) -> ComplexMatrix {
        let mut rng = seeded(seed);
        ComplexMatrix::from_fn(r, cdim, |_, _| complex_gaussian(&mut rng))
    }

    #[test]
    fn eig_identity_and_diagonal() {
        let e = herm_eig(&HermitianOperator::identity(2)).unwrap();
        assert_eq!(e.values.len(), 2);
        for v in &e.values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let u = &e.vectors;
        assert!((&u.adjoint().matmul(u) - &ComplexMatrix::identity(2)).frobenius_norm() < 1e-12);

        let e = herm_eig(&HermitianOperator::from_diag(&[-1.0, 3.0])).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_reconstructs_random_hermitian() {
        let mut rng = seeded(11);
        let h = random_hermitian(4, &mut rng);
        let e = herm_eig(&h).unwrap();
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let back = e.reassemble(|x| x);
        assert!(back.matrix().max_abs_diff(h.matrix()) <= 1e-10);
    }

    #[test]
    fn kronecker_convention() {
        let b = random_matrix(2, 3, 1);
        let one = ComplexMatrix::identity(1);
        assert_eq!(tensor_product(&one, &b), b);

        let xx = tensor_product(&sigma_x(), &sigma_x());
        let ket00 = vec![ONE, ZERO, ZERO, ZERO];
        assert_eq!(xx.apply(&ket00), vec![ZERO, ZERO, ZERO, ONE]);

        let a = random_matrix(3, 3, 2);
        let b = random_matrix(3, 3, 3);
        let ab = tensor_product(&a, &b);
        assert!((ab.trace() - a.trace() * b.trace()).norm() < 1e-12);
        assert_eq!(ab[(1 * 3 + 2, 2 * 3 + 0)], a[(1, 2)] * b[(2, 0)]);
    }

    #[test]
    fn partial_traces() {
        let mut rng = seeded(4);
        let a = random_hermitian(2, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let ab = tensor_product_herm(&a, &b);
        let t1 = partial_trace_first(&ab, 2, 3).unwrap();
        assert!(t1.matrix().max_abs_diff(b.scale(a.trace()).matrix()) < 1e-12);
        let t2 = partial_trace_second(&ab, 2, 3).unwrap();
        assert!(t2.matrix().max_abs_diff(a.scale(b.trace()).matrix()) < 1e-12);

        let id = partial_trace_first(&HermitianOperator::identity(9), 3, 3).unwrap();
        assert!(id.matrix().max_abs_diff(HermitianOperator::identity(3).scale(3.0).matrix()) < 1e-15);

        // Double-sum oracle.
        let x = random_hermitian(12, &mut rng);
        let t = partial_trace_first(&x, 3, 4).unwrap();
        let mut oracle = 0.0;
        for o in 0..3 {
            for a in 0..4 {
                oracle += x.matrix()[(o * 4 + a, o * 4 + a)].re;
            }
        }
        assert!((t.trace() - oracle).abs() < 1e-12);
        assert!((t.trace() - x.trace()).abs() < 1e-12);
        assert!(partial_trace_first(&x, 5, 2).is_err());
    }

    #[test]
    fn schatten_norms() {
        let psi = haar_state(5, &mut seeded(5));
        let p = HermitianOperator::projector(&psi);
        for k in [Schatten::One, Schatten::Two, Schatten::Inf] {
            assert!((schatten_norm(p.matrix(), k).unwrap() - 1.0).abs() < 1e-12);
            assert!((schatten_norm_herm(&p, k).unwrap() - 1.0).abs() < 1e-12);
        }
        let z = ComplexMatrix::zeros(3, 3);
        for k in [Schatten::One, Schatten::Two, Schatten::Inf] {
            assert_eq!(schatten_norm(&z, k).unwrap(), 0.0);
        }
        let d = ComplexMatrix::from_diag(&[3.0, -4.0]);
        assert!((schatten_norm(&d, Schatten::One).unwrap() - 7.0).abs() < 1e-12);
        assert!((schatten_norm(&d, Schatten::Two).unwrap() - 5.0).abs() < 1e-12);
        assert!((schatten_norm(&d, Schatten::Inf).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn haar_unitary_properties() {
        let u = haar_unitary(5, &mut seeded(9));
        assert!((&u.adjoint().matmul(&u) - &ComplexMatrix::identity(5)).frobenius_norm() <= 1e-10);
        let v = haar_unitary(5, &mut seeded(9));
        assert_eq!(u, v);
        let w = haar_unitary(5, &mut seeded(10));
        assert_ne!(u, w);
    }

    #[test]
    fn haar_unitary_first_moment() {
        // E[U A U†] = Tr(A)/n · 1, checked entrywise within 5 standard errors.
        let n = 3;
        let samples = 100_000;
        let a = HermitianOperator::from_diag(&[1.0, 0.5, -2.0]);
        let mut rng = seeded(12);
        let mut sum = vec![ZERO; n * n];
        let mut sq = vec![0.0; n * n];
        for _ in 0..samples {
            let u = haar_unitary(n, &mut rng);
            let x = u.matmul(a.matrix()).matmul(&u.adjoint());
            for (k, z) in x.as_slice().iter().enumerate() {
                sum[k] += z;
                sq[k] += z.norm_sqr();
            }
        }
        let expect = a.trace() / n as f64;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                let mean = sum[k] / samples as f64;
                let var = sq[k] / samples as f64 - mean.norm_sqr();
                let se = (var / samples as f64).sqrt();
                let target = if i == j { c(expect, 0.0) } else { ZERO };
                assert!((mean - target).norm() <= 5.0 * se + 1e-12, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn haar_state_second_moment() {
        let n = 2;
        let samples = 50_000;
        let mut rng = seeded(13);
        let mut acc = ComplexMatrix::zeros(n * n, n * n);
        for _ in 0..samples {
            let p = HermitianOperator::projector(&haar_state(n, &mut rng));
            acc.add_scaled(ONE, &tensor_product(p.matrix(), p.matrix()));
        }
        let acc = acc.scale_real(1.0 / samples as f64);
        let target = sym_projector(2, n).unwrap().scale(2.0 / (n * (n + 1)) as f64);
        assert!(acc.max_abs_diff(target.matrix()) < 0.01);

        let s = haar_state(1, &mut rng);
        assert!((HermitianOperator::projector(&s).trace() - 1.0).abs() < 1e-15);
        assert!((s.amplitudes()[0].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flip_and_symmetric_projectors() {
        let f = flip_operator(3);
        assert!((&f.matrix().matmul(f.matrix()) - &ComplexMatrix::identity(9)).frobenius_norm() < 1e-15);
        assert!((f.trace() - 3.0).abs() < 1e-15);
        let ket01 = StateVector::basis(2, 0).tensor(&StateVector::basis(2, 1));
        let ket10 = StateVector::basis(2, 1).tensor(&StateVector::basis(2, 0));
        assert_eq!(flip_operator(2).matrix().apply(ket01.amplitudes()), ket10.amplitudes().to_vec());

        let a = random_matrix(3, 3, 21);
        let b = random_matrix(3, 3, 22);
        let lhs = f.matrix().trace_product(&tensor_product(&a, &b));
        assert!((lhs - a.trace_product(&b)).norm() < 1e-12);

        let p2 = sym_projector(2, 4).unwrap();
        assert!((p2.trace() - 10.0).abs() < 1e-12);
        assert!(p2.matrix().matmul(p2.matrix()).max_abs_diff(p2.matrix()) < 1e-12);
        assert!(sym_projector(3, 2).is_err());
    }

    #[test]
    fn sym4_trace_matches_dimension_formula() {
        for n in 2..=6usize {
            let p = sym_projector(4, n).unwrap();
            let d1 = (n * (n + 1) * (n + 2) * (n + 3)) as f64 / 24.0;
            assert!((p.trace() - d1).abs() < 1e-9, "n = {n}");
        }
    }

    #[test]
    fn svec_is_an_isometry() {
        let mut rng = seeded(31);
        let a = random_hermitian(5, &mut rng);
        let b = random_hermitian(5, &mut rng);
        let (va, vb) = (a.svec(), b.svec());
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        assert!((dot - a.inner(&b)).abs() < 1e-12);
        let back = HermitianOperator::from_svec(5, &va).unwrap();
        assert!(back.matrix().max_abs_diff(a.matrix()) < 1e-14);
    }

    #[test]
    fn hermitian_construction() {
        let m = ComplexMatrix::from_vec(2, 2, vec![ONE, c(0.0, 1.0), c(0.0, 1.0), ONE]).unwrap();
        assert!(matches!(HermitianOperator::new(m), Err(Error::NotHermitian { .. })));
        assert!(matches!(HermitianOperator::new(ComplexMatrix::zeros(2, 3)), Err(Error::NotSquare { .. })));
        assert!(ComplexMatrix::from_vec(1, 1, vec![c(f64::NAN, 0.0)]).is_err());
        let json = serde_json::to_string(&sigma_x()).unwrap();
        assert_eq!(json, r#"{"rows":2,"cols":2,"re":[0.0,1.0,1.0,0.0],"im":[0.0,0.0,0.0,0.0]}"#);
        let back: ComplexMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sigma_x());
    }
}
