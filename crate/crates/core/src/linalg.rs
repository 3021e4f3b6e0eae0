//! Dense vectors and matrices, norms, angles and seeded Gaussian sampling.
//!
//! Matrices are row-major. Arithmetic on vectors of different lengths through
//! the operator impls panics, the same way slice indexing does; the
//! dimension-checked entry points used by the model code return [`Error`].

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A dense column vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector<T>(Vec<T>);

impl<T: Scalar> DenseVector<T> {
    pub fn new(entries: Vec<T>) -> Self {
        DenseVector(entries)
    }

    pub fn zeros(len: usize) -> Self {
        DenseVector(vec![T::zero(); len])
    }

    pub fn filled(len: usize, value: T) -> Self {
        DenseVector(vec![value; len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> T) -> Self {
        DenseVector((0..len).map(f).collect())
    }

    /// Standard basis vector `e_i` of length `len`.
    pub fn basis(len: usize, i: usize) -> Self {
        let mut v = Self::zeros(len);
        v.0[i] = T::one();
        v
    }

    pub fn from_f64_slice(values: &[f64]) -> Self {
        DenseVector(values.iter().map(|&v| T::lit(v)).collect())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.0.iter()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.as_f64()).collect()
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.0.iter().zip(&other.0).map(|(&a, &b)| a * b).sum()
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        DenseVector(self.0.iter().map(|&v| f(v)).collect())
    }

    /// Entrywise combination of two vectors of equal length.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.len(), other.len(), "zip_map: length mismatch");
        DenseVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: T, other: &Self) {
        assert_eq!(self.len(), other.len(), "axpy: length mismatch");
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a = *a + k * b;
        }
    }

    pub fn l1_norm(&self) -> T {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn l2_norm(&self) -> T {
        // scaled accumulation keeps huge or tiny entries from overflowing
        let linf = self.linf_norm();
        if linf == T::zero() || !linf.is_finite() {
            return linf;
        }
        let s: T = self
            .0
            .iter()
            .map(|&v| {
                let r = v / linf;
                r * r
            })
            .sum();
        linf * s.sqrt()
    }

    pub fn linf_norm(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn norms(&self) -> Norms<T> {
        norms(self)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.len(), other.len(), "max_abs_diff: length mismatch");
        self.0
            .iter()
            .zip(&other.0)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// `‖self − reference‖₂ / ‖reference‖₂`.
    pub fn relative_l2_error(&self, reference: &Self) -> T {
        (self - reference).l2_norm() / reference.l2_norm()
    }

    pub fn cast<U: Scalar>(&self) -> DenseVector<U> {
        DenseVector(self.0.iter().map(|v| U::lit(v.as_f64())).collect())
    }
}

impl<T> Index<usize> for DenseVector<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.0[i]
    }
}

impl<T> IndexMut<usize> for DenseVector<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.0[i]
    }
}

impl<T: Scalar> From<Vec<T>> for DenseVector<T> {
    fn from(v: Vec<T>) -> Self {
        DenseVector(v)
    }
}

impl<T: Scalar> Add for &DenseVector<T> {
    type Output = DenseVector<T>;
    fn add(self, rhs: Self) -> DenseVector<T> {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl<T: Scalar> Sub for &DenseVector<T> {
    type Output = DenseVector<T>;
    fn sub(self, rhs: Self) -> DenseVector<T> {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl<T: Scalar> Mul<T> for &DenseVector<T> {
    type Output = DenseVector<T>;
    fn mul(self, k: T) -> DenseVector<T> {
        self.scale(k)
    }
}

impl<T: Scalar> Neg for &DenseVector<T> {
    type Output = DenseVector<T>;
    fn neg(self) -> DenseVector<T> {
        self.map(|v| -v)
    }
}

/// The three norms reported throughout the simulations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms<T> {
    pub l1: T,
    pub l2: T,
    pub linf: T,
}

pub fn norms<T: Scalar>(v: &DenseVector<T>) -> Norms<T> {
    Norms {
        l1: v.l1_norm(),
        l2: v.l2_norm(),
        linf: v.linf_norm(),
    }
}

/// Angle in `[0, π]` between two nonzero vectors.
pub fn angle_between<T: Scalar>(a: &DenseVector<T>, b: &DenseVector<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::dims("angle_between", a.len(), b.len()));
    }
    let na = a.l2_norm();
    let nb = b.l2_norm();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::domain("angle_between", "zero-norm input"));
    }
    // 2·atan2(‖â − b̂‖, ‖â + b̂‖) equals acos of the clamped cosine but keeps
    // full precision near 0 and π
    let ua = a.scale(T::one() / na);
    let ub = b.scale(T::one() / nb);
    let diff = (&ua - &ub).l2_norm();
    let sum = (&ua + &ub).l2_norm();
    Ok((T::one() + T::one()) * diff.atan2(sum))
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("DenseMatrix::new", rows * cols, data.len()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dims("DenseMatrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
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
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_vector(&self, i: usize) -> DenseVector<T> {
        DenseVector::new(self.row(i).to_vec())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `A x`
    pub fn matvec(&self, x: &DenseVector<T>) -> Result<DenseVector<T>> {
        if x.len() != self.cols {
            return Err(Error::dims("matvec", self.cols, x.len()));
        }
        let xs = x.as_slice();
        Ok(DenseVector::from_fn(self.rows, |i| {
            self.row(i).iter().zip(xs).map(|(&a, &b)| a * b).sum()
        }))
    }

    /// `Aᵀ y`
    pub fn matvec_t(&self, y: &DenseVector<T>) -> Result<DenseVector<T>> {
        if y.len() != self.rows {
            return Err(Error::dims("matvec_t", self.rows, y.len()));
        }
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * yi;
            }
        }
        Ok(DenseVector::new(out))
    }

    /// `A B`
    pub fn matmul(&self, b: &Self) -> Result<Self> {
        if self.cols != b.rows {
            return Err(Error::dims("matmul", self.cols, b.rows));
        }
        let mut out = Self::zeros(self.rows, b.cols);
        gemm_nn(self, b, &mut out);
        Ok(out)
    }

    /// `Aᵀ B`
    pub fn t_matmul(&self, b: &Self) -> Result<Self> {
        if self.rows != b.rows {
            return Err(Error::dims("t_matmul", self.rows, b.rows));
        }
        let mut out = Self::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = b.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + a * bv;
                }
            }
        }
        Ok(out)
    }

    /// `A Bᵀ`
    pub fn matmul_t(&self, b: &Self) -> Result<Self> {
        if self.cols != b.cols {
            return Err(Error::dims("matmul_t", self.cols, b.cols));
        }
        Ok(Self::from_fn(self.rows, b.rows, |i, j| {
            self.row(i).iter().zip(b.row(j)).map(|(&x, &y)| x * y).sum()
        }))
    }

    /// `a bᵀ`
    pub fn outer(a: &DenseVector<T>, b: &DenseVector<T>) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j])
    }

    pub fn scale(&self, k: T) -> Self {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: T, other: &Self) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "axpy: shape mismatch"
        );
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + k * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(
            self.data.len(),
            other.data.len(),
            "max_abs_diff: shape mismatch"
        );
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Entries flattened row-major into a vector.
    pub fn to_vector(&self) -> DenseVector<T> {
        DenseVector::new(self.data.clone())
    }
}

/// `out += a b`, i-k-j order so the inner loop streams rows of `b`.
fn gemm_nn<T: Scalar>(a: &DenseMatrix<T>, b: &DenseMatrix<T>, out: &mut DenseMatrix<T>) {
    let n = b.cols;
    for i in 0..a.rows {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == T::zero() {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// A reproducible random stream identified by `(seed, stream)`.
///
/// The generator is ChaCha12 seeded with `splitmix64(seed ⊕ splitmix64(stream))`.
/// Draw sequences are stable for a fixed build; they are not meant to match
/// any other implementation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// The 64-bit seed actually fed to the generator.
    pub fn stream_seed(&self) -> u64 {
        splitmix64(self.seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d_4c95_7f2d)))
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha12Rng::seed_from_u64(self.stream_seed())
    }

    /// A child stream, for splitting one stream into independent sub-streams.
    pub fn child(&self, index: u64) -> Self {
        RngStream::new(self.stream_seed(), index)
    }
}

pub type StreamRng = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn normal_draw<T: Scalar, R: Rng + ?Sized>(rng: &mut R, mean: T, std: T) -> T {
    let z: f64 = rng.sample(StandardNormal);
    mean + std * T::lit(z)
}

fn check_std<T: Scalar>(op: &'static str, std: T) -> Result<()> {
    if std < T::zero() || !std.is_finite() {
        return Err(Error::domain(
            op,
            format!("standard deviation must be >= 0, got {std}"),
        ));
    }
    Ok(())
}

/// Matrix with i.i.d. `N(mean, std²)` entries, drawn row-major from `rng`.
pub fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    mean: T,
    std: T,
    rng: &mut R,
) -> Result<DenseMatrix<T>> {
    check_std("gaussian_matrix", std)?;
    let data = (0..rows * cols)
        .map(|_| normal_draw(rng, mean, std))
        .collect();
    DenseMatrix::new(rows, cols, data)
}

/// Vector with i.i.d. `N(mean, std²)` entries.
pub fn gaussian_vector<T: Scalar, R: Rng + ?Sized>(
    len: usize,
    mean: T,
    std: T,
    rng: &mut R,
) -> Result<DenseVector<T>> {
    check_std("gaussian_vector", std)?;
    Ok(DenseVector::from_fn(len, |_| normal_draw(rng, mean, std)))
}
