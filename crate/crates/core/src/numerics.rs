//! Complex linear algebra and seeded randomness.
//!
//! Everything here works in double precision on small dense matrices
//! (at most a few dozen rows), which is all the link simulation needs.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Maximum cyclic Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Convergence threshold on the off-diagonal Frobenius norm, relative to `‖A‖_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Pivots smaller than this (relative to the largest entry) are treated as singular.
pub const PIVOT_THRESHOLD: f64 = 1e-12;
/// Hermitian symmetry tolerance for eigen-decomposition inputs.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
/// Entries below this magnitude are skipped when fixing the eigenvector phase.
pub const PHASE_REFERENCE_FLOOR: f64 = 1e-12;

/// Dense complex matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    /// Stacks equally long row vectors.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("rows differ in length".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn column_vector(v: &[C64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
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

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r).conj())
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Standard product `self · other`.
    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<ComplexMatrix> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                op: "inverse",
                left: self.shape(),
                right: self.shape(),
            });
        }
        let n = self.rows;
        let scale = self.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Singular { pivot: 0.0 });
        }
        let mut a = self.data.clone();
        let mut inv = ComplexMatrix::identity(n).data;
        for col in 0..n {
            let (piv_row, piv_mag) = (col..n)
                .map(|r| (r, a[r * n + col].norm()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_mag < PIVOT_THRESHOLD * scale {
                return Err(Error::Singular { pivot: piv_mag });
            }
            if piv_row != col {
                for c in 0..n {
                    a.swap(piv_row * n + c, col * n + c);
                    inv.swap(piv_row * n + c, col * n + c);
                }
            }
            let p = a[col * n + col].inv();
            for c in 0..n {
                a[col * n + c] *= p;
                inv[col * n + c] *= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == C64::new(0.0, 0.0) {
                    continue;
                }
                for c in 0..n {
                    let av = a[col * n + c];
                    let iv = inv[col * n + c];
                    a[r * n + c] -= f * av;
                    inv[r * n + c] -= f * iv;
                }
            }
        }
        Ok(ComplexMatrix {
            rows: n,
            cols: n,
            data: inv,
        })
    }

    /// Induced 1-norm (max column sum).
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.get(r, c).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Largest deviation from Hermitian symmetry, `max |a_ij − conj(a_ji)|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for i in 0..self.rows {
            for j in i..self.cols.min(self.rows) {
                dev = dev.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        dev
    }

    /// Top-`n` eigenpairs of a Hermitian matrix (cyclic Jacobi).
    ///
    /// Values are returned in descending order. Each eigenvector column is
    /// unit norm with its first entry above [`PHASE_REFERENCE_FLOOR`] made
    /// real and positive.
    pub fn hermitian_eig(&self, n: usize) -> Result<Eigen> {
        if self.rows != self.cols {
            return Err(Error::DimensionMismatch {
                op: "hermitian_eig",
                left: self.shape(),
                right: self.shape(),
            });
        }
        let dim = self.rows;
        if n == 0 || n > dim {
            return Err(Error::IndexOutOfRange {
                what: "eigenpair count",
                index: n,
                bound: dim,
            });
        }
        let dev = self.hermitian_deviation();
        if dev > HERMITIAN_TOLERANCE * self.max_abs().max(1.0) {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let (values, vectors) = jacobi(self)?;
        let mut order: Vec<usize> = (0..dim).collect();
        // Stable sort keeps index order among equal eigenvalues.
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let mut out_vals = Vec::with_capacity(n);
        let mut out_vecs = ComplexMatrix::zeros(dim, n);
        for (j, &idx) in order.iter().take(n).enumerate() {
            out_vals.push(values[idx]);
            let mut v: Vec<C64> = (0..dim).map(|r| vectors[r * dim + idx]).collect();
            normalize_unit(&mut v);
            fix_phase(&mut v);
            for (r, x) in v.into_iter().enumerate() {
                out_vecs.set(r, j, x);
            }
        }
        Ok(Eigen {
            values: out_vals,
            vectors: out_vecs,
        })
    }
}

/// Eigenvalues (descending) and matching unit eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: ComplexMatrix,
}

fn off_diagonal_norm(a: &[C64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Cyclic complex Jacobi. Returns (unsorted eigenvalues, row-major eigenvector matrix).
fn jacobi(m: &ComplexMatrix) -> Result<(Vec<f64>, Vec<C64>)> {
    let n = m.rows;
    let mut a = m.data.clone();
    // Symmetrise exactly so rounding in the input cannot drift.
    for i in 0..n {
        a[i * n + i] = C64::new(a[i * n + i].re, 0.0);
        for j in i + 1..n {
            let avg = (a[i * n + j] + a[j * n + i].conj()) * 0.5;
            a[i * n + j] = avg;
            a[j * n + i] = avg.conj();
        }
    }
    let mut v = ComplexMatrix::identity(n).data;
    let total = m.frobenius_norm();
    let tol = JACOBI_TOLERANCE * total;
    let mut off = off_diagonal_norm(&a, n);
    let mut sweeps = 0;
    while off > tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                let g = apq.norm();
                if g == 0.0 {
                    continue;
                }
                // Phase that makes the (p, q) entry real, then a real rotation.
                let e = apq / g;
                let app = a[p * n + p].re;
                let aqq = a[q * n + q].re;
                let theta = (aqq - app) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let ec = e.conj();
                // Columns: A ← A·U with U e_p = c e_p − s ē e_q, U e_q = s e_p + c ē e_q.
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q] * ec;
                    a[k * n + p] = akp * c - akq * s;
                    a[k * n + q] = akp * s + akq * c;
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q] * ec;
                    v[k * n + p] = vkp * c - vkq * s;
                    v[k * n + q] = vkp * s + vkq * c;
                }
                // Rows: A ← Uᴴ·A.
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k] * e;
                    a[p * n + k] = apk * c - aqk * s;
                    a[q * n + k] = apk * s + aqk * c;
                }
                a[p * n + q] = C64::new(0.0, 0.0);
                a[q * n + p] = C64::new(0.0, 0.0);
                a[p * n + p] = C64::new(a[p * n + p].re, 0.0);
                a[q * n + q] = C64::new(a[q * n + q].re, 0.0);
            }
        }
        off = off_diagonal_norm(&a, n);
    }
    Ok(((0..n).map(|i| a[i * n + i].re).collect(), v))
}

/// Scales `v` to unit Euclidean norm; zero vectors are left untouched.
pub fn normalize_unit(v: &mut [C64]) {
    let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Rotates `v` so its first entry with magnitude above the floor is real positive.
pub fn fix_phase(v: &mut [C64]) {
    if let Some(i) = v.iter().position(|x| x.norm() > PHASE_REFERENCE_FLOOR) {
        let mag = v[i].norm();
        let rot = v[i].conj() / mag;
        v.iter_mut().for_each(|x| *x *= rot);
        v[i] = C64::new(mag, 0.0);
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}

/// Kronecker product of two oversampled DFT vectors, unit norm.
///
/// Entry `p·n2 + q` is `exp(j2π(i1·p/(o1·n1) + i2·q/(o2·n2))) / √(n1·n2)`.
pub fn dft_beam(n1: usize, n2: usize, o1: usize, o2: usize, i1: usize, i2: usize) -> Result<Vec<C64>> {
    if i1 >= n1 * o1 {
        return Err(Error::IndexOutOfRange {
            what: "horizontal beam",
            index: i1,
            bound: n1 * o1,
        });
    }
    if i2 >= n2 * o2 {
        return Err(Error::IndexOutOfRange {
            what: "vertical beam",
            index: i2,
            bound: n2 * o2,
        });
    }
    let scale = 1.0 / ((n1 * n2) as f64).sqrt();
    let mut out = Vec::with_capacity(n1 * n2);
    for p in 0..n1 {
        for q in 0..n2 {
            let phase = 2.0 * PI
                * ((i1 * p) as f64 / (o1 * n1) as f64 + (i2 * q) as f64 / (o2 * n2) as f64);
            out.push(C64::from_polar(scale, phase));
        }
    }
    Ok(out)
}

/// SplitMix64 finaliser.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `seed`: `splitmix64(seed ⊕ splitmix64(index))`.
///
/// Parallel work splits by deriving one child per task instead of sharing a stream.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Seeded, portable random stream (ChaCha8).
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this one's seed (not its position).
    pub fn child(&self, index: u64) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, index))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Circularly symmetric complex Gaussian with `E|z|² = variance`.
    pub fn complex_gaussian(&mut self, variance: f64) -> C64 {
        let s = (variance / 2.0).sqrt();
        let re = self.standard_normal();
        let im = self.standard_normal();
        C64::new(re * s, im * s)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `n` i.i.d. circularly symmetric complex Gaussian draws of total variance `variance`.
pub fn gaussian_draw(rng: &mut SeededRng, n: usize, variance: f64) -> Vec<C64> {
    assert!(variance >= 0.0, "variance must be non-negative");
    (0..n).map(|_| rng.complex_gaussian(variance)).collect()
}

/// Seed metadata recorded with generated artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub algorithm: String,
}

impl From<&SeededRng> for SeedRecord {
    fn from(r: &SeededRng) -> Self {
        Self {
            seed: r.seed,
            algorithm: SeededRng::ALGORITHM.into(),
        }
    }
}
