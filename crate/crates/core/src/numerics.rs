//! Dense row-major matrices, the digamma function and seeded randomness.
//!
//! Activation matrices always hold one sample per row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};

/// Dense 2-D array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Domain(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Domain(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
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

    /// Copies the listed rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Matrix {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape("add", other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `bias` to every row.
    pub fn add_row_broadcast(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Shape {
                op: "add_row_broadcast",
                left: self.shape(),
                right: (1, bias.len()),
            });
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Layout {
    Plain,
    Transposed,
}

impl Layout {
    /// (logical rows, logical cols, row stride, col stride) of a stored matrix.
    fn view(self, m: &Matrix) -> (usize, usize, isize, isize) {
        let (r, c) = m.shape();
        match self {
            Layout::Plain => (r, c, c as isize, 1),
            Layout::Transposed => (c, r, 1, c as isize),
        }
    }
}

fn gemm(op: &'static str, a: &Matrix, la: Layout, b: &Matrix, lb: Layout) -> Result<Matrix> {
    let (m, k, rsa, csa) = la.view(a);
    let (k2, n, rsb, csb) = lb.view(b);
    if k != k2 {
        return Err(Error::Shape {
            op,
            left: (m, k),
            right: (k2, n),
        });
    }
    if m == 0 || n == 0 || k == 0 {
        return Ok(Matrix::zeros(m, n));
    }
    let mut data: Vec<f64> = Vec::with_capacity(m * n);
    // SAFETY: the input pointers cover `m*k` and `k*n` elements laid out with
    // the given strides, all derived from the owning matrices' shapes. With
    // beta = 0 dgemm never reads C and writes all `m*n` entries, so the
    // buffer is fully initialized before its length is set.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            data.as_mut_ptr(),
            n as isize,
            1,
        );
        data.set_len(m * n);
    }
    Ok(Matrix { rows: m, cols: n, data })
}

/// Matrix product `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm("matmul", a, Layout::Plain, b, Layout::Plain)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm("matmul_tn", a, Layout::Transposed, b, Layout::Plain)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    gemm("matmul_nt", a, Layout::Plain, b, Layout::Transposed)
}

/// Row-compressed copy of a mostly-zero matrix, for products against the
/// network input.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    rows: usize,
    cols: usize,
    row_start: Vec<usize>,
    col_index: Vec<u32>,
    values: Vec<f64>,
}

impl SparseRows {
    pub fn from_dense(m: &Matrix) -> Self {
        let mut row_start = Vec::with_capacity(m.rows + 1);
        let mut col_index = Vec::new();
        let mut values = Vec::new();
        row_start.push(0);
        for row in m.row_iter() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    col_index.push(c as u32);
                    values.push(v);
                }
            }
            row_start.push(values.len());
        }
        Self {
            rows: m.rows,
            cols: m.cols,
            row_start,
            col_index,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Fraction of stored (non-zero) entries.
    pub fn density(&self) -> f64 {
        self.values.len() as f64 / (self.rows * self.cols).max(1) as f64
    }

    fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_start[r]..self.row_start[r + 1];
        (&self.col_index[span.clone()], &self.values[span])
    }

    /// `self · b`.
    pub fn matmul(&self, b: &Matrix) -> Result<Matrix> {
        if self.cols != b.rows {
            return Err(Error::Shape {
                op: "sparse matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, b.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let dst = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, w) in dst.iter_mut().zip(b.row(c as usize)) {
                    *o += v * w;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`.
    pub fn matmul_tn(&self, g: &Matrix) -> Result<Matrix> {
        if self.rows != g.rows {
            return Err(Error::Shape {
                op: "sparse matmul_tn",
                left: (self.cols, self.rows),
                right: g.shape(),
            });
        }
        let mut out = Matrix::zeros(self.cols, g.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            let src = g.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, x) in out.row_mut(c as usize).iter_mut().zip(src) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}

/// `e^y` for `0 ≤ y ≤ 44`, branch-free so that loops over it vectorize.
///
/// `y = k·ln2 + r` with |r| ≤ ln2/2, Taylor series to r¹³ for `e^r`, and
/// `2^k` assembled from exponent bits.
#[inline(always)]
fn exp_bounded(y: f64) -> f64 {
    const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let shifted = y * std::f64::consts::LOG2_E + SHIFTER;
    let k = shifted - SHIFTER;
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for d in [479_001_600.0, 39_916_800.0, 3_628_800.0, 362_880.0, 40_320.0, 5040.0, 720.0, 120.0, 24.0, 6.0, 2.0, 1.0, 1.0] {
        p = p * r + 1.0 / d;
    }
    let scale = f64::from_bits((shifted.to_bits().wrapping_sub(SHIFTER.to_bits()).wrapping_add(1023)) << 52);
    p * scale
}

/// Hyperbolic tangent with relative error below 1e-15, NaN propagating.
///
/// Rational minimax approximation for |x| < 0.625, `1 − 2/(e^{2|x|}+1)`
/// above with the argument clamped at 22, where the result rounds to 1.
/// Both branches are evaluated and one selected, which lets callers
/// vectorize.
#[inline]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs().min(22.0);
    let z = a * a;
    let p = (-9.643_991_794_250_523e-1 * z - 9.928_772_310_019_186e1) * z - 1.614_687_684_417_084_5e3;
    let q = ((z + 1.128_116_784_916_324e2) * z + 2.235_488_390_601_004_5e3) * z + 4.844_063_053_251_255e3;
    let small = a + a * z * p / q;
    let large = 1.0 - 2.0 / (exp_bounded(2.0 * a) + 1.0);
    let t = if a < 0.625 { small } else { large };
    if x.is_nan() {
        x
    } else {
        t.copysign(x)
    }
}

/// Elementwise [`tanh`] over a slice, using AVX2 when the CPU has it.
/// Results are bit-identical either way.
pub fn tanh_slice(x: &[f64]) -> Vec<f64> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime
        return unsafe { tanh_slice_avx2(x) };
    }
    x.iter().map(|&v| tanh(v)).collect()
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_slice_avx2(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (o, &v) in out.iter_mut().zip(x) {
        *o = tanh(v);
    }
    out
}

/// Digamma function ψ(x) for x > 0.
///
/// Shifts the argument up to x ≥ 6 with ψ(x) = ψ(x+1) − 1/x, then applies
/// the asymptotic series in 1/x².
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "digamma requires a finite positive argument, got {x}"
        )));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    // Bernoulli coefficients B_2n / (2n)
    const COEFFS: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 120.0,
        1.0 / 252.0,
        -1.0 / 240.0,
        1.0 / 132.0,
        -691.0 / 32760.0,
        1.0 / 12.0,
    ];
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    for c in COEFFS.iter().rev() {
        series = (series + c) * inv2;
    }
    Ok(shift + x.ln() - 0.5 / x - series)
}

/// Deterministic random stream; equal seeds give bit-identical draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a named purpose, derived from this generator's seed.
    pub fn substream(&self, tag: u64) -> SeededRng {
        let mut mixer = ChaCha8Rng::seed_from_u64(self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        SeededRng::new(mixer.random())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    /// `count` distinct indices from `0..n`, sorted ascending.
    pub fn sample_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        let mut picked = rand::seq::index::sample(&mut self.inner, n, count.min(n)).into_vec();
        picked.sort_unstable();
        picked
    }

    pub(crate) fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// I.i.d. normal draws of the given shape.
pub fn normal_sample(
    rng: &mut SeededRng,
    mean: f64,
    stddev: f64,
    rows: usize,
    cols: usize,
) -> Result<Matrix> {
    if !(stddev >= 0.0) || !stddev.is_finite() || !mean.is_finite() {
        return Err(Error::Domain(format!(
            "normal_sample needs finite mean and stddev >= 0, got ({mean}, {stddev})"
        )));
    }
    if stddev == 0.0 {
        return Ok(Matrix::filled(rows, cols, mean));
    }
    let dist = Normal::new(mean, stddev).map_err(|e| Error::Domain(e.to_string()))?;
    let data = (0..rows * cols).map(|_| dist.sample(rng.inner_mut())).collect();
    Matrix::from_vec(rows, cols, data)
}

/// I.i.d. uniform draws on `[low, high]`.
pub fn uniform_sample(
    rng: &mut SeededRng,
    low: f64,
    high: f64,
    rows: usize,
    cols: usize,
) -> Result<Matrix> {
    if !(low <= high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::Domain(format!("bad uniform range [{low}, {high}]")));
    }
    if low == high {
        return Ok(Matrix::filled(rows, cols, low));
    }
    let dist = Uniform::new_inclusive(low, high).map_err(|e| Error::Domain(e.to_string()))?;
    let data = (0..rows * cols).map(|_| dist.sample(rng.inner_mut())).collect();
    Matrix::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn random(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
        normal_sample(rng, 0.0, 1.0, r, c).unwrap()
    }

    #[test]
    fn tanh_matches_libm() {
        let mut rng = SeededRng::new(21);
        for i in 0..200_000 {
            let scale = [1.3, 4.0, 50.0][i % 3];
            let x = (rng.next_f64() - 0.5) * scale;
            let (want, got) = (x.tanh(), tanh(x));
            assert!((want - got).abs() <= 1e-15 * want.abs().max(1e-300), "{x}: {want} vs {got}");
        }
        for x in [0.0, -0.0, 1e-300, 0.625, -0.625, 22.0, 1e300, f64::INFINITY, f64::NEG_INFINITY] {
            assert!((x.tanh() - tanh(x)).abs() <= 1e-15 * x.tanh().abs(), "{x}");
        }
        assert!(tanh(f64::NAN).is_nan());
    }

    #[test]
    fn sparse_products_match_dense() {
        let mut rng = SeededRng::new(31);
        let mut a = random(&mut rng, 40, 23);
        for v in a.as_mut_slice().iter_mut() {
            if rng.next_f64() < 0.7 {
                *v = 0.0;
            }
        }
        let sa = SparseRows::from_dense(&a);
        assert!((sa.density() - 0.3).abs() < 0.1);
        let b = random(&mut rng, 23, 9);
        assert!(sa.matmul(&b).unwrap().max_abs_diff(&naive_matmul(&a, &b)) <= 1e-12);
        let g = random(&mut rng, 40, 5);
        assert!(sa.matmul_tn(&g).unwrap().max_abs_diff(&naive_matmul(&a.transpose(), &g)) <= 1e-12);
        assert!(sa.matmul(&g).is_err());
        assert!(sa.matmul_tn(&b).is_err());
        let empty = SparseRows::from_dense(&Matrix::zeros(3, 4));
        assert_eq!(empty.matmul(&random(&mut rng, 4, 2)).unwrap(), Matrix::zeros(3, 2));
    }

    #[test]
    fn identity_times_m_is_m() {
        let mut rng = SeededRng::new(1);
        let m = random(&mut rng, 3, 5);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), (2, 1));
        assert_eq!(c.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn zero_annihilates() {
        let mut rng = SeededRng::new(2);
        let m = random(&mut rng, 4, 3);
        let z = matmul(&Matrix::zeros(2, 4), &m).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_reports_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        match err {
            Error::Shape { left, right, .. } => {
                assert_eq!(left, (2, 3));
                assert_eq!(right, (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn transposed_products_match_naive() {
        let mut rng = SeededRng::new(3);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 7, 4);
        let c = random(&mut rng, 6, 5);
        let tn = matmul_tn(&a, &b).unwrap();
        assert!(tn.max_abs_diff(&naive_matmul(&a.transpose(), &b)) < 1e-12);
        let nt = matmul_nt(&a, &c).unwrap();
        assert!(nt.max_abs_diff(&naive_matmul(&a, &c.transpose())) < 1e-12);
        let ab = matmul(&a.transpose(), &b).unwrap();
        assert!(ab.max_abs_diff(&naive_matmul(&a.transpose(), &b)) < 1e-12);
    }

    // Reference values from a 30-digit arbitrary-precision evaluation.
    const DIGAMMA_TABLE: [(f64, f64); 12] = [
        (0.001, -1000.575571931810300471),
        (0.01, -100.5608854578686744975),
        (0.5, -1.963510026021423479441),
        (1.0, -0.5772156649015328606065),
        (2.0, 0.4227843350984671393935),
        (3.7, 1.167153539361511385874),
        (5.999, 1.705936329079225664141),
        (6.0, 1.706117668431800472727),
        (10.0, 2.251752589066721107647),
        (123.25, 4.810152531964818880284),
        (1000.0, 6.90725519564881205205),
        (1_000_000.0, 13.81551005796419077077),
    ];

    #[test]
    fn digamma_matches_reference_table() {
        for (x, expected) in DIGAMMA_TABLE {
            let got = digamma(x).unwrap();
            assert!((got - expected).abs() <= 1e-10, "psi({x}) = {got}, want {expected}");
        }
    }

    #[test]
    fn digamma_special_values() {
        let euler_gamma = 0.577_215_664_901_532_9_f64;
        assert!((digamma(1.0).unwrap() + euler_gamma).abs() < 1e-12);
        assert!((digamma(2.0).unwrap() - (1.0 - euler_gamma)).abs() < 1e-12);
        let asym = 1000f64.ln() - 1.0 / 2000.0;
        assert!((digamma(1000.0).unwrap() - asym).abs() < 1e-7);
    }

    #[test]
    fn digamma_rejects_nonpositive() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.5).is_err());
        assert!(digamma(f64::NAN).is_err());
    }

    #[test]
    fn zero_stddev_is_constant() {
        let mut rng = SeededRng::new(4);
        let m = normal_sample(&mut rng, 2.5, 0.0, 3, 3).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn normal_mean_within_clt_bound() {
        let mut rng = SeededRng::new(5);
        let n = 100_000;
        let (mu, sigma) = (1.5, 2.0);
        let m = normal_sample(&mut rng, mu, sigma, n, 1).unwrap();
        let mean = m.as_slice().iter().sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(99);
        let mut b = SeededRng::new(99);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let ma = normal_sample(&mut SeededRng::new(7), 0.0, 1.0, 4, 4).unwrap();
        let mb = normal_sample(&mut SeededRng::new(7), 0.0, 1.0, 4, 4).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn substreams_differ_by_tag() {
        let rng = SeededRng::new(11);
        let mut a = rng.substream(1);
        let mut b = rng.substream(2);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(rng.substream(1).next_u64(), SeededRng::new(11).substream(1).next_u64());
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in any::<u64>(), m in 1usize..6, k in 1usize..6, p in 1usize..6, n in 1usize..6) {
            let mut rng = SeededRng::new(seed);
            let a = random(&mut rng, m, k);
            let b = random(&mut rng, k, p);
            let c = random(&mut rng, p, n);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.as_slice().iter().fold(1.0f64, |s, v| s.max(v.abs()));
            prop_assert!(left.max_abs_diff(&right) <= 1e-9 * scale);
        }

        #[test]
        fn digamma_recurrence(x in 0.01f64..100.0) {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            prop_assert!((lhs - 1.0 / x).abs() <= 1e-9);
        }
    }
}
