//! Dense kernels, activations, seeded randomness and finite-difference
//! gradient verification.
//!
//! Everything is `f64`. Vectors are plain slices; matrices are row-major
//! [`Matrix`] values. A bias vector is stored as an `n × 1` matrix so that all
//! trainable tensors share one type.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Column vector (`n × 1`).
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims("Matrix::from_vec", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
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
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = self · x`
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_matvec(x, out)?;
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
        Ok(())
    }

    /// `out += self · x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_matvec(x, out)?;
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
        Ok(())
    }

    /// `out += selfᵀ · y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        if y.len() != self.rows {
            return Err(Error::dims(
                "Matrix::matvec_t_acc input",
                self.rows,
                y.len(),
            ));
        }
        if out.len() != self.cols {
            return Err(Error::dims(
                "Matrix::matvec_t_acc output",
                self.cols,
                out.len(),
            ));
        }
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += m * yr;
            }
        }
        Ok(())
    }

    /// `self += a · bᵀ`
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        if a.len() != self.rows {
            return Err(Error::dims("Matrix::add_outer rows", self.rows, a.len()));
        }
        if b.len() != self.cols {
            return Err(Error::dims("Matrix::add_outer cols", self.cols, b.len()));
        }
        for (r, &ar) in a.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            for (m, &bc) in self.row_mut(r).iter_mut().zip(b) {
                *m += ar * bc;
            }
        }
        Ok(())
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::dims("Matrix::axpy", self.len(), other.len()));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn check_matvec(&self, x: &[f64], out: &[f64]) -> Result<()> {
        if x.len() != self.cols {
            return Err(Error::dims("Matrix::matvec input", self.cols, x.len()));
        }
        if out.len() != self.rows {
            return Err(Error::dims("Matrix::matvec output", self.rows, out.len()));
        }
        Ok(())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Seeded pseudo-random stream.
///
/// Backed by ChaCha8 (`rand_chacha`), whose output is fixed by its
/// specification, so a seed reproduces the same stream on every platform.
/// Independent sub-streams are derived with [`SeededRng::derive`].
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

    /// Stream `index` of the family rooted at `seed`. Different indices give
    /// statistically independent streams.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(index.wrapping_add(1));
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[lo, hi)`. Caller guarantees `lo < hi`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    /// Uniform draw in the closed interval `[lo, hi]`.
    pub fn uniform_inclusive(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..=hi)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln Σ exp(values)`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out)?;
    Ok(out)
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax logits"));
    }
    if out.len() != logits.len() {
        return Err(Error::dims("softmax output", logits.len(), out.len()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("softmax logits".into()));
    }
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `rows × cols` matrix with entries drawn uniformly from `[lo, hi)`.
pub fn uniform_init(
    rows: usize,
    cols: usize,
    lo: f64,
    hi: f64,
    rng: &mut SeededRng,
) -> Result<Matrix> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "uniform_init requires finite lo < hi, got [{lo}, {hi})"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Compares analytic gradients against central differences of `loss`.
///
/// Returns the maximum over all parameters of
/// `|g_a − g_n| / max(|g_a|, |g_n|, 1e-8)`.
pub fn finite_diff_check<F>(mut loss: F, params: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    if params.len() != analytic.len() {
        return Err(Error::dims(
            "finite_diff_check gradients",
            params.len(),
            analytic.len(),
        ));
    }
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + step;
        let plus = loss(&probe);
        probe[i] = original - step;
        let minus = loss(&probe);
        probe[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss is not finite when perturbing parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let g = analytic[i];
        let denom = g.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((g - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // 40-digit evaluation of 1/(1+e^-10)
        let expected = 0.999_954_602_131_297_565_605_495_223_767_236_5;
        assert!((sigmoid(10.0) - expected).abs() < 1e-12);
        for x in [-700.0, -50.0, -1.5, 3.0, 700.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15, "x = {x}");
            assert!(sigmoid(x).is_finite());
        }
    }

    #[test]
    fn softmax_reference_values() {
        let uniform = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for p in uniform {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let expected = [
            0.090_030_573_170_380_457_998,
            0.244_728_471_054_797_652_473,
            0.665_240_955_774_821_889_529,
        ];
        let got = softmax(&[1.0, 2.0, 3.0]).unwrap();
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12);
        }
        let shifted = softmax(&[1001.0, 1002.0, 1003.0]).unwrap();
        for (a, b) in got.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn log_sum_exp_handles_large_and_infinite() {
        let v = log_sum_exp(&[1234.0, 1232.0]);
        assert!((v - 1234.126_928_011_042_972_5).abs() < 1e-9);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
    }

    #[test]
    fn uniform_init_contract() {
        let a = uniform_init(2, 2, -1.0, 1.0, &mut SeededRng::new(7)).unwrap();
        let b = uniform_init(2, 2, -1.0, 1.0, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
        let big = uniform_init(100, 100, -1.0, 1.0, &mut SeededRng::new(1)).unwrap();
        assert!(big.as_slice().iter().all(|&v| (-1.0..1.0).contains(&v)));
        let tiny = uniform_init(1, 1, 0.0, 0.0001, &mut SeededRng::new(3)).unwrap();
        assert!((0.0..0.0001).contains(&tiny.get(0, 0)));
        assert!(uniform_init(1, 1, 1.0, 1.0, &mut SeededRng::new(0)).is_err());
        assert!(uniform_init(1, 1, 2.0, 1.0, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn derived_streams_differ() {
        let a = SeededRng::derive(5, 0).next_u64();
        let b = SeededRng::derive(5, 1).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, SeededRng::derive(5, 0).next_u64());
    }

    #[test]
    fn finite_diff_on_quadratic() {
        let params = [0.3, -1.2, 2.5, 0.0];
        let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
        let err =
            finite_diff_check(|p| p.iter().map(|v| v * v).sum(), &params, &grads, 1e-2).unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn finite_diff_reports_nonfinite_parameter() {
        let err = finite_diff_check(
            |p| if p[1] > 1.0 { f64::NAN } else { p[0] },
            &[0.0, 1.0],
            &[1.0, 0.0],
            1e-3,
        )
        .unwrap_err();
        assert!(err.to_string().contains("parameter 1"), "{err}");
        assert!(finite_diff_check(|_| 0.0, &[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn matrix_kernels() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut out = [0.0; 2];
        m.matvec(&[1.0, 0.0, -1.0], &mut out).unwrap();
        assert_eq!(out, [-2.0, -2.0]);
        let mut back = [0.0; 3];
        m.matvec_t_acc(&[1.0, 1.0], &mut back).unwrap();
        assert_eq!(back, [5.0, 7.0, 9.0]);
        let mut g = Matrix::zeros(2, 3);
        g.add_outer(&[1.0, 2.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(g.as_slice(), &[1.0, 0.0, 1.0, 2.0, 0.0, 2.0]);
        assert!(m.matvec(&[1.0], &mut out).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let p = softmax(&z).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(z in prop::collection::vec(-20.0f64..20.0, 1..8), c in -100.0f64..100.0) {
            let a = softmax(&z).unwrap();
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_monotone(x in -15.0f64..15.0, dx in 1e-6f64..10.0) {
            prop_assert!(sigmoid(x) < sigmoid(x + dx));
        }

        #[test]
        fn sigmoid_symmetric(x in -700.0f64..700.0) {
            prop_assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn uniform_init_reproducible(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8) {
            let a = uniform_init(rows, cols, -1.0, 1.0, &mut SeededRng::new(seed)).unwrap();
            let b = uniform_init(rows, cols, -1.0, 1.0, &mut SeededRng::new(seed)).unwrap();
            prop_assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
