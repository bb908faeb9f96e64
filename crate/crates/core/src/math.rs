//! Dense matrices, log-domain reductions, initialization, SGD updates and a
//! central-difference gradient checker.
//!
//! Everything here works on `f64`. Vectors are plain `Vec<f64>` / `&[f64]`;
//! matrices are row-major [`Matrix`] values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global L2 norm above which gradients are rescaled before an update.
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Seed for every random draw in the crate. The same seed always yields the
/// same stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent seed for a numbered sub-stream.
    pub fn derive(self, stream: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Row-major dense matrix. Column vectors (biases) are `n x 1` matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
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
    pub fn add_at(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] += v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    fn check_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape(),
                actual: other.shape(),
            });
        }
        Ok(())
    }

    /// `out += self * x`
    #[inline]
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_add(x, &mut out);
        out
    }

    /// `out += self^T * y`
    #[inline]
    pub fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += u v^T`
    #[inline]
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            if ur != 0.0 {
                let cols = self.cols;
                axpy(ur, v, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) -> Result<()> {
        self.check_shape(other)?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sum(exp(values)))` evaluated with a max shift.
///
/// `-inf` entries are allowed and contribute nothing; an all `-inf` input
/// yields `-inf`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyReduction);
    }
    if let Some(v) = values.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
        return Err(Error::NonFinite(format!("logsumexp input {v}")));
    }
    Ok(logsumexp_unchecked(values))
}

#[inline]
pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Uniform Xavier/Glorot initialization in `±sqrt(6 / (rows + cols))`.
pub fn xavier_init(rows: usize, cols: usize, seed: RngSeed) -> Result<Matrix> {
    xavier_init_with(rows, cols, &mut seed.rng())
}

pub fn xavier_init_with<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::ZeroDimension { rows, cols });
    }
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Ok(Matrix { rows, cols, data })
}

/// Entries drawn from `N(0, 1) * scale`.
pub fn normal_init_with<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut R,
) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect();
    Matrix { rows, cols, data }
}

/// Factor that brings a gradient of norm `norm` down to at most `max_norm`.
pub fn clip_factor(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

/// One plain SGD update with the gradient clipped to L2 norm
/// [`DEFAULT_CLIP_NORM`].
pub fn sgd_step(param: &Matrix, grad: &Matrix, lr: f64) -> Result<Matrix> {
    param.check_shape(grad)?;
    if !(lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    let factor = clip_factor(grad.norm_sq().sqrt(), DEFAULT_CLIP_NORM);
    let mut out = param.clone();
    out.axpy(-lr * factor, grad)?;
    Ok(out)
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central differences of `loss_fn` around `params`.
pub fn numeric_gradient<F>(mut loss_fn: F, params: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    check_epsilon(epsilon)?;
    let mut theta = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + epsilon;
        let plus = loss_fn(&theta);
        theta[i] = orig - epsilon;
        let minus = loss_fn(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        out.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(out)
}

/// Maximum relative error between `analytic` and a central-difference
/// estimate of the gradient of `loss_fn` at `params`.
pub fn grad_check<F>(mut loss_fn: F, params: &[f64], analytic: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    let base = loss_fn(params);
    if !base.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let numeric = numeric_gradient(loss_fn, params, epsilon)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}

/// Rejects finite-difference steps outside `[1e-6, 1e-4]`.
pub fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(Error::Config(format!(
            "finite-difference epsilon {epsilon} outside [1e-6, 1e-4]"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn logsumexp_small_cases() {
        assert_eq!(logsumexp(&[0.0]).unwrap(), 0.0);
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(matches!(logsumexp(&[]), Err(Error::EmptyReduction)));
        assert!(logsumexp(&[f64::NAN]).is_err());
    }

    #[test]
    fn logsumexp_matches_direct_sum() {
        let mut rng = RngSeed(11).rng();
        for _ in 0..50 {
            let v: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            // |v| <= 10 so exp never over/underflows; summing exp directly is exact
            // to within a few ulps of the result.
            let direct = v.iter().map(|x| x.exp()).sum::<f64>().ln();
            assert!((logsumexp(&v).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn logsumexp_handles_neg_infinity() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, 0.0]).unwrap(), 0.0);
        assert_eq!(
            logsumexp(&[f64::NEG_INFINITY]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    proptest! {
        #[test]
        fn logsumexp_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = logsumexp(&shifted).unwrap();
            let rhs = logsumexp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
        }

        #[test]
        fn logsumexp_bounds(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = logsumexp(&v).unwrap();
            prop_assert!(l >= max);
            prop_assert!(l <= max + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn sgd_lr_gradient_scaling(p in prop::collection::vec(-1.0f64..1.0, 1..8), seed in 0u64..1000) {
            let mut rng = RngSeed(seed).rng();
            let g: Vec<f64> = p.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = p.len();
            let param = Matrix::from_vec(n, 1, p).unwrap();
            let grad = Matrix::from_vec(n, 1, g.clone()).unwrap();
            let half = Matrix::from_vec(n, 1, g.iter().map(|x| x / 2.0).collect()).unwrap();
            let a = sgd_step(&param, &grad, 0.01).unwrap();
            let b = sgd_step(&param, &half, 0.02).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn xavier_deterministic_and_bounded() {
        let a = xavier_init(1, 1, RngSeed(7)).unwrap();
        let b = xavier_init(1, 1, RngSeed(7)).unwrap();
        assert_eq!(a, b);

        let m = xavier_init(100, 100, RngSeed(3)).unwrap();
        let bound = (6.0f64 / 200.0).sqrt();
        assert!(m.as_slice().iter().all(|v| v.abs() <= bound));

        let m = xavier_init(50, 150, RngSeed(5)).unwrap();
        let mean = m.as_slice().iter().sum::<f64>() / m.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");

        assert!(matches!(
            xavier_init(0, 3, RngSeed(1)),
            Err(Error::ZeroDimension { .. })
        ));
    }

    #[test]
    fn sgd_step_examples() {
        let p = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let zero = Matrix::zeros(1, 1);
        assert_eq!(sgd_step(&p, &zero, 0.1).unwrap(), p);

        let g = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let out = sgd_step(&p, &g, 0.1).unwrap();
        assert!((out.get(0, 0) - 0.8).abs() < 1e-15);

        // norm 50 gradient is scaled by 5/50 before the step
        let p = Matrix::zeros(2, 1);
        let g = Matrix::from_vec(2, 1, vec![30.0, 40.0]).unwrap();
        let out = sgd_step(&p, &g, 1.0).unwrap();
        assert!((out.get(0, 0) + 3.0).abs() < 1e-12);
        assert!((out.get(1, 0) + 4.0).abs() < 1e-12);

        assert!(sgd_step(&p, &Matrix::zeros(1, 2), 0.1).is_err());
    }

    #[test]
    fn grad_check_examples() {
        let f = |t: &[f64]| t[0] * t[0];
        let err = grad_check(f, &[3.0], &[6.0], 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");

        let err = grad_check(f, &[3.0], &[12.0], 1e-5).unwrap();
        assert!((err - 1.0 / 3.0).abs() < 1e-6, "{err}");

        let bad = |_: &[f64]| f64::NAN;
        assert!(grad_check(bad, &[1.0], &[0.0], 1e-5).is_err());
        assert!(grad_check(f, &[3.0], &[6.0], 1e-2).is_err());
    }

    #[test]
    fn matvec_helpers() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 7.0, 11.0]);
        let mut out = vec![0.0; 2];
        m.matvec_t_add(&[1.0, 0.0, 1.0], &mut out);
        assert_eq!(out, vec![6.0, 8.0]);
        let mut g = Matrix::zeros(3, 2);
        g.add_outer(&[1.0, 2.0, 0.0], &[3.0, 4.0]);
        assert_eq!(g.as_slice(), &[3.0, 4.0, 6.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn derived_seeds_differ() {
        let s = RngSeed(42);
        assert_ne!(s.derive(0), s.derive(1));
        assert_eq!(s.derive(3), s.derive(3));
    }
}
