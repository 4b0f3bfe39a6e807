//! Particle containers and the statistics kernel shared by all filters.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::MultistepHistory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("fitness weights are all zero or not finite")]
    DegenerateWeights,
    #[error("covariance matrix is not positive semidefinite")]
    CovarianceDegenerate,
}

/// Weighted particle sample of states, parameters and drift constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Time of the current sample.
    pub t: f64,
    /// N x d
    pub states: DMatrix<f64>,
    /// N x p
    pub params: DMatrix<f64>,
    /// N x q drift constants in transformed coordinates; q = 0 for fixed drift.
    pub drift_logits: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub histories: Vec<MultistepHistory>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn state(&self, n: usize) -> DVector<f64> {
        self.states.row(n).transpose()
    }

    pub fn param(&self, n: usize) -> DVector<f64> {
        self.params.row(n).transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoiseSpec {
    /// State innovation standard deviation.
    pub sigma_c: f64,
    /// Observation noise standard deviation.
    pub sigma_d: f64,
}

/// Independent draw sequences of one filter step, in consumption order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init = 0,
    Resample = 1,
    StateInnovation = 2,
    DriftInnovation = 3,
    ParamInnovation = 4,
    Observation = 5,
}

/// Seeded source of reproducible random substreams.
///
/// Each `(step, purpose)` pair maps to its own ChaCha8 stream keyed by the
/// master seed, so draws do not depend on how much any other stream consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, step: u64, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step.wrapping_mul(8).wrapping_add(purpose as u64));
        rng
    }
}

/// `log N(y; G x, sigma_d^2 I)`
pub fn log_likelihood(
    y: &DVector<f64>,
    x: &DVector<f64>,
    obs_matrix: &DMatrix<f64>,
    sigma_d: f64,
) -> f64 {
    let m = y.len() as f64;
    let var = sigma_d * sigma_d;
    let resid = y - obs_matrix * x;
    -0.5 * m * (2.0 * PI * var).ln() - resid.norm_squared() / (2.0 * var)
}

/// Fraction of distinct entries in a set of auxiliary indices.
pub fn retention(indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut seen = vec![false; indices.iter().max().map_or(0, |m| m + 1)];
    let mut distinct = 0usize;
    for &i in indices {
        if !seen[i] {
            seen[i] = true;
            distinct += 1;
        }
    }
    distinct as f64 / indices.len() as f64
}

/// Draw `fitness.len()` indices with replacement, `P(k) ∝ fitness[k]`.
pub fn resample_auxiliary<R: Rng + ?Sized>(
    fitness: &[f64],
    rng: &mut R,
) -> Result<(Vec<usize>, f64), EnsembleError> {
    if fitness.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(EnsembleError::DegenerateWeights);
    }
    let dist = WeightedIndex::new(fitness).map_err(|_| EnsembleError::DegenerateWeights)?;
    let indices: Vec<usize> = (0..fitness.len()).map(|_| dist.sample(rng)).collect();
    let r = retention(&indices);
    Ok((indices, r))
}

/// Rescale `weights` to sum to one; returns false if they cannot be.
pub fn normalize(weights: &mut DVector<f64>) -> bool {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return false;
    }
    *weights /= total;
    // A second pass removes the residual rounding in the sum.
    let total: f64 = weights.iter().sum();
    *weights /= total;
    true
}

/// Exponentiate log-weights after subtracting their maximum.
///
/// Returns `None` when no log-weight is finite.
pub fn weights_from_log(log_w: &[f64]) -> Option<DVector<f64>> {
    let max = log_w
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut w = DVector::from_iterator(
        log_w.len(),
        log_w.iter().map(|&l| if l.is_nan() { 0.0 } else { (l - max).exp() }),
    );
    normalize(&mut w).then_some(w)
}

pub fn weighted_mean(values: &DMatrix<f64>, weights: &DVector<f64>) -> DVector<f64> {
    values.tr_mul(weights)
}

/// Weighted covariance `Σ w (v - v̄)(v - v̄)ᵀ`, symmetrized.
pub fn weighted_covariance(values: &DMatrix<f64>, weights: &DVector<f64>) -> DMatrix<f64> {
    let mean = weighted_mean(values, weights);
    let k = values.ncols();
    let mut cov = DMatrix::zeros(k, k);
    for (n, row) in values.row_iter().enumerate() {
        let w = weights[n];
        if w == 0.0 {
            continue;
        }
        let centered = row.transpose() - &mean;
        cov.ger(w, &centered, &centered, 1.0);
    }
    (&cov + cov.transpose()) * 0.5
}

/// Weighted standard deviation of each column.
pub fn weighted_std(values: &DMatrix<f64>, weights: &DVector<f64>) -> DVector<f64> {
    let mean = weighted_mean(values, weights);
    DVector::from_iterator(
        values.ncols(),
        values.column_iter().zip(mean.iter()).map(|(col, m)| {
            col.iter()
                .zip(weights.iter())
                .map(|(v, w)| w * (v - m) * (v - m))
                .sum::<f64>()
                .sqrt()
        }),
    )
}

/// Weighted quantiles by midpoint interpolation of the weighted empirical CDF.
///
/// Sorted values sit at cumulative positions `C_i - w_i / 2`; a quantile is
/// linearly interpolated between neighbouring positions and clamped to the
/// extreme values outside them. Zero-weight entries are ignored and tied
/// values are merged.
pub fn weighted_quantile(values: &[f64], weights: &[f64], qs: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    let mut pairs: Vec<(f64, f64)> = values
        .iter()
        .copied()
        .zip(weights.iter().copied())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    if pairs.is_empty() {
        return vec![f64::NAN; qs.len()];
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for (v, w) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += w,
            _ => merged.push((v, w)),
        }
    }
    let total: f64 = merged.iter().map(|p| p.1).sum();
    let mut cum = 0.0;
    let positions: Vec<f64> = merged
        .iter()
        .map(|&(_, w)| {
            let p = (cum + 0.5 * w) / total;
            cum += w;
            p
        })
        .collect();

    qs.iter()
        .map(|&q| {
            let last = merged.len() - 1;
            if q <= positions[0] {
                return merged[0].0;
            }
            if q >= positions[last] {
                return merged[last].0;
            }
            let i = positions.partition_point(|&p| p <= q);
            let (p0, p1) = (positions[i - 1], positions[i]);
            let (v0, v1) = (merged[i - 1].0, merged[i].0);
            v0 + (v1 - v0) * (q - p0) / (p1 - p0)
        })
        .collect()
}

/// Lower-triangular `L` with `L Lᵀ = cov` for positive semidefinite input.
///
/// Zero pivots yield zero columns so rank-deficient (including all-zero)
/// covariances factor exactly. A clearly negative pivot triggers one retry
/// with `1e-12` added to the diagonal.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, EnsembleError> {
    let sym = (cov + cov.transpose()) * 0.5;
    if let Some(l) = semidefinite_cholesky(&sym) {
        return Ok(l);
    }
    let jittered = &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * 1e-12;
    semidefinite_cholesky(&jittered).ok_or(EnsembleError::CovarianceDegenerate)
}

fn semidefinite_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = a.nrows();
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    let mut l = DMatrix::zeros(k, k);
    for j in 0..k {
        let mut pivot = a[(j, j)];
        for c in 0..j {
            pivot -= l[(j, c)] * l[(j, c)];
        }
        if pivot < -tol || !pivot.is_finite() {
            return None;
        }
        if pivot <= tol {
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..k {
            let mut s = a[(i, j)];
            for c in 0..j {
                s -= l[(i, c)] * l[(j, c)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Standard normal vector of length `k`.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, k: usize) -> DVector<f64> {
    DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `n` rows drawn from `N(mean, cov)`.
pub fn gaussian_draws<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EnsembleError> {
    let l = psd_factor(cov)?;
    let k = mean.len();
    let mut out = DMatrix::zeros(n, k);
    for r in 0..n {
        let xi = standard_normal(rng, k);
        let row = mean + &l * xi;
        out.set_row(r, &row.transpose());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn col(xs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(xs.len(), 1, xs)
    }

    #[test]
    fn log_likelihood_values() {
        let g = DMatrix::identity(1, 1);
        let x = DVector::from_element(1, 3.0);
        assert_abs_diff_eq!(
            log_likelihood(&x, &x, &g, 1.0),
            -0.918_938_533_204_672_8,
            epsilon = 1e-12
        );
        let y = DVector::from_element(1, 5.0);
        assert_abs_diff_eq!(
            log_likelihood(&y, &x, &g, 1.0),
            -2.918_938_533_204_672_8,
            epsilon = 1e-12
        );
        let g2 = DMatrix::identity(2, 2);
        let x2 = DVector::from_vec(vec![1.0, 2.0]);
        assert_abs_diff_eq!(
            log_likelihood(&x2, &x2, &g2, 0.5),
            -(2.0 * PI * 0.25).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(log_likelihood(&x2, &x2, &g2, 0.5), -0.451_582_705_289_454_9, epsilon = 1e-12);
    }

    #[test]
    fn point_mass_resampling() {
        let mut rng = RngStream::new(1).substream(0, Purpose::Resample);
        let (idx, r) = resample_auxiliary(&[1.0, 0.0, 0.0, 0.0], &mut rng).unwrap();
        assert_eq!(idx, vec![0; 4]);
        assert_eq!(r, 0.25);
    }

    #[test]
    fn zero_fitness_is_degenerate() {
        let mut rng = RngStream::new(1).substream(0, Purpose::Resample);
        assert_eq!(
            resample_auxiliary(&[0.0, 0.0], &mut rng),
            Err(EnsembleError::DegenerateWeights)
        );
        assert_eq!(
            resample_auxiliary(&[f64::NAN, 1.0], &mut rng),
            Err(EnsembleError::DegenerateWeights)
        );
    }

    #[test]
    fn retention_counts_distinct() {
        assert_eq!(retention(&[1, 1, 3, 2]), 0.75);
        assert_eq!(retention(&[0, 1, 2, 3]), 1.0);
    }

    #[test]
    fn substreams_are_independent_and_reproducible() {
        let s = RngStream::new(42);
        let a: u64 = s.substream(3, Purpose::Resample).random();
        let b: u64 = s.substream(3, Purpose::Resample).random();
        let c: u64 = s.substream(3, Purpose::StateInnovation).random();
        let d: u64 = s.substream(4, Purpose::Resample).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn weighted_means() {
        let w = DVector::from_element(4, 0.25);
        assert_eq!(weighted_mean(&col(&[1.0, 2.0, 3.0, 4.0]), &w)[0], 2.5);
        let pm = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let vals = DMatrix::from_row_slice(3, 2, &[7.0, 8.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(weighted_mean(&vals, &pm), DVector::from_vec(vec![7.0, 8.0]));
        let w = DVector::from_vec(vec![0.2, 0.8]);
        assert_abs_diff_eq!(weighted_mean(&col(&[0.0, 10.0]), &w)[0], 8.0, epsilon = 1e-12);
    }

    #[test]
    fn weighted_covariances() {
        let w = DVector::from_element(3, 1.0 / 3.0);
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert_eq!(weighted_covariance(&same, &w), DMatrix::zeros(2, 2));
        let w2 = DVector::from_element(2, 0.5);
        assert_abs_diff_eq!(weighted_covariance(&col(&[-1.0, 1.0]), &w2)[(0, 0)], 1.0);
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        assert_eq!(
            weighted_covariance(&v, &w2),
            DMatrix::from_element(2, 2, 1.0)
        );
        assert_abs_diff_eq!(weighted_std(&col(&[-1.0, 1.0]), &w2)[0], 1.0);
    }

    /// Brute-force midpoint CDF oracle for equal weights.
    fn equal_weight_oracle(sorted: &[f64], q: f64) -> f64 {
        let n = sorted.len() as f64;
        let pos = q * n - 0.5;
        if pos <= 0.0 {
            return sorted[0];
        }
        if pos >= n - 1.0 {
            return sorted[sorted.len() - 1];
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }

    #[test]
    fn quantiles_equal_weights() {
        let vals: Vec<f64> = (1..=100).map(f64::from).collect();
        let w = vec![0.01; 100];
        let q = weighted_quantile(&vals, &w, &[0.5]);
        assert_abs_diff_eq!(q[0], 50.5, epsilon = 1e-9);
        for &p in &[0.001, 0.025, 0.16, 0.33, 0.84, 0.975, 0.999] {
            let got = weighted_quantile(&vals, &w, &[p])[0];
            assert_abs_diff_eq!(got, equal_weight_oracle(&vals, p), epsilon = 1e-9);
        }
    }

    #[test]
    fn quantiles_point_mass_and_two_points() {
        let q = weighted_quantile(&[1.0, 5.0, 9.0], &[0.0, 1.0, 0.0], &[0.025, 0.5, 0.975]);
        assert_eq!(q, vec![5.0, 5.0, 5.0]);
        let q = weighted_quantile(&[0.0, 10.0], &[0.5, 0.5], &[0.25]);
        assert_eq!(q, vec![0.0]);
    }

    #[test]
    fn normalize_precision() {
        let mut w = DVector::from_iterator(1000, (0..1000).map(|i| 1.0 + (i as f64).sin().abs()));
        assert!(normalize(&mut w));
        assert!((w.sum() - 1.0).abs() <= 1e-12);
        let mut z = DVector::zeros(3);
        assert!(!normalize(&mut z));
    }

    #[test]
    fn log_weights_with_underflow() {
        let w = weights_from_log(&[-2000.0, -1000.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w[1], 1.0);
        assert_eq!(w[2], 0.0);
        assert!(weights_from_log(&[f64::NEG_INFINITY; 3]).is_none());
    }

    #[test]
    fn zero_covariance_draws_equal_mean() {
        let mut rng = RngStream::new(9).substream(0, Purpose::Init);
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let d = gaussian_draws(&mut rng, 5, &mean, &DMatrix::zeros(2, 2)).unwrap();
        for r in d.row_iter() {
            assert_eq!(r.transpose(), mean);
        }
    }

    #[test]
    fn factor_reconstructs_and_rejects_indefinite() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = psd_factor(&cov).unwrap();
        assert_abs_diff_eq!(&l * l.transpose(), cov, epsilon = 1e-12);
        let rank1 = DMatrix::from_element(2, 2, 1.0);
        let l = psd_factor(&rank1).unwrap();
        assert_abs_diff_eq!(&l * l.transpose(), rank1, epsilon = 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(psd_factor(&bad), Err(EnsembleError::CovarianceDegenerate));
    }

    #[test]
    fn scalar_draw_std() {
        let mut rng = RngStream::new(5).substream(0, Purpose::Init);
        let d = gaussian_draws(&mut rng, 100_000, &DVector::zeros(1), &DMatrix::from_element(1, 1, 4.0))
            .unwrap();
        let w = DVector::from_element(100_000, 1e-5);
        let s = weighted_std(&d, &w)[0];
        assert!((1.96..=2.04).contains(&s), "{s}");
    }

    #[test]
    fn diagonal_draws_uncorrelated() {
        let mut rng = RngStream::new(6).substream(0, Purpose::Init);
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0]));
        let n = 100_000;
        let d = gaussian_draws(&mut rng, n, &DVector::zeros(2), &cov).unwrap();
        let w = DVector::from_element(n, 1.0 / n as f64);
        let c = weighted_covariance(&d, &w);
        let rho = c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
        assert!(rho.abs() < 0.02, "{rho}");
    }
}
