//! Monte Carlo estimators used to check closed-form moments and divergences.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, mismatch, Result};
use crate::rng::rng_from_seed;
use crate::stats::{jittered_cholesky, regressor, CrossTimeCov, PosteriorIR};
use crate::vi::DiagGaussian;

/// Sample mean of some statistic with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

impl McEstimate {
    fn from_draws(draws: &[f64]) -> Self {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            value: mean,
            std_error: (var / n).sqrt(),
        }
    }

    /// Whether `target` lies within `k` standard errors. A tiny absolute
    /// slack absorbs the degenerate zero-variance case.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error + 1e-12 * target.abs().max(1e-300)
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(invalid("Monte Carlo needs at least 2 samples"));
    }
    Ok(())
}

fn draw(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut *rng)))
}

/// Mean and variance of `g[n] = hᵀ f[n]` with `h` drawn from `post`.
///
/// The variance estimate averages `(g − μᵀf[n])²`, which is unbiased
/// because the mean is known.
pub fn mc_output_moments(
    f: &[f64],
    post: &PosteriorIR,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<(McEstimate, McEstimate)> {
    check_samples(samples)?;
    if n >= f.len() {
        return Err(invalid(format!("time {n} out of range for length {}", f.len())));
    }
    let p = post.p();
    let l = post.sampling_factor()?;
    let r = regressor(f, n, p);
    let centre = post.mean.dot(&r);
    let lr = l.transpose() * &r;
    let mut rng = rng_from_seed(seed);
    let mut means = Vec::with_capacity(samples);
    let mut sq = Vec::with_capacity(samples);
    for _ in 0..samples {
        let dev = draw(&mut rng, p).dot(&lr);
        means.push(centre + dev);
        sq.push(dev * dev);
    }
    Ok((McEstimate::from_draws(&means), McEstimate::from_draws(&sq)))
}

/// `Cov[g[n], g[m]]` by sampling the joint fluctuation `(E[n], E[m])`.
pub fn mc_output_covariance(
    f: &[f64],
    cov: &CrossTimeCov,
    n: usize,
    m: usize,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_samples(samples)?;
    if n >= f.len() || m >= f.len() {
        return Err(invalid(format!("times ({n}, {m}) out of range for length {}", f.len())));
    }
    let p = cov.p();
    let mut joint = DMatrix::zeros(2 * p, 2 * p);
    let times = [n, m];
    for (a, &ta) in times.iter().enumerate() {
        for (b, &tb) in times.iter().enumerate() {
            for k in 0..p {
                for l in 0..p {
                    joint[(a * p + k, b * p + l)] = cov.entry(ta, tb, k, l);
                }
            }
        }
    }
    let chol = jittered_cholesky(&joint)?;
    let rn = regressor(f, n, p);
    let rm = regressor(f, m, p);
    let mut rng = rng_from_seed(seed);
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let e = &chol * draw(&mut rng, 2 * p);
            e.rows(0, p).dot(&rn) * e.rows(p, p).dot(&rm)
        })
        .collect();
    Ok(McEstimate::from_draws(&draws))
}

/// `KL(q ‖ N(mean, cov))` as the sample mean of `log q − log p` under `q`.
pub fn mc_kl_gaussian(
    q: &DiagGaussian,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_samples(samples)?;
    let d = q.dim();
    if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
        return Err(mismatch("prior dimension differs from q"));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| invalid("prior covariance is not positive definite"))?;
    let logdet_p: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let logdet_q: f64 = 2.0 * q.log_std.iter().sum::<f64>();
    let std = q.std();
    let mut rng = rng_from_seed(seed);
    let draws: Vec<f64> = (0..samples)
        .map(|_| {
            let eps = draw(&mut rng, d);
            let x = DVector::from_iterator(d, (0..d).map(|i| q.mean[i] + std[i] * eps[i]));
            let diff = &x - mean;
            let maha = diff.dot(&chol.solve(&diff));
            // the 2π terms cancel between the two densities
            -0.5 * (eps.norm_squared() + logdet_q) + 0.5 * (maha + logdet_p)
        })
        .collect();
    Ok(McEstimate::from_draws(&draws))
}

/// Central finite-difference gradient.
pub fn finite_difference_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a − b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
