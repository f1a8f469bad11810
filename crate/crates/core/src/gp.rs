//! RBF Gaussian-process priors over tap trajectories inside a window.
//!
//! Parameters of a window are laid out tap-major: entry `k·W + i` is tap `k`
//! at window time `i`. Taps are independent a priori, so the prior
//! covariance is block diagonal with one `W×W` RBF block per tap.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::vi::{DiagGaussian, FullGaussianPrior, KlPrior};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbfKernelSpec {
    /// In time steps.
    pub lengthscale: f64,
    pub variance: f64,
    /// Diagonal jitter; `None` means `1e-8 · variance`.
    #[serde(default)]
    pub jitter: Option<f64>,
}

impl RbfKernelSpec {
    pub fn new(lengthscale: f64, variance: f64) -> Self {
        Self {
            lengthscale,
            variance,
            jitter: None,
        }
    }

    pub fn jitter(&self) -> f64 {
        self.jitter.unwrap_or(1e-8 * self.variance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale.is_finite() && self.lengthscale > 0.0) {
            return Err(invalid("kernel.lengthscale must be positive"));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(invalid("kernel.variance must be positive"));
        }
        if !(self.jitter().is_finite() && self.jitter() >= 0.0) {
            return Err(invalid("kernel.jitter must be nonnegative"));
        }
        Ok(())
    }

    pub fn eval(&self, offset: f64) -> f64 {
        self.variance * (-offset * offset / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// Gram matrix with the jitter that made it factorizable.
#[derive(Debug, Clone)]
pub struct GramFactor {
    pub gram: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

const JITTER_RETRIES: usize = 3;

/// `K[i,j] = σ² exp(−(i−j)²/(2ℓ²)) + jitter·δ[i,j]`, factorized by Cholesky.
/// On failure the jitter grows tenfold, up to three times.
pub fn rbf_gram(spec: &RbfKernelSpec, w: usize) -> Result<GramFactor> {
    spec.validate()?;
    if w == 0 {
        return Err(invalid("window length must be at least 1"));
    }
    let base = DMatrix::from_fn(w, w, |i, j| spec.eval(i as f64 - j as f64));
    let mut jitter = spec.jitter();
    for attempt in 0..=JITTER_RETRIES {
        let mut k = base.clone();
        for i in 0..w {
            k[(i, i)] += jitter;
        }
        if let Some(c) = k.clone().cholesky() {
            return Ok(GramFactor {
                gram: k,
                factor: c.l(),
                jitter,
            });
        }
        if attempt < JITTER_RETRIES {
            jitter = if jitter > 0.0 {
                jitter * 10.0
            } else {
                1e-8 * spec.variance
            };
        }
    }
    Err(Error::Numerical(format!(
        "RBF Gram (ℓ = {}, W = {w}) not factorizable with jitter up to {jitter:e}",
        spec.lengthscale
    )))
}

/// Zero-mean GP prior over `W·p` window parameters.
#[derive(Debug, Clone)]
pub struct GPWindowPrior {
    window: usize,
    taps: usize,
    kernel: RbfKernelSpec,
    gram: GramFactor,
    block: FullGaussianPrior,
}

impl GPWindowPrior {
    pub fn new(kernel: RbfKernelSpec, window: usize, taps: usize) -> Result<Self> {
        if taps == 0 {
            return Err(invalid("tap count must be at least 1"));
        }
        let gram = rbf_gram(&kernel, window)?;
        let block = FullGaussianPrior::new(DVector::zeros(window), gram.factor.clone())?;
        Ok(Self {
            window,
            taps,
            kernel,
            gram,
            block,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn kernel(&self) -> &RbfKernelSpec {
        &self.kernel
    }

    pub fn gram(&self) -> &GramFactor {
        &self.gram
    }

    pub fn block(&self) -> &FullGaussianPrior {
        &self.block
    }

    fn tap_block(&self, q: &DiagGaussian, k: usize) -> DiagGaussian {
        let r = k * self.window..(k + 1) * self.window;
        DiagGaussian {
            mean: q.mean[r.clone()].to_vec(),
            log_std: q.log_std[r].to_vec(),
        }
    }

    fn check(&self, q: &DiagGaussian) -> Result<()> {
        if q.dim() != self.window * self.taps {
            return Err(mismatch(format!(
                "q has dim {} but the window prior has W·p = {}",
                q.dim(),
                self.window * self.taps
            )));
        }
        Ok(())
    }
}

/// Sum over taps of the per-block KL divergences.
pub fn window_kl(q: &DiagGaussian, prior: &GPWindowPrior) -> Result<f64> {
    prior.kl(q)
}

impl KlPrior for GPWindowPrior {
    fn dim(&self) -> usize {
        self.window * self.taps
    }

    fn kl(&self, q: &DiagGaussian) -> Result<f64> {
        self.check(q)?;
        (0..self.taps)
            .map(|k| self.block.kl(&self.tap_block(q, k)))
            .sum()
    }

    fn kl_and_grads(&self, q: &DiagGaussian) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check(q)?;
        let mut kl = 0.0;
        let mut gm = Vec::with_capacity(q.dim());
        let mut gs = Vec::with_capacity(q.dim());
        for k in 0..self.taps {
            let (v, m, s) = self.block.kl_and_grads(&self.tap_block(q, k))?;
            kl += v;
            gm.extend(m);
            gs.extend(s);
        }
        Ok((kl, gm, gs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_is_variance_plus_jitter() {
        let spec = RbfKernelSpec {
            lengthscale: 3.0,
            variance: 0.7,
            jitter: Some(1e-6),
        };
        let g = rbf_gram(&spec, 10).unwrap();
        for i in 0..10 {
            assert_eq!(g.gram[(i, i)], 0.7 + 1e-6);
        }
    }

    #[test]
    fn default_jitter_scales_with_variance() {
        assert_eq!(RbfKernelSpec::new(2.0, 4.0).jitter(), 4e-8);
    }

    #[test]
    fn invalid_specs() {
        assert!(rbf_gram(&RbfKernelSpec::new(0.0, 1.0), 4).is_err());
        assert!(rbf_gram(&RbfKernelSpec::new(1.0, -1.0), 4).is_err());
        assert!(rbf_gram(&RbfKernelSpec::new(1.0, 1.0), 0).is_err());
    }

    #[test]
    fn single_tap_matches_full_gaussian() {
        let prior = GPWindowPrior::new(RbfKernelSpec::new(4.0, 0.5), 8, 1).unwrap();
        let q = DiagGaussian::new(
            (0..8).map(|i| 0.1 * i as f64).collect(),
            vec![-1.0; 8],
        )
        .unwrap();
        let a = window_kl(&q, &prior).unwrap();
        let b = crate::vi::kl_to_full_gaussian(&q, &DVector::zeros(8), &prior.gram().factor)
            .unwrap();
        assert_eq!(a, b);
    }
}
