//! Mean-field Gaussian variational inference for models that are linear in
//! their parameters.

mod adam;
mod kl;
mod obs;

pub(crate) use adam::step_noise;
pub use adam::{adam_cosine_fit, cosine_lr, elbo, elbo_and_grads, Adam, ElboEval, FitTrace};
pub use kl::{kl_to_full_gaussian, kl_to_isotropic, FullGaussianPrior, IsotropicPrior, KlPrior};
pub use obs::{ConvObservation, GramObservation, Observation};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Diagonal Gaussian `N(mean, diag(exp(log_std))²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(crate::error::mismatch("mean and log_std lengths differ"));
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(invalid("variational parameters must be finite"));
        }
        Ok(Self { mean, log_std })
    }

    pub fn constant(dim: usize, mean: f64, log_std: f64) -> Self {
        Self {
            mean: vec![mean; dim],
            log_std: vec![log_std; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }
}

/// `n` reparameterized draws, one per row.
pub fn sample(q: &DiagGaussian, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let std = q.std();
    Ok(standard_normal_rows(n, q.dim(), seed)
        .into_iter()
        .map(|eps| {
            eps.iter()
                .zip(&q.mean)
                .zip(&std)
                .map(|((e, m), s)| m + s * e)
                .collect()
        })
        .collect())
}

/// `n × d` matrix of independent standard normals. Row `i` comes from its own
/// child stream, so rows can be regenerated independently.
pub fn standard_normal_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()
        })
        .collect()
}

/// Optimizer and objective settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_replicas: usize,
    pub lr_init: f64,
    /// Weight of the KL term; `None` means `1 / batch_replicas`.
    pub kl_weight: Option<f64>,
    pub seed: u64,
    pub log_std_init: f64,
    pub mean_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_replicas: 256,
            lr_init: 0.02,
            kl_weight: None,
            seed: 0,
            log_std_init: -3.0,
            mean_init: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn beta(&self) -> f64 {
        self.kl_weight
            .unwrap_or(1.0 / self.batch_replicas.max(1) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid("train.steps must be at least 1"));
        }
        if self.batch_replicas == 0 {
            return Err(invalid("train.batch_replicas must be at least 1"));
        }
        if !(self.lr_init.is_finite() && self.lr_init > 0.0) {
            return Err(invalid("train.lr_init must be positive"));
        }
        if let Some(b) = self.kl_weight {
            if !(b.is_finite() && b >= 0.0) {
                return Err(invalid("train.kl_weight must be nonnegative"));
            }
        }
        if !self.log_std_init.is_finite() || !self.mean_init.is_finite() {
            return Err(invalid("train initial values must be finite"));
        }
        Ok(())
    }

    pub fn initial(&self, dim: usize) -> DiagGaussian {
        DiagGaussian::constant(dim, self.mean_init, self.log_std_init)
    }
}
