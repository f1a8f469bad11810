use rayon::prelude::*;

use super::{standard_normal_rows, DiagGaussian, KlPrior, Observation, TrainConfig};
use crate::error::{mismatch, Error, Result};
use crate::rng::derive_seed;
use crate::signal::Signal;

/// Sampled objective value and its exact gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboEval {
    pub loss: f64,
    pub grad_mean: Vec<f64>,
    pub grad_log_std: Vec<f64>,
}

/// `(1/R) Σ_r L(μ + σ⊙ε_r) + β·KL(q‖prior)` for the replicas `ε_r` in `noise`.
pub fn elbo<O, P>(
    obs: &O,
    q: &DiagGaussian,
    prior: &P,
    beta: f64,
    noise: &[Vec<f64>],
) -> Result<ElboEval>
where
    O: Observation + ?Sized,
    P: KlPrior + ?Sized,
{
    let d = q.dim();
    if obs.dim() != d || prior.dim() != d {
        return Err(mismatch(format!(
            "q dim {d}, observation dim {}, prior dim {}",
            obs.dim(),
            prior.dim()
        )));
    }
    if noise.is_empty() || noise.iter().any(|e| e.len() != d) {
        return Err(mismatch("noise must be a nonempty R×d matrix"));
    }
    let std = q.std();
    let per_replica: Vec<(f64, Vec<f64>)> = noise
        .par_iter()
        .with_min_len(8)
        .map(|eps| {
            let h: Vec<f64> = (0..d).map(|i| q.mean[i] + std[i] * eps[i]).collect();
            let mut g = vec![0.0; d];
            let l = obs.loss_grad(&h, &mut g);
            (l, g)
        })
        .collect();
    let inv_r = 1.0 / noise.len() as f64;
    let mut loss = 0.0;
    let mut grad_mean = vec![0.0; d];
    let mut grad_log_std = vec![0.0; d];
    // fixed-order reduction keeps results independent of thread scheduling
    for ((l, g), eps) in per_replica.iter().zip(noise) {
        loss += l * inv_r;
        for i in 0..d {
            grad_mean[i] += g[i] * inv_r;
            grad_log_std[i] += g[i] * eps[i] * std[i] * inv_r;
        }
    }
    if beta != 0.0 {
        let (kl, km, ks) = prior.kl_and_grads(q)?;
        loss += beta * kl;
        for i in 0..d {
            grad_mean[i] += beta * km[i];
            grad_log_std[i] += beta * ks[i];
        }
    }
    Ok(ElboEval {
        loss,
        grad_mean,
        grad_log_std,
    })
}

/// Objective for a single `(f, g)` pair with per-sample mean squared error,
/// i.e. `(1/R) Σ_r (1/n)||g − f * h_r||² + β·KL`. Without `fixed_noise` the
/// replicas are drawn from `cfg.seed`.
pub fn elbo_and_grads<P: KlPrior + ?Sized>(
    f: &Signal,
    g: &Signal,
    q: &DiagGaussian,
    prior: &P,
    cfg: &TrainConfig,
    fixed_noise: Option<&[Vec<f64>]>,
) -> Result<ElboEval> {
    let obs = super::ConvObservation::mse(f, g, q.dim())?;
    match fixed_noise {
        Some(noise) => elbo(&obs, q, prior, cfg.beta(), noise),
        None => {
            let noise = standard_normal_rows(cfg.batch_replicas, q.dim(), cfg.seed);
            elbo(&obs, q, prior, cfg.beta(), &noise)
        }
    }
}

/// `lr(t) = lr0 · ½(1 + cos(π t / steps))`.
pub fn cosine_lr(lr_init: f64, step: usize, steps: usize) -> f64 {
    let frac = step as f64 / steps.max(1) as f64;
    lr_init * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

/// Per-step losses recorded during optimization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    pub losses: Vec<f64>,
}

impl FitTrace {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }

    /// At most `max_points` evenly strided entries, always including the last.
    pub fn downsampled(&self, max_points: usize) -> Vec<f64> {
        let n = self.losses.len();
        if n <= max_points || max_points < 2 {
            return self.losses.clone();
        }
        let stride = n.div_ceil(max_points - 1);
        let mut out: Vec<f64> = self.losses.iter().step_by(stride).copied().collect();
        if !(n - 1).is_multiple_of(stride) {
            out.push(self.losses[n - 1]);
        }
        out
    }
}

/// Noise replicas for optimization step `step`.
pub(crate) fn step_noise(cfg: &TrainConfig, step: usize, dim: usize) -> Vec<Vec<f64>> {
    standard_normal_rows(cfg.batch_replicas, dim, derive_seed(cfg.seed, step as u64))
}

/// Minimizes `objective` over `(mean, log_std)` with Adam and a cosine
/// schedule. The objective receives the step index, which it may use to
/// select that step's noise replicas.
pub fn adam_cosine_fit<F>(
    mut objective: F,
    q0: DiagGaussian,
    cfg: &TrainConfig,
) -> Result<(DiagGaussian, FitTrace)>
where
    F: FnMut(&DiagGaussian, usize) -> Result<ElboEval>,
{
    cfg.validate()?;
    let d = q0.dim();
    let mut q = q0;
    let mut params: Vec<f64> = q.mean.iter().chain(&q.log_std).copied().collect();
    let mut opt = Adam::new(2 * d);
    let mut trace = FitTrace {
        losses: Vec::with_capacity(cfg.steps),
    };
    let mut grad = vec![0.0; 2 * d];
    for step in 0..cfg.steps {
        let ev = objective(&q, step)?;
        if !ev.loss.is_finite()
            || ev
                .grad_mean
                .iter()
                .chain(&ev.grad_log_std)
                .any(|g| !g.is_finite())
        {
            return Err(Error::Numerical(format!(
                "non-finite loss or gradient at step {step} (loss = {})",
                ev.loss
            )));
        }
        trace.losses.push(ev.loss);
        grad[..d].copy_from_slice(&ev.grad_mean);
        grad[d..].copy_from_slice(&ev.grad_log_std);
        opt.step(&mut params, &grad, cosine_lr(cfg.lr_init, step, cfg.steps));
        q.mean.copy_from_slice(&params[..d]);
        q.log_std.copy_from_slice(&params[d..]);
    }
    Ok((q, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vi::IsotropicPrior;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 100), 0.1);
        assert!(cosine_lr(0.1, 100, 100).abs() < 1e-15);
        assert!((cosine_lr(0.1, 50, 100) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn downsample_keeps_last() {
        let t = FitTrace {
            losses: (0..1000).map(|v| v as f64).collect(),
        };
        let d = t.downsampled(100);
        assert!(d.len() <= 101);
        assert_eq!(*d.last().unwrap(), 999.0);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let cfg = TrainConfig {
            steps: 10,
            ..TrainConfig::default()
        };
        let q0 = DiagGaussian::constant(2, 0.0, 0.0);
        let err = adam_cosine_fit(
            |_, step| {
                Ok(ElboEval {
                    loss: if step == 3 { f64::NAN } else { 1.0 },
                    grad_mean: vec![0.0; 2],
                    grad_log_std: vec![0.0; 2],
                })
            },
            q0,
            &cfg,
        )
        .unwrap_err();
        assert!(err.to_string().contains("step 3"), "{err}");
    }

    #[test]
    fn zero_residual_at_prior_leaves_kl_gradient() {
        let f = Signal::new(vec![0.0; 16], 1.0).unwrap();
        let p = IsotropicPrior::new(0.5, 3).unwrap();
        let q = DiagGaussian::constant(3, 0.0, 0.5f64.ln());
        let cfg = TrainConfig::default();
        let ev = elbo_and_grads(&f, &f, &q, &p, &cfg, None).unwrap();
        assert!(ev.loss.abs() < 1e-12);
        assert!(ev.grad_mean.iter().chain(&ev.grad_log_std).all(|g| g.abs() < 1e-12));
    }
}
