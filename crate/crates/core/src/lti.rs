//! Bayesian FIR regression from one or more `(input, output)` pairs.
//!
//! Each pair contributes its mean squared reconstruction error, so pairs of
//! different lengths carry equal weight. Optimization runs on the pairs'
//! sufficient statistics; the convolution route in `vi` evaluates the same
//! objective and is used to cross-check it.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::derive_seed;
use crate::signal::{
    convolve_slice, frequency_response, xcorr_fft, Fir, LagSeries, Signal,
};
use crate::vi::{
    adam_cosine_fit, elbo, sample, step_noise, DiagGaussian, FitTrace, GramObservation, IsotropicPrior,
    TrainConfig,
};

/// Posterior over a time-invariant FIR.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiFit {
    pub p: usize,
    pub posterior: DiagGaussian,
    pub trace: FitTrace,
    pub config: TrainConfig,
}

impl LtiFit {
    pub fn mean(&self) -> &[f64] {
        &self.posterior.mean
    }

    pub fn std(&self) -> Vec<f64> {
        self.posterior.std()
    }

    pub fn mean_fir(&self) -> Fir {
        Fir::new(self.posterior.mean.clone()).expect("finite posterior mean")
    }

    pub fn to_json(&self) -> LtiFitJson {
        LtiFitJson {
            p: self.p,
            mean: self.posterior.mean.clone(),
            std: self.std(),
            config: self.config.clone(),
            final_loss: self.trace.final_loss(),
            trace_downsampled: self.trace.downsampled(TRACE_POINTS),
        }
    }
}

pub const TRACE_POINTS: usize = 200;

/// Serialized form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiFitJson {
    pub p: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub config: TrainConfig,
    pub final_loss: f64,
    pub trace_downsampled: Vec<f64>,
}

impl LtiFitJson {
    pub fn posterior(&self) -> Result<DiagGaussian> {
        if self.std.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("fit std entries must be positive"));
        }
        DiagGaussian::new(self.mean.clone(), self.std.iter().map(|s| s.ln()).collect())
    }
}

fn check_pairs(pairs: &[(Signal, Signal)], p: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(invalid("at least one (input, output) pair is required"));
    }
    if p == 0 {
        return Err(invalid("tap count p must be at least 1"));
    }
    for (i, (f, g)) in pairs.iter().enumerate() {
        if f.len() != g.len() {
            return Err(invalid(format!(
                "pair {i}: input length {} differs from output length {}",
                f.len(),
                g.len()
            )));
        }
        if f.power() == 0.0 {
            return Err(invalid(format!("pair {i}: input has zero power")));
        }
    }
    Ok(())
}

/// Sum over pairs of the `1/n`-weighted sufficient statistics.
pub fn pooled_stats(pairs: &[(Signal, Signal)], p: usize) -> Result<GramObservation> {
    check_pairs(pairs, p)?;
    let mut acc = GramObservation::zeros(p);
    for (f, g) in pairs {
        acc.add(&GramObservation::from_pair(f, g, p, 1.0 / f.len() as f64)?);
    }
    Ok(acc)
}

/// Fits the posterior with prior `N(0, I/p)`.
pub fn fit_lti(pairs: &[(Signal, Signal)], p: usize, cfg: &TrainConfig) -> Result<LtiFit> {
    let stats = pooled_stats(pairs, p)?;
    fit_lti_stats(&stats, cfg)
}

/// Fits from precomputed statistics.
pub fn fit_lti_stats(stats: &GramObservation, cfg: &TrainConfig) -> Result<LtiFit> {
    cfg.validate()?;
    let p = stats.p();
    if p == 0 {
        return Err(invalid("tap count p must be at least 1"));
    }
    let prior = IsotropicPrior::new(1.0 / (p as f64).sqrt(), p)?;
    let beta = cfg.beta();
    let (posterior, trace) = adam_cosine_fit(
        |q, step| elbo(stats, q, &prior, beta, &step_noise(cfg, step, p)),
        cfg.initial(p),
        cfg,
    )?;
    Ok(LtiFit {
        p,
        posterior,
        trace,
        config: cfg.clone(),
    })
}

/// Normal-equations least-squares FIR over all pairs (equal per-pair weight).
pub fn least_squares_fir(pairs: &[(Signal, Signal)], p: usize) -> Result<Fir> {
    let stats = pooled_stats(pairs, p)?;
    least_squares_from_stats(&stats, 0.0)
}

/// Solves `(G + λI) h = b`.
pub fn least_squares_from_stats(stats: &GramObservation, ridge: f64) -> Result<Fir> {
    let p = stats.p();
    let a = &stats.gram + DMatrix::identity(p, p) * ridge;
    let h = a
        .clone()
        .cholesky()
        .map(|c| c.solve(&stats.cross))
        .or_else(|| a.lu().solve(&stats.cross))
        .ok_or_else(|| crate::error::Error::Numerical("singular normal equations".into()))?;
    Fir::new(h.as_slice().to_vec())
}

/// Posterior predictive samples with pointwise moments.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn sample_moments(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let len = samples[0].len();
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; len];
    if samples.len() > 1 {
        for s in samples {
            for ((a, v), m) in var.iter_mut().zip(s).zip(&mean) {
                *a += (v - m) * (v - m) / (n - 1.0);
            }
        }
    }
    (mean, var.into_iter().map(f64::sqrt).collect())
}

/// Draws `h_i` from the posterior and returns `f * h_i` for each.
pub fn posterior_predict(fit: &LtiFit, f: &Signal, n_samples: usize, seed: u64) -> Result<Prediction> {
    let taps = sample(&fit.posterior, n_samples, seed)?;
    let samples: Vec<Vec<f64>> = taps.iter().map(|h| convolve_slice(f.samples(), h)).collect();
    let (mean, std) = sample_moments(&samples);
    Ok(Prediction {
        samples,
        mean,
        std,
    })
}

/// Posterior cross-correlation between input and output.
#[derive(Debug, Clone)]
pub struct CcfPosterior {
    pub max_lag: usize,
    pub samples: Vec<LagSeries>,
    pub mean: LagSeries,
    pub std: LagSeries,
}

struct Autocorr {
    max_lag: usize,
    values: LagSeries,
}

impl Autocorr {
    fn new(f: &Signal, max_lag: usize) -> Self {
        let lag = max_lag.min(f.len() - 1);
        Self {
            max_lag: lag,
            values: LagSeries {
                max_lag: lag,
                values: xcorr_fft(f.samples(), f.samples(), lag),
            },
        }
    }

    fn at(&self, l: i64) -> f64 {
        if l.unsigned_abs() as usize > self.max_lag {
            0.0
        } else {
            self.values.at(l)
        }
    }

    /// `Σ_k h_k R_ff[l − k]` for `l ∈ [−max_lag, max_lag]`.
    fn filtered(&self, h: &[f64], max_lag: usize) -> LagSeries {
        let m = max_lag as i64;
        LagSeries {
            max_lag,
            values: (-m..=m)
                .map(|l| {
                    h.iter()
                        .enumerate()
                        .map(|(k, hk)| hk * self.at(l - (k as i64 + 1)))
                        .sum()
                })
                .collect(),
        }
    }
}

fn check_lag(f: &Signal, max_lag: usize) -> Result<()> {
    if max_lag >= f.len() {
        return Err(invalid(format!(
            "max_lag {max_lag} must be below signal length {}",
            f.len()
        )));
    }
    Ok(())
}

/// `(f ⊗ g)[l] = Σ_k h_k R_ff[l − k]` where `R_ff` is the input
/// autocorrelation, evaluated for posterior draws of `h`.
pub fn posterior_ccf(
    fit: &LtiFit,
    f: &Signal,
    max_lag: usize,
    n_samples: usize,
    seed: u64,
) -> Result<CcfPosterior> {
    check_lag(f, max_lag)?;
    let ac = Autocorr::new(f, max_lag + fit.p);
    let samples: Vec<LagSeries> = sample(&fit.posterior, n_samples, seed)?
        .iter()
        .map(|h| ac.filtered(h, max_lag))
        .collect();
    let raw: Vec<Vec<f64>> = samples.iter().map(|s| s.values.clone()).collect();
    let (mean, std) = sample_moments(&raw);
    Ok(CcfPosterior {
        max_lag,
        samples,
        mean: LagSeries {
            max_lag,
            values: mean,
        },
        std: LagSeries {
            max_lag,
            values: std,
        },
    })
}

/// Closed-form CCF of a fixed FIR, `(f ⊗ f) ∗ h`.
pub fn ccf_of_fir(f: &Signal, h: &[f64], max_lag: usize) -> Result<LagSeries> {
    check_lag(f, max_lag)?;
    Ok(Autocorr::new(f, max_lag + h.len()).filtered(h, max_lag))
}

/// Posterior summaries of the transfer function on [0, Nyquist].
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponsePosterior {
    pub frequencies: Vec<f64>,
    pub magnitude_mean: Vec<f64>,
    pub magnitude_std: Vec<f64>,
    pub magnitude_lo: Vec<f64>,
    pub magnitude_hi: Vec<f64>,
    pub phase_mean: Vec<f64>,
    pub phase_std: Vec<f64>,
    pub phase_lo: Vec<f64>,
    pub phase_hi: Vec<f64>,
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    }
}

fn unwrap_phase(ph: &mut [f64]) {
    let tau = 2.0 * std::f64::consts::PI;
    for i in 1..ph.len() {
        let mut d = ph[i] - ph[i - 1];
        while d > std::f64::consts::PI {
            ph[i] -= tau;
            d -= tau;
        }
        while d < -std::f64::consts::PI {
            ph[i] += tau;
            d += tau;
        }
    }
}

/// Magnitude and unwrapped phase statistics over posterior draws; bands are
/// empirical 2.5 / 97.5 percentiles, and the std fields give ±2σ bands.
pub fn posterior_frequency_response(
    fit: &LtiFit,
    n_freqs: usize,
    n_samples: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<FrequencyResponsePosterior> {
    let draws = sample(&fit.posterior, n_samples, seed)?;
    let mut mags = Vec::with_capacity(n_samples);
    let mut phases = Vec::with_capacity(n_samples);
    let mut frequencies = Vec::new();
    for h in &draws {
        let spec = frequency_response(&Fir::new(h.clone())?, n_freqs, sample_rate)?;
        let mut ph: Vec<f64> = spec.values.iter().map(|v| v.arg()).collect();
        unwrap_phase(&mut ph);
        mags.push(spec.values.iter().map(|v| v.norm()).collect::<Vec<_>>());
        phases.push(ph);
        frequencies = spec.frequencies;
    }
    let (magnitude_mean, magnitude_std) = sample_moments(&mags);
    let (phase_mean, phase_std) = sample_moments(&phases);
    let band = |rows: &[Vec<f64>], q: f64| -> Vec<f64> {
        (0..n_freqs)
            .map(|j| {
                let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                col.sort_by(|a, b| a.total_cmp(b));
                quantile_sorted(&col, q)
            })
            .collect()
    };
    Ok(FrequencyResponsePosterior {
        frequencies,
        magnitude_lo: band(&mags, 0.025),
        magnitude_hi: band(&mags, 0.975),
        phase_lo: band(&phases, 0.025),
        phase_hi: band(&phases, 0.975),
        magnitude_mean,
        magnitude_std,
        phase_mean,
        phase_std,
    })
}

/// Root mean squared difference between two equal-length vectors.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    rmse(a, b).powi(2)
}

/// Synthetic single-experiment fixture: white input, known FIR, noisy output.
#[derive(Debug, Clone)]
pub struct LtiFixture {
    pub input: Signal,
    pub clean: Signal,
    pub observed: Signal,
    pub truth: Fir,
}

/// Decaying random FIR with unit-scale leading taps.
pub fn random_fir(p: usize, seed: u64) -> Result<Fir> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = crate::rng::rng_from_seed(seed);
    let taps = (0..p)
        .map(|k| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * (-(k as f64) / (p as f64 / 3.0)).exp() * 0.5
        })
        .collect();
    Fir::new(taps)
}

pub fn lti_fixture(
    n: usize,
    truth: Fir,
    snr_db: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<LtiFixture> {
    let input = crate::signal::white_noise(n, 1.0, sample_rate, derive_seed(seed, 0))?;
    lti_fixture_from_input(input, truth, snr_db, derive_seed(seed, 1))
}

pub fn lti_fixture_from_input(
    input: Signal,
    truth: Fir,
    snr_db: f64,
    seed: u64,
) -> Result<LtiFixture> {
    let clean = crate::signal::convolve(&input, &truth);
    let observed = crate::signal::add_white_noise(&clean, snr_db, seed)?;
    Ok(LtiFixture {
        input,
        clean,
        observed,
        truth,
    })
}

/// Least-squares taps as a column vector, used by tests and metrics.
pub fn as_vector(h: &Fir) -> DVector<f64> {
    DVector::from_column_slice(h.taps())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_endpoints() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let fit = LtiFit {
            p: 2,
            posterior: DiagGaussian::new(vec![0.5, -0.1], vec![-2.0, -3.0]).unwrap(),
            trace: FitTrace {
                losses: vec![3.0, 2.0, 1.0],
            },
            config: TrainConfig::default(),
        };
        let j = fit.to_json();
        let back = j.posterior().unwrap();
        assert_eq!(back.mean, fit.posterior.mean);
        for (a, b) in back.log_std.iter().zip(&fit.posterior.log_std) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(j.final_loss, 1.0);
    }

    #[test]
    fn rejects_degenerate_pairs() {
        let z = Signal::new(vec![0.0; 32], 1.0).unwrap();
        assert!(fit_lti(&[(z.clone(), z.clone())], 4, &TrainConfig::default()).is_err());
        assert!(fit_lti(&[], 4, &TrainConfig::default()).is_err());
    }
}
