//! Two-receiver ambient noise simulation and the two estimators compared on
//! it: whitened CCF stacking and a Bayesian inter-receiver response (MIR).
//!
//! Each source is band-limited Gaussian noise arriving from a random
//! azimuth θ. Receiver B records it through a plane-wave response over path
//! `d·cos θ` plus a common bulk delay, so the azimuth-averaged A→B response
//! has spectrum `A(f)·J₀(2πfd/c(f))·e^{−iωτ₀}`. Dispersion is read off by
//! fitting the real, delay-referenced spectrum of an estimate to J₀.

mod bessel;
mod dispersion;
mod sweep;

pub use bessel::bessel_j0;
pub use dispersion::{
    cell_misfit_map, dispersion_fit, track_ridge, velocity_error, BeamInput, DispersionFit, Grid,
    MisfitMap, CURVATURE_WEIGHT, MAX_JUMP,
};
pub use sweep::{
    arcsine_corrected_stats, ccf_stack, fit_mir, fit_mir_quantized, sweep_pairs, sweep_to_csv,
    CcfStack, SweepConfig, SweepRow,
};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::signal::{add_white_noise, convolve_slice, fft_real, ifft, Fir, Signal};

/// Phase velocity as a piecewise-linear function of frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionCurve {
    /// Hz, strictly increasing.
    pub freqs: Vec<f64>,
    /// m/s, positive.
    pub velocities: Vec<f64>,
}

impl DispersionCurve {
    pub fn new(freqs: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if freqs.is_empty() || freqs.len() != velocities.len() {
            return Err(invalid("dispersion curve needs matching, nonempty grids"));
        }
        if freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("dispersion frequencies must be strictly increasing"));
        }
        if velocities.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid("velocities must be positive"));
        }
        Ok(Self { freqs, velocities })
    }

    pub fn min_freq(&self) -> f64 {
        self.freqs[0]
    }

    pub fn max_freq(&self) -> f64 {
        *self.freqs.last().unwrap()
    }

    pub fn covers(&self, f: f64) -> bool {
        f >= self.min_freq() - 1e-12 && f <= self.max_freq() + 1e-12
    }

    /// Linear interpolation; clamps outside the grid.
    pub fn velocity_at(&self, f: f64) -> f64 {
        let fr = &self.freqs;
        if f <= fr[0] {
            return self.velocities[0];
        }
        let last = fr.len() - 1;
        if f >= fr[last] {
            return self.velocities[last];
        }
        let j = fr.partition_point(|&x| x <= f);
        let (f0, f1) = (fr[j - 1], fr[j]);
        let t = (f - f0) / (f1 - f0);
        self.velocities[j - 1] * (1.0 - t) + self.velocities[j] * t
    }

    pub fn min_velocity(&self) -> f64 {
        self.velocities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// 3000 m/s below 0.3 Hz falling linearly to 1500 m/s at 1.7 Hz.
    pub fn desk_default() -> Self {
        Self::new(vec![0.0, 0.3, 1.7, 2.0], vec![3000.0, 3000.0, 1500.0, 1500.0])
            .expect("valid constants")
    }

    pub fn constant(c: f64, f_max: f64) -> Result<Self> {
        Self::new(vec![0.0, f_max], vec![c, c])
    }
}

/// Flat passband `[lo, hi]` with raised-cosine edges of width `taper` (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub taper: f64,
}

impl Band {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo >= 0.0 && self.hi > self.lo && self.taper >= 0.0) {
            return Err(invalid("band needs 0 ≤ lo < hi and taper ≥ 0"));
        }
        Ok(())
    }

    pub fn amplitude(&self, f: f64) -> f64 {
        let f = f.abs();
        let w = self.taper;
        if f >= self.lo && f <= self.hi {
            1.0
        } else if w > 0.0 && f < self.lo && f > self.lo - w {
            0.5 - 0.5 * (std::f64::consts::PI * (f - (self.lo - w)) / w).cos()
        } else if w > 0.0 && f > self.hi && f < self.hi + w {
            0.5 + 0.5 * (std::f64::consts::PI * (f - self.hi) / w).cos()
        } else {
            0.0
        }
    }

    pub fn support(&self) -> (f64, f64) {
        ((self.lo - self.taper).max(0.0), self.hi + self.taper)
    }
}

fn nfft_for(n_taps: usize) -> usize {
    (4 * n_taps).next_power_of_two().max(512)
}

/// Real FIR from a one-sided transfer function sampled on the FFT grid.
/// Taps are lags `1..=n_taps`.
fn fir_from_half_spectrum(
    n_taps: usize,
    sample_rate: f64,
    h: impl Fn(f64) -> Complex64,
) -> Result<(Fir, f64)> {
    let nfft = nfft_for(n_taps);
    let half = nfft / 2;
    let mut spec = vec![Complex64::new(0.0, 0.0); nfft];
    for k in 0..=half {
        let f = k as f64 * sample_rate / nfft as f64;
        let mut v = h(f);
        if k == 0 || k == half {
            v = Complex64::new(v.re, 0.0);
        }
        spec[k] = v;
        if k != 0 && k != half {
            spec[nfft - k] = v.conj();
        }
    }
    let time = ifft(spec);
    let max_imag = time.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let taps = time[1..=n_taps].iter().map(|v| v.re).collect();
    Ok((Fir::new(taps)?, max_imag))
}

fn check_support(curve: &DispersionCurve, band: &Band, sample_rate: f64) -> Result<()> {
    band.validate()?;
    let (lo, hi) = band.support();
    let hi = hi.min(0.5 * sample_rate);
    if !(curve.covers(lo) && curve.covers(hi)) {
        return Err(invalid(format!(
            "dispersion curve [{}, {}] Hz does not cover band support [{lo}, {hi}] Hz",
            curve.min_freq(),
            curve.max_freq()
        )));
    }
    Ok(())
}

/// Plane-wave response `A(f)·exp(−i2πf·d/c(f))` over distance `d`.
pub fn dispersive_ir(
    curve: &DispersionCurve,
    band: &Band,
    d: f64,
    n_taps: usize,
    sample_rate: f64,
) -> Result<Fir> {
    plane_wave_ir(curve, band, d, 0.0, n_taps, sample_rate)
}

/// Plane wave over signed path `offset` (m), delayed by `delay` samples.
pub fn plane_wave_ir(
    curve: &DispersionCurve,
    band: &Band,
    offset: f64,
    delay: f64,
    n_taps: usize,
    sample_rate: f64,
) -> Result<Fir> {
    check_support(curve, band, sample_rate)?;
    let spread = offset.abs() / curve.min_velocity() * sample_rate;
    if delay + spread > n_taps as f64 {
        return Err(invalid(format!(
            "travel time of {:.3} samples exceeds {n_taps} taps",
            delay + spread
        )));
    }
    if offset < 0.0 && delay < spread {
        return Err(invalid("negative path offset exceeds the bulk delay"));
    }
    let (fir, _) = fir_from_half_spectrum(n_taps, sample_rate, |f| {
        let tt = offset / curve.velocity_at(f) + delay / sample_rate;
        Complex64::from_polar(band.amplitude(f), -2.0 * std::f64::consts::PI * f * tt)
    })?;
    Ok(fir)
}

/// Azimuth-averaged response `A(f)·J₀(2πfd/c(f))·e^{−iωτ₀}`.
pub fn diffuse_ir(
    curve: &DispersionCurve,
    band: &Band,
    d: f64,
    delay: f64,
    n_taps: usize,
    sample_rate: f64,
) -> Result<Fir> {
    check_support(curve, band, sample_rate)?;
    let (fir, _) = fir_from_half_spectrum(n_taps, sample_rate, |f| {
        let j = bessel_j0(2.0 * std::f64::consts::PI * f * d / curve.velocity_at(f));
        Complex64::from_polar(
            band.amplitude(f) * j,
            -2.0 * std::f64::consts::PI * f * delay / sample_rate,
        )
    })?;
    Ok(fir)
}

/// Largest imaginary residue of the inverse FFT in [`dispersive_ir`].
pub fn dispersive_ir_imag_residue(
    curve: &DispersionCurve,
    band: &Band,
    d: f64,
    n_taps: usize,
    sample_rate: f64,
) -> Result<f64> {
    check_support(curve, band, sample_rate)?;
    let (_, im) = fir_from_half_spectrum(n_taps, sample_rate, |f| {
        Complex64::from_polar(
            band.amplitude(f),
            -2.0 * std::f64::consts::PI * f * d / curve.velocity_at(f),
        )
    })?;
    Ok(im)
}

/// Desk-scale ambient noise experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AntScenario {
    /// Receiver distance (m).
    pub distance: f64,
    pub dispersion: DispersionCurve,
    pub band: Band,
    pub n_pairs: usize,
    pub sources_per_pair: usize,
    /// `f64::INFINITY` disables receiver noise.
    pub snr_db: f64,
    pub seed: u64,
    pub pair_length: usize,
    pub sample_rate: f64,
    pub n_taps: usize,
    /// Common delay (samples) that centres the response inside the taps.
    pub bulk_delay: usize,
}

impl Default for AntScenario {
    fn default() -> Self {
        Self {
            distance: 2500.0,
            dispersion: DispersionCurve::desk_default(),
            band: Band {
                lo: 0.3,
                hi: 1.7,
                taper: 0.3,
            },
            n_pairs: 200,
            sources_per_pair: 12,
            snr_db: 10.0,
            seed: 0,
            pair_length: 1024,
            sample_rate: 4.0,
            n_taps: 32,
            bulk_delay: 16,
        }
    }
}

impl AntScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return Err(invalid("ant.distance must be positive"));
        }
        if self.n_pairs == 0 {
            return Err(invalid("ant.n_pairs must be at least 1"));
        }
        if self.sources_per_pair == 0 {
            return Err(invalid("ant.sources_per_pair must be at least 1"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(invalid("ant.sample_rate must be positive"));
        }
        if self.n_taps == 0 || self.pair_length <= self.n_taps {
            return Err(invalid("ant.pair_length must exceed ant.n_taps ≥ 1"));
        }
        if self.snr_db.is_nan() {
            return Err(invalid("ant.snr_db must be a number"));
        }
        DispersionCurve::new(self.dispersion.freqs.clone(), self.dispersion.velocities.clone())?;
        // exercises the travel-time bounds for the extreme azimuths
        self.plane_wave(self.distance)?;
        self.plane_wave(-self.distance)?;
        Ok(())
    }

    pub fn plane_wave(&self, offset: f64) -> Result<Fir> {
        plane_wave_ir(
            &self.dispersion,
            &self.band,
            offset,
            self.bulk_delay as f64,
            self.n_taps,
            self.sample_rate,
        )
    }

    /// Azimuth-averaged inter-receiver response.
    pub fn medium_ir(&self) -> Result<Fir> {
        diffuse_ir(
            &self.dispersion,
            &self.band,
            self.distance,
            self.bulk_delay as f64,
            self.n_taps,
            self.sample_rate,
        )
    }

    /// One band-limited Gaussian source record of `pair_length` samples.
    fn source(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.pair_length;
        let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let spec = fft_real(&white);
        let shaped = spec
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let kk = if k <= n / 2 { k } else { n - k };
                v * self.band.amplitude(kk as f64 * self.sample_rate / n as f64)
            })
            .collect();
        let scale: f64 = rng.random_range(0.5..1.5);
        ifft(shaped).into_iter().map(|v| v.re * scale).collect()
    }
}

/// Receiver pairs `(A, B)`; pair `i` depends only on `(seed, i)`.
pub fn gen_ant_pairs(scenario: &AntScenario) -> Result<Vec<(Signal, Signal)>> {
    scenario.validate()?;
    (0..scenario.n_pairs)
        .into_par_iter()
        .map(|i| gen_pair(scenario, derive_seed(scenario.seed, i as u64)))
        .collect()
}

fn gen_pair(sc: &AntScenario, seed: u64) -> Result<(Signal, Signal)> {
    let mut rng = rng_from_seed(seed);
    let n = sc.pair_length;
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for _ in 0..sc.sources_per_pair {
        let s = sc.source(&mut rng);
        let theta: f64 = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        let ir = sc.plane_wave(sc.distance * theta.cos())?;
        for (x, v) in a.iter_mut().zip(&s) {
            *x += v;
        }
        for (x, v) in b.iter_mut().zip(convolve_slice(&s, ir.taps())) {
            *x += v;
        }
    }
    let na: u64 = rng.random();
    let nb: u64 = rng.random();
    let a = add_white_noise(&Signal::new(a, sc.sample_rate)?, sc.snr_db, na)?;
    let b = add_white_noise(&Signal::new(b, sc.sample_rate)?, sc.snr_db, nb)?;
    Ok((a, b))
}
