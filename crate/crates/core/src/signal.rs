//! Signal primitives: causal FIR convolution (taps start at lag one),
//! correlation, Welch spectra, whitening, quantization and noise injection.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, mismatch, Error, Result};
use crate::rng::rng_from_seed;

/// Uniformly sampled real time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("signal must have at least one sample"));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(invalid(format!("sample_rate must be positive, got {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean power, (1/n) Σ x².
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    // Internal constructor for outputs derived from an already valid signal.
    pub(crate) fn derived(&self, samples: Vec<f64>) -> Signal {
        debug_assert!(samples.iter().all(|x| x.is_finite()));
        Signal {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Causal FIR filter; `taps[k - 1]` multiplies `f[n - k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fir {
    taps: Vec<f64>,
}

impl Fir {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("FIR must have at least one tap"));
        }
        if taps.iter().any(|x| !x.is_finite()) {
            return Err(invalid("FIR taps must be finite"));
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Complex spectrum on a strictly increasing frequency grid (Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub values: Vec<Complex64>,
}

/// Real, nonnegative spectral density on a frequency grid (Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn new(frequencies: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        check_grid(&frequencies, values.len())?;
        Ok(Self {
            frequencies,
            values,
        })
    }
}

impl PowerSpectrum {
    pub fn new(frequencies: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_grid(&frequencies, values.len())?;
        Ok(Self {
            frequencies,
            values,
        })
    }
}

fn check_grid(freqs: &[f64], n_values: usize) -> Result<()> {
    if freqs.len() != n_values {
        return Err(mismatch(format!(
            "{} frequencies for {} values",
            freqs.len(),
            n_values
        )));
    }
    if freqs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("frequency grid must be strictly increasing"));
    }
    Ok(())
}

/// Real sequence indexed by lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSeries {
    pub max_lag: usize,
    pub values: Vec<f64>,
}

impl LagSeries {
    pub fn at(&self, lag: i64) -> f64 {
        self.values[(lag + self.max_lag as i64) as usize]
    }

    pub fn lags(&self) -> impl Iterator<Item = i64> + '_ {
        let m = self.max_lag as i64;
        -m..=m
    }
}

/// `out[n] = Σ_{k=1..p} h[k] f[n-k]`, zero history, same length as `f`.
pub fn convolve(f: &Signal, h: &Fir) -> Signal {
    f.derived(convolve_slice(f.samples(), h.taps()))
}

pub(crate) fn convolve_slice(f: &[f64], h: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    for (k, &hk) in h.iter().enumerate() {
        let lag = k + 1;
        if lag >= n {
            break;
        }
        for (o, &x) in out[lag..].iter_mut().zip(f) {
            *o += hk * x;
        }
    }
    out
}

/// Time-varying convolution with tap row `rows[n]` applied at sample `n`.
pub fn convolve_ltv(f: &Signal, rows: &[Vec<f64>]) -> Result<Signal> {
    if rows.len() != f.len() {
        return Err(mismatch(format!(
            "{} tap rows for a signal of length {}",
            rows.len(),
            f.len()
        )));
    }
    let x = f.samples();
    let out = rows
        .iter()
        .enumerate()
        .map(|(n, row)| {
            row.iter()
                .enumerate()
                .take(n)
                .map(|(k, hk)| hk * x[n - k - 1])
                .sum()
        })
        .collect();
    Ok(f.derived(out))
}

/// `c[l] = Σ_n f[n] g[n + l]` for `l ∈ [-max_lag, max_lag]`, via FFT.
pub fn cross_correlate(f: &Signal, g: &Signal, max_lag: usize) -> Result<LagSeries> {
    check_xcorr(f, g, max_lag)?;
    Ok(LagSeries {
        max_lag,
        values: xcorr_fft(f.samples(), g.samples(), max_lag),
    })
}

/// Direct O(n·L) evaluation of [`cross_correlate`].
pub fn cross_correlate_direct(f: &Signal, g: &Signal, max_lag: usize) -> Result<LagSeries> {
    check_xcorr(f, g, max_lag)?;
    Ok(LagSeries {
        max_lag,
        values: xcorr_direct(f.samples(), g.samples(), max_lag),
    })
}

fn check_xcorr(f: &Signal, g: &Signal, max_lag: usize) -> Result<()> {
    if (f.sample_rate() - g.sample_rate()).abs() > 1e-12 * f.sample_rate() {
        return Err(invalid("cross-correlation needs equal sample rates"));
    }
    if max_lag >= f.len().max(g.len()) {
        return Err(invalid(format!(
            "max_lag {max_lag} must be below signal length {}",
            f.len().max(g.len())
        )));
    }
    Ok(())
}

pub(crate) fn xcorr_direct(f: &[f64], g: &[f64], max_lag: usize) -> Vec<f64> {
    let m = max_lag as i64;
    (-m..=m)
        .map(|l| {
            let mut acc = 0.0;
            for (n, &fv) in f.iter().enumerate() {
                let j = n as i64 + l;
                if j >= 0 && (j as usize) < g.len() {
                    acc += fv * g[j as usize];
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn xcorr_fft(f: &[f64], g: &[f64], max_lag: usize) -> Vec<f64> {
    // long enough that no requested lag wraps onto the other side's support
    let size = (f.len() + g.len())
        .max(f.len().max(g.len()) + max_lag + 1)
        .next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a = padded(f, size);
    let mut b = padded(g, size);
    fwd.process(&mut a);
    fwd.process(&mut b);
    let mut c: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut c);
    let scale = 1.0 / size as f64;
    let m = max_lag as i64;
    (-m..=m)
        .map(|l| c[l.rem_euclid(size as i64) as usize].re * scale)
        .collect()
}

fn padded(x: &[f64], size: usize) -> Vec<Complex64> {
    let mut v = vec![Complex64::new(0.0, 0.0); size];
    for (o, &s) in v.iter_mut().zip(x) {
        o.re = s;
    }
    v
}

pub(crate) fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf = padded(x, x.len());
    FftPlanner::<f64>::new()
        .plan_fft_forward(x.len())
        .process(&mut buf);
    buf
}

/// Unnormalized inverse FFT scaled by 1/n.
pub(crate) fn ifft(mut spec: Vec<Complex64>) -> Vec<Complex64> {
    let n = spec.len();
    FftPlanner::<f64>::new()
        .plan_fft_inverse(n)
        .process(&mut spec);
    let s = 1.0 / n as f64;
    spec.iter_mut().for_each(|v| *v *= s);
    spec
}

/// Welch estimate of the one-sided PSD (Hann window, 50% overlap).
/// Integrating the density over frequency gives the mean power.
pub fn power_spectrum(x: &Signal, segment_length: usize) -> Result<PowerSpectrum> {
    if segment_length < 2 {
        return Err(invalid("segment_length must be at least 2"));
    }
    if segment_length > x.len() {
        return Err(invalid(format!(
            "segment_length {segment_length} exceeds signal length {}",
            x.len()
        )));
    }
    let nseg = segment_length;
    let window: Vec<f64> = (0..nseg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nseg as f64).cos())
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let step = (nseg / 2).max(1);
    let fs = x.sample_rate();
    let nbins = nseg / 2 + 1;
    let mut acc = vec![0.0; nbins];
    let mut count = 0usize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nseg);
    let mut start = 0;
    while start + nseg <= x.len() {
        let mut buf: Vec<Complex64> = x.samples()[start..start + nseg]
            .iter()
            .zip(&window)
            .map(|(s, w)| Complex64::new(s * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (fs * wpow * count as f64);
    let values = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (nseg.is_multiple_of(2) && k == nseg / 2) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let frequencies = (0..nbins).map(|k| k as f64 * fs / nseg as f64).collect();
    Ok(PowerSpectrum {
        frequencies,
        values,
    })
}

/// DTFT of the taps on `n_freqs` uniform points over [0, Nyquist].
pub fn frequency_response(h: &Fir, n_freqs: usize, sample_rate: f64) -> Result<Spectrum> {
    if n_freqs < h.len() || n_freqs < 2 {
        return Err(invalid(format!(
            "n_freqs {n_freqs} must be at least the tap count {} and 2",
            h.len()
        )));
    }
    if !(sample_rate > 0.0) {
        return Err(invalid("sample_rate must be positive"));
    }
    let frequencies: Vec<f64> = (0..n_freqs)
        .map(|j| j as f64 * 0.5 * sample_rate / (n_freqs - 1) as f64)
        .collect();
    let values = frequencies
        .iter()
        .map(|&f| dtft(h.taps(), 2.0 * std::f64::consts::PI * f / sample_rate))
        .collect();
    Ok(Spectrum {
        frequencies,
        values,
    })
}

/// `Σ_k h[k] e^{-iωk}` with the first tap at lag one.
pub(crate) fn dtft(taps: &[f64], omega: f64) -> Complex64 {
    taps.iter()
        .enumerate()
        .map(|(k, &v)| Complex64::from_polar(v, -omega * (k + 1) as f64))
        .sum()
}

/// Flattens the magnitude spectrum. Bins above `water_level` times the peak
/// magnitude become unit magnitude; weaker bins are divided by the threshold.
pub fn spectral_whiten(x: &Signal, water_level: f64) -> Result<Signal> {
    if !(water_level > 0.0) {
        return Err(invalid("water_level must be positive"));
    }
    Ok(x.derived(whiten_slice(x.samples(), water_level)))
}

pub(crate) fn whiten_slice(x: &[f64], water_level: f64) -> Vec<f64> {
    let spec = fft_real(x);
    let peak = spec.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return vec![0.0; x.len()];
    }
    let threshold = water_level * peak;
    let flat = spec
        .into_iter()
        .map(|v| {
            let m = v.norm();
            if m > threshold {
                v / m
            } else {
                v / threshold
            }
        })
        .collect();
    ifft(flat).into_iter().map(|v| v.re).collect()
}

/// Sign quantization with `sign(0) = +1`.
pub fn one_bit_quantize(x: &Signal) -> Signal {
    x.derived(
        x.samples()
            .iter()
            .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
            .collect(),
    )
}

/// Adds i.i.d. Gaussian noise at the requested SNR relative to the mean
/// power of `x`. `f64::INFINITY` returns `x` unchanged.
pub fn add_white_noise(x: &Signal, snr_db: f64, seed: u64) -> Result<Signal> {
    if snr_db == f64::INFINITY {
        return Ok(x.clone());
    }
    if !snr_db.is_finite() {
        return Err(invalid("snr_db must be finite or +inf"));
    }
    let power = x.power();
    if power == 0.0 {
        return Err(invalid("cannot set an SNR for a zero-power signal"));
    }
    let sd = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = rng_from_seed(seed);
    let out = x
        .samples()
        .iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + sd * e
        })
        .collect();
    Ok(x.derived(out))
}

/// Length of the wavelets used by [`gen_pulse_train`].
pub const PULSE_LENGTH: usize = 48;

/// Sum of randomly placed, randomly scaled Hann-windowed oscillations.
pub fn gen_pulse_train(
    length: usize,
    n_pulses: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Signal> {
    if n_pulses == 0 {
        return Err(invalid("n_pulses must be at least 1"));
    }
    if length < PULSE_LENGTH {
        return Err(invalid(format!(
            "length {length} is shorter than one wavelet ({PULSE_LENGTH} samples)"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = vec![0.0; length];
    let tau = 2.0 * std::f64::consts::PI;
    for _ in 0..n_pulses {
        let start = rng.random_range(0..=length - PULSE_LENGTH);
        // cycles per sample, well inside (0, 1/2)
        let freq: f64 = rng.random_range(0.04..0.3);
        let phase: f64 = rng.random_range(0.0..tau);
        let amp: f64 = {
            let z: f64 = StandardNormal.sample(&mut rng);
            z.abs() + 0.2
        };
        for i in 0..PULSE_LENGTH {
            let w = 0.5 - 0.5 * (tau * i as f64 / (PULSE_LENGTH - 1) as f64).cos();
            out[start + i] += amp * w * (tau * freq * i as f64 + phase).cos();
        }
    }
    Signal::new(out, sample_rate)
}

/// Serializes a signal as `sample_rate=<fs>` followed by one sample per line.
pub fn signal_to_csv(x: &Signal) -> String {
    let mut s = String::with_capacity(x.len() * 24);
    let _ = writeln!(s, "sample_rate={}", x.sample_rate());
    for v in x.samples() {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn signal_from_csv(text: &str) -> Result<Signal> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty signal file".into()))?;
    let fs = header
        .trim()
        .strip_prefix("sample_rate=")
        .ok_or_else(|| Error::Parse(format!("bad signal header {header:?}")))?
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("bad sample_rate: {e}")))?;
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", i + 2)))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!("line {}: non-finite sample", i + 2)));
        }
        samples.push(v);
    }
    Signal::new(samples, fs).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_signal(path: &Path, x: &Signal) -> Result<()> {
    std::fs::write(path, signal_to_csv(x)).map_err(|e| io_err(path, e))
}

pub fn read_signal(path: &Path) -> Result<Signal> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    signal_from_csv(&text)
}

/// White Gaussian noise signal of the given length.
pub fn white_noise(length: usize, sd: f64, sample_rate: f64, seed: u64) -> Result<Signal> {
    let mut rng = rng_from_seed(seed);
    let v = (0..length)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect();
    Signal::new(v, sample_rate)
}
