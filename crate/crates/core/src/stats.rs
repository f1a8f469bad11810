//! Moment propagation for FIR systems with Gaussian tap uncertainty.
//!
//! A tap vector at time `n` is `h[n] = μ[n] + E[n]` with `E[n] ~ N(0, Σ[n])`.
//! The output `g[n] = h[n]ᵀ f[n]` with regressor `f[n] = (f[n-1], …, f[n-p])`
//! then has mean `μ[n]ᵀ f[n]` and variance `f[n]ᵀ Σ[n] f[n]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::signal::{convolve_ltv, convolve_slice, PowerSpectrum, Signal, Spectrum};

const PSD_JITTER: f64 = 1e-10;

/// Gaussian posterior over one FIR tap vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorIR {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl PosteriorIR {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(invalid("posterior needs at least one tap"));
        }
        if cov.nrows() != p || cov.ncols() != p {
            return Err(mismatch(format!(
                "covariance is {}x{} for {p} taps",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("posterior entries must be finite"));
        }
        let post = Self { mean, cov };
        post.check_psd()?;
        Ok(post)
    }

    /// Diagonal covariance from per-tap standard deviations.
    pub fn from_diag(mean: &[f64], std: &[f64]) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(mismatch("mean and std lengths differ"));
        }
        let var = DVector::from_iterator(std.len(), std.iter().map(|s| s * s));
        Self::new(DVector::from_column_slice(mean), DMatrix::from_diagonal(&var))
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }

    /// Symmetry within 1e-9 and positive semidefiniteness through a jittered
    /// Cholesky factorization.
    pub fn check_psd(&self) -> Result<()> {
        check_psd(&self.cov)
    }

    /// Lower Cholesky factor of the jittered covariance, used for sampling.
    pub fn sampling_factor(&self) -> Result<DMatrix<f64>> {
        jittered_cholesky(&self.cov)
    }
}

fn jitter_for(cov: &DMatrix<f64>) -> f64 {
    let scale = cov.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    PSD_JITTER * scale
}

pub(crate) fn jittered_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut k = cov.clone();
    let j = jitter_for(cov);
    for i in 0..k.nrows() {
        k[(i, i)] += j;
    }
    k.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| invalid("covariance is not positive semidefinite"))
}

pub(crate) fn check_psd(cov: &DMatrix<f64>) -> Result<()> {
    let n = cov.nrows();
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 {
                return Err(invalid(format!("covariance not symmetric at ({i},{j})")));
            }
        }
    }
    jittered_cholesky(cov).map(|_| ())
}

/// Posterior per time index, or one posterior shared by all times.
#[derive(Debug, Clone)]
pub enum PosteriorTrack {
    Constant(PosteriorIR),
    PerTime(Vec<PosteriorIR>),
}

impl PosteriorTrack {
    fn at(&self, n: usize) -> &PosteriorIR {
        match self {
            PosteriorTrack::Constant(p) => p,
            PosteriorTrack::PerTime(v) => &v[n],
        }
    }

    fn check(&self, n: usize) -> Result<usize> {
        match self {
            PosteriorTrack::Constant(p) => Ok(p.p()),
            PosteriorTrack::PerTime(v) => {
                if v.len() != n {
                    return Err(mismatch(format!(
                        "{} posteriors for a signal of length {n}",
                        v.len()
                    )));
                }
                let p = v.first().map(|x| x.p()).unwrap_or(0);
                if v.iter().any(|x| x.p() != p) {
                    return Err(mismatch("posteriors have differing tap counts"));
                }
                Ok(p)
            }
        }
    }
}

/// Regressor `(f[n-1], …, f[n-p])` with zero history.
pub fn regressor(f: &[f64], n: usize, p: usize) -> DVector<f64> {
    DVector::from_iterator(
        p,
        (1..=p).map(|k| if n >= k { f[n - k] } else { 0.0 }),
    )
}

/// Output mean: the convolution of `f` with the posterior mean taps.
pub fn expected_output(f: &Signal, post: &PosteriorTrack) -> Result<Signal> {
    post.check(f.len())?;
    match post {
        PosteriorTrack::Constant(p) => Ok(Signal::new(
            convolve_slice(f.samples(), p.mean.as_slice()),
            f.sample_rate(),
        )?),
        PosteriorTrack::PerTime(v) => {
            let rows: Vec<Vec<f64>> = v.iter().map(|p| p.mean.as_slice().to_vec()).collect();
            convolve_ltv(f, &rows)
        }
    }
}

/// `Var[g[n]] = f[n]ᵀ Σ[n] f[n]` for every `n`.
pub fn output_variance(f: &Signal, post: &PosteriorTrack) -> Result<Vec<f64>> {
    let p = post.check(f.len())?;
    match post {
        PosteriorTrack::Constant(q) => q.check_psd()?,
        PosteriorTrack::PerTime(v) => v.iter().try_for_each(|q| q.check_psd())?,
    }
    let x = f.samples();
    Ok((0..x.len())
        .map(|n| {
            let r = regressor(x, n, p);
            (r.transpose() * &post.at(n).cov * &r)[(0, 0)]
        })
        .collect())
}

/// Maximum `n·p` supported by the dense cross-time representation.
pub const DENSE_LIMIT: usize = 4096;

/// Covariance of tap fluctuations across time.
#[derive(Debug, Clone)]
pub enum CrossTimeCov {
    /// `Cov[E[n], E[m]] = δ[n,m] Σ[n]`.
    WhiteInTime(PosteriorTrack),
    /// Full covariance over `(n, k)` flattened as `n·p + k`.
    Dense { n: usize, p: usize, cov: DMatrix<f64> },
}

impl CrossTimeCov {
    pub fn dense(n: usize, p: usize, cov: DMatrix<f64>) -> Result<Self> {
        if n * p > DENSE_LIMIT {
            return Err(invalid(format!(
                "dense cross-time covariance limited to n·p ≤ {DENSE_LIMIT}, got {}",
                n * p
            )));
        }
        if cov.nrows() != n * p || cov.ncols() != n * p {
            return Err(mismatch("dense covariance must be (n·p)×(n·p)"));
        }
        check_psd(&cov)?;
        Ok(CrossTimeCov::Dense { n, p, cov })
    }

    pub fn p(&self) -> usize {
        match self {
            CrossTimeCov::WhiteInTime(t) => match t {
                PosteriorTrack::Constant(q) => q.p(),
                PosteriorTrack::PerTime(v) => v.first().map(|q| q.p()).unwrap_or(0),
            },
            CrossTimeCov::Dense { p, .. } => *p,
        }
    }

    /// `Cov[E_k[n], E_l[m]]` with zero-based tap indices.
    pub fn entry(&self, n: usize, m: usize, k: usize, l: usize) -> f64 {
        match self {
            CrossTimeCov::WhiteInTime(t) => {
                if n == m {
                    t.at(n).cov[(k, l)]
                } else {
                    0.0
                }
            }
            CrossTimeCov::Dense { p, cov, .. } => cov[(n * p + k, m * p + l)],
        }
    }
}

/// `Cov[g[n], g[m]] = Σ_k Σ_l f[n-k] f[m-l] Cov[E_k[n], E_l[m]]`.
pub fn output_covariance(f: &Signal, cov: &CrossTimeCov, n: usize, m: usize) -> Result<f64> {
    let len = f.len();
    if n >= len || m >= len {
        return Err(invalid(format!("times ({n}, {m}) out of range for length {len}")));
    }
    match cov {
        CrossTimeCov::WhiteInTime(t) => {
            t.check(len)?;
        }
        CrossTimeCov::Dense { n: horizon, .. } => {
            if n >= *horizon || m >= *horizon {
                return Err(invalid(format!(
                    "times ({n}, {m}) beyond dense horizon {horizon}"
                )));
            }
        }
    }
    let p = cov.p();
    let x = f.samples();
    let rn = regressor(x, n, p);
    let rm = regressor(x, m, p);
    let mut acc = 0.0;
    for k in 0..p {
        if rn[k] == 0.0 {
            continue;
        }
        for l in 0..p {
            acc += rn[k] * rm[l] * cov.entry(n, m, k, l);
        }
    }
    Ok(acc)
}

/// Fluctuation spectrum `S_E(ω) = Σ_d r[d] e^{-iωd}` where `r[d]` is the
/// sum of the `d`-th diagonal of Σ.
pub fn fluctuation_spectrum(
    cov: &DMatrix<f64>,
    frequencies: &[f64],
    sample_rate: f64,
) -> Result<PowerSpectrum> {
    if cov.nrows() != cov.ncols() {
        return Err(mismatch("covariance must be square"));
    }
    let p = cov.nrows();
    let r: Vec<f64> = (0..p)
        .map(|d| (0..p - d).map(|k| 0.5 * (cov[(k, k + d)] + cov[(k + d, k)])).sum())
        .collect();
    let values = frequencies
        .iter()
        .map(|&f| {
            let w = 2.0 * std::f64::consts::PI * f / sample_rate;
            r[0] + 2.0
                * r
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(d, v)| v * (w * d as f64).cos())
                    .sum::<f64>()
        })
        .collect();
    PowerSpectrum::new(frequencies.to_vec(), values)
}

/// Output PSD `S_s(f)·(|μ(f)|² + S_E(f))`.
pub fn ltie_psd(
    input_psd: &PowerSpectrum,
    mean_fr: &Spectrum,
    fluct_psd: &PowerSpectrum,
) -> Result<PowerSpectrum> {
    let grid = &input_psd.frequencies;
    let same = |g: &[f64]| {
        g.len() == grid.len()
            && g.iter()
                .zip(grid)
                .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0))
    };
    if !same(&mean_fr.frequencies) || !same(&fluct_psd.frequencies) {
        return Err(mismatch("ltie_psd frequency grids differ"));
    }
    let values = input_psd
        .values
        .iter()
        .zip(&mean_fr.values)
        .zip(&fluct_psd.values)
        .map(|((s, mu), e)| s * (mu.norm_sqr() + e))
        .collect();
    PowerSpectrum::new(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec(), 1.0).unwrap()
    }

    #[test]
    fn identity_cov_gives_regressor_energy() {
        let f = sig(&[1.0, 2.0, -1.0, 0.5, 3.0]);
        let post = PosteriorIR::from_diag(&[0.0; 3], &[1.0; 3]).unwrap();
        let v = output_variance(&f, &PosteriorTrack::Constant(post)).unwrap();
        assert_eq!(v, vec![0.0, 1.0, 5.0, 6.0, 5.25]);
    }

    #[test]
    fn zero_cov_zero_variance_and_exact_mean() {
        let f = sig(&[1.0, -2.0, 3.0]);
        let post = PosteriorIR::from_diag(&[0.5, 0.25], &[0.0, 0.0]).unwrap();
        let t = PosteriorTrack::Constant(post);
        assert!(output_variance(&f, &t).unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(expected_output(&f, &t).unwrap().samples(), &[0.0, 0.5, -0.75]);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let m = DVector::from_vec(vec![0.0, 0.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(PosteriorIR::new(m.clone(), bad).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(PosteriorIR::new(m, asym).is_err());
    }

    #[test]
    fn white_in_time_is_uncorrelated_across_time() {
        let f = sig(&[1.0, 2.0, 3.0, 4.0]);
        let post = PosteriorIR::from_diag(&[0.0; 2], &[1.0, 0.5]).unwrap();
        let c = CrossTimeCov::WhiteInTime(PosteriorTrack::Constant(post.clone()));
        assert_eq!(output_covariance(&f, &c, 1, 3).unwrap(), 0.0);
        let var = output_variance(&f, &PosteriorTrack::Constant(post)).unwrap();
        for (n, v) in var.iter().enumerate() {
            assert_eq!(output_covariance(&f, &c, n, n).unwrap(), *v);
        }
        assert!(output_covariance(&f, &c, 4, 0).is_err());
    }

    #[test]
    fn dense_limit_enforced() {
        let n = 513;
        let p = 8;
        assert!(CrossTimeCov::dense(n, p, DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn ltie_psd_degenerate_cases() {
        let grid = vec![0.0, 0.1, 0.2];
        let s = PowerSpectrum::new(grid.clone(), vec![2.0, 2.0, 2.0]).unwrap();
        let mu = Spectrum::new(
            grid.clone(),
            vec![num_complex::Complex64::new(0.5, 0.5); 3],
        )
        .unwrap();
        let zero = PowerSpectrum::new(grid.clone(), vec![0.0; 3]).unwrap();
        let out = ltie_psd(&s, &mu, &zero).unwrap();
        assert!(out.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
        let mu0 = Spectrum::new(grid.clone(), vec![num_complex::Complex64::new(0.0, 0.0); 3]).unwrap();
        let e = PowerSpectrum::new(grid.clone(), vec![0.1, 0.2, 0.3]).unwrap();
        let out = ltie_psd(&s, &mu0, &e).unwrap();
        assert!((out.values[2] - 0.6).abs() < 1e-15);
        let other = PowerSpectrum::new(vec![0.0, 0.1, 0.3], vec![0.0; 3]).unwrap();
        assert!(ltie_psd(&s, &mu, &other).is_err());
    }

    #[test]
    fn fluctuation_spectrum_of_diagonal_is_flat() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.2, 0.3]));
        let s = fluctuation_spectrum(&cov, &[0.0, 0.2, 0.4], 1.0).unwrap();
        assert!(s.values.iter().all(|v| (v - 0.6).abs() < 1e-12));
    }
}
