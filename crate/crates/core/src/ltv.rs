//! Windowed regression of a time-varying FIR under a GP prior on each tap's
//! trajectory, with overlap stitching and a three-regime ground truth.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, mismatch, Error, Result};
use crate::gp::GPWindowPrior;
use crate::rng::derive_seed;
use crate::signal::{convolve_ltv, Fir, Signal};
use crate::vi::{cosine_lr, elbo, step_noise, Adam, DiagGaussian, FitTrace, Observation, TrainConfig};

/// Dense `n×p` tap matrix, optionally with per-entry standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingIR {
    pub taps: DMatrix<f64>,
    pub std: Option<DMatrix<f64>>,
    pub sample_rate: f64,
}

impl TimeVaryingIR {
    pub fn new(taps: DMatrix<f64>, std: Option<DMatrix<f64>>, sample_rate: f64) -> Result<Self> {
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(invalid("time-varying taps must be finite"));
        }
        if let Some(s) = &std {
            if s.shape() != taps.shape() {
                return Err(mismatch("std matrix shape differs from taps"));
            }
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(invalid("std entries must be finite and nonnegative"));
            }
        }
        if !(sample_rate > 0.0) {
            return Err(invalid("sample_rate must be positive"));
        }
        Ok(Self {
            taps,
            std,
            sample_rate,
        })
    }

    pub fn n(&self) -> usize {
        self.taps.nrows()
    }

    pub fn p(&self) -> usize {
        self.taps.ncols()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| self.taps.row(i).iter().copied().collect())
            .collect()
    }

    /// Sum over taps and time of `|H[n+1,k] − H[n,k]|`.
    pub fn total_variation(&self) -> f64 {
        (1..self.n())
            .map(|i| (self.taps.row(i) - self.taps.row(i - 1)).abs().sum())
            .sum()
    }

    /// Tap RMSE against another matrix of the same shape.
    pub fn rmse(&self, other: &DMatrix<f64>) -> f64 {
        assert_eq!(self.taps.shape(), other.shape());
        ((&self.taps - other).norm_squared() / self.taps.len() as f64).sqrt()
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.taps, self.p(), self.n(), self.sample_rate)
    }

    pub fn std_csv(&self) -> Option<String> {
        self.std
            .as_ref()
            .map(|s| matrix_csv(s, self.p(), self.n(), self.sample_rate))
    }

    pub fn from_csv(taps: &str, std: Option<&str>) -> Result<Self> {
        let (t, fs) = parse_matrix_csv(taps)?;
        let s = std.map(parse_matrix_csv).transpose()?.map(|(m, _)| m);
        Self::new(t, s, fs)
    }

    /// Writes `path` and, when uncertainty is present, `<stem>_std.csv`.
    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| io_err(path, e))?;
        if let Some(s) = self.std_csv() {
            let sp = std_path(path);
            std::fs::write(&sp, s).map_err(|e| io_err(&sp, e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let t = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let sp = std_path(path);
        let s = if sp.exists() {
            Some(std::fs::read_to_string(&sp).map_err(|e| io_err(&sp, e))?)
        } else {
            None
        };
        Self::from_csv(&t, s.as_deref())
    }
}

pub fn std_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("taps");
    path.with_file_name(format!("{stem}_std.csv"))
}

fn matrix_csv(m: &DMatrix<f64>, p: usize, n: usize, fs: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "p={p},n={n},sample_rate={fs}");
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

fn parse_matrix_csv(text: &str) -> Result<(DMatrix<f64>, f64)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let mut p = None;
    let mut n = None;
    let mut fs = None;
    for field in header.trim().split(',') {
        let (k, v) = field
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad header field {field:?}")))?;
        let bad = |e: String| Error::Parse(format!("header {k}: {e}"));
        match k {
            "p" => p = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "sample_rate" => fs = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(Error::Parse(format!("unknown header field {k:?}"))),
        }
    }
    let (p, n, fs) = match (p, n, fs) {
        (Some(p), Some(n), Some(fs)) => (p, n, fs),
        _ => return Err(Error::Parse("header needs p, n and sample_rate".into())),
    };
    let mut data = Vec::with_capacity(n * p);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
        if vals.len() != p || vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("row {} must hold {p} finite values", i + 1)));
        }
        data.extend(vals);
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse(format!("expected {n} rows, found {rows}")));
    }
    Ok((DMatrix::from_row_slice(n, p, &data), fs))
}

/// Three base FIRs and per-sample mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationSchedule {
    pub base_firs: Vec<Fir>,
    pub weights: Vec<[f64; 3]>,
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl InterpolationSchedule {
    pub fn new(base_firs: Vec<Fir>, weights: Vec<[f64; 3]>) -> Result<Self> {
        if base_firs.len() != 3 {
            return Err(invalid("schedule needs exactly three base FIRs"));
        }
        let p = base_firs[0].len();
        if base_firs.iter().any(|h| h.len() != p) {
            return Err(mismatch("base FIRs must share one length"));
        }
        if weights.is_empty() {
            return Err(invalid("schedule needs at least one time step"));
        }
        for (n, w) in weights.iter().enumerate() {
            if w.iter().any(|a| !(0.0..=1.0).contains(a)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("weights at n = {n} are not a convex combination")));
            }
        }
        Ok(Self { base_firs, weights })
    }

    /// Holds FIR 1, blends to FIR 2 over `first`, holds, blends to FIR 3 over
    /// `second`, then holds. Blends use the smoothstep curve.
    pub fn smoothstep(
        base_firs: Vec<Fir>,
        n: usize,
        first: (usize, usize),
        second: (usize, usize),
    ) -> Result<Self> {
        if !(first.0 < first.1 && first.1 <= second.0 && second.0 < second.1) {
            return Err(invalid("transition regions must be ordered and nonempty"));
        }
        let ramp = |t: usize, (a, b): (usize, usize)| smoothstep((t as f64 - a as f64) / (b - a) as f64);
        let weights = (0..n)
            .map(|t| {
                let s1 = ramp(t, first);
                let s2 = ramp(t, second);
                [1.0 - s1, s1 - s2, s2]
            })
            .collect();
        Self::new(base_firs, weights)
    }

    pub fn constant(base: Fir, n: usize) -> Result<Self> {
        Self::new(vec![base.clone(), base.clone(), base], vec![[1.0, 0.0, 0.0]; n])
    }
}

/// Row `n` is `Σ_i α_i[n] h⁽ⁱ⁾`.
pub fn gen_ltv_ground_truth(sched: &InterpolationSchedule, sample_rate: f64) -> Result<TimeVaryingIR> {
    let p = sched.base_firs[0].len();
    let n = sched.weights.len();
    let taps = DMatrix::from_fn(n, p, |t, k| {
        sched
            .weights[t]
            .iter()
            .zip(&sched.base_firs)
            .map(|(a, h)| a * h.taps()[k])
            .sum()
    });
    TimeVaryingIR::new(taps, None, sample_rate)
}

/// Overlapping windows covering `[0, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub window: usize,
    pub stride: usize,
    pub n: usize,
    pub starts: Vec<usize>,
}

impl WindowPlan {
    /// Windows start every `stride` samples; a final window aligned to the
    /// end is added when needed for coverage.
    pub fn new(n: usize, window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 || stride > window {
            return Err(invalid(format!(
                "need 1 ≤ stride ≤ window, got stride {stride}, window {window}"
            )));
        }
        if window > n {
            return Err(invalid(format!("window {window} longer than signal {n}")));
        }
        let mut starts: Vec<usize> = (0..=n - window).step_by(stride).collect();
        if starts.last().map(|s| s + window) != Some(n) {
            starts.push(n - window);
        }
        Ok(Self {
            window,
            stride,
            n,
            starts,
        })
    }

    pub fn with_default_stride(n: usize, window: usize) -> Result<Self> {
        Self::new(n, window, (window / 2).max(1))
    }
}

/// Posterior for one window, tap-major (`k·W + i`).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPosterior {
    pub start: usize,
    pub q: DiagGaussian,
    pub trace: FitTrace,
}

impl WindowPosterior {
    pub fn mean_at(&self, w: usize, i: usize, k: usize) -> f64 {
        self.q.mean[k * w + i]
    }
}

/// `weight · Σ_i (g[s+i] − Σ_k h[k·W+i] f[s+i−k−1])²` for one window, with
/// the samples before the window taken from the true input.
struct WindowObservation {
    regressors: Vec<Vec<f64>>,
    target: Vec<f64>,
    p: usize,
    weight: f64,
}

impl WindowObservation {
    fn new(f: &[f64], g: &[f64], start: usize, window: usize, p: usize) -> Self {
        let regressors = (start..start + window)
            .map(|t| (1..=p).map(|k| if t >= k { f[t - k] } else { 0.0 }).collect())
            .collect();
        Self {
            regressors,
            target: g[start..start + window].to_vec(),
            p,
            weight: 1.0 / window as f64,
        }
    }
}

impl Observation for WindowObservation {
    fn dim(&self) -> usize {
        self.p * self.target.len()
    }

    fn loss_grad(&self, h: &[f64], grad: &mut [f64]) -> f64 {
        let w = self.target.len();
        let mut loss = 0.0;
        for (i, (x, y)) in self.regressors.iter().zip(&self.target).enumerate() {
            let pred: f64 = x.iter().enumerate().map(|(k, xv)| h[k * w + i] * xv).sum();
            let r = y - pred;
            loss += r * r;
            for (k, xv) in x.iter().enumerate() {
                grad[k * w + i] -= 2.0 * self.weight * r * xv;
            }
        }
        self.weight * loss
    }
}

/// Fits every window of `plan` independently (in parallel; results are in
/// window order and do not depend on scheduling).
///
/// The window mean of each tap is optimized as `L z` with `L` the GP
/// Cholesky factor, which keeps the problem well conditioned for long
/// lengthscales. The variational family itself is unchanged.
pub fn fit_ltv(
    f: &Signal,
    g: &Signal,
    p: usize,
    plan: &WindowPlan,
    prior: &GPWindowPrior,
    cfg: &TrainConfig,
) -> Result<Vec<WindowPosterior>> {
    cfg.validate()?;
    if f.len() != g.len() {
        return Err(mismatch("input and output lengths differ"));
    }
    if plan.n != f.len() {
        return Err(mismatch(format!(
            "plan covers {} samples but signals have {}",
            plan.n,
            f.len()
        )));
    }
    if plan.window < p {
        return Err(invalid(format!("window {} shorter than p = {p}", plan.window)));
    }
    if prior.window() != plan.window || prior.taps() != p {
        return Err(mismatch("GP prior shape differs from window plan"));
    }
    plan.starts
        .par_iter()
        .enumerate()
        .map(|(wi, &start)| {
            let obs = WindowObservation::new(f.samples(), g.samples(), start, plan.window, p);
            let wcfg = TrainConfig {
                seed: derive_seed(cfg.seed, wi as u64),
                ..cfg.clone()
            };
            fit_window(&obs, prior, &wcfg).map(|(q, trace)| WindowPosterior { start, q, trace })
        })
        .collect()
}

fn fit_window(
    obs: &WindowObservation,
    prior: &GPWindowPrior,
    cfg: &TrainConfig,
) -> Result<(DiagGaussian, FitTrace)> {
    let w = prior.window();
    let p = prior.taps();
    let d = w * p;
    let l = &prior.gram().factor;
    let beta = cfg.beta();
    let mut z = vec![0.0; d];
    let mut q = cfg.initial(d);
    q.mean = whiten_to_mean(l, &z, w, p);
    let mut params: Vec<f64> = z.iter().chain(&q.log_std).copied().collect();
    let mut opt = Adam::new(2 * d);
    let mut grad = vec![0.0; 2 * d];
    let mut trace = FitTrace {
        losses: Vec::with_capacity(cfg.steps),
    };
    for step in 0..cfg.steps {
        let ev = elbo(obs, &q, prior, beta, &step_noise(cfg, step, d))?;
        if !ev.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite window loss at step {step}"
            )));
        }
        trace.losses.push(ev.loss);
        // ∂/∂z = Lᵀ ∂/∂μ per tap block
        for k in 0..p {
            let gm = DVector::from_column_slice(&ev.grad_mean[k * w..(k + 1) * w]);
            let gz = l.tr_mul(&gm);
            grad[k * w..(k + 1) * w].copy_from_slice(gz.as_slice());
        }
        grad[d..].copy_from_slice(&ev.grad_log_std);
        opt.step(&mut params, &grad, cosine_lr(cfg.lr_init, step, cfg.steps));
        z.copy_from_slice(&params[..d]);
        q.mean = whiten_to_mean(l, &z, w, p);
        q.log_std.copy_from_slice(&params[d..]);
    }
    Ok((q, trace))
}

fn whiten_to_mean(l: &DMatrix<f64>, z: &[f64], w: usize, p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * p);
    for k in 0..p {
        let zk = DVector::from_column_slice(&z[k * w..(k + 1) * w]);
        out.extend((l * zk).iter());
    }
    out
}

/// Averages covering windows at each time; the variance is the mixture
/// variance `mean(var + m²) − mean(m)²`, floored at zero.
pub fn stitch(
    windows: &[WindowPosterior],
    plan: &WindowPlan,
    p: usize,
    sample_rate: f64,
) -> Result<TimeVaryingIR> {
    let w = plan.window;
    if windows.len() != plan.starts.len()
        || windows.iter().zip(&plan.starts).any(|(a, s)| a.start != *s)
        || windows.iter().any(|a| a.q.dim() != w * p)
    {
        return Err(mismatch("window posteriors do not match the plan"));
    }
    let n = plan.n;
    let mut sum = DMatrix::<f64>::zeros(n, p);
    let mut sum_sq = DMatrix::<f64>::zeros(n, p);
    let mut count = vec![0usize; n];
    for win in windows {
        let std = win.q.std();
        for i in 0..w {
            let t = win.start + i;
            count[t] += 1;
            for k in 0..p {
                let m = win.q.mean[k * w + i];
                let s = std[k * w + i];
                sum[(t, k)] += m;
                sum_sq[(t, k)] += s * s + m * m;
            }
        }
    }
    if let Some(t) = count.iter().position(|&c| c == 0) {
        return Err(Error::Numerical(format!("time index {t} not covered by any window")));
    }
    let mut mean = DMatrix::zeros(n, p);
    let mut std = DMatrix::zeros(n, p);
    for t in 0..n {
        let c = count[t] as f64;
        for k in 0..p {
            let m = sum[(t, k)] / c;
            mean[(t, k)] = m;
            std[(t, k)] = (sum_sq[(t, k)] / c - m * m).max(0.0).sqrt();
        }
    }
    TimeVaryingIR::new(mean, Some(std), sample_rate)
}

/// Base FIRs of the standard three-regime fixture.
pub fn standard_base_firs() -> Vec<Fir> {
    [
        [0.9, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.8, -0.4, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.3, 0.7],
    ]
    .iter()
    .map(|t| Fir::new(t.to_vec()).expect("finite constants"))
    .collect()
}

/// Synthetic LTV fixture parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtvFixtureSpec {
    pub n: usize,
    pub snr_db: f64,
    pub sample_rate: f64,
    pub first_transition: (usize, usize),
    pub second_transition: (usize, usize),
}

impl Default for LtvFixtureSpec {
    fn default() -> Self {
        Self {
            n: 2048,
            snr_db: 10.0,
            sample_rate: 1.0,
            first_transition: (600, 900),
            second_transition: (1300, 1600),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LtvFixture {
    pub input: Signal,
    pub clean: Signal,
    pub observed: Signal,
    pub truth: TimeVaryingIR,
}

/// White-noise input through the smoothstep three-regime system plus
/// additive output noise.
pub fn ltv_fixture(spec: &LtvFixtureSpec, seed: u64) -> Result<LtvFixture> {
    let sched = InterpolationSchedule::smoothstep(
        standard_base_firs(),
        spec.n,
        spec.first_transition,
        spec.second_transition,
    )?;
    let truth = gen_ltv_ground_truth(&sched, spec.sample_rate)?;
    ltv_fixture_from_truth(truth, spec.snr_db, seed)
}

pub fn ltv_fixture_from_truth(truth: TimeVaryingIR, snr_db: f64, seed: u64) -> Result<LtvFixture> {
    let input = crate::signal::white_noise(truth.n(), 1.0, truth.sample_rate, derive_seed(seed, 0))?;
    let clean = convolve_ltv(&input, &truth.rows())?;
    let observed = crate::signal::add_white_noise(&clean, snr_db, derive_seed(seed, 1))?;
    Ok(LtvFixture {
        input,
        clean,
        observed,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_covers_and_aligns_end() {
        let p = WindowPlan::new(100, 32, 16).unwrap();
        assert_eq!(p.starts, vec![0, 16, 32, 48, 64, 68]);
        let exact = WindowPlan::new(64, 32, 16).unwrap();
        assert_eq!(exact.starts, vec![0, 16, 32]);
        assert!(WindowPlan::new(10, 32, 16).is_err());
        assert!(WindowPlan::new(100, 32, 33).is_err());
        assert!(WindowPlan::new(100, 32, 0).is_err());
    }

    #[test]
    fn schedule_rows_are_convex() {
        let s = InterpolationSchedule::smoothstep(standard_base_firs(), 2048, (600, 900), (1300, 1600)).unwrap();
        assert_eq!(s.weights[0], [1.0, 0.0, 0.0]);
        assert_eq!(s.weights[1000], [0.0, 1.0, 0.0]);
        assert_eq!(s.weights[2000], [0.0, 0.0, 1.0]);
        let mid = s.weights[750];
        assert!((mid[0] - 0.5).abs() < 1e-12 && (mid[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(InterpolationSchedule::new(standard_base_firs(), vec![[0.5, 0.6, -0.1]]).is_err());
        assert!(InterpolationSchedule::new(standard_base_firs()[..2].to_vec(), vec![[1.0, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let taps = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 1.5, 0.0, -7.25]);
        let std = DMatrix::from_row_slice(2, 3, &[0.01, 0.02, 0.03, 0.0, 0.1, 0.2]);
        let h = TimeVaryingIR::new(taps, Some(std), 2.0).unwrap();
        let text = h.to_csv();
        assert!(text.starts_with("p=3,n=2,sample_rate=2\n"));
        let back = TimeVaryingIR::from_csv(&text, h.std_csv().as_deref()).unwrap();
        assert_eq!(back, h);
        assert!(TimeVaryingIR::from_csv("p=3,n=3,sample_rate=1\n1,2,3\n", None).is_err());
    }

    #[test]
    fn window_shorter_than_p_rejected() {
        let f = Signal::new(vec![1.0; 64], 1.0).unwrap();
        let plan = WindowPlan::new(64, 4, 2).unwrap();
        let prior = GPWindowPrior::new(crate::gp::RbfKernelSpec::new(2.0, 0.1), 4, 8).unwrap();
        assert!(fit_ltv(&f, &f, 8, &plan, &prior, &TrainConfig::default()).is_err());
    }
}
