use bayes_ltv::gp::{window_kl, GPWindowPrior, RbfKernelSpec};
use bayes_ltv::lti::{ccf_of_fir, posterior_ccf, LtiFit};
use bayes_ltv::oracle::{
    finite_difference_grad, max_relative_error, mc_kl_gaussian, mc_output_covariance,
    mc_output_moments, McEstimate,
};
use bayes_ltv::rng::{derive_seed, rng_from_seed};
use bayes_ltv::stats::{expected_output, output_covariance, output_variance, CrossTimeCov, PosteriorIR, PosteriorTrack};
use bayes_ltv::vi::{
    elbo_and_grads, kl_to_full_gaussian, kl_to_isotropic, standard_normal_rows, DiagGaussian, FitTrace,
    IsotropicPrior,
};
use bayes_ltv::{Signal, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{stream, STREAM_SELFTEST};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::OutDir;

/// Monte Carlo agreement is judged at three standard errors.
const SE_BOUND: f64 = 3.0;
const GRAD_TOL: f64 = 1e-4;

#[derive(Serialize)]
struct Suite {
    name: &'static str,
    instances: usize,
    failures: usize,
    /// Largest deviation seen, in standard errors or relative error.
    worst: f64,
    passed: bool,
}

#[derive(Serialize)]
struct Report {
    seed: u64,
    samples: usize,
    suites: Vec<Suite>,
    passed: bool,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_vec(d, d, normal_vec(rng, d * d)) / (d as f64).sqrt();
    &a * a.transpose() + DMatrix::identity(d, d) * 1e-3
}

fn random_q(rng: &mut ChaCha8Rng, d: usize) -> DiagGaussian {
    let mean = normal_vec(rng, d).iter().map(|v| 0.5 * v).collect();
    let log_std = (0..d).map(|_| rng.random_range(-1.5..0.3)).collect();
    DiagGaussian::new(mean, log_std).expect("finite parameters")
}

fn z(est: &McEstimate, target: f64) -> f64 {
    (est.value - target).abs() / est.std_error.max(1e-300)
}

struct Runner {
    root: u64,
    samples: usize,
    instances: usize,
    suites: Vec<Suite>,
}

impl Runner {
    /// Runs `check` once per instance; it returns the deviation and whether
    /// the instance passed. One miss in twenty is tolerated at three SE.
    fn suite(
        &mut self,
        tag: u64,
        name: &'static str,
        mut check: impl FnMut(&mut ChaCha8Rng, u64, usize) -> CliResult<(f64, bool)>,
    ) -> CliResult<()> {
        let base = derive_seed(self.root, tag);
        let mut failures = 0;
        let mut worst: f64 = 0.0;
        for i in 0..self.instances as u64 {
            let mut rng = rng_from_seed(derive_seed(base, 2 * i));
            let (dev, ok) = check(&mut rng, derive_seed(base, 2 * i + 1), self.samples)?;
            worst = worst.max(dev);
            failures += usize::from(!ok);
        }
        let allowed = self.instances / 20;
        let passed = failures <= allowed;
        println!(
            "{name}: {} ({failures}/{} instances off, worst {worst:.3})",
            if passed { "PASS" } else { "FAIL" },
            self.instances
        );
        self.suites.push(Suite {
            name,
            instances: self.instances,
            failures,
            worst,
            passed,
        });
        Ok(())
    }
}

fn moments_fixture(rng: &mut ChaCha8Rng) -> CliResult<(Signal, PosteriorIR, usize)> {
    let p = rng.random_range(2..=8);
    let n = rng.random_range(p + 8..=64);
    let f = Signal::new(normal_vec(rng, n), 1.0)?;
    let post = PosteriorIR::new(DVector::from_vec(normal_vec(rng, p)), random_psd(rng, p))?;
    let t = rng.random_range(p..n);
    Ok((f, post, t))
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let mut r = Runner {
        root: stream(cfg, STREAM_SELFTEST),
        samples: cfg.selftest.samples,
        instances: cfg.selftest.instances,
        suites: Vec::new(),
    };

    r.suite(0, "output_mean", |rng, seed, s| {
        let (f, post, t) = moments_fixture(rng)?;
        let exact = expected_output(&f, &PosteriorTrack::Constant(post.clone()))?.samples()[t];
        let (mean, _) = mc_output_moments(f.samples(), &post, t, s, seed)?;
        Ok((z(&mean, exact), mean.within(exact, SE_BOUND)))
    })?;

    r.suite(1, "output_variance", |rng, seed, s| {
        let (f, post, t) = moments_fixture(rng)?;
        let exact = output_variance(&f, &PosteriorTrack::Constant(post.clone()))?[t];
        let (_, var) = mc_output_moments(f.samples(), &post, t, s, seed)?;
        Ok((z(&var, exact), var.within(exact, SE_BOUND)))
    })?;

    r.suite(2, "output_covariance", |rng, seed, s| {
        let p = rng.random_range(2..=6);
        let n = rng.random_range(p + 4..=32);
        let f = Signal::new(normal_vec(rng, n), 1.0)?;
        let dense = CrossTimeCov::dense(n, p, random_psd(rng, n * p))?;
        let (a, b) = (rng.random_range(p..n), rng.random_range(p..n));
        let exact = output_covariance(&f, &dense, a, b)?;
        let est = mc_output_covariance(f.samples(), &dense, a, b, s, seed)?;
        Ok((z(&est, exact), est.within(exact, SE_BOUND)))
    })?;

    r.suite(3, "kl_isotropic", |rng, seed, s| {
        let d = rng.random_range(1..=12);
        let q = random_q(rng, d);
        let sd = rng.random_range(0.3..2.0);
        let exact = kl_to_isotropic(&q, &IsotropicPrior::new(sd, d)?)?;
        let cov = DMatrix::identity(d, d) * (sd * sd);
        let est = mc_kl_gaussian(&q, &DVector::zeros(d), &cov, s, seed)?;
        Ok((z(&est, exact), est.within(exact, SE_BOUND)))
    })?;

    r.suite(4, "kl_full_gaussian", |rng, seed, s| {
        let d = rng.random_range(1..=8);
        let q = random_q(rng, d);
        let mean = DVector::from_vec(normal_vec(rng, d));
        let cov = random_psd(rng, d) + DMatrix::identity(d, d) * 0.2;
        let chol = cov.clone().cholesky().expect("positive definite").l();
        let exact = kl_to_full_gaussian(&q, &mean, &chol)?;
        let est = mc_kl_gaussian(&q, &mean, &cov, s, seed)?;
        Ok((z(&est, exact), est.within(exact, SE_BOUND)))
    })?;

    r.suite(5, "kl_gp_window", |rng, seed, s| {
        let w = rng.random_range(2..=8);
        let taps = rng.random_range(1..=3);
        let kernel = RbfKernelSpec::new(rng.random_range(0.5..6.0), rng.random_range(0.05..1.0));
        let prior = GPWindowPrior::new(kernel, w, taps)?;
        let q = random_q(rng, w * taps);
        let exact = window_kl(&q, &prior)?;
        let l = &prior.gram().factor;
        let block = l * l.transpose();
        let mut cov = DMatrix::zeros(w * taps, w * taps);
        for k in 0..taps {
            cov.view_mut((k * w, k * w), (w, w)).copy_from(&block);
        }
        let est = mc_kl_gaussian(&q, &DVector::zeros(w * taps), &cov, s, seed)?;
        Ok((z(&est, exact), est.within(exact, SE_BOUND)))
    })?;

    r.suite(6, "ccf_identity", |rng, seed, s| {
        let p = rng.random_range(2..=12);
        let n = rng.random_range(256..=1024);
        let max_lag = rng.random_range(1..=16);
        let f = Signal::new(normal_vec(rng, n), 1.0)?;
        let fit = LtiFit {
            p,
            posterior: random_q(rng, p),
            trace: FitTrace::default(),
            config: TrainConfig::default(),
        };
        let draws = s.min(20_000);
        let post = posterior_ccf(&fit, &f, max_lag, draws, seed)?;
        let exact = ccf_of_fir(&f, fit.mean(), max_lag)?;
        // lags are tested jointly, so the bound widens with their count
        let bound = SE_BOUND + (2.0 * (2 * max_lag + 1) as f64).ln().sqrt();
        let worst = post
            .mean
            .values
            .iter()
            .zip(&post.std.values)
            .zip(&exact.values)
            .map(|((m, sd), e)| (m - e).abs() / (sd / (draws as f64).sqrt()).max(1e-300))
            .fold(0.0, f64::max);
        Ok((worst, worst <= bound))
    })?;

    r.suite(7, "elbo_gradient", |rng, seed, _| {
        let p = rng.random_range(2..=10);
        let f = Signal::new(normal_vec(rng, 64), 1.0)?;
        let g = Signal::new(normal_vec(rng, 64), 1.0)?;
        let train = TrainConfig {
            batch_replicas: 8,
            ..TrainConfig::default()
        };
        let prior = IsotropicPrior::new(1.0 / (p as f64).sqrt(), p)?;
        let noise = standard_normal_rows(train.batch_replicas, p, seed);
        let q = random_q(rng, p);
        let ev = elbo_and_grads(&f, &g, &q, &prior, &train, Some(&noise))?;
        let x: Vec<f64> = q.mean.iter().chain(&q.log_std).copied().collect();
        let loss = |x: &[f64]| {
            let q = DiagGaussian::new(x[..p].to_vec(), x[p..].to_vec()).expect("finite");
            elbo_and_grads(&f, &g, &q, &prior, &train, Some(&noise)).map(|e| e.loss).unwrap_or(f64::NAN)
        };
        let fd = finite_difference_grad(loss, &x, 1e-5);
        let analytic: Vec<f64> = ev.grad_mean.iter().chain(&ev.grad_log_std).copied().collect();
        let err = max_relative_error(&analytic, &fd, 1e-6);
        Ok((err, err <= GRAD_TOL))
    })?;

    let passed = r.suites.iter().all(|s| s.passed);
    let report = Report {
        seed: cfg.seed,
        samples: cfg.selftest.samples,
        suites: r.suites,
        passed,
    };
    let mut out = OutDir::create(&cfg.out)?;
    out.json("selftest.json", &report, r.root, "selftest")?;
    if !passed {
        let failed: Vec<&str> = report.suites.iter().filter(|s| !s.passed).map(|s| s.name).collect();
        return Err(CliError::numerical(format!("selftest failed: {}", failed.join(", "))));
    }
    Ok(())
}
