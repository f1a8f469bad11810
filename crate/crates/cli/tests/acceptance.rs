//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.
//!
//! `cargo test --test acceptance -- 3 8` runs only the listed criteria.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use bayes_ltv::ant::{
    dispersion_fit, sweep_pairs, AntScenario, BeamInput, SweepConfig, SweepRow,
};
use bayes_ltv::gp::{GPWindowPrior, RbfKernelSpec};
use bayes_ltv::lti::{
    ccf_of_fir, fit_lti, least_squares_fir, lti_fixture, lti_fixture_from_input, posterior_ccf,
    posterior_predict, random_fir, mse, rmse,
};
use bayes_ltv::ltv::{fit_ltv, ltv_fixture, stitch, LtvFixtureSpec, WindowPlan};
use bayes_ltv::oracle::{finite_difference_grad, max_relative_error, mc_output_covariance, mc_output_moments};
use bayes_ltv::rng::{derive_seed, rng_from_seed};
use bayes_ltv::signal::white_noise;
use bayes_ltv::stats::{output_covariance, output_variance, CrossTimeCov, PosteriorIR, PosteriorTrack};
use bayes_ltv::vi::{elbo_and_grads, standard_normal_rows, DiagGaussian, IsotropicPrior};
use bayes_ltv::{Signal, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = std::result::Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn random_psd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_vec(d, d, normal_vec(rng, d * d)) / (d as f64).sqrt();
    &a * a.transpose() + DMatrix::identity(d, d) * 1e-3
}

fn moment_oracles() -> Outcome {
    let mut passed = 0;
    let mut notes = Vec::new();
    for inst in 0..20u64 {
        let mut rng = rng_from_seed(derive_seed(101, inst));
        let p = rng.random_range(2..=8);
        let n = rng.random_range(p + 8..=64);
        let f = Signal::new(normal_vec(&mut rng, n), 1.0).map_err(|e| e.to_string())?;
        let post = PosteriorIR::new(DVector::from_vec(normal_vec(&mut rng, p)), random_psd(&mut rng, p))
            .map_err(|e| e.to_string())?;
        let t = rng.random_range(p..n);
        let var = output_variance(&f, &PosteriorTrack::Constant(post.clone())).map_err(|e| e.to_string())?[t];
        let (_, mc_var) = mc_output_moments(f.samples(), &post, t, 100_000, derive_seed(102, inst))
            .map_err(|e| e.to_string())?;
        let dense = CrossTimeCov::dense(n, p, random_psd(&mut rng, n * p)).map_err(|e| e.to_string())?;
        let (a, b) = (rng.random_range(p..n), rng.random_range(p..n));
        let cov = output_covariance(&f, &dense, a, b).map_err(|e| e.to_string())?;
        let mc_cov = mc_output_covariance(f.samples(), &dense, a, b, 100_000, derive_seed(103, inst))
            .map_err(|e| e.to_string())?;
        if mc_var.within(var, 3.0) && mc_cov.within(cov, 3.0) {
            passed += 1;
        } else {
            notes.push(format!("instance {inst}"));
        }
    }
    let msg = format!("{passed}/20 instances within 3 SE {}", notes.join(" "));
    if passed >= 19 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradient_check() -> Outcome {
    let p = 8;
    let mut worst: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = rng_from_seed(derive_seed(201, inst));
        let f = Signal::new(normal_vec(&mut rng, 64), 1.0).unwrap();
        let g = Signal::new(normal_vec(&mut rng, 64), 1.0).unwrap();
        let mean: Vec<f64> = normal_vec(&mut rng, p).iter().map(|v| 0.3 * v).collect();
        let log_std: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..-0.5)).collect();
        let cfg = TrainConfig {
            batch_replicas: 8,
            ..TrainConfig::default()
        };
        let prior = IsotropicPrior::new(1.0 / (p as f64).sqrt(), p).unwrap();
        let noise = standard_normal_rows(cfg.batch_replicas, p, derive_seed(202, inst));
        let q = DiagGaussian::new(mean.clone(), log_std.clone()).unwrap();
        let ev = elbo_and_grads(&f, &g, &q, &prior, &cfg, Some(&noise)).map_err(|e| e.to_string())?;
        let x: Vec<f64> = mean.iter().chain(&log_std).copied().collect();
        let loss = |x: &[f64]| {
            let q = DiagGaussian::new(x[..p].to_vec(), x[p..].to_vec()).unwrap();
            elbo_and_grads(&f, &g, &q, &prior, &cfg, Some(&noise)).unwrap().loss
        };
        let fd = finite_difference_grad(loss, &x, 1e-5);
        let analytic: Vec<f64> = ev.grad_mean.iter().chain(&ev.grad_log_std).copied().collect();
        worst = worst.max(max_relative_error(&analytic, &fd, 1e-6));
    }
    let msg = format!("worst relative error {worst:.2e} over 50 instances");
    if worst <= 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lti_single_pair() -> Outcome {
    let truth = random_fir(16, 301).unwrap();
    let fx = lti_fixture(2048, truth.clone(), 0.0, 1.0, 302).map_err(|e| e.to_string())?;
    let pairs = vec![(fx.input.clone(), fx.observed.clone())];
    let fit = fit_lti(&pairs, 16, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let ls = least_squares_fir(&pairs, 16).map_err(|e| e.to_string())?;
    let post_rmse = rmse(fit.mean(), truth.taps());
    let ls_rmse = rmse(ls.taps(), truth.taps());
    let std = fit.std();
    let covered = truth
        .taps()
        .iter()
        .zip(fit.mean())
        .zip(&std)
        .filter(|((t, m), s)| (*t - *m).abs() <= 3.0 * *s)
        .count();
    let pred = posterior_predict(&fit, &fx.input, 200, 303).map_err(|e| e.to_string())?;
    let denoised = mse(&pred.mean, fx.clean.samples());
    let observed = mse(fx.observed.samples(), fx.clean.samples());
    let ok = post_rmse < 3.0 * ls_rmse && covered * 100 >= 85 * 16 && denoised < observed;
    let msg = format!(
        "tap RMSE {post_rmse:.4} vs LS {ls_rmse:.4}; coverage {covered}/16; output MSE {denoised:.4} vs observed {observed:.4}"
    );
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tightening() -> Outcome {
    let truth = random_fir(16, 401).unwrap();
    let pairs: Vec<(Signal, Signal)> = (0..8u64)
        .map(|i| {
            let fx = lti_fixture(2048, truth.clone(), 0.0, 1.0, derive_seed(402, i)).unwrap();
            (fx.input, fx.observed)
        })
        .collect();
    let mut stds = Vec::new();
    for n in [1usize, 2, 4, 8] {
        let fit = fit_lti(&pairs[..n], 16, &TrainConfig::default()).map_err(|e| e.to_string())?;
        let s = fit.std();
        stds.push(s.iter().sum::<f64>() / s.len() as f64);
    }
    let msg = format!(
        "mean posterior std over 1,2,4,8 pairs: {}",
        stds.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>().join(", ")
    );
    if stds.windows(2).all(|w| w[1] <= w[0]) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ccf_identity() -> Outcome {
    let truth = random_fir(16, 501).unwrap();
    let input = white_noise(2048, 1.0, 1.0, 502).unwrap();
    let fx = lti_fixture_from_input(input, truth, 0.0, 503).map_err(|e| e.to_string())?;
    let pairs = vec![(fx.input.clone(), fx.observed.clone())];
    let fit = fit_lti(&pairs, 16, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let max_lag = 24;
    let n = 10_000;
    let post = posterior_ccf(&fit, &fx.input, max_lag, n, 504).map_err(|e| e.to_string())?;
    let exact = ccf_of_fir(&fx.input, fit.mean(), max_lag).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for ((m, s), e) in post.mean.values.iter().zip(&post.std.values).zip(&exact.values) {
        let se = s / (n as f64).sqrt();
        worst = worst.max((m - e).abs() / se.max(1e-300));
    }
    let msg = format!("max deviation {worst:.2} SE over {} lags", 2 * max_lag + 1);
    if worst <= 3.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn seed_mean(rows: &[Vec<SweepRow>], i: usize, pick: fn(&SweepRow) -> f64) -> f64 {
    rows.iter().map(|r| pick(&r[i])).sum::<f64>() / rows.len() as f64
}

fn ant_check(quantize: bool, counts: &[usize], seeds: &[u64]) -> (bool, String) {
    let cfg = SweepConfig::default();
    let rows: Vec<Vec<SweepRow>> = seeds
        .iter()
        .map(|&s| {
            let sc = AntScenario {
                seed: s,
                ..AntScenario::default()
            };
            sweep_pairs(&sc, counts, quantize, &cfg).expect("sweep")
        })
        .collect();
    let all_valid = |i: usize| rows.iter().all(|r| r[i].mir_valid && r[i].ccf_valid);
    let first = (0..counts.len()).find(|&i| all_valid(i));
    let mir: Vec<f64> = (0..counts.len()).map(|i| seed_mean(&rows, i, |r| r.mir_error)).collect();
    let ccf: Vec<f64> = (0..counts.len()).map(|i| seed_mean(&rows, i, |r| r.ccf_error)).collect();
    let mut ok = match first {
        Some(k) => (k..counts.len()).all(|i| mir[i] <= ccf[i]),
        None => false,
    };
    let last = counts.len() - 1;
    ok &= mir[last] < mir[0];
    let mut msg = format!(
        "{} MIR [{}] CCF [{}] valid from {}",
        if quantize { "1-bit" } else { "raw" },
        mir.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "),
        ccf.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "),
        first.map(|k| counts[k].to_string()).unwrap_or_else(|| "none".into()),
    );
    if quantize {
        let rel = |e: &[f64]| (e[last - 1] - e[last]) / e[last - 1];
        let (rm, rc) = (rel(&mir), rel(&ccf));
        ok &= rc < rm;
        msg.push_str(&format!("; 100→200 improvement MIR {rm:.3} CCF {rc:.3}"));
    }
    (ok, msg)
}

fn ant_comparison() -> Outcome {
    let counts = [25, 50, 100, 200];
    let seeds = [0, 1, 2, 3, 4];
    let (a, ma) = ant_check(false, &counts, &seeds);
    let (b, mb) = ant_check(true, &counts, &seeds);
    let msg = format!("{ma}; {mb}");
    if a && b {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dispersion_exactness() -> Outcome {
    let sc = AntScenario::default();
    let cfg = SweepConfig::default();
    let freqs = cfg.freq_grid.points();
    let cgrid = cfg.velocity_grid.points();
    let step = cgrid[1] - cgrid[0];
    let truth = &sc.dispersion;
    let rho: Vec<f64> = freqs
        .iter()
        .map(|&f| {
            bayes_ltv::ant::bessel_j0(2.0 * std::f64::consts::PI * f * sc.distance / truth.velocity_at(f))
        })
        .collect();
    let fit = dispersion_fit(&BeamInput::Real(rho), sc.distance, &freqs, &cgrid).map_err(|e| e.to_string())?;
    let worst = freqs
        .iter()
        .zip(&fit.curve.velocities)
        .map(|(&f, c)| (c - truth.velocity_at(f)).abs())
        .fold(0.0, f64::max);
    let msg = format!("worst velocity error {worst:.2} m/s, cell {step:.2} m/s");
    if worst <= step + 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ltv_train() -> TrainConfig {
    TrainConfig {
        batch_replicas: 64,
        ..TrainConfig::default()
    }
}

fn ltv_tracking() -> Outcome {
    let spec = LtvFixtureSpec::default();
    let fx = ltv_fixture(&spec, 801).map_err(|e| e.to_string())?;
    let p = 8;
    let plan = WindowPlan::new(spec.n, 32, 16).map_err(|e| e.to_string())?;
    let cfg = ltv_train();
    let fit_with = |ell: f64| {
        let prior = GPWindowPrior::new(RbfKernelSpec::new(ell, 1.0 / p as f64), 32, p)?;
        let windows = fit_ltv(&fx.input, &fx.observed, p, &plan, &prior, &cfg)?;
        stitch(&windows, &plan, p, spec.sample_rate)
    };
    let smooth = fit_with(8.0).map_err(|e| e.to_string())?;
    let rough = fit_with(0.1).map_err(|e| e.to_string())?;
    let ls = least_squares_fir(&[(fx.input.clone(), fx.observed.clone())], p).map_err(|e| e.to_string())?;
    let lti_rows = DMatrix::from_fn(spec.n, p, |_, k| ls.taps()[k]);
    let ltv_rmse = fx.truth.rmse(&smooth.taps);
    let lti_rmse = fx.truth.rmse(&lti_rows);
    let (tv8, tv01) = (smooth.total_variation(), rough.total_variation());
    let msg = format!(
        "stitched RMSE {ltv_rmse:.4} vs best LTI {lti_rmse:.4}; TV ℓ=8 {tv8:.2} vs ℓ=0.1 {tv01:.2}"
    );
    if ltv_rmse < 0.5 * lti_rmse && tv8 < tv01 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_bayes-ltv"))
}

fn run_cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn cli_session(root: &Path) -> std::result::Result<(), String> {
    let d = |s: &str| root.join(s).to_string_lossy().into_owned();
    let lti_quick = ["--set", "train.steps=200", "--set", "train.batch_replicas=16"];
    let ltv_quick = ["--set", "ltv.train.steps=200", "--set", "ltv.train.batch_replicas=16"];
    let ant_quick = ["--set", "ant.sweep.train.steps=200", "--set", "ant.sweep.train.batch_replicas=16"];
    let lti = d("lti");
    run_cli(&["gen", "--kind", "lti", "--seed", "7", "--out", &lti])?;
    run_cli(&[&["fit", "--kind", "lti", "--seed", "7", "--out", &lti][..], &lti_quick[..]].concat())?;
    let ltv = d("ltv");
    let ltv_set = [
        "--set",
        "ltv.fixture.n=256",
        "--set",
        "ltv.fixture.first_transition=[64,112]",
        "--set",
        "ltv.fixture.second_transition=[144,192]",
    ];
    run_cli(&[&["gen", "--kind", "ltv", "--seed", "7", "--out", &ltv][..], &ltv_set[..]].concat())?;
    run_cli(
        &[
            &["fit", "--kind", "ltv", "--seed", "7", "--out", &ltv][..],
            &ltv_set[..],
            &ltv_quick[..],
        ]
        .concat(),
    )?;
    let ant = d("ant");
    let ant_set = ["--set", "ant.scenario.pair_length=512", "--set", "ant.pair_counts=[4,8]"];
    run_cli(&[&["gen", "--kind", "ant", "--seed", "7", "--out", &ant, "--pairs", "8"][..], &ant_set[..]].concat())?;
    run_cli(&[&["fit", "--kind", "ant", "--seed", "7", "--out", &ant, "--pairs", "8"][..], &ant_set[..], &ant_quick[..]].concat())?;
    run_cli(
        &[
            &["compare", "--kind", "ant", "--seed", "7", "--out", &ant, "--set", "ant.seeds=[7,8]"][..],
            &ant_set[..],
            &ant_quick[..],
        ]
        .concat(),
    )?;
    for dir in [&lti, &ltv, &ant] {
        run_cli(&["plotdata", "--out", dir])?;
    }
    run_cli(&["selftest", "--seed", "7", "--out", &d("selftest"), "--set", "selftest.samples=2000"])?;
    Ok(())
}

fn determinism() -> Outcome {
    let base = std::env::temp_dir().join(format!("bayes-ltv-accept-{}", std::process::id()));
    let (a, b) = (base.join("a"), base.join("b"));
    let _ = std::fs::remove_dir_all(&base);
    cli_session(&a)?;
    cli_session(&b)?;
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    let _ = std::fs::remove_dir_all(&base);
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    if names(&ta) != names(&tb) {
        return Err("runs wrote different file sets".into());
    }
    let differing: Vec<String> = ta
        .iter()
        .zip(&tb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    if differing.is_empty() {
        Ok(format!("{} files byte-identical across reruns", ta.len()))
    } else {
        Err(format!("differing: {}", differing.join(", ")))
    }
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "moment formulas vs Monte Carlo", budget: Duration::from_secs(120), run: moment_oracles },
        Criterion { id: 2, name: "ELBO gradients vs finite differences", budget: Duration::from_secs(60), run: gradient_check },
        Criterion { id: 3, name: "single-pair LTI regression", budget: Duration::from_secs(300), run: lti_single_pair },
        Criterion { id: 4, name: "posterior tightening with pairs", budget: Duration::from_secs(600), run: tightening },
        Criterion { id: 5, name: "posterior CCF identity", budget: Duration::from_secs(120), run: ccf_identity },
        Criterion { id: 6, name: "ANT MIR vs CCF", budget: Duration::from_secs(1800), run: ant_comparison },
        Criterion { id: 7, name: "dispersion fit exactness", budget: Duration::from_secs(60), run: dispersion_exactness },
        Criterion { id: 8, name: "LTV tracking and GP smoothing", budget: Duration::from_secs(900), run: ltv_tracking },
        Criterion { id: 9, name: "CLI determinism", budget: Duration::from_secs(600), run: determinism },
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t0 = Instant::now();
        let res = (c.run)();
        let dt = t0.elapsed();
        let (ok, detail) = match res {
            Ok(m) if dt <= c.budget => (true, m),
            Ok(m) => (false, format!("{m}; over budget")),
            Err(m) => (false, m),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {} {}: {} ({:.1}s / {}s) {}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            c.budget.as_secs(),
            detail
        );
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
