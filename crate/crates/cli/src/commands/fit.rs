use std::path::Path;

use bayes_ltv::ant::{velocity_error, DispersionCurve, DispersionFit};
use bayes_ltv::gp::GPWindowPrior;
use bayes_ltv::lti::{
    ccf_of_fir, fit_lti, least_squares_fir, mse, posterior_ccf, posterior_frequency_response,
    posterior_predict, rmse,
};
use bayes_ltv::ltv::{fit_ltv, stitch, TimeVaryingIR, WindowPlan};
use bayes_ltv::rng::derive_seed;
use bayes_ltv::signal::one_bit_quantize;
use bayes_ltv::{Fir, Signal};
use nalgebra::DMatrix;
use serde::Serialize;

use super::{seeded, stream, STREAM_SAMPLING};
use crate::config::{Kind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{column, columns_csv, parse_columns, read_json, read_text, load_signal, Manifest, OutDir};

pub fn load_pairs(dir: &Path, m: &Manifest) -> CliResult<Vec<(Signal, Signal)>> {
    let inputs = m.files_with("input");
    let outputs = m.files_with("output");
    if inputs.is_empty() || inputs.len() != outputs.len() {
        return Err(CliError::config("manifest must list matching input and output files"));
    }
    inputs
        .iter()
        .zip(&outputs)
        .map(|(a, b)| Ok((load_signal(dir, a)?, load_signal(dir, b)?)))
        .collect()
}

fn load_fir(dir: &Path, m: &Manifest, role: &str) -> CliResult<Fir> {
    let path = dir.join(&m.file(role)?.path);
    let parsed = parse_columns(&path)?;
    Ok(Fir::new(column(&path, &parsed, "h")?.to_vec())?)
}

fn load_manifest(cfg: &RunConfig) -> CliResult<Manifest> {
    let m = Manifest::load(&cfg.out)?;
    if m.kind != cfg.kind {
        return Err(CliError::config(format!(
            "{} holds {} fixtures, not {}",
            cfg.out.display(),
            m.kind.name(),
            cfg.kind.name()
        )));
    }
    Ok(m)
}

#[derive(Serialize)]
struct LtiMetrics {
    n_pairs: usize,
    p: usize,
    final_loss: f64,
    mean_posterior_std: f64,
    tap_rmse: f64,
    least_squares_rmse: f64,
    taps_within_3sigma: usize,
    denoised_output_mse: f64,
    observed_output_mse: f64,
}

fn fit_lti_cmd(cfg: &RunConfig) -> CliResult<()> {
    let m = load_manifest(cfg)?;
    let dir = &cfg.out;
    let pairs = load_pairs(dir, &m)?;
    let truth = load_fir(dir, &m, "truth_fir")?;
    let clean = load_signal(dir, m.file("clean")?)?;
    let p = m.config.lti.p;
    let train = seeded(cfg, &cfg.train);
    let fit = fit_lti(&pairs, p, &train)?;
    let ls = least_squares_fir(&pairs, p)?;
    let samp = stream(cfg, STREAM_SAMPLING);
    let l = &cfg.lti;
    let (f0, g0) = &pairs[0];
    let pred = posterior_predict(&fit, f0, l.predict_samples, derive_seed(samp, 0))?;
    let ccf = posterior_ccf(&fit, f0, l.ccf_max_lag, l.ccf_samples, derive_seed(samp, 1))?;
    let exact = ccf_of_fir(f0, fit.mean(), l.ccf_max_lag)?;
    let fr = posterior_frequency_response(&fit, l.freq_points, l.freq_samples, f0.sample_rate(), derive_seed(samp, 2))?;

    let mut out = OutDir::create(dir)?;
    let seed = train.seed;
    out.json("fit_lti.json", &fit.to_json(), seed, "fit")?;
    let std = fit.std();
    let k: Vec<f64> = (1..=p).map(|k| k as f64).collect();
    out.text(
        "taps.csv",
        &columns_csv(&["k", "mean", "std", "truth", "least_squares"], &[&k, fit.mean(), &std, truth.taps(), ls.taps()]),
        seed,
        "taps",
    )?;
    let t: Vec<f64> = (0..f0.len()).map(|t| t as f64).collect();
    out.text(
        "prediction.csv",
        &columns_csv(
            &["t", "mean", "std", "observed", "clean"],
            &[&t, &pred.mean, &pred.std, g0.samples(), clean.samples()],
        ),
        seed,
        "prediction",
    )?;
    let lags: Vec<f64> = ccf.mean.lags().map(|l| l as f64).collect();
    out.text(
        "ccf.csv",
        &columns_csv(
            &["lag", "mean", "std", "closed_form"],
            &[&lags, &ccf.mean.values, &ccf.std.values, &exact.values],
        ),
        seed,
        "ccf",
    )?;
    out.text(
        "freq_response.csv",
        &columns_csv(
            &["freq", "mag_mean", "mag_std", "mag_lo", "mag_hi", "phase_mean", "phase_std", "phase_lo", "phase_hi"],
            &[
                &fr.frequencies,
                &fr.magnitude_mean,
                &fr.magnitude_std,
                &fr.magnitude_lo,
                &fr.magnitude_hi,
                &fr.phase_mean,
                &fr.phase_std,
                &fr.phase_lo,
                &fr.phase_hi,
            ],
        ),
        seed,
        "freq_response",
    )?;
    let steps: Vec<f64> = (0..fit.trace.losses.len()).map(|s| s as f64).collect();
    out.text("trace.csv", &columns_csv(&["step", "loss"], &[&steps, &fit.trace.losses]), seed, "trace")?;
    let metrics = LtiMetrics {
        n_pairs: pairs.len(),
        p,
        final_loss: fit.trace.final_loss(),
        mean_posterior_std: std.iter().sum::<f64>() / p as f64,
        tap_rmse: rmse(fit.mean(), truth.taps()),
        least_squares_rmse: rmse(ls.taps(), truth.taps()),
        taps_within_3sigma: truth
            .taps()
            .iter()
            .zip(fit.mean())
            .zip(&std)
            .filter(|((t, m), s)| (*t - *m).abs() <= 3.0 * *s)
            .count(),
        denoised_output_mse: mse(&pred.mean, clean.samples()),
        observed_output_mse: mse(g0.samples(), clean.samples()),
    };
    out.json("metrics.json", &metrics, seed, "metrics")
}

#[derive(Serialize)]
struct LtvMetrics {
    n: usize,
    p: usize,
    windows: usize,
    lengthscale: f64,
    tap_rmse: f64,
    best_lti_rmse: f64,
    total_variation: f64,
    mean_posterior_std: f64,
    mean_final_loss: f64,
}

pub fn lti_rows(ls: &Fir, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, ls.len(), |_, k| ls.taps()[k])
}

fn fit_ltv_cmd(cfg: &RunConfig) -> CliResult<()> {
    let m = load_manifest(cfg)?;
    let dir = &cfg.out;
    let f = load_signal(dir, m.file("input")?)?;
    let g = load_signal(dir, m.file("output")?)?;
    let truth_path = dir.join(&m.file("truth_ltv")?.path);
    let truth = TimeVaryingIR::from_csv(&read_text(&truth_path)?, None).map_err(|e| CliError::io(&truth_path, e))?;
    let v = &cfg.ltv;
    let plan = WindowPlan::new(f.len(), v.window, v.stride)?;
    let prior = GPWindowPrior::new(v.kernel, v.window, v.p)?;
    let train = seeded(cfg, &v.train);
    let windows = fit_ltv(&f, &g, v.p, &plan, &prior, &train)?;
    let est = stitch(&windows, &plan, v.p, f.sample_rate())?;
    if truth.p() != v.p || truth.n() != est.n() {
        return Err(CliError::config("ltv.p or length differs from the fixture"));
    }
    let ls = least_squares_fir(&[(f.clone(), g.clone())], v.p)?;
    let std = est.std.as_ref().expect("stitch reports std");
    let mut out = OutDir::create(dir)?;
    let seed = train.seed;
    out.text("ltv_estimate.csv", &est.to_csv(), seed, "ltv_mean")?;
    out.text("ltv_estimate_std.csv", &est.std_csv().expect("std present"), seed, "ltv_std")?;
    let metrics = LtvMetrics {
        n: est.n(),
        p: v.p,
        windows: windows.len(),
        lengthscale: v.kernel.lengthscale,
        tap_rmse: truth.rmse(&est.taps),
        best_lti_rmse: truth.rmse(&lti_rows(&ls, est.n())),
        total_variation: est.total_variation(),
        mean_posterior_std: std.mean(),
        mean_final_loss: windows.iter().map(|w| w.trace.final_loss()).sum::<f64>() / windows.len() as f64,
    };
    out.json("metrics.json", &metrics, seed, "metrics")
}

#[derive(Serialize)]
struct AntMetrics {
    n_pairs: usize,
    quantized: bool,
    mir_error: f64,
    ccf_error: f64,
    mir_path_misfit: f64,
    ccf_path_misfit: f64,
    mir_valid: bool,
    ccf_valid: bool,
}

pub fn curve_csv(fit: &DispersionFit, truth: &DispersionCurve) -> String {
    let t: Vec<f64> = fit.curve.freqs.iter().map(|&f| truth.velocity_at(f)).collect();
    columns_csv(&["freq", "velocity", "truth"], &[&fit.curve.freqs, &fit.curve.velocities, &t])
}

fn fit_ant_cmd(cfg: &RunConfig) -> CliResult<()> {
    let m = load_manifest(cfg)?;
    let dir = &cfg.out;
    let mut pairs = load_pairs(dir, &m)?;
    let truth: DispersionCurve = read_json(&dir.join(&m.file("truth_dispersion")?.path))?;
    let sc = &m.config.ant.scenario;
    let q = cfg.ant.quantize;
    if q {
        pairs = pairs.iter().map(|(a, b)| (one_bit_quantize(a), one_bit_quantize(b))).collect();
    }
    let sweep = bayes_ltv::ant::SweepConfig {
        train: seeded(cfg, &cfg.ant.sweep.train),
        ..cfg.ant.sweep.clone()
    };
    let (fit, mir) = sweep.fit_mir_curve(sc, &pairs, q)?;
    let (stack, ccf) = sweep.fit_ccf_curve(sc, &pairs)?;
    let mut out = OutDir::create(dir)?;
    let seed = sweep.train.seed;
    out.json("mir_fit.json", &fit.to_json(), seed, "fit")?;
    let lags: Vec<f64> = (-(stack.max_lag as i64)..=stack.max_lag as i64).map(|l| l as f64).collect();
    out.text("ccf_stack.csv", &columns_csv(&["lag", "mean", "std"], &[&lags, &stack.mean, &stack.std]), seed, "ccf_stack")?;
    out.text("misfit_mir.csv", &mir.map.to_csv(), seed, "misfit_mir")?;
    out.text("misfit_ccf.csv", &ccf.map.to_csv(), seed, "misfit_ccf")?;
    out.text("curve_mir.csv", &curve_csv(&mir, &truth), seed, "curve_mir")?;
    out.text("curve_ccf.csv", &curve_csv(&ccf, &truth), seed, "curve_ccf")?;
    let metrics = AntMetrics {
        n_pairs: pairs.len(),
        quantized: q,
        mir_error: velocity_error(&mir.curve, &truth)?,
        ccf_error: velocity_error(&ccf.curve, &truth)?,
        mir_path_misfit: mir.path_misfit,
        ccf_path_misfit: ccf.path_misfit,
        mir_valid: mir.path_misfit < sweep.valid_misfit,
        ccf_valid: ccf.path_misfit < sweep.valid_misfit,
    };
    out.json("metrics.json", &metrics, seed, "metrics")
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    match cfg.kind {
        Kind::Lti => fit_lti_cmd(cfg),
        Kind::Ltv => fit_ltv_cmd(cfg),
        Kind::Ant => fit_ant_cmd(cfg),
    }
}
