use bayes_ltv::ant::{sweep_pairs, sweep_to_csv, AntScenario, SweepConfig, SweepRow};
use bayes_ltv::gp::{GPWindowPrior, RbfKernelSpec};
use bayes_ltv::lti::{fit_lti, least_squares_fir, rmse};
use bayes_ltv::ltv::{fit_ltv, ltv_fixture, stitch, WindowPlan};
use bayes_ltv::Signal;
use serde::Serialize;

use super::fit::lti_rows;
use super::gen::lti_fixtures;
use super::{ant_seed, seeded, stream, STREAM_FIXTURE};
use crate::config::{Kind, RunConfig};
use crate::error::CliResult;
use crate::io::{columns_csv, OutDir};

/// Posterior width and tap error as pairs are added.
fn compare_lti(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let counts = &cfg.lti.pair_counts;
    let (truth, fixtures) = lti_fixtures(cfg, *counts.last().expect("validated nonempty"))?;
    let pairs: Vec<(Signal, Signal)> = fixtures
        .into_iter()
        .map(|(_, fx)| (fx.input, fx.observed))
        .collect();
    let train = seeded(cfg, &cfg.train);
    let mut cols = vec![Vec::new(); 4];
    for &n in counts {
        let fit = fit_lti(&pairs[..n], cfg.lti.p, &train)?;
        let ls = least_squares_fir(&pairs[..n], cfg.lti.p)?;
        let std = fit.std();
        cols[0].push(n as f64);
        cols[1].push(std.iter().sum::<f64>() / std.len() as f64);
        cols[2].push(rmse(fit.mean(), truth.taps()));
        cols[3].push(rmse(ls.taps(), truth.taps()));
        eprintln!("pairs {n}: mean std {:.4}", cols[1].last().unwrap());
    }
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    out.text(
        "tightening.csv",
        &columns_csv(&["pair_count", "mean_std", "tap_rmse", "least_squares_rmse"], &refs),
        train.seed,
        "tightening",
    )
}

/// Stitched estimates under each kernel lengthscale.
fn compare_ltv(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let v = &cfg.ltv;
    let fx = ltv_fixture(&v.fixture, stream(cfg, STREAM_FIXTURE))?;
    let plan = WindowPlan::new(fx.input.len(), v.window, v.stride)?;
    let train = seeded(cfg, &v.train);
    let ls = least_squares_fir(&[(fx.input.clone(), fx.observed.clone())], v.p)?;
    let mut cols = vec![Vec::new(); 4];
    for &ell in &v.lengthscales {
        let kernel = RbfKernelSpec {
            lengthscale: ell,
            ..v.kernel
        };
        let prior = GPWindowPrior::new(kernel, v.window, v.p)?;
        let windows = fit_ltv(&fx.input, &fx.observed, v.p, &plan, &prior, &train)?;
        let est = stitch(&windows, &plan, v.p, fx.input.sample_rate())?;
        cols[0].push(ell);
        cols[1].push(fx.truth.rmse(&est.taps));
        cols[2].push(est.total_variation());
        cols[3].push(fx.truth.rmse(&lti_rows(&ls, est.n())));
        eprintln!("lengthscale {ell}: rmse {:.4}", cols[1].last().unwrap());
    }
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    out.text(
        "lengthscales.csv",
        &columns_csv(&["lengthscale", "tap_rmse", "total_variation", "best_lti_rmse"], &refs),
        train.seed,
        "lengthscales",
    )
}

#[derive(Serialize)]
struct CountSummary {
    pair_count: usize,
    mir_error_mean: f64,
    ccf_error_mean: f64,
    mir_valid: usize,
    ccf_valid: usize,
    seeds: usize,
}

#[derive(Serialize)]
struct AntSummary {
    quantized: bool,
    counts: Vec<CountSummary>,
}

fn summarize(rows: &[SweepRow], counts: &[usize], quantized: bool) -> AntSummary {
    let counts = counts
        .iter()
        .map(|&n| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.pair_count == n).collect();
            let k = at.len() as f64;
            CountSummary {
                pair_count: n,
                mir_error_mean: at.iter().map(|r| r.mir_error).sum::<f64>() / k,
                ccf_error_mean: at.iter().map(|r| r.ccf_error).sum::<f64>() / k,
                mir_valid: at.iter().filter(|r| r.mir_valid).count(),
                ccf_valid: at.iter().filter(|r| r.ccf_valid).count(),
                seeds: at.len(),
            }
        })
        .collect();
    AntSummary { quantized, counts }
}

fn detail_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "pair_count,seed,mir_error,ccf_error,mir_path_misfit,ccf_path_misfit,mir_valid,ccf_valid\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.pair_count,
            r.seed,
            r.mir_error,
            r.ccf_error,
            r.mir_path_misfit,
            r.ccf_path_misfit,
            u8::from(r.mir_valid),
            u8::from(r.ccf_valid)
        ));
    }
    s
}

/// MIR against CCF velocity error over pair counts and scenario seeds.
fn compare_ant(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let a = &cfg.ant;
    let sweep = SweepConfig {
        train: seeded(cfg, &a.sweep.train),
        ..a.sweep.clone()
    };
    let mut rows = Vec::new();
    for &s in &a.seeds {
        let sc = AntScenario {
            seed: ant_seed(cfg, s),
            ..a.scenario.clone()
        };
        let r = sweep_pairs(&sc, &a.pair_counts, a.quantize, &sweep)?;
        eprintln!("seed {s}: {} counts done", r.len());
        rows.extend(r);
    }
    let seed = sweep.train.seed;
    out.text("sweep.csv", &sweep_to_csv(&rows), seed, "sweep")?;
    out.text("sweep_detail.csv", &detail_csv(&rows), seed, "sweep_detail")?;
    out.json("summary.json", &summarize(&rows, &a.pair_counts, a.quantize), seed, "summary")
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let mut out = OutDir::create(&cfg.out)?;
    match cfg.kind {
        Kind::Lti => compare_lti(cfg, &mut out),
        Kind::Ltv => compare_ltv(cfg, &mut out),
        Kind::Ant => compare_ant(cfg, &mut out),
    }
}
