use std::path::Path;

use bayes_ltv::ant::MisfitMap;
use bayes_ltv::ltv::{std_path, TimeVaryingIR};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{column, columns_csv, parse_columns, read_text, OutDir};

type Parsed = (Vec<String>, Vec<Vec<f64>>);

/// `x,y` or, with a spread column, `x,y,ylo,yhi` at ±2 spread.
fn series(x: &[f64], y: &[f64], spread: Option<&[f64]>) -> String {
    match spread {
        None => columns_csv(&["x", "y"], &[x, y]),
        Some(s) => {
            let lo: Vec<f64> = y.iter().zip(s).map(|(m, s)| m - 2.0 * s).collect();
            let hi: Vec<f64> = y.iter().zip(s).map(|(m, s)| m + 2.0 * s).collect();
            columns_csv(&["x", "y", "ylo", "yhi"], &[x, y, &lo, &hi])
        }
    }
}

fn banded(x: &[f64], y: &[f64], lo: &[f64], hi: &[f64]) -> String {
    columns_csv(&["x", "y", "ylo", "yhi"], &[x, y, lo, hi])
}

struct Plotter<'a> {
    dir: &'a Path,
    out: OutDir,
}

impl Plotter<'_> {
    fn load(&self, name: &str) -> CliResult<Option<(std::path::PathBuf, Parsed)>> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Ok(None);
        }
        let parsed = parse_columns(&path)?;
        Ok(Some((path, parsed)))
    }

    fn emit(&mut self, name: &str, text: &str) -> CliResult<()> {
        self.out.text(&format!("plot/{name}"), text, 0, "plot")
    }

    /// `x` against `y`, with an optional `std` column turned into a band.
    fn simple(&mut self, src: &str, dst: &str, x: &str, y: &str, std: Option<&str>) -> CliResult<()> {
        let Some((path, p)) = self.load(src)? else { return Ok(()) };
        let s = std.map(|s| column(&path, &p, s)).transpose()?;
        let text = series(column(&path, &p, x)?, column(&path, &p, y)?, s);
        self.emit(dst, &text)
    }

    fn lti(&mut self) -> CliResult<()> {
        self.simple("taps.csv", "taps_posterior.csv", "k", "mean", Some("std"))?;
        self.simple("taps.csv", "taps_truth.csv", "k", "truth", None)?;
        self.simple("taps.csv", "taps_least_squares.csv", "k", "least_squares", None)?;
        self.simple("prediction.csv", "prediction_posterior.csv", "t", "mean", Some("std"))?;
        self.simple("prediction.csv", "prediction_observed.csv", "t", "observed", None)?;
        self.simple("prediction.csv", "prediction_clean.csv", "t", "clean", None)?;
        self.simple("ccf.csv", "ccf_posterior.csv", "lag", "mean", Some("std"))?;
        self.simple("ccf.csv", "ccf_closed_form.csv", "lag", "closed_form", None)?;
        self.simple("trace.csv", "trace.csv", "step", "loss", None)?;
        self.simple("tightening.csv", "tightening_std.csv", "pair_count", "mean_std", None)?;
        self.simple("tightening.csv", "tightening_rmse.csv", "pair_count", "tap_rmse", None)?;
        if let Some((path, p)) = self.load("freq_response.csv")? {
            let f = column(&path, &p, "freq")?;
            for q in ["mag", "phase"] {
                let c = |s: &str| column(&path, &p, &format!("{q}_{s}"));
                let text = banded(f, c("mean")?, c("lo")?, c("hi")?);
                let name = if q == "mag" { "magnitude" } else { "phase" };
                self.emit(&format!("{name}.csv"), &text)?;
            }
        }
        Ok(())
    }

    fn ltv(&mut self) -> CliResult<()> {
        self.simple("lengthscales.csv", "lengthscale_rmse.csv", "lengthscale", "tap_rmse", None)?;
        self.simple("lengthscales.csv", "lengthscale_tv.csv", "lengthscale", "total_variation", None)?;
        for (src, prefix) in [("ltv_estimate.csv", "ltv_estimate"), ("truth_ltv.csv", "ltv_truth")] {
            let path = self.dir.join(src);
            if !path.exists() {
                continue;
            }
            let sp = std_path(&path);
            let std = if sp.exists() { Some(read_text(&sp)?) } else { None };
            let est = TimeVaryingIR::from_csv(&read_text(&path)?, std.as_deref())
                .map_err(|e| CliError::io(&path, e))?;
            let t: Vec<f64> = (0..est.n()).map(|n| n as f64 / est.sample_rate).collect();
            for k in 0..est.p() {
                let y: Vec<f64> = est.taps.column(k).iter().copied().collect();
                let s: Option<Vec<f64>> = est.std.as_ref().map(|s| s.column(k).iter().copied().collect());
                self.emit(&format!("{prefix}_tap{}.csv", k + 1), &series(&t, &y, s.as_deref()))?;
            }
        }
        Ok(())
    }

    fn ant(&mut self) -> CliResult<()> {
        self.simple("ccf_stack.csv", "ccf_stack.csv", "lag", "mean", Some("std"))?;
        self.simple("curve_mir.csv", "curve_mir.csv", "freq", "velocity", None)?;
        self.simple("curve_ccf.csv", "curve_ccf.csv", "freq", "velocity", None)?;
        if self.dir.join("curve_mir.csv").exists() {
            self.simple("curve_mir.csv", "curve_truth.csv", "freq", "truth", None)?;
        } else {
            self.simple("curve_ccf.csv", "curve_truth.csv", "freq", "truth", None)?;
        }
        for name in ["misfit_mir.csv", "misfit_ccf.csv"] {
            let path = self.dir.join(name);
            if path.exists() {
                let map = MisfitMap::from_csv(&read_text(&path)?).map_err(|e| CliError::io(&path, e))?;
                self.emit(name, &map.to_csv())?;
            }
        }
        if let Some((path, p)) = self.load("sweep_detail.csv")? {
            let n = column(&path, &p, "pair_count")?;
            let mut counts: Vec<f64> = n.to_vec();
            counts.sort_by(f64::total_cmp);
            counts.dedup();
            for method in ["mir", "ccf"] {
                let e = column(&path, &p, &format!("{method}_error"))?;
                let (mut y, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
                for &c in &counts {
                    let v: Vec<f64> = n.iter().zip(e).filter(|(k, _)| **k == c).map(|(_, e)| *e).collect();
                    y.push(v.iter().sum::<f64>() / v.len() as f64);
                    lo.push(v.iter().copied().fold(f64::INFINITY, f64::min));
                    hi.push(v.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                }
                self.emit(&format!("sweep_{method}.csv"), &banded(&counts, &y, &lo, &hi))?;
            }
        }
        Ok(())
    }
}

/// Whatever result files exist in the output directory become series under
/// `plot/`, one `x,y[,ylo,yhi]` file each. Bands are ±2σ, percentile bands
/// for the frequency response and min/max over seeds for sweeps.
pub fn run(cfg: &RunConfig) -> CliResult<()> {
    if !cfg.out.is_dir() {
        return Err(CliError::io(&cfg.out, "not a directory"));
    }
    let mut p = Plotter {
        dir: &cfg.out,
        out: OutDir::create(&cfg.out)?,
    };
    p.lti()?;
    p.ltv()?;
    p.ant()?;
    if p.out.written.is_empty() {
        return Err(CliError::config(format!(
            "no result files in {}; run fit or compare first",
            cfg.out.display()
        )));
    }
    eprintln!("wrote {} series to {}", p.out.written.len(), cfg.out.join("plot").display());
    Ok(())
}
