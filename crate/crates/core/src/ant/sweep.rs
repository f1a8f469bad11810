use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dispersion::{dispersion_fit, velocity_error, BeamInput, DispersionFit, Grid};
use super::{gen_ant_pairs, AntScenario};
use crate::error::{invalid, Result};
use crate::lti::{fit_lti, fit_lti_stats, pooled_stats, LtiFit};
use crate::signal::{one_bit_quantize, whiten_slice, xcorr_fft, Signal};
use crate::vi::{GramObservation, TrainConfig};

/// Stacked whitened cross-correlation, lags `-max_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct CcfStack {
    pub max_lag: usize,
    pub mean: Vec<f64>,
    /// Standard deviation of the per-pair CCFs around the mean.
    pub std: Vec<f64>,
}

/// Each pair is cut into non-overlapping windows; every window of both
/// receivers is whitened and cross-correlated, window CCFs are averaged per
/// pair, and pair CCFs are averaged over pairs.
pub fn ccf_stack(
    pairs: &[(Signal, Signal)],
    window_length: usize,
    water_level: f64,
    max_lag: usize,
) -> Result<CcfStack> {
    if pairs.is_empty() {
        return Err(invalid("CCF stacking needs at least one pair"));
    }
    if !(water_level > 0.0) {
        return Err(invalid("water_level must be positive"));
    }
    if max_lag >= window_length {
        return Err(invalid("max_lag must be below the window length"));
    }
    for (i, (a, b)) in pairs.iter().enumerate() {
        if window_length > a.len() || window_length > b.len() {
            return Err(invalid(format!(
                "pair {i}: window length {window_length} exceeds signal length"
            )));
        }
    }
    let per_pair: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|(a, b)| {
            let n = a.len().min(b.len());
            let mut acc = vec![0.0; 2 * max_lag + 1];
            let mut count = 0.0;
            for start in (0..=n - window_length).step_by(window_length) {
                let wa = whiten_slice(&a.samples()[start..start + window_length], water_level);
                let wb = whiten_slice(&b.samples()[start..start + window_length], water_level);
                for (o, v) in acc.iter_mut().zip(xcorr_fft(&wa, &wb, max_lag)) {
                    *o += v;
                }
                count += 1.0;
            }
            acc.iter().map(|v| v / count).collect()
        })
        .collect();
    let np = per_pair.len() as f64;
    let len = 2 * max_lag + 1;
    let mut mean = vec![0.0; len];
    for c in &per_pair {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= np);
    let mut std = vec![0.0; len];
    if per_pair.len() > 1 {
        for c in &per_pair {
            for ((s, v), m) in std.iter_mut().zip(c).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / (np - 1.0)).sqrt());
    }
    Ok(CcfStack {
        max_lag,
        mean,
        std,
    })
}

/// Bayesian inter-receiver response: receiver A as input, B as output.
pub fn fit_mir(pairs: &[(Signal, Signal)], p: usize, cfg: &TrainConfig) -> Result<LtiFit> {
    fit_lti(pairs, p, cfg)
}

/// Arcsine-law correction of sign-data statistics.
///
/// For jointly Gaussian records the correlation of their signs is
/// `(2/π)·asin(r)`. Pair-averaged per-sample statistics of ±1 data are
/// therefore mapped through `sin(π/2 · ·)` before rescaling to the total
/// pair weight.
pub fn arcsine_corrected_stats(pairs: &[(Signal, Signal)], p: usize) -> Result<GramObservation> {
    let pooled = pooled_stats(pairs, p)?;
    let r = pairs.len() as f64;
    let fix = |v: f64| (std::f64::consts::FRAC_PI_2 * (v / r).clamp(-1.0, 1.0)).sin() * r;
    Ok(GramObservation {
        gram: pooled.gram.map(fix),
        cross: pooled.cross.map(fix),
        energy: fix(pooled.energy),
    })
}

/// [`fit_mir`] for one-bit quantized pairs, on arcsine-corrected statistics.
pub fn fit_mir_quantized(pairs: &[(Signal, Signal)], p: usize, cfg: &TrainConfig) -> Result<LtiFit> {
    fit_lti_stats(&arcsine_corrected_stats(pairs, p)?, cfg)
}

/// Settings shared by both pipelines in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub train: TrainConfig,
    pub ccf_window: usize,
    pub water_level: f64,
    pub ccf_max_lag: usize,
    pub freq_grid: Grid,
    pub velocity_grid: Grid,
    /// A ridge is valid when its mean misfit is below this.
    pub valid_misfit: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                steps: 2000,
                ..TrainConfig::default()
            },
            ccf_window: 256,
            water_level: 1e-4,
            ccf_max_lag: 32,
            freq_grid: Grid {
                start: 0.35,
                stop: 1.6,
                n: 126,
            },
            velocity_grid: Grid {
                start: 1000.0,
                stop: 4000.0,
                n: 301,
            },
            valid_misfit: 0.1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.freq_grid.validate("sweep.freq_grid")?;
        self.velocity_grid.validate("sweep.velocity_grid")?;
        if self.velocity_grid.start <= 0.0 {
            return Err(invalid("sweep.velocity_grid must be positive"));
        }
        if self.ccf_max_lag >= self.ccf_window {
            return Err(invalid("sweep.ccf_max_lag must be below sweep.ccf_window"));
        }
        if !(self.water_level > 0.0) {
            return Err(invalid("sweep.water_level must be positive"));
        }
        Ok(())
    }

    pub fn fit_mir_curve(
        &self,
        sc: &AntScenario,
        pairs: &[(Signal, Signal)],
        quantized: bool,
    ) -> Result<(LtiFit, DispersionFit)> {
        let fit = if quantized {
            fit_mir_quantized(pairs, sc.n_taps, &self.train)?
        } else {
            fit_mir(pairs, sc.n_taps, &self.train)?
        };
        let input = BeamInput::Lags {
            first_lag: 1,
            values: fit.posterior.mean.clone(),
            reference_lag: sc.bulk_delay as f64,
            sample_rate: sc.sample_rate,
        };
        let df = dispersion_fit(&input, sc.distance, &self.freq_grid.points(), &self.velocity_grid.points())?;
        Ok((fit, df))
    }

    pub fn fit_ccf_curve(
        &self,
        sc: &AntScenario,
        pairs: &[(Signal, Signal)],
    ) -> Result<(CcfStack, DispersionFit)> {
        let stack = ccf_stack(pairs, self.ccf_window, self.water_level, self.ccf_max_lag)?;
        let input = BeamInput::Lags {
            first_lag: -(stack.max_lag as i64),
            values: stack.mean.clone(),
            reference_lag: sc.bulk_delay as f64,
            sample_rate: sc.sample_rate,
        };
        let df = dispersion_fit(&input, sc.distance, &self.freq_grid.points(), &self.velocity_grid.points())?;
        Ok((stack, df))
    }
}

/// One cell of an error-versus-pairs sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub pair_count: usize,
    pub mir_error: f64,
    pub ccf_error: f64,
    pub mir_path_misfit: f64,
    pub ccf_path_misfit: f64,
    pub mir_valid: bool,
    pub ccf_valid: bool,
    pub seed: u64,
}

/// Runs both pipelines on the first `N` pairs for each `N` in
/// `pair_counts`. Counts run concurrently; rows come back in count order.
pub fn sweep_pairs(
    scenario: &AntScenario,
    pair_counts: &[usize],
    quantize: bool,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if pair_counts.is_empty() || pair_counts.windows(2).any(|w| w[1] <= w[0]) || pair_counts[0] == 0 {
        return Err(invalid("pair_counts must be positive and strictly ascending"));
    }
    let max = *pair_counts.last().unwrap();
    let sc = AntScenario {
        n_pairs: max,
        ..scenario.clone()
    };
    let mut pairs = gen_ant_pairs(&sc)?;
    if quantize {
        pairs = pairs
            .into_iter()
            .map(|(a, b)| (one_bit_quantize(&a), one_bit_quantize(&b)))
            .collect();
    }
    pair_counts
        .par_iter()
        .map(|&n| {
            let subset = &pairs[..n];
            let (_, mir) = cfg.fit_mir_curve(&sc, subset, quantize)?;
            let (_, ccf) = cfg.fit_ccf_curve(&sc, subset)?;
            Ok(SweepRow {
                pair_count: n,
                mir_error: velocity_error(&mir.curve, &sc.dispersion)?,
                ccf_error: velocity_error(&ccf.curve, &sc.dispersion)?,
                mir_path_misfit: mir.path_misfit,
                ccf_path_misfit: ccf.path_misfit,
                mir_valid: mir.path_misfit < cfg.valid_misfit,
                ccf_valid: ccf.path_misfit < cfg.valid_misfit,
                seed: sc.seed,
            })
        })
        .collect()
}

/// `pair_count,mir_error,ccf_error,seed` rows.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("pair_count,mir_error,ccf_error,seed\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.pair_count, r.mir_error, r.ccf_error, r.seed));
    }
    s
}
