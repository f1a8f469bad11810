use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{bessel_j0, DispersionCurve};
use crate::error::{invalid, Result};

/// Maximum change of the velocity index between adjacent frequencies.
pub const MAX_JUMP: usize = 3;

/// Uniform grid of `n` points from `start` to `stop` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub n: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.start + step * i as f64).collect()
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.n == 0 || !(self.stop >= self.start) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(invalid(format!("{name} needs n ≥ 1 and start ≤ stop")));
        }
        if self.n > 1 && self.stop == self.start {
            return Err(invalid(format!("{name} must be strictly increasing")));
        }
        Ok(())
    }
}

/// What is compared against the J₀ beam pattern.
#[derive(Debug, Clone, PartialEq)]
pub enum BeamInput {
    /// Lag series `values[j]` at lag `first_lag + j`, referenced to
    /// `reference_lag`: `ρ(f) = Re Σ_j v_j e^{−i2πf(ℓ_j − τ₀)/fs}`.
    Lags {
        first_lag: i64,
        values: Vec<f64>,
        reference_lag: f64,
        sample_rate: f64,
    },
    /// `ρ(f)` given directly on the frequency grid.
    Real(Vec<f64>),
}

impl BeamInput {
    pub fn rho(&self, freqs: &[f64]) -> Result<Vec<f64>> {
        match self {
            BeamInput::Real(v) => {
                if v.len() != freqs.len() {
                    return Err(invalid("spectrum length differs from frequency grid"));
                }
                Ok(v.clone())
            }
            BeamInput::Lags {
                first_lag,
                values,
                reference_lag,
                sample_rate,
            } => Ok(freqs
                .iter()
                .map(|&f| {
                    let w = -2.0 * std::f64::consts::PI * f / sample_rate;
                    values
                        .iter()
                        .enumerate()
                        .map(|(j, v)| {
                            let lag = (*first_lag + j as i64) as f64 - reference_lag;
                            Complex64::from_polar(*v, w * lag)
                        })
                        .sum::<Complex64>()
                        .re
                })
                .collect()),
        }
    }
}

/// Squared misfit over a frequency × velocity grid, stored row-major by
/// frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct MisfitMap {
    pub freqs: Vec<f64>,
    pub velocities: Vec<f64>,
    pub values: Vec<f64>,
}

impl MisfitMap {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.velocities.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nc = self.velocities.len();
        &self.values[i * nc..(i + 1) * nc]
    }

    /// Header rows `freq_hz,…` and `velocity_m_s,…`, then one row of misfit
    /// values per frequency.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "freq_hz,{}", join(&self.freqs));
        let _ = writeln!(s, "velocity_m_s,{}", join(&self.velocities));
        for i in 0..self.freqs.len() {
            let _ = writeln!(s, "{}", join(self.row(i)));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| crate::error::Error::Parse(format!("misfit map: {m}"));
        let mut lines = text.lines();
        let parse_row = |l: &str| -> Result<Vec<f64>> {
            l.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| bad(&e.to_string())))
                .collect()
        };
        let header = |l: Option<&str>, tag: &str| -> Result<Vec<f64>> {
            let l = l.ok_or_else(|| bad("missing header"))?;
            let rest = l
                .strip_prefix(tag)
                .and_then(|r| r.strip_prefix(','))
                .ok_or_else(|| bad(&format!("expected {tag} header")))?;
            parse_row(rest)
        };
        let freqs = header(lines.next(), "freq_hz")?;
        let velocities = header(lines.next(), "velocity_m_s")?;
        let mut values = Vec::with_capacity(freqs.len() * velocities.len());
        let mut rows = 0;
        for l in lines.filter(|l| !l.trim().is_empty()) {
            let r = parse_row(l)?;
            if r.len() != velocities.len() {
                return Err(bad("row length differs from velocity grid"));
            }
            values.extend(r);
            rows += 1;
        }
        if rows != freqs.len() {
            return Err(bad("row count differs from frequency grid"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(bad("misfit values must be finite and nonnegative"));
        }
        Ok(Self {
            freqs,
            velocities,
            values,
        })
    }
}

/// Result of fitting one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionFit {
    /// Point misfit at each grid node.
    pub map: MisfitMap,
    pub curve: DispersionCurve,
    /// Velocity index per frequency.
    pub path: Vec<usize>,
    /// Mean point misfit along the path.
    pub path_misfit: f64,
}

/// Weight of the slope-change term in ridge tracking. It only separates
/// paths whose misfits agree to about this level.
pub const CURVATURE_WEIGHT: f64 = 1e-9;

fn j0_slope(x: f64) -> f64 {
    let h = 1e-5;
    (bessel_j0(x + h) - bessel_j0(x - h)) / (2.0 * h)
}

/// Range of J₀ over `[a, b]`, locating at most one interior extremum.
/// Cells are far narrower than the spacing of J₀ extrema.
fn j0_range(a: f64, b: f64) -> (f64, f64) {
    let (ja, jb) = (bessel_j0(a), bessel_j0(b));
    let (mut lo, mut hi) = (ja.min(jb), ja.max(jb));
    let sa = j0_slope(a).signum();
    if sa != j0_slope(b).signum() {
        let (mut l, mut r) = (a, b);
        for _ in 0..60 {
            let m = 0.5 * (l + r);
            if j0_slope(m).signum() == sa {
                l = m;
            } else {
                r = m;
            }
        }
        let je = bessel_j0(0.5 * (l + r));
        lo = lo.min(je);
        hi = hi.max(je);
    }
    (lo, hi)
}

/// Smallest squared misfit over each velocity cell, the cell of node `j`
/// spanning the midpoints to its neighbours. A beam pattern generated by a
/// velocity inside a cell scores exactly zero there, however far the true
/// velocity sits from the node.
pub fn cell_misfit_map(rho: &[f64], d: f64, freq_grid: &[f64], velocity_grid: &[f64]) -> Result<MisfitMap> {
    if rho.len() != freq_grid.len() {
        return Err(invalid("spectrum length differs from frequency grid"));
    }
    let nc = velocity_grid.len();
    let mut values = Vec::with_capacity(freq_grid.len() * nc);
    for (f, r) in freq_grid.iter().zip(rho) {
        let k = 2.0 * std::f64::consts::PI * f * d;
        for j in 0..nc {
            let c_lo = if j > 0 { 0.5 * (velocity_grid[j - 1] + velocity_grid[j]) } else { velocity_grid[j] };
            let c_hi = if j + 1 < nc { 0.5 * (velocity_grid[j] + velocity_grid[j + 1]) } else { velocity_grid[j] };
            let (lo, hi) = j0_range(k / c_hi, k / c_lo);
            let e = if *r < lo {
                lo - r
            } else if *r > hi {
                r - hi
            } else {
                0.0
            };
            values.push(e * e);
        }
    }
    Ok(MisfitMap {
        freqs: freq_grid.to_vec(),
        velocities: velocity_grid.to_vec(),
        values,
    })
}

fn check_grids(d: f64, freq_grid: &[f64], velocity_grid: &[f64]) -> Result<()> {
    if freq_grid.is_empty() || velocity_grid.is_empty() {
        return Err(invalid("dispersion fit needs a nonempty band and velocity grid"));
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(invalid("receiver distance must be positive"));
    }
    if freq_grid.windows(2).any(|w| !(w[1] > w[0]))
        || velocity_grid.windows(2).any(|w| !(w[1] > w[0]))
        || velocity_grid[0] <= 0.0
    {
        return Err(invalid("grids must be strictly increasing with positive velocities"));
    }
    Ok(())
}

/// Misfit `(ρ(f) − J₀(2πfd/c))²` and the continuity-constrained ridge.
///
/// The ridge is tracked on [`cell_misfit_map`]; the returned map holds the
/// point misfit at the grid nodes.
pub fn dispersion_fit(
    input: &BeamInput,
    d: f64,
    freq_grid: &[f64],
    velocity_grid: &[f64],
) -> Result<DispersionFit> {
    check_grids(d, freq_grid, velocity_grid)?;
    let rho = input.rho(freq_grid)?;
    let nc = velocity_grid.len();
    let mut values = Vec::with_capacity(freq_grid.len() * nc);
    for (f, r) in freq_grid.iter().zip(&rho) {
        for c in velocity_grid {
            let e = r - bessel_j0(2.0 * std::f64::consts::PI * f * d / c);
            values.push(e * e);
        }
    }
    let map = MisfitMap {
        freqs: freq_grid.to_vec(),
        velocities: velocity_grid.to_vec(),
        values,
    };
    let cells = cell_misfit_map(&rho, d, freq_grid, velocity_grid)?;
    let (path, _) = track_ridge(&cells, MAX_JUMP);
    let curve = DispersionCurve::new(
        freq_grid.to_vec(),
        path.iter().map(|&j| velocity_grid[j]).collect(),
    )?;
    let total: f64 = path.iter().enumerate().map(|(i, &j)| map.at(i, j)).sum();
    Ok(DispersionFit {
        path_misfit: total / freq_grid.len() as f64,
        map,
        curve,
        path,
    })
}

/// Minimum-misfit path whose velocity index moves by at most `max_jump`
/// cells between adjacent frequencies, found by dynamic programming over
/// (velocity, last jump) states. A change of jump size costs
/// [`CURVATURE_WEIGHT`] per squared cell, and remaining ties go to the
/// smallest jump. Returns the path and its summed misfit.
pub fn track_ridge(map: &MisfitMap, max_jump: usize) -> (Vec<usize>, f64) {
    let nf = map.freqs.len();
    let nc = map.velocities.len();
    let jump = max_jump as i64;
    let nj = 2 * max_jump + 1;
    // jumps ordered 0, −1, +1, −2, +2, …
    let mut order: Vec<i64> = (-jump..=jump).collect();
    order.sort_by_key(|o| o.abs());
    let slot = |d: i64| (d + jump) as usize;
    let mut cost = vec![f64::INFINITY; nc * nj];
    for (j, v) in map.row(0).iter().enumerate() {
        for &d in &order {
            cost[j * nj + slot(d)] = *v;
        }
    }
    let mut back = vec![vec![0usize; nc * nj]; nf];
    for (i, from) in back.iter_mut().enumerate().skip(1) {
        let row = map.row(i);
        let mut next = vec![f64::INFINITY; nc * nj];
        for j in 0..nc {
            for &d in &order {
                let src = j as i64 - d;
                if src < 0 || src >= nc as i64 {
                    continue;
                }
                let base = src as usize * nj;
                let mut best = f64::INFINITY;
                let mut arg = base + slot(0);
                for &dp in &order {
                    let c = cost[base + slot(dp)] + CURVATURE_WEIGHT * ((d - dp) * (d - dp)) as f64;
                    if c < best {
                        best = c;
                        arg = base + slot(dp);
                    }
                }
                next[j * nj + slot(d)] = best + row[j];
                from[j * nj + slot(d)] = arg;
            }
        }
        cost = next;
    }
    let mut end = 0;
    for j in 0..nc {
        for &d in &order {
            let s = j * nj + slot(d);
            if cost[s] < cost[end] {
                end = s;
            }
        }
    }
    let mut path = vec![0; nf];
    let mut s = end;
    for i in (0..nf).rev() {
        path[i] = s / nj;
        if i > 0 {
            s = back[i][s];
        }
    }
    let total = path.iter().enumerate().map(|(i, &j)| map.at(i, j)).sum();
    (path, total)
}

/// Band-mean relative absolute velocity error over the estimate's
/// frequencies that lie inside the truth's range.
pub fn velocity_error(estimate: &DispersionCurve, truth: &DispersionCurve) -> Result<f64> {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (f, c) in estimate.freqs.iter().zip(&estimate.velocities) {
        if truth.covers(*f) {
            let ct = truth.velocity_at(*f);
            acc += (c - ct).abs() / ct;
            n += 1;
        }
    }
    if n == 0 {
        return Err(invalid("estimate and truth share no frequencies"));
    }
    Ok(acc / n as f64)
}
