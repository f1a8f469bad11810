use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, mismatch, Result};
use crate::signal::{convolve_slice, Signal};

/// Weighted squared-error term of a model that is linear in `h`.
pub trait Observation: Sync {
    fn dim(&self) -> usize;

    /// Returns the loss at `h` and adds its gradient into `grad`.
    fn loss_grad(&self, h: &[f64], grad: &mut [f64]) -> f64;

    fn loss(&self, h: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.loss_grad(h, &mut g)
    }
}

/// `weight · ||g − f * h||²`, evaluated by direct convolution.
#[derive(Debug, Clone)]
pub struct ConvObservation {
    f: Vec<f64>,
    g: Vec<f64>,
    p: usize,
    weight: f64,
}

impl ConvObservation {
    pub fn new(f: &Signal, g: &Signal, p: usize, weight: f64) -> Result<Self> {
        if f.len() != g.len() {
            return Err(mismatch(format!(
                "input length {} differs from output length {}",
                f.len(),
                g.len()
            )));
        }
        if p == 0 {
            return Err(invalid("tap count must be at least 1"));
        }
        Ok(Self {
            f: f.samples().to_vec(),
            g: g.samples().to_vec(),
            p,
            weight,
        })
    }

    /// Mean squared error weighting, `1/n`.
    pub fn mse(f: &Signal, g: &Signal, p: usize) -> Result<Self> {
        let w = 1.0 / f.len() as f64;
        Self::new(f, g, p, w)
    }
}

impl Observation for ConvObservation {
    fn dim(&self) -> usize {
        self.p
    }

    fn loss_grad(&self, h: &[f64], grad: &mut [f64]) -> f64 {
        let pred = convolve_slice(&self.f, h);
        let r: Vec<f64> = self.g.iter().zip(&pred).map(|(g, p)| g - p).collect();
        // ∂/∂h_k = −2 Σ_n r[n] f[n−k]
        for (k, gk) in grad.iter_mut().enumerate() {
            let lag = k + 1;
            let s: f64 = r[lag.min(r.len())..]
                .iter()
                .zip(&self.f)
                .map(|(a, b)| a * b)
                .sum();
            *gk -= 2.0 * self.weight * s;
        }
        self.weight * r.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Sufficient statistics `G = XᵀX`, `b = Xᵀg`, `c = gᵀg` of one or more
/// pairs, so that `||g − Xh||² = c − 2bᵀh + hᵀGh`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramObservation {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub energy: f64,
}

impl GramObservation {
    pub fn zeros(p: usize) -> Self {
        Self {
            gram: DMatrix::zeros(p, p),
            cross: DVector::zeros(p),
            energy: 0.0,
        }
    }

    /// Statistics of one pair scaled by `weight`.
    pub fn from_pair(f: &Signal, g: &Signal, p: usize, weight: f64) -> Result<Self> {
        if f.len() != g.len() {
            return Err(mismatch(format!(
                "input length {} differs from output length {}",
                f.len(),
                g.len()
            )));
        }
        if p == 0 {
            return Err(invalid("tap count must be at least 1"));
        }
        let x = f.samples();
        let y = g.samples();
        let n = x.len();
        let mut gram = DMatrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                // Σ_{n} f[n−a−1] f[n−b−1] over n with n−b−1 ≥ 0
                let (la, lb) = (a + 1, b + 1);
                let mut s = 0.0;
                for t in lb..n {
                    s += x[t - la] * x[t - lb];
                }
                gram[(a, b)] = s * weight;
                gram[(b, a)] = s * weight;
            }
        }
        let cross = DVector::from_iterator(
            p,
            (1..=p).map(|lag| {
                weight
                    * y.get(lag..)
                        .unwrap_or(&[])
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            }),
        );
        let energy = weight * y.iter().map(|v| v * v).sum::<f64>();
        Ok(Self {
            gram,
            cross,
            energy,
        })
    }

    pub fn add(&mut self, other: &GramObservation) {
        self.gram += &other.gram;
        self.cross += &other.cross;
        self.energy += other.energy;
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            gram: &self.gram * s,
            cross: &self.cross * s,
            energy: self.energy * s,
        }
    }

    pub fn p(&self) -> usize {
        self.cross.len()
    }
}

impl Observation for GramObservation {
    fn dim(&self) -> usize {
        self.cross.len()
    }

    fn loss_grad(&self, h: &[f64], grad: &mut [f64]) -> f64 {
        let hv = DVector::from_column_slice(h);
        let gh = &self.gram * &hv;
        for ((o, a), b) in grad.iter_mut().zip(gh.iter()).zip(self.cross.iter()) {
            *o += 2.0 * (a - b);
        }
        self.energy - 2.0 * self.cross.dot(&hv) + hv.dot(&gh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routes_agree_on_small_case() {
        let f = Signal::new(vec![1.0, -0.5, 2.0, 0.3, -1.1, 0.8], 1.0).unwrap();
        let g = Signal::new(vec![0.2, 0.9, -0.4, 1.5, 0.0, -0.7], 1.0).unwrap();
        let h = [0.4, -0.2, 0.1];
        let conv = ConvObservation::mse(&f, &g, 3).unwrap();
        let gram = GramObservation::from_pair(&f, &g, 3, 1.0 / 6.0).unwrap();
        let mut ga = vec![0.0; 3];
        let mut gb = vec![0.0; 3];
        let la = conv.loss_grad(&h, &mut ga);
        let lb = gram.loss_grad(&h, &mut gb);
        assert!((la - lb).abs() < 1e-12);
        for i in 0..3 {
            assert!((ga[i] - gb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn long_filter_on_short_signal() {
        let f = Signal::new(vec![1.0, 2.0], 1.0).unwrap();
        let g = Signal::new(vec![0.5, 1.0], 1.0).unwrap();
        let h = [1.0, 0.5, 0.25];
        let conv = ConvObservation::new(&f, &g, 3, 1.0).unwrap();
        let gram = GramObservation::from_pair(&f, &g, 3, 1.0).unwrap();
        assert!((conv.loss(&h) - gram.loss(&h)).abs() < 1e-12);
    }
}
