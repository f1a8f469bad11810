use nalgebra::{DMatrix, DVector};

use super::DiagGaussian;
use crate::error::{invalid, mismatch, Result};

/// A prior with closed-form KL from a diagonal Gaussian and its gradient.
pub trait KlPrior: Sync {
    fn dim(&self) -> usize;

    fn kl(&self, q: &DiagGaussian) -> Result<f64>;

    /// KL together with gradients with respect to `q.mean` and `q.log_std`.
    fn kl_and_grads(&self, q: &DiagGaussian) -> Result<(f64, Vec<f64>, Vec<f64>)>;
}

/// Zero-mean isotropic Gaussian prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicPrior {
    pub std: f64,
    pub dim: usize,
}

impl IsotropicPrior {
    pub fn new(std: f64, dim: usize) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) {
            return Err(invalid(format!("prior std must be positive, got {std}")));
        }
        Ok(Self { std, dim })
    }
}

pub fn kl_to_isotropic(q: &DiagGaussian, p: &IsotropicPrior) -> Result<f64> {
    p.kl(q)
}

impl KlPrior for IsotropicPrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kl(&self, q: &DiagGaussian) -> Result<f64> {
        Ok(self.kl_and_grads(q)?.0)
    }

    fn kl_and_grads(&self, q: &DiagGaussian) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if q.dim() != self.dim {
            return Err(mismatch(format!(
                "q has dim {} but prior has dim {}",
                q.dim(),
                self.dim
            )));
        }
        let v = self.std * self.std;
        let ln_p = self.std.ln();
        let mut kl = 0.0;
        let mut gm = Vec::with_capacity(q.dim());
        let mut gs = Vec::with_capacity(q.dim());
        for (&m, &ls) in q.mean.iter().zip(&q.log_std) {
            let s2 = (2.0 * ls).exp();
            kl += ln_p - ls + (s2 + m * m) / (2.0 * v) - 0.5;
            gm.push(m / v);
            gs.push(-1.0 + s2 / v);
        }
        Ok((kl, gm, gs))
    }
}

/// Gaussian prior `N(mean, L Lᵀ)` given by its lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct FullGaussianPrior {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
    inv_diag: Vec<f64>,
    logdet: f64,
}

impl FullGaussianPrior {
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if chol.nrows() != d || chol.ncols() != d {
            return Err(mismatch("prior factor must be d×d"));
        }
        let diag = chol.diagonal();
        if diag.iter().any(|v| !(v.abs() > 0.0) || !v.is_finite()) {
            return Err(invalid("prior covariance factor is singular"));
        }
        let logdet = 2.0 * diag.iter().map(|v| v.abs().ln()).sum::<f64>();
        let linv = chol
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .ok_or_else(|| invalid("prior covariance factor is singular"))?;
        // (K⁻¹)_jj is the squared norm of column j of L⁻¹
        let inv_diag = (0..d)
            .map(|j| linv.column(j).norm_squared())
            .collect::<Vec<_>>();
        Ok(Self {
            mean,
            chol,
            inv_diag,
            logdet,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `K⁻¹ x` via two triangular solves.
    pub fn precision_times(&self, x: &DVector<f64>) -> DVector<f64> {
        let y = self
            .chol
            .solve_lower_triangular(x)
            .expect("factor checked nonsingular");
        self.chol
            .tr_solve_lower_triangular(&y)
            .expect("factor checked nonsingular")
    }

    fn check(&self, q: &DiagGaussian) -> Result<()> {
        if q.dim() != self.mean.len() {
            return Err(mismatch(format!(
                "q has dim {} but prior has dim {}",
                q.dim(),
                self.mean.len()
            )));
        }
        Ok(())
    }
}

/// `½[tr(K⁻¹S) + ΔᵀK⁻¹Δ − d + ln det K − ln det S]` with triangular solves.
pub fn kl_to_full_gaussian(
    q: &DiagGaussian,
    prior_mean: &DVector<f64>,
    prior_chol: &DMatrix<f64>,
) -> Result<f64> {
    FullGaussianPrior::new(prior_mean.clone(), prior_chol.clone())?.kl(q)
}

impl KlPrior for FullGaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn kl(&self, q: &DiagGaussian) -> Result<f64> {
        self.check(q)?;
        let d = q.dim();
        let std = q.std();
        let s = DMatrix::from_diagonal(&DVector::from_vec(std));
        let ld = self
            .chol
            .solve_lower_triangular(&s)
            .ok_or_else(|| invalid("singular prior factor"))?;
        let trace = ld.norm_squared();
        let delta = DVector::from_column_slice(&q.mean) - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&delta)
            .ok_or_else(|| invalid("singular prior factor"))?;
        let logdet_s = 2.0 * q.log_std.iter().sum::<f64>();
        Ok(0.5 * (trace + y.norm_squared() - d as f64 + self.logdet - logdet_s))
    }

    fn kl_and_grads(&self, q: &DiagGaussian) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        self.check(q)?;
        let delta = DVector::from_column_slice(&q.mean) - &self.mean;
        let pd = self.precision_times(&delta);
        let mut trace = 0.0;
        let mut gs = Vec::with_capacity(q.dim());
        for (ls, inv) in q.log_std.iter().zip(&self.inv_diag) {
            let s2 = (2.0 * ls).exp();
            trace += s2 * inv;
            gs.push(s2 * inv - 1.0);
        }
        let logdet_s = 2.0 * q.log_std.iter().sum::<f64>();
        let kl = 0.5 * (trace + delta.dot(&pd) - q.dim() as f64 + self.logdet - logdet_s);
        Ok((kl, pd.as_slice().to_vec(), gs))
    }
}
