//! Posterior estimation of FIR impulse responses, fixed or drifting in time,
//! by mean-field variational inference.
//!
//! Modules:
//! - [`signal`]: sampled signals, convolution, correlation, spectra.
//! - [`stats`]: moment propagation through FIR systems with random taps.
//! - [`vi`]: diagonal Gaussian VI with an Adam/cosine optimizer.
//! - [`gp`]: RBF Gaussian-process priors over windows of taps.
//! - [`lti`]: time-invariant fits and posterior summaries.
//! - [`ltv`]: windowed time-variant fits and stitching.
//! - [`ant`]: ambient noise simulation, CCF stacking and dispersion fitting.
//! - [`oracle`]: Monte Carlo checks for the closed forms.

// NaN-rejecting checks are written as negated comparisons on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ant;
pub mod error;
pub mod gp;
pub mod lti;
pub mod ltv;
pub mod oracle;
pub mod rng;
pub mod signal;
pub mod stats;
pub mod vi;

pub use error::{Error, Result};
pub use signal::{Fir, LagSeries, PowerSpectrum, Signal, Spectrum};
pub use vi::{DiagGaussian, TrainConfig};
