use std::f64::consts::{FRAC_PI_4, PI};

const SWITCH: f64 = 12.0;

/// Bessel function of the first kind, order zero.
///
/// Power series below |x| = 12, Hankel asymptotic expansion above.
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < SWITCH {
        j0_series(ax)
    } else {
        j0_asymptotic(ax)
    }
}

pub(crate) fn j0_series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..200 {
        term *= q / (m * m) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) && m > 5 {
            break;
        }
    }
    sum
}

pub(crate) fn j0_asymptotic(x: f64) -> f64 {
    // t_k = a_k / x^k with a_k = Π_{j≤k} −(2j−1)² / (k! 8^k)
    let mut p = 1.0;
    let mut q = 0.0;
    let mut t = 1.0f64;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        t *= -(odd * odd) / (8.0 * k as f64 * x);
        if t.abs() >= prev || t.abs() < 1e-17 {
            break;
        }
        prev = t.abs();
        // P collects even k with sign (−1)^{k/2}, Q odd k with (−1)^{(k−1)/2}
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sign * t;
        } else {
            q += sign * t;
        }
    }
    let chi = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}
