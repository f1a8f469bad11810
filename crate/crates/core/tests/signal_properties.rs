use bayes_ltv::signal::{convolve, convolve_ltv, cross_correlate, one_bit_quantize, spectral_whiten};
use bayes_ltv::{Fir, Signal};
use proptest::prelude::*;

fn sig(x: Vec<f64>) -> Signal {
    Signal::new(x, 1.0).unwrap()
}

fn samples(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn close(a: &[f64], b: &[f64], rel: f64) -> bool {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

fn naive_convolve(f: &[f64], h: &[f64]) -> Vec<f64> {
    (0..f.len())
        .map(|n| {
            (1..=h.len())
                .filter(|&k| k <= n)
                .map(|k| h[k - 1] * f[n - k])
                .sum()
        })
        .collect()
}

fn naive_xcorr(f: &[f64], g: &[f64], max_lag: usize) -> Vec<f64> {
    let m = max_lag as i64;
    (-m..=m)
        .map(|l| {
            (0..f.len() as i64)
                .filter(|n| (0..g.len() as i64).contains(&(n + l)))
                .map(|n| f[n as usize] * g[(n + l) as usize])
                .sum()
        })
        .collect()
}

fn dft_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x.len())
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let w = -2.0 * std::f64::consts::PI * (k * t) as f64 / n;
                re += v * w.cos();
                im += v * w.sin();
            }
            re.hypot(im)
        })
        .collect()
}

#[test]
fn first_tap_delays_by_one_sample() {
    let y = convolve(&sig(vec![1.0, 2.0, 3.0, 4.0]), &Fir::new(vec![1.0]).unwrap());
    assert_eq!(y.samples(), &[0.0, 1.0, 2.0, 3.0]);
    let y = convolve(&sig(vec![1.0, 0.0, 0.0, 0.0]), &Fir::new(vec![0.5, -0.25]).unwrap());
    assert_eq!(y.samples(), &[0.0, 0.5, -0.25, 0.0]);
}

#[test]
fn quantize_ties_go_positive() {
    let q = one_bit_quantize(&sig(vec![-0.0, 0.0, -1e-300, 3.0]));
    assert_eq!(q.samples(), &[1.0, 1.0, -1.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn convolution_is_linear(
        f1 in samples(1..200),
        seed in samples(200..201),
        h in samples(1..24),
        a in -5.0f64..5.0,
        b in -5.0f64..5.0,
    ) {
        let f2 = &seed[..f1.len()];
        let h = Fir::new(h).unwrap();
        let mix: Vec<f64> = f1.iter().zip(f2).map(|(x, y)| a * x + b * y).collect();
        let lhs = convolve(&sig(mix), &h);
        let y1 = convolve(&sig(f1.clone()), &h);
        let y2 = convolve(&sig(f2.to_vec()), &h);
        let rhs: Vec<f64> = y1.samples().iter().zip(y2.samples()).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(close(lhs.samples(), &rhs, 1e-9));
    }

    #[test]
    fn convolve_matches_direct_sum(f in samples(1..512), h in samples(1..40)) {
        let y = convolve(&sig(f.clone()), &Fir::new(h.clone()).unwrap());
        prop_assert!(close(y.samples(), &naive_convolve(&f, &h), 1e-9));
    }

    #[test]
    fn fft_correlation_matches_direct(f in samples(2..512), g in samples(2..512), lag in 0usize..64) {
        let max_lag = lag.min(f.len().max(g.len()) - 1);
        let c = cross_correlate(&sig(f.clone()), &sig(g.clone()), max_lag).unwrap();
        prop_assert!(close(&c.values, &naive_xcorr(&f, &g, max_lag), 1e-9));
    }

    #[test]
    fn constant_rows_reduce_to_convolution(f in samples(1..256), h in samples(1..16)) {
        let rows = vec![h.clone(); f.len()];
        let a = convolve_ltv(&sig(f.clone()), &rows).unwrap();
        let b = convolve(&sig(f), &Fir::new(h).unwrap());
        prop_assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn whitened_spectrum_is_flat(x in samples(8..129), level in 1e-4f64..1e-1) {
        let spec = dft_magnitudes(&x);
        let peak = spec.iter().copied().fold(0.0, f64::max);
        prop_assume!(peak > 1e-6);
        let out = dft_magnitudes(spectral_whiten(&sig(x), level).unwrap().samples());
        for (m_in, m_out) in spec.iter().zip(&out) {
            // bins sitting on the threshold can fall either way under rounding
            if *m_in > level * peak * (1.0 + 1e-9) {
                prop_assert!((m_out - 1.0).abs() < 1e-6, "retained bin magnitude {m_out}");
            } else if *m_in < level * peak * (1.0 - 1e-9) {
                prop_assert!(*m_out < 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn quantize_is_idempotent(x in samples(1..300)) {
        let q = one_bit_quantize(&sig(x));
        prop_assert!(q.samples().iter().all(|v| *v == 1.0 || *v == -1.0));
        let qq = one_bit_quantize(&q);
        prop_assert_eq!(qq.samples(), q.samples());
    }
}
