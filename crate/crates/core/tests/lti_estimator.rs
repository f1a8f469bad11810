use bayes_ltv::lti::{fit_lti, least_squares_fir, lti_fixture, random_fir, LtiFit};
use bayes_ltv::rng::derive_seed;
use bayes_ltv::{Signal, TrainConfig};

fn fit_one(seed: u64, snr_db: f64, cfg: &TrainConfig) -> (Vec<f64>, LtiFit, Vec<(Signal, Signal)>) {
    let truth = random_fir(16, derive_seed(seed, 0)).unwrap();
    let fx = lti_fixture(2048, truth.clone(), snr_db, 1.0, derive_seed(seed, 1)).unwrap();
    let pairs = vec![(fx.input, fx.observed)];
    let fit = fit_lti(&pairs, 16, cfg).unwrap();
    (truth.taps().to_vec(), fit, pairs)
}

#[test]
fn matches_least_squares_at_high_snr_without_kl() {
    let cfg = TrainConfig {
        kl_weight: Some(0.0),
        ..TrainConfig::default()
    };
    let (_, fit, pairs) = fit_one(81, 40.0, &cfg);
    let ls = least_squares_fir(&pairs, 16).unwrap();
    for (a, b) in fit.mean().iter().zip(ls.taps()) {
        assert!((a - b).abs() < 1e-2, "posterior {a} vs least squares {b}");
    }
}

#[test]
fn calibrated_over_random_fixtures() {
    let mut covered = 0;
    let mut total = 0;
    for i in 0..20u64 {
        let snr = [f64::INFINITY, 20.0, 10.0, 0.0][i as usize % 4];
        let (truth, fit, _) = fit_one(derive_seed(82, i), snr, &TrainConfig::default());
        let std = fit.std();
        covered += truth
            .iter()
            .zip(fit.mean())
            .zip(&std)
            .filter(|((t, m), s)| (*t - *m).abs() <= 3.0 * *s)
            .count();
        total += truth.len();
    }
    assert!(covered * 100 >= 85 * total, "{covered}/{total} taps within 3σ");
}

#[test]
fn loss_trailing_mean_decreases() {
    let (_, fit, _) = fit_one(83, 0.0, &TrainConfig::default());
    let l = &fit.trace.losses;
    let q = l.len() / 4;
    let trailing = |end: usize| l[end - 100..end].iter().sum::<f64>() / 100.0;
    assert!(trailing(l.len()) <= trailing(q), "{} then {}", trailing(q), trailing(l.len()));
}

#[test]
fn fit_is_a_pure_function_of_its_inputs() {
    let cfg = TrainConfig {
        steps: 300,
        seed: 9,
        ..TrainConfig::default()
    };
    let (_, a, _) = fit_one(84, 0.0, &cfg);
    let (_, b, _) = fit_one(84, 0.0, &cfg);
    assert_eq!(a, b);
    let (_, c, _) = fit_one(84, 0.0, &TrainConfig { seed: 10, ..cfg });
    assert_ne!(a.posterior, c.posterior);
}

#[test]
fn more_pairs_tighten_the_posterior() {
    let truth = random_fir(16, 85).unwrap();
    let pairs: Vec<(Signal, Signal)> = (0..8u64)
        .map(|i| {
            let fx = lti_fixture(2048, truth.clone(), 0.0, 1.0, derive_seed(86, i)).unwrap();
            (fx.input, fx.observed)
        })
        .collect();
    let mean_std = |n: usize| {
        let s = fit_lti(&pairs[..n], 16, &TrainConfig::default()).unwrap().std();
        s.iter().sum::<f64>() / s.len() as f64
    };
    let stds: Vec<f64> = [1, 2, 4, 8].iter().map(|&n| mean_std(n)).collect();
    assert!(stds.windows(2).all(|w| w[1] <= w[0]), "{stds:?}");
}
