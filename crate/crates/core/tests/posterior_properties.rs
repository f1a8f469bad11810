use bayes_ltv::gp::{rbf_gram, window_kl, GPWindowPrior, RbfKernelSpec};
use bayes_ltv::ltv::{stitch, WindowPlan, WindowPosterior};
use bayes_ltv::oracle::{finite_difference_grad, max_relative_error};
use bayes_ltv::stats::{output_variance, PosteriorIR, PosteriorTrack};
use bayes_ltv::vi::{
    elbo_and_grads, kl_to_full_gaussian, kl_to_isotropic, standard_normal_rows, DiagGaussian,
    FitTrace, IsotropicPrior,
};
use bayes_ltv::{Signal, TrainConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn gaussian(d: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        prop::collection::vec(-2.0f64..2.0, d),
        prop::collection::vec(-3.0f64..1.0, d),
    )
        .prop_map(|(m, s)| DiagGaussian::new(m, s).unwrap())
}

fn sized_gaussian(max: usize) -> impl Strategy<Value = DiagGaussian> {
    (1..=max).prop_flat_map(gaussian)
}

/// `A Aᵀ + εI` for a random square `A`.
fn psd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |a| {
        let a = DMatrix::from_vec(d, d, a);
        &a * a.transpose() + DMatrix::identity(d, d) * 1e-3
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn output_variance_is_nonnegative(
        (f, cov) in (1usize..9).prop_flat_map(|p| (prop::collection::vec(-5.0f64..5.0, p + 1..80), psd(p))),
        mean in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let p = cov.nrows();
        let post = PosteriorIR::new(DVector::from_column_slice(&mean[..p]), cov).unwrap();
        let f = Signal::new(f, 1.0).unwrap();
        let v = output_variance(&f, &PosteriorTrack::Constant(post)).unwrap();
        prop_assert!(v.iter().all(|x| *x >= -1e-9));
    }

    #[test]
    fn isotropic_kl_is_nonnegative(q in sized_gaussian(16), sd in 0.05f64..5.0) {
        let kl = kl_to_isotropic(&q, &IsotropicPrior::new(sd, q.dim()).unwrap()).unwrap();
        prop_assert!(kl >= -1e-9);
    }

    #[test]
    fn isotropic_kl_vanishes_at_the_prior(d in 1usize..32, sd in 0.05f64..5.0) {
        let q = DiagGaussian::constant(d, 0.0, sd.ln());
        let kl = kl_to_isotropic(&q, &IsotropicPrior::new(sd, d).unwrap()).unwrap();
        prop_assert!(kl.abs() < 1e-9);
    }

    #[test]
    fn full_kl_is_nonnegative(
        (q, cov) in (1usize..8).prop_flat_map(|d| (gaussian(d), psd(d))),
        shift in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let d = q.dim();
        let chol = (cov + DMatrix::identity(d, d) * 0.1).cholesky().unwrap().l();
        let kl = kl_to_full_gaussian(&q, &DVector::from_column_slice(&shift[..d]), &chol).unwrap();
        prop_assert!(kl >= -1e-9);
    }

    #[test]
    fn full_kl_vanishes_at_a_matching_diagonal_prior(q in sized_gaussian(10)) {
        let std = q.std();
        let chol = DMatrix::from_diagonal(&DVector::from_vec(std));
        let kl = kl_to_full_gaussian(&q, &DVector::from_vec(q.mean.clone()), &chol).unwrap();
        prop_assert!(kl.abs() < 1e-9);
    }

    #[test]
    fn rbf_gram_is_stationary_and_factorizable(ell in 0.1f64..1000.0, var in 0.01f64..10.0, w in 1usize..65) {
        let g = rbf_gram(&RbfKernelSpec::new(ell, var), w).unwrap();
        for i in 0..w {
            for j in 0..w {
                if i + 1 < w && j + 1 < w {
                    prop_assert_eq!(g.gram[(i, j)], g.gram[(i + 1, j + 1)]);
                }
                prop_assert_eq!(g.gram[(i, j)], g.gram[(j, i)]);
            }
        }
        let rebuilt = &g.factor * g.factor.transpose();
        prop_assert!((rebuilt - &g.gram).abs().max() <= 1e-9 * var);
    }

    #[test]
    fn window_kl_adds_over_taps(
        (w, taps) in (1usize..12, 1usize..5),
        ell in 0.5f64..20.0,
        seed in prop::collection::vec((-1.0f64..1.0, -2.0f64..0.5), 60),
    ) {
        let kernel = RbfKernelSpec::new(ell, 0.25);
        let d = w * taps;
        let (m, s): (Vec<f64>, Vec<f64>) = seed[..d].iter().copied().unzip();
        let q = DiagGaussian::new(m.clone(), s.clone()).unwrap();
        let whole = window_kl(&q, &GPWindowPrior::new(kernel, w, taps).unwrap()).unwrap();
        let single = GPWindowPrior::new(kernel, w, 1).unwrap();
        let parts: f64 = (0..taps)
            .map(|k| {
                let r = k * w..(k + 1) * w;
                window_kl(&DiagGaussian::new(m[r.clone()].to_vec(), s[r].to_vec()).unwrap(), &single).unwrap()
            })
            .sum();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.abs().max(1.0));
    }

    #[test]
    fn stitch_averages_covering_windows(
        (n, w, stride, p) in (4usize..60).prop_flat_map(|w| (w..200usize, Just(w), 1..=w, 1usize..4)),
        seed in any::<u64>(),
    ) {
        let plan = WindowPlan::new(n, w, stride).unwrap();
        let mut rng_state = seed;
        let mut next = || {
            rng_state = bayes_ltv::rng::splitmix64(rng_state);
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let windows: Vec<WindowPosterior> = plan
            .starts
            .iter()
            .map(|&start| WindowPosterior {
                start,
                q: DiagGaussian::new((0..w * p).map(|_| next()).collect(), (0..w * p).map(|_| next() - 1.0).collect()).unwrap(),
                trace: FitTrace::default(),
            })
            .collect();
        let est = stitch(&windows, &plan, p, 1.0).unwrap();
        let std = est.std.as_ref().unwrap();
        for t in 0..n {
            let cover: Vec<&WindowPosterior> = windows.iter().filter(|x| (x.start..x.start + w).contains(&t)).collect();
            prop_assert!(!cover.is_empty());
            for k in 0..p {
                let ms: Vec<f64> = cover.iter().map(|x| x.mean_at(w, t - x.start, k)).collect();
                let vs: Vec<f64> = cover.iter().map(|x| x.q.std()[k * w + t - x.start].powi(2)).collect();
                let c = ms.len() as f64;
                let mean = ms.iter().sum::<f64>() / c;
                let second = ms.iter().zip(&vs).map(|(m, v)| v + m * m).sum::<f64>() / c;
                prop_assert!((est.taps[(t, k)] - mean).abs() < 1e-12);
                prop_assert!((std[(t, k)] - (second - mean * mean).max(0.0).sqrt()).abs() < 1e-9);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn elbo_gradients_match_finite_differences(
        q in (2usize..9).prop_flat_map(|p| (
            prop::collection::vec(-0.6f64..0.6, p),
            prop::collection::vec(-3.0f64..-0.5, p),
        )),
        data in prop::collection::vec(-2.0f64..2.0, 128),
        seed in any::<u64>(),
    ) {
        let (mean, log_std) = q;
        let p = mean.len();
        let f = Signal::new(data[..64].to_vec(), 1.0).unwrap();
        let g = Signal::new(data[64..].to_vec(), 1.0).unwrap();
        let cfg = TrainConfig { batch_replicas: 8, ..TrainConfig::default() };
        let prior = IsotropicPrior::new(1.0 / (p as f64).sqrt(), p).unwrap();
        let noise = standard_normal_rows(cfg.batch_replicas, p, seed);
        let q = DiagGaussian::new(mean.clone(), log_std.clone()).unwrap();
        let ev = elbo_and_grads(&f, &g, &q, &prior, &cfg, Some(&noise)).unwrap();
        let x: Vec<f64> = mean.iter().chain(&log_std).copied().collect();
        let loss = |x: &[f64]| {
            let q = DiagGaussian::new(x[..p].to_vec(), x[p..].to_vec()).unwrap();
            elbo_and_grads(&f, &g, &q, &prior, &cfg, Some(&noise)).unwrap().loss
        };
        let fd = finite_difference_grad(loss, &x, 1e-5);
        let analytic: Vec<f64> = ev.grad_mean.iter().chain(&ev.grad_log_std).copied().collect();
        prop_assert!(max_relative_error(&analytic, &fd, 1e-6) <= 1e-4);
    }
}

#[test]
fn stitch_rejects_a_mismatched_plan() {
    let plan = WindowPlan::new(40, 16, 8).unwrap();
    let windows = vec![WindowPosterior {
        start: 0,
        q: DiagGaussian::constant(32, 0.0, -1.0),
        trace: FitTrace::default(),
    }];
    assert!(stitch(&windows, &plan, 2, 1.0).is_err());
}
