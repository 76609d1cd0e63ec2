// SPDX-License-Identifier: MIT OR Apache-2.0

//! Property tests for the invariants of each building block.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use dpd_changepoint::fit::{fit, objective_value, start_points, FitOptions};
use dpd_changepoint::forecast::{next_variance, rmse_of};
use dpd_changepoint::garch::{self, GarchParams, VarianceInit};
use dpd_changepoint::normal::{self, NormalParams};
use dpd_changepoint::series::log_returns;
use dpd_changepoint::test::{cusum_from_contributions, process_with_j1, score_contributions};
use dpd_changepoint::{ModelSpec, Params, Series};

fn normal_sample(seed: u64, n: usize) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn garch_sample(seed: u64, theta: &GarchParams, n: usize) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut s = theta.omega / (1.0 - theta.persistence());
    let mut x_prev2 = s;
    let mut out = Vec::with_capacity(n);
    for t in 0..n + 200 {
        s = theta.omega + theta.arch[0] * x_prev2 + theta.garch[0] * s;
        let x = s.sqrt() * r.sample::<f64, _>(StandardNormal);
        x_prev2 = x * x;
        if t >= 200 {
            out.push(x);
        }
    }
    out
}

fn prices() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1e4, 2..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn returns_are_scale_invariant(p in prices(), c in 1e-3f64..1e3) {
        let a = log_returns(&Series::new(p.clone()).unwrap(), 100.0).unwrap();
        let b = log_returns(&Series::new(p.iter().map(|v| c * v).collect()).unwrap(), 100.0).unwrap();
        prop_assert_eq!(a.len(), p.len() - 1);
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{} vs {}", x, y);
        }
    }

    #[test]
    fn normal_loss_is_bounded(
        x in -1e3f64..1e3,
        mu in -5.0f64..5.0,
        sigma2 in 0.05f64..20.0,
        alpha in 0.01f64..1.0,
    ) {
        let theta = NormalParams::new(mu, sigma2).unwrap();
        let gap = (normal::loss(x, &theta, alpha) - normal::integral_term(&theta, alpha)).abs();
        let bound = (1.0 + 1.0 / alpha) * (2.0 * std::f64::consts::PI * sigma2).powf(-alpha / 2.0);
        prop_assert!(gap <= bound * (1.0 + 1e-12), "{} > {}", gap, bound);
    }

    #[test]
    fn garch_variance_stays_above_omega(
        seed in 0u64..1000,
        omega in 0.01f64..2.0,
        a in 0.0f64..0.5,
        b in 0.0f64..0.49,
    ) {
        let theta = GarchParams::garch11(omega, a, b).unwrap();
        let x = normal_sample(seed, 80);
        let path = garch::variance_path(&x, &theta, VarianceInit::from_data(&x));
        prop_assert!(path.sigma2.iter().all(|s| *s >= omega));
    }

    #[test]
    fn garch_alpha_zero_is_quasi_likelihood(x in -50.0f64..50.0, s in 1e-3f64..1e3) {
        prop_assert_eq!(garch::loss_tilde(x, s, 0.0), x * x / s + s.ln());
    }

    #[test]
    fn variance_gradient_matches_differences(
        seed in 0u64..1000,
        omega in 0.1f64..2.0,
        a in 0.02f64..0.4,
        b in 0.05f64..0.55,
    ) {
        let theta = GarchParams::garch11(omega, a, b).unwrap();
        let x = normal_sample(seed, 60);
        let init = VarianceInit::from_data(&x);
        let path = garch::variance_path(&x, &theta, init);
        let base = theta.to_vec();
        for j in 0..3 {
            let h = 1e-5 * base[j];
            let shifted = |s: f64| {
                let mut v = base.clone();
                v[j] += s;
                garch::variance_path(&x, &GarchParams::from_slice(1, 1, &v), init).sigma2
            };
            let (up, down) = (shifted(h), shifted(-h));
            for t in 0..x.len() {
                let fd = (up[t] - down[t]) / (2.0 * h);
                let g = path.grad_row(t)[j];
                prop_assert!((g - fd).abs() <= 1e-6 * g.abs().max(fd.abs()).max(1e-6), "t={} j={}: {} vs {}", t, j, g, fd);
            }
        }
    }

    #[test]
    fn rmse_ignores_order(pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..100.0), 1..50), seed in 0u64..1000) {
        let (f, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, r.random_range(0..=i));
        }
        let (fs, ps): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        let a = rmse_of(&f, &p).unwrap();
        let b = rmse_of(&fs, &ps).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn forecasts_exceed_omega(
        seed in 0u64..1000,
        omega in 0.01f64..2.0,
        a in 0.0f64..0.5,
        b in 0.0f64..0.49,
    ) {
        let theta = GarchParams::garch11(omega, a, b).unwrap();
        let x = normal_sample(seed, 50);
        prop_assert!(next_variance(&x, &theta) >= omega);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn normal_fit_is_affine_equivariant(seed in 0u64..10_000, a in -10.0f64..10.0, b in -5.0f64..5.0, alpha in 0.0f64..0.6) {
        prop_assume!(b.abs() > 0.1);
        let x = normal_sample(seed, 300);
        let y: Vec<f64> = x.iter().map(|v| a + b * v).collect();
        let fx = fit(ModelSpec::Normal, &Series::new(x).unwrap(), alpha, &FitOptions::default()).unwrap();
        let fy = fit(ModelSpec::Normal, &Series::new(y).unwrap(), alpha, &FitOptions::default()).unwrap();
        let (px, py) = (fx.normal().unwrap(), fy.normal().unwrap());
        prop_assert!((py.mu - (a + b * px.mu)).abs() <= 1e-6 * (1.0 + py.mu.abs()), "{} vs {}", py.mu, a + b * px.mu);
        prop_assert!((py.sigma2 - b * b * px.sigma2).abs() <= 1e-6 * py.sigma2, "{} vs {}", py.sigma2, b * b * px.sigma2);
    }

    #[test]
    fn normal_argmax_is_affine_invariant(seed in 0u64..10_000, a in -10.0f64..10.0, b in 0.2f64..5.0, alpha in 0.0f64..0.6) {
        let mut x = normal_sample(seed, 300);
        x[180..].iter_mut().for_each(|v| *v += 0.7);
        let y: Vec<f64> = x.iter().map(|v| a + b * v).collect();
        let (sx, sy) = (Series::new(x).unwrap(), Series::new(y).unwrap());
        let fx = fit(ModelSpec::Normal, &sx, alpha, &FitOptions::default()).unwrap();
        let fy = fit(ModelSpec::Normal, &sy, alpha, &FitOptions::default()).unwrap();
        let (px, _) = cusum_from_contributions(&score_contributions(&sx, &fx.theta_hat, alpha)).unwrap();
        let (py, _) = cusum_from_contributions(&score_contributions(&sy, &fy.theta_hat, alpha)).unwrap();
        let ((tx, kx), (ty, ky)) = (px.max(), py.max());
        prop_assert_eq!(kx, ky);
        prop_assert!((tx - ty).abs() <= 1e-5 * tx, "{} vs {}", tx, ty);
    }

    #[test]
    fn garch_fit_is_scale_equivariant(seed in 0u64..10_000, c in 0.2f64..5.0, alpha in 0.0f64..0.4) {
        let truth = GarchParams::garch11(0.5, 0.2, 0.4).unwrap();
        let x = garch_sample(seed, &truth, 600);
        let y: Vec<f64> = x.iter().map(|v| c * v).collect();
        let fx = fit(ModelSpec::garch11(), &Series::new(x).unwrap(), alpha, &FitOptions::default()).unwrap();
        let fy = fit(ModelSpec::garch11(), &Series::new(y).unwrap(), alpha, &FitOptions::default()).unwrap();
        let (gx, gy) = (fx.garch().unwrap(), fy.garch().unwrap());
        prop_assert!((gy.omega - c * c * gx.omega).abs() <= 1e-4 * gy.omega, "{} vs {}", gy.omega, c * c * gx.omega);
        prop_assert!((gy.arch[0] - gx.arch[0]).abs() <= 1e-4, "{} vs {}", gy.arch[0], gx.arch[0]);
        prop_assert!((gy.garch[0] - gx.garch[0]).abs() <= 1e-4, "{} vs {}", gy.garch[0], gx.garch[0]);
    }

    #[test]
    fn fit_beats_starts_and_repeats(seed in 0u64..10_000, alpha in 0.0f64..0.6, garch_family in any::<bool>()) {
        let (model, x) = if garch_family {
            (ModelSpec::garch11(), garch_sample(seed, &GarchParams::garch11(0.5, 0.2, 0.4).unwrap(), 400))
        } else {
            (ModelSpec::Normal, normal_sample(seed, 300))
        };
        let x = Series::new(x).unwrap();
        let f = fit(model, &x, alpha, &FitOptions::default()).unwrap();
        for s in start_points(model, &x) {
            prop_assert!(f.objective <= objective_value(&x, &s, alpha) + 1e-12);
        }
        let again = fit(model, &x, alpha, &FitOptions::default()).unwrap();
        prop_assert_eq!(f.theta_hat.to_vec(), again.theta_hat.to_vec());
        prop_assert_eq!(f.objective.to_bits(), again.objective.to_bits());
    }

    #[test]
    fn process_vanishes_at_n_and_k_cancels(seed in 0u64..10_000, k1 in 0.01f64..50.0, k2 in 0.01f64..50.0) {
        let truth = GarchParams::garch11(0.5, 0.2, 0.4).unwrap();
        let x = Series::new(garch_sample(seed, &truth, 300)).unwrap();
        let theta = Params::Garch(truth);
        let c = score_contributions(&x, &theta, 0.2);
        let (base, _) = cusum_from_contributions(&c).unwrap();
        prop_assert_eq!(*base.quadratic.last().unwrap(), 0.0);
        prop_assert!(base.max().1 < x.len());
        for k in [k1, k2] {
            let alt = process_with_j1(&c, k).unwrap();
            for (a, b) in alt.iter().zip(&base.quadratic) {
                prop_assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()));
            }
        }
    }
}
