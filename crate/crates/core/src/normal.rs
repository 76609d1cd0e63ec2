// SPDX-License-Identifier: MIT OR Apache-2.0

//! DPD loss for the i.i.d. normal family `N(mu, sigma2)`.
//!
//! For `alpha > 0` the per-observation loss is
//! `l(x) = ∫ f^(1+alpha) - (1 + 1/alpha) f^alpha(x)`, and for `alpha = 0` it is
//! `-log f(x)`. Derivatives are with respect to `(mu, sigma2)`; the variance
//! parts share the `h_alpha`/`m_alpha` factors of [`crate::garch`], scaled by
//! `(2 pi)^(-alpha/2)`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{DpdError, Result};
use crate::garch::{h_alpha, m_alpha};

/// Relative variance floor: `sigma2 >= FLOOR_FACTOR * var(x)`.
pub const FLOOR_FACTOR: f64 = 1e-6;
/// Absolute lower bound on the variance floor.
pub const MIN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl NormalParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(DpdError::param(format!(
                "normal parameters need finite mu and sigma2 > 0, got ({mu}, {sigma2})"
            )));
        }
        Ok(Self { mu, sigma2 })
    }
}

/// Data-relative variance floor used by the estimator.
pub fn sigma2_floor(sample_variance: f64) -> f64 {
    (FLOOR_FACTOR * sample_variance).max(MIN_FLOOR)
}

/// `∫ f_theta^(1+alpha)(z) dz = (2 pi sigma2)^(-alpha/2) / sqrt(1+alpha)`.
pub fn integral_term(theta: &NormalParams, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return 1.0;
    }
    (2.0 * PI * theta.sigma2).powf(-alpha / 2.0) / (1.0 + alpha).sqrt()
}

fn log_density(x: f64, theta: &NormalParams) -> f64 {
    let z = x - theta.mu;
    -0.5 * (2.0 * PI * theta.sigma2).ln() - z * z / (2.0 * theta.sigma2)
}

pub fn loss(x: f64, theta: &NormalParams, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return -log_density(x, theta);
    }
    let f_alpha = (alpha * log_density(x, theta)).exp();
    integral_term(theta, alpha) - (1.0 + 1.0 / alpha) * f_alpha
}

/// `loss + 1/alpha`, which stays finite as `alpha -> 0` (the argmin is unchanged).
pub(crate) fn shifted_loss(x: f64, theta: &NormalParams, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return -log_density(x, theta);
    }
    let a_log_f = alpha * log_density(x, theta);
    integral_term(theta, alpha) - a_log_f.exp() - a_log_f.exp_m1() / alpha
}

/// Gradient in `(mu, sigma2)`.
pub fn loss_grad(x: f64, theta: &NormalParams, alpha: f64) -> [f64; 2] {
    let s = theta.sigma2;
    let z = x - theta.mu;
    let u = z * z / s;
    let e = (-alpha * u / 2.0).exp();
    let a = (2.0 * PI).powf(-alpha / 2.0) * s.powf(-alpha / 2.0 - 1.0);
    [-(1.0 + alpha) * a * z * e, a * h_alpha(alpha, u)]
}

/// Hessian in `(mu, sigma2)`.
pub fn loss_hess(x: f64, theta: &NormalParams, alpha: f64) -> [[f64; 2]; 2] {
    let s = theta.sigma2;
    let z = x - theta.mu;
    let u = z * z / s;
    let e = (-alpha * u / 2.0).exp();
    let a = (2.0 * PI).powf(-alpha / 2.0) * s.powf(-alpha / 2.0 - 1.0);
    let mm = (1.0 + alpha) * a * e * (1.0 - alpha * u);
    let ms = (1.0 + alpha) * a / s * z * e * (1.0 + alpha / 2.0 - alpha * u / 2.0);
    let ss = a / s * m_alpha(alpha, u);
    [[mm, ms], [ms, ss]]
}

/// Empirical objective `H(theta) = mean loss` and its gradient.
pub fn objective(x: &[f64], theta: &NormalParams, alpha: f64) -> (f64, [f64; 2]) {
    let (f, g) = shifted_objective(x, theta, alpha);
    let shift = if alpha == 0.0 { 0.0 } else { 1.0 / alpha };
    (f - shift, g)
}

pub(crate) fn shifted_objective(x: &[f64], theta: &NormalParams, alpha: f64) -> (f64, [f64; 2]) {
    let n = x.len() as f64;
    let mut f = 0.0;
    let mut g = [0.0; 2];
    for &xi in x {
        f += shifted_loss(xi, theta, alpha);
        let gi = loss_grad(xi, theta, alpha);
        g[0] += gi[0];
        g[1] += gi[1];
    }
    (f / n, [g[0] / n, g[1] / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Adaptive Simpson quadrature.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    fn density(x: f64, mu: f64, s: f64) -> f64 {
        (-(x - mu) * (x - mu) / (2.0 * s)).exp() / (2.0 * PI * s).sqrt()
    }

    fn quad_integral(mu: f64, s: f64, alpha: f64) -> f64 {
        let w = 40.0 * s.sqrt();
        simpson(&|z| density(z, mu, s).powf(1.0 + alpha), mu - w, mu + w, 1e-14)
    }

    fn p(mu: f64, s: f64) -> NormalParams {
        NormalParams::new(mu, s).unwrap()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn integral_term_matches_quadrature() {
        assert_eq!(integral_term(&p(3.0, 7.0), 0.0), 1.0);
        let v = integral_term(&p(0.0, 1.0), 1.0);
        assert!((v - 0.5 / PI.sqrt()).abs() < 1e-12);
        assert!((v - quad_integral(0.0, 1.0, 1.0)).abs() < 1e-10);
        assert!((integral_term(&p(0.0, 4.0), 0.5) - quad_integral(0.0, 4.0, 0.5)).abs() < 1e-10);
    }

    #[test]
    fn loss_examples() {
        // quadrature of the definition at x = mu
        let def = quad_integral(0.0, 1.0, 1.0) - 2.0 * density(0.0, 0.0, 1.0);
        let v = loss(0.0, &p(0.0, 1.0), 1.0);
        assert!((v - def).abs() < 1e-10);
        assert!((v - (-0.515_78)).abs() < 1e-5);
        assert!((loss(0.0, &p(0.0, 1.0), 0.0) - 0.918_938_533_204_672_7).abs() < 1e-12);
        let theta = p(0.0, 1.0);
        assert!((loss(1e3, &theta, 0.5) - integral_term(&theta, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn shifted_loss_is_loss_plus_inverse_alpha() {
        let theta = p(0.4, 2.0);
        for &alpha in &[0.05, 0.3, 1.0] {
            for &x in &[-3.0, 0.1, 2.5] {
                let a = shifted_loss(x, &theta, alpha);
                let b = loss(x, &theta, alpha) + 1.0 / alpha;
                assert!((a - b).abs() < 1e-12, "{a} {b}");
            }
        }
        // continuity at alpha -> 0
        let a = shifted_loss(1.3, &theta, 1e-9);
        let b = loss(1.3, &theta, 0.0);
        assert!((a - b).abs() < 1e-6, "{a} {b}");
    }

    #[test]
    fn gradient_examples() {
        let g = loss_grad(1.0, &p(0.0, 1.0), 0.0);
        assert!((g[0] + 1.0).abs() < 1e-15 && g[1].abs() < 1e-15);
        let theta = p(0.3, 1.7);
        let g0 = loss_grad(-0.8, &theta, 0.0);
        let g1 = loss_grad(-0.8, &theta, 1e-8);
        assert!((g0[0] - g1[0]).abs() < 1e-5 && (g0[1] - g1[1]).abs() < 1e-5);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let mut rng = substream(11, 0);
        for _ in 0..200 {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let s: f64 = rng.random_range(0.2..4.0);
            let x: f64 = mu + s.sqrt() * rng.sample::<f64, _>(StandardNormal) * 2.0;
            let alpha: f64 = if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..1.0)
            };
            let theta = p(mu, s);
            let g = loss_grad(x, &theta, alpha);
            let h = loss_hess(x, &theta, alpha);
            let th = [mu, s];
            for i in 0..2 {
                let step = 1e-6 * (1.0 + th[i].abs());
                let mut up = th;
                let mut dn = th;
                up[i] += step;
                dn[i] -= step;
                let fd = (loss(x, &p(up[0], up[1]), alpha) - loss(x, &p(dn[0], dn[1]), alpha)) / (2.0 * step);
                assert!(rel_close(g[i], fd, 1e-6), "grad {i}: {} vs {fd}", g[i]);
                let gu = loss_grad(x, &p(up[0], up[1]), alpha);
                let gd = loss_grad(x, &p(dn[0], dn[1]), alpha);
                for j in 0..2 {
                    let fd2 = (gu[j] - gd[j]) / (2.0 * step);
                    assert!(rel_close(h[j][i], fd2, 1e-5), "hess {j}{i}: {} vs {fd2}", h[j][i]);
                }
            }
            assert_eq!(h[0][1], h[1][0]);
        }
    }

    #[test]
    fn hessian_average_is_fisher_information() {
        let mut rng = substream(12, 0);
        let theta = p(0.0, 1.0);
        let n = 1_000_000;
        let mut acc = [[0.0; 2]; 2];
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let h = loss_hess(x, &theta, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += h[i][j] / n as f64;
                }
            }
        }
        assert!((acc[0][0] - 1.0).abs() < 1e-2);
        assert!((acc[1][1] - 0.5).abs() < 1e-2);
        assert!(acc[0][1].abs() < 1e-2);
    }

    #[test]
    fn gradient_has_zero_mean_at_truth() {
        let theta = p(1.0, 2.0);
        for &alpha in &[0.0, 0.3, 1.0] {
            let mut rng = substream(13, 0);
            let n = 200_000;
            let mut sum = [0.0; 2];
            let mut sq = [0.0; 2];
            for _ in 0..n {
                let x = 1.0 + 2.0f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let g = loss_grad(x, &theta, alpha);
                for i in 0..2 {
                    sum[i] += g[i];
                    sq[i] += g[i] * g[i];
                }
            }
            for i in 0..2 {
                let mean = sum[i] / n as f64;
                let se = (sq[i] / n as f64 - mean * mean).sqrt() / (n as f64).sqrt();
                assert!(mean.abs() < 4.0 * se, "alpha {alpha}: mean {mean}, se {se}");
            }
        }
    }

    #[test]
    fn loss_is_bounded_in_the_observation() {
        for &alpha in &[0.1, 0.5, 1.0] {
            for &s in &[0.01, 1.0, 50.0] {
                let theta = p(0.0, s);
                let bound = (1.0 + 1.0 / alpha) * (2.0 * PI * s).powf(-alpha / 2.0);
                for k in -200..=200 {
                    let x = k as f64 * 0.05 * s.sqrt() * 10.0;
                    let gap = (loss(x, &theta, alpha) - integral_term(&theta, alpha)).abs();
                    assert!(gap <= bound * (1.0 + 1e-12));
                }
            }
        }
    }
}
