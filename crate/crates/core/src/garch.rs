// SPDX-License-Identifier: MIT OR Apache-2.0

//! GARCH(p, q) conditional variances and the DPD loss built on them.
//!
//! The variance recursion
//!
//! ```text
//! s_t = omega + sum_i arch_i * x_{t-i}^2 + sum_j garch_j * s_{t-j}
//! ```
//!
//! is started from fixed constants (pre-sample `x^2` and `s`) that do not
//! depend on the parameter, so pre-sample derivatives are zero. Parameters are
//! ordered `(omega, arch_1..arch_p, garch_1..garch_q)`.
//!
//! With `u = x_t^2 / s_t`, the loss for `alpha > 0` is
//! `s^(-alpha/2) * (1/sqrt(1+alpha) - (1 + 1/alpha) exp(-alpha u / 2))`; at
//! `alpha = 0` it is the Gaussian quasi-likelihood term `u + log s`. Its
//! gradient is `h_alpha(u) s^(-alpha/2-1) ds` and its Hessian is
//! `h_alpha(u) s^(-alpha/2-1) d2s + m_alpha(u) s^(-alpha/2-2) ds ds'`; both
//! pick up a factor 2 at `alpha = 0` because the quasi-likelihood term is
//! twice the negative log density.

use serde::Serialize;

use crate::error::{DpdError, Result};
use crate::series::Series;

/// Gap kept between `sum(garch)` and 1.
pub const BETA_GAP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GarchParams {
    pub omega: f64,
    pub arch: Vec<f64>,
    pub garch: Vec<f64>,
}

impl GarchParams {
    pub fn new(omega: f64, arch: Vec<f64>, garch: Vec<f64>) -> Result<Self> {
        let g = Self { omega, arch, garch };
        g.validate()?;
        Ok(g)
    }

    pub fn garch11(omega: f64, arch: f64, garch: f64) -> Result<Self> {
        Self::new(omega, vec![arch], vec![garch])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(DpdError::param(format!("omega must be positive, got {}", self.omega)));
        }
        if self.arch.is_empty() {
            return Err(DpdError::param("at least one ARCH coefficient is required"));
        }
        if self
            .arch
            .iter()
            .chain(&self.garch)
            .any(|c| !(c.is_finite() && *c >= 0.0))
        {
            return Err(DpdError::param("ARCH/GARCH coefficients must be finite and >= 0"));
        }
        let sb: f64 = self.garch.iter().sum();
        if sb > 1.0 - BETA_GAP {
            return Err(DpdError::param(format!(
                "sum of GARCH coefficients {sb} exceeds 1 - {BETA_GAP}"
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.arch.len()
    }

    pub fn q(&self) -> usize {
        self.garch.len()
    }

    pub fn dim(&self) -> usize {
        1 + self.p() + self.q()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.omega);
        v.extend_from_slice(&self.arch);
        v.extend_from_slice(&self.garch);
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec); does not validate.
    pub fn from_slice(p: usize, q: usize, v: &[f64]) -> Self {
        assert_eq!(v.len(), 1 + p + q, "parameter vector length");
        Self {
            omega: v[0],
            arch: v[1..=p].to_vec(),
            garch: v[1 + p..].to_vec(),
        }
    }

    pub fn persistence(&self) -> f64 {
        self.arch.iter().sum::<f64>() + self.garch.iter().sum::<f64>()
    }
}

/// Fixed constants standing in for pre-sample values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceInit {
    /// Pre-sample conditional variances.
    pub sigma2_0: f64,
    /// Pre-sample squared observations.
    pub x2_pre: f64,
}

impl VarianceInit {
    /// Sample variance for `sigma2_0`, sample mean of `x^2` for `x2_pre`.
    pub fn from_data(x: &[f64]) -> Self {
        let n = x.len().max(1) as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
        Self {
            sigma2_0: var,
            x2_pre: ms,
        }
    }
}

/// Conditional variances and their parameter gradients along a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct VariancePath {
    pub sigma2: Vec<f64>,
    /// Row-major `n x dim`; row `t` is `d sigma2_t / d theta`.
    pub grad: Vec<f64>,
    pub dim: usize,
    pub init: VarianceInit,
}

impl VariancePath {
    pub fn len(&self) -> usize {
        self.sigma2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma2.is_empty()
    }

    pub fn grad_row(&self, t: usize) -> &[f64] {
        &self.grad[t * self.dim..(t + 1) * self.dim]
    }
}

pub fn variance_path(x: &[f64], theta: &GarchParams, init: VarianceInit) -> VariancePath {
    let (path, _) = recursion(x, theta, init, false);
    path
}

/// Like [`variance_path`], also returning second derivatives
/// (row-major `n x dim x dim`).
pub fn variance_path_with_hessian(x: &[f64], theta: &GarchParams, init: VarianceInit) -> (VariancePath, Vec<f64>) {
    let (path, hess) = recursion(x, theta, init, true);
    (path, hess.unwrap_or_default())
}

fn recursion(
    x: &[f64],
    theta: &GarchParams,
    init: VarianceInit,
    with_hessian: bool,
) -> (VariancePath, Option<Vec<f64>>) {
    let n = x.len();
    let p = theta.p();
    let q = theta.q();
    let d = theta.dim();
    let mut sigma2 = vec![0.0; n];
    let mut grad = vec![0.0; n * d];
    let mut hess = if with_hessian { vec![0.0; n * d * d] } else { Vec::new() };
    let x2 = |t: usize, lag: usize| {
        if t >= lag {
            x[t - lag] * x[t - lag]
        } else {
            init.x2_pre
        }
    };
    for t in 0..n {
        let mut s = theta.omega;
        grad[t * d] = 1.0;
        for i in 1..=p {
            let v = x2(t, i);
            s += theta.arch[i - 1] * v;
            grad[t * d + i] = v;
        }
        for j in 1..=q {
            let sp = if t >= j { sigma2[t - j] } else { init.sigma2_0 };
            s += theta.garch[j - 1] * sp;
            grad[t * d + p + j] = sp;
        }
        for j in 1..=q.min(t) {
            let b = theta.garch[j - 1];
            let (head, tail) = grad.split_at_mut(t * d);
            let prev = &head[(t - j) * d..(t - j + 1) * d];
            for (g, gp) in tail[..d].iter_mut().zip(prev) {
                *g += b * gp;
            }
        }
        sigma2[t] = s;

        if with_hessian {
            // d2 s_t = sum_j b_j d2 s_{t-j} + e_{b_j} ds_{t-j}' + ds_{t-j} e_{b_j}'
            for j in 1..=q {
                if t < j {
                    continue;
                }
                let b = theta.garch[j - 1];
                let bj = p + j;
                let prev = t - j;
                for a in 0..d {
                    for c in 0..d {
                        let mut v = b * hess[(prev * d + a) * d + c];
                        if c == bj {
                            v += grad[prev * d + a];
                        }
                        if a == bj {
                            v += grad[prev * d + c];
                        }
                        hess[(t * d + a) * d + c] += v;
                    }
                }
            }
        }
    }
    (
        VariancePath {
            sigma2,
            grad,
            dim: d,
            init,
        },
        with_hessian.then_some(hess),
    )
}

/// `h_alpha(u) = -alpha / (2 sqrt(1+alpha)) + (1+alpha)/2 (1-u) exp(-alpha u / 2)`
pub fn h_alpha(alpha: f64, u: f64) -> f64 {
    -alpha / (2.0 * (1.0 + alpha).sqrt()) + 0.5 * (1.0 + alpha) * (1.0 - u) * (-alpha * u / 2.0).exp()
}

/// `m_alpha(u) = alpha(2+alpha) / (4 sqrt(1+alpha))
///   - (1+alpha)/2 (1 + alpha/2 - (2+alpha) u + alpha/2 u^2) exp(-alpha u / 2)`
pub fn m_alpha(alpha: f64, u: f64) -> f64 {
    alpha * (2.0 + alpha) / (4.0 * (1.0 + alpha).sqrt())
        - 0.5 * (1.0 + alpha) * (1.0 + alpha / 2.0 - (2.0 + alpha) * u + alpha / 2.0 * u * u) * (-alpha * u / 2.0).exp()
}

pub fn loss_tilde(x_t: f64, sigma2_t: f64, alpha: f64) -> f64 {
    let u = x_t * x_t / sigma2_t;
    if alpha == 0.0 {
        return u + sigma2_t.ln();
    }
    sigma2_t.powf(-alpha / 2.0) * (1.0 / (1.0 + alpha).sqrt() - (1.0 + 1.0 / alpha) * (-alpha * u / 2.0).exp())
}

/// `loss_tilde + 1/alpha`, computed without cancellation for small `alpha`.
pub(crate) fn shifted_loss_tilde(x_t: f64, sigma2_t: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        return loss_tilde(x_t, sigma2_t, 0.0);
    }
    let u = x_t * x_t / sigma2_t;
    // s^(-a/2) e^(-a u/2) = exp(a * (-(log s + u)/2))
    let a_log = -alpha * 0.5 * (sigma2_t.ln() + u);
    sigma2_t.powf(-alpha / 2.0) / (1.0 + alpha).sqrt() - a_log.exp() - a_log.exp_m1() / alpha
}

fn branch_scale(alpha: f64) -> f64 {
    if alpha == 0.0 {
        2.0
    } else {
        1.0
    }
}

/// Scalar `d loss / d sigma2`.
fn dloss_dsigma2(x_t: f64, sigma2_t: f64, alpha: f64) -> f64 {
    let u = x_t * x_t / sigma2_t;
    branch_scale(alpha) * h_alpha(alpha, u) * sigma2_t.powf(-alpha / 2.0 - 1.0)
}

pub fn loss_tilde_grad(x_t: f64, sigma2_t: f64, dsigma2_t: &[f64], alpha: f64) -> Vec<f64> {
    let c = dloss_dsigma2(x_t, sigma2_t, alpha);
    dsigma2_t.iter().map(|g| c * g).collect()
}

/// Row-major `dim x dim` Hessian of the loss in the parameter.
pub fn loss_tilde_hess(x_t: f64, sigma2_t: f64, dsigma2_t: &[f64], d2sigma2_t: &[f64], alpha: f64) -> Vec<f64> {
    let d = dsigma2_t.len();
    assert_eq!(d2sigma2_t.len(), d * d, "second-derivative block size");
    let u = x_t * x_t / sigma2_t;
    let k = branch_scale(alpha);
    let c1 = k * h_alpha(alpha, u) * sigma2_t.powf(-alpha / 2.0 - 1.0);
    let c2 = k * m_alpha(alpha, u) * sigma2_t.powf(-alpha / 2.0 - 2.0);
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            out[a * d + b] = c1 * d2sigma2_t[a * d + b] + c2 * dsigma2_t[a] * dsigma2_t[b];
        }
    }
    out
}

/// Empirical objective `H(theta)` and its gradient.
pub fn objective(x: &[f64], theta: &GarchParams, alpha: f64, init: VarianceInit) -> (f64, Vec<f64>) {
    let (f, g) = shifted_objective(x, theta, alpha, init);
    let shift = if alpha == 0.0 { 0.0 } else { 1.0 / alpha };
    (f - shift, g)
}

pub(crate) fn shifted_objective(x: &[f64], theta: &GarchParams, alpha: f64, init: VarianceInit) -> (f64, Vec<f64>) {
    let path = variance_path(x, theta, init);
    let n = x.len() as f64;
    let d = path.dim;
    let mut f = 0.0;
    let mut g = vec![0.0; d];
    for (t, (&xt, &st)) in x.iter().zip(&path.sigma2).enumerate() {
        f += shifted_loss_tilde(xt, st, alpha);
        let c = dloss_dsigma2(xt, st, alpha);
        for (gi, di) in g.iter_mut().zip(path.grad_row(t)) {
            *gi += c * di;
        }
    }
    g.iter_mut().for_each(|v| *v /= n);
    (f / n, g)
}

/// Per-observation gradients `d loss_t / d theta` (row-major `n x dim`).
pub fn score_rows(x: &[f64], theta: &GarchParams, alpha: f64, init: VarianceInit) -> Vec<f64> {
    let path = variance_path(x, theta, init);
    let mut rows = path.grad.clone();
    for (t, (&xt, &st)) in x.iter().zip(&path.sigma2).enumerate() {
        let c = dloss_dsigma2(xt, st, alpha);
        rows[t * path.dim..(t + 1) * path.dim].iter_mut().for_each(|v| *v *= c);
    }
    rows
}

/// Standardized residuals `x_t / sqrt(sigma2_t)`, with the recursion started
/// from [`VarianceInit::from_data`].
pub fn residuals(x: &Series, theta: &GarchParams) -> Result<Series> {
    let init = VarianceInit::from_data(x.values());
    let path = variance_path(x.values(), theta, init);
    let eps: Vec<f64> = x.values().iter().zip(&path.sigma2).map(|(v, s)| v / s.sqrt()).collect();
    let mut out = Series::new(eps)?;
    if let Some(ts) = x.timestamps() {
        out = out.with_timestamps(ts.to_vec())?;
    }
    Ok(out)
}

/// Which denominator exponent to use for `k(alpha)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KAlphaForm {
    /// `(1 + 2 alpha)^(2/5)`, as commonly printed.
    #[default]
    Printed,
    /// `(1 + 2 alpha)^(5/2)`, which equals `E[h_alpha(eps^2)^2]` for Gaussian `eps`.
    Moment,
}

/// `k(alpha) = (1+alpha)^2 (1 + 2 alpha^2) / (2 (1+2 alpha)^e) - alpha^2 / (4 (1+alpha))`
pub fn k_alpha(alpha: f64, form: KAlphaForm) -> f64 {
    let e = match form {
        KAlphaForm::Printed => 0.4,
        KAlphaForm::Moment => 2.5,
    };
    (1.0 + alpha).powi(2) * (1.0 + 2.0 * alpha * alpha) / (2.0 * (1.0 + 2.0 * alpha).powf(e))
        - alpha * alpha / (4.0 * (1.0 + alpha))
}

/// `g(alpha) = (alpha^2 + 2 alpha + 2) / (4 (1+alpha)^(3/2))`
pub fn g_alpha(alpha: f64) -> f64 {
    (alpha * alpha + 2.0 * alpha + 2.0) / (4.0 * (1.0 + alpha).powf(1.5))
}
