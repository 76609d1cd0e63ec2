// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimum density power divergence estimation.
//!
//! The objective is minimized in an unconstrained coordinate system:
//!
//! - normal: `mu = mean + sd * y`, `sigma2 = floor + var * exp(v)`;
//! - GARCH: `omega = var * exp(u0)`, `arch_i = exp(u_i)` and
//!   `garch_j = (1 - BETA_GAP) exp(v_j) / (1 + sum_k exp(v_k))`.
//!
//! Scaling by the sample moments makes the search scale free. Each start runs
//! BFGS (with a simplex fallback), then a few guarded Newton steps on the
//! analytic Hessian sharpen the optimum.

use serde::Serialize;

use crate::error::{DpdError, Result};
use crate::garch::{self, GarchParams, VarianceInit, BETA_GAP};
use crate::model::{ModelSpec, Params};
use crate::normal::{self, NormalParams};
use crate::optim::{minimize, MinimizeOptions};
use crate::series::Series;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Gradient tolerance relative to `1 + |objective|`.
    pub tol: f64,
    /// Number of starting points, 1 to 3.
    pub starts: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
            starts: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub model: ModelSpec,
    pub alpha: f64,
    pub n: usize,
    pub theta_hat: Params,
    /// `H(theta_hat)`, the mean DPD loss.
    pub objective: f64,
    /// Gradient norm in the unconstrained coordinates.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub starts_tried: usize,
}

impl FitResult {
    pub fn normal(&self) -> Option<&NormalParams> {
        self.theta_hat.as_normal()
    }

    pub fn garch(&self) -> Option<&GarchParams> {
        self.theta_hat.as_garch()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(DpdError::param(format!(
            "alpha must be a finite value >= 0, got {alpha}"
        )));
    }
    Ok(())
}

/// Starting points in the order they are tried.
pub fn start_points(model: ModelSpec, x: &Series) -> Vec<Params> {
    let var = positive_variance(x.values());
    match model {
        ModelSpec::Normal => {
            let mean = x.mean();
            let sd = var.sqrt();
            let med = median(x.values());
            let dev: Vec<f64> = x.values().iter().map(|v| (v - med).abs()).collect();
            let mad = 1.4826 * median(&dev);
            let robust_var = if mad > 0.0 { mad * mad } else { var };
            vec![
                Params::Normal(NormalParams { mu: mean, sigma2: var }),
                Params::Normal(NormalParams {
                    mu: mean + 0.2 * sd,
                    sigma2: 1.2 * var,
                }),
                Params::Normal(NormalParams {
                    mu: med,
                    sigma2: robust_var,
                }),
            ]
        }
        ModelSpec::Garch { p, q } => {
            let make = |omega: f64, a: f64, b: f64| {
                Params::Garch(GarchParams {
                    omega,
                    arch: vec![a / p as f64; p],
                    garch: vec![b / q.max(1) as f64; q],
                })
            };
            vec![
                make(0.1 * var, 0.1, 0.8),
                make(0.12 * var, 0.12, 0.64),
                make(var * (1.0 - 0.15 - 0.3), 0.15, 0.3),
            ]
        }
    }
}

/// MDPD estimate of `model` on `x`.
pub fn fit(model: ModelSpec, x: &Series, alpha: f64, opts: &FitOptions) -> Result<FitResult> {
    check_alpha(alpha)?;
    if x.len() < model.min_sample() {
        return Err(DpdError::invalid(format!(
            "{model} needs at least {} observations, got {}",
            model.min_sample(),
            x.len()
        )));
    }
    if !(1..=3).contains(&opts.starts) {
        return Err(DpdError::param(format!(
            "starts must be 1, 2 or 3, got {}",
            opts.starts
        )));
    }
    let problem: Box<dyn Problem> = match model {
        ModelSpec::Normal => Box::new(NormalProblem::new(x.values(), alpha)),
        ModelSpec::Garch { p, q } => Box::new(GarchProblem::new(x.values(), alpha, p, q)),
    };
    let mopts = MinimizeOptions {
        max_iter: opts.max_iter,
        tol: opts.tol,
    };
    let mut best: Option<Candidate> = None;
    let mut iterations = 0;
    for start in start_points(model, x).iter().take(opts.starts) {
        let z0 = problem.to_free(start);
        let m = minimize(|z| problem.eval(z), &z0, &mopts);
        iterations += m.iterations;
        if !m.f.is_finite() {
            continue;
        }
        let theta = problem.polish(problem.params_at(&m.x));
        let (f, grad_norm) = problem.value_and_free_grad_norm(&theta);
        let objective = f - if alpha == 0.0 { 0.0 } else { 1.0 / alpha };
        let cand = Candidate {
            theta,
            objective,
            grad_norm,
            converged: grad_norm <= opts.tol * (1.0 + objective.abs()),
        };
        let better = match &best {
            None => true,
            Some(b) => {
                (cand.converged && !b.converged) || (cand.converged == b.converged && cand.objective < b.objective)
            }
        };
        if better {
            best = Some(cand);
        }
    }
    let best = best
        .ok_or_else(|| DpdError::FitFailed(format!("{model}: no start produced a finite objective (alpha {alpha})")))?;
    if !best.converged {
        log::warn!(
            "{model} fit at alpha {alpha} did not reach the gradient tolerance (|grad| = {:.3e})",
            best.grad_norm
        );
    }
    Ok(FitResult {
        model,
        alpha,
        n: x.len(),
        theta_hat: best.theta,
        objective: best.objective,
        grad_norm: best.grad_norm,
        iterations,
        converged: best.converged,
        starts_tried: opts.starts,
    })
}

/// `H(theta)` for either family, with the GARCH recursion started from the data.
pub fn objective_value(x: &Series, theta: &Params, alpha: f64) -> f64 {
    match theta {
        Params::Normal(p) => normal::objective(x.values(), p, alpha).0,
        Params::Garch(g) => garch::objective(x.values(), g, alpha, VarianceInit::from_data(x.values())).0,
    }
}

struct Candidate {
    theta: Params,
    objective: f64,
    grad_norm: f64,
    converged: bool,
}

trait Problem {
    fn to_free(&self, theta: &Params) -> Vec<f64>;
    fn params_at(&self, z: &[f64]) -> Params;
    /// Shifted objective and its gradient in free coordinates.
    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>);
    /// Guarded Newton iterations in the natural parameter.
    fn polish(&self, theta: Params) -> Params;
    fn value_and_free_grad_norm(&self, theta: &Params) -> (f64, f64);
}

fn positive_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        var
    } else {
        let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
        if ms > 0.0 {
            ms
        } else {
            1.0
        }
    }
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Solves `h s = g` for a small symmetric positive-definite `h` (row-major).
fn newton_step(h: &[f64], g: &[f64]) -> Option<Vec<f64>> {
    let d = g.len();
    let m = nalgebra::DMatrix::from_row_slice(d, d, h);
    let chol = m.cholesky()?;
    let s = chol.solve(&nalgebra::DVector::from_column_slice(g));
    s.iter().all(|v| v.is_finite()).then(|| s.iter().copied().collect())
}

struct NormalProblem<'a> {
    x: &'a [f64],
    alpha: f64,
    mean: f64,
    sd: f64,
    var: f64,
    floor: f64,
}

impl<'a> NormalProblem<'a> {
    fn new(x: &'a [f64], alpha: f64) -> Self {
        let var = positive_variance(x);
        let n = x.len() as f64;
        Self {
            x,
            alpha,
            mean: x.iter().sum::<f64>() / n,
            sd: var.sqrt(),
            var,
            floor: normal::sigma2_floor(var),
        }
    }

    fn params(&self, z: &[f64]) -> NormalParams {
        NormalParams {
            mu: self.mean + self.sd * z[0],
            sigma2: self.floor + self.var * z[1].exp(),
        }
    }

    fn free_grad(&self, theta: &NormalParams, g: [f64; 2]) -> Vec<f64> {
        vec![g[0] * self.sd, g[1] * (theta.sigma2 - self.floor)]
    }
}

impl Problem for NormalProblem<'_> {
    fn to_free(&self, theta: &Params) -> Vec<f64> {
        let p = theta.as_normal().expect("normal start");
        let excess = (p.sigma2 - self.floor).max(self.floor);
        vec![(p.mu - self.mean) / self.sd, (excess / self.var).ln()]
    }

    fn params_at(&self, z: &[f64]) -> Params {
        Params::Normal(self.params(z))
    }

    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let theta = self.params(z);
        if !(theta.mu.is_finite() && theta.sigma2.is_finite()) {
            return (f64::INFINITY, vec![0.0; 2]);
        }
        let (f, g) = normal::shifted_objective(self.x, &theta, self.alpha);
        (f, self.free_grad(&theta, g))
    }

    fn polish(&self, theta: Params) -> Params {
        let Params::Normal(mut cur) = theta else {
            return theta;
        };
        let n = self.x.len() as f64;
        let (mut f, mut g) = normal::shifted_objective(self.x, &cur, self.alpha);
        for _ in 0..8 {
            let mut h = [0.0; 4];
            for &xi in self.x {
                let hi = normal::loss_hess(xi, &cur, self.alpha);
                h[0] += hi[0][0] / n;
                h[1] += hi[0][1] / n;
                h[2] += hi[1][0] / n;
                h[3] += hi[1][1] / n;
            }
            let Some(s) = newton_step(&h, &g) else { break };
            let next = NormalParams {
                mu: cur.mu - s[0],
                sigma2: cur.sigma2 - s[1],
            };
            if !(next.sigma2 > self.floor) {
                break;
            }
            let (fn_, gn) = normal::shifted_objective(self.x, &next, self.alpha);
            if !(fn_ <= f + 1e-14 * (1.0 + f.abs())) || norm(&gn) >= norm(&g) {
                break;
            }
            cur = next;
            f = fn_;
            g = gn;
        }
        Params::Normal(cur)
    }

    fn value_and_free_grad_norm(&self, theta: &Params) -> (f64, f64) {
        let p = theta.as_normal().expect("normal parameter");
        let (f, g) = normal::shifted_objective(self.x, p, self.alpha);
        (f, norm(&self.free_grad(p, g)))
    }
}

struct GarchProblem<'a> {
    x: &'a [f64],
    alpha: f64,
    p: usize,
    q: usize,
    var: f64,
    init: VarianceInit,
}

impl<'a> GarchProblem<'a> {
    fn new(x: &'a [f64], alpha: f64, p: usize, q: usize) -> Self {
        Self {
            x,
            alpha,
            p,
            q,
            var: positive_variance(x),
            init: VarianceInit::from_data(x),
        }
    }

    fn params(&self, z: &[f64]) -> GarchParams {
        let (p, q) = (self.p, self.q);
        let ev: Vec<f64> = z[1 + p..].iter().map(|v| v.exp()).collect();
        let denom = 1.0 + ev.iter().sum::<f64>();
        GarchParams {
            omega: self.var * z[0].exp(),
            arch: z[1..1 + p].iter().map(|v| v.exp()).collect(),
            garch: ev.iter().take(q).map(|e| (1.0 - BETA_GAP) * e / denom).collect(),
        }
    }

    /// `J' g` where `J` is the Jacobian of the natural parameter in the free ones.
    fn free_grad(&self, theta: &GarchParams, g: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut out = vec![0.0; g.len()];
        out[0] = g[0] * theta.omega;
        for i in 0..p {
            out[1 + i] = g[1 + i] * theta.arch[i];
        }
        let scale = 1.0 - BETA_GAP;
        let gb = &g[1 + p..];
        let weighted: f64 = theta.garch.iter().zip(gb).map(|(b, gj)| b * gj).sum();
        for k in 0..self.q {
            let bk = theta.garch[k];
            out[1 + p + k] = bk * gb[k] - bk * weighted / scale;
        }
        out
    }

    fn feasible(theta: &GarchParams) -> bool {
        theta.omega > 0.0
            && theta.omega.is_finite()
            && theta
                .arch
                .iter()
                .chain(&theta.garch)
                .all(|c| c.is_finite() && *c >= 0.0)
            && theta.garch.iter().sum::<f64>() <= 1.0 - BETA_GAP
    }
}

impl Problem for GarchProblem<'_> {
    fn to_free(&self, theta: &Params) -> Vec<f64> {
        let g = theta.as_garch().expect("garch start");
        let mut z = vec![(g.omega / self.var).ln()];
        z.extend(g.arch.iter().map(|a| a.max(1e-12).ln()));
        let rest = (1.0 - BETA_GAP) - g.garch.iter().sum::<f64>();
        z.extend(g.garch.iter().map(|b| (b.max(1e-12) / rest).ln()));
        z
    }

    fn params_at(&self, z: &[f64]) -> Params {
        Params::Garch(self.params(z))
    }

    fn eval(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let theta = self.params(z);
        if !Self::feasible(&theta) {
            return (f64::INFINITY, vec![0.0; z.len()]);
        }
        let (f, g) = garch::shifted_objective(self.x, &theta, self.alpha, self.init);
        (f, self.free_grad(&theta, &g))
    }

    fn polish(&self, theta: Params) -> Params {
        let Params::Garch(mut cur) = theta else {
            return theta;
        };
        let d = cur.dim();
        let n = self.x.len() as f64;
        let (mut f, mut g) = garch::shifted_objective(self.x, &cur, self.alpha, self.init);
        for _ in 0..5 {
            let (path, d2) = garch::variance_path_with_hessian(self.x, &cur, self.init);
            let mut h = vec![0.0; d * d];
            for (t, &xt) in self.x.iter().enumerate() {
                let ht = garch::loss_tilde_hess(
                    xt,
                    path.sigma2[t],
                    path.grad_row(t),
                    &d2[t * d * d..(t + 1) * d * d],
                    self.alpha,
                );
                h.iter_mut().zip(&ht).for_each(|(a, b)| *a += b / n);
            }
            let Some(s) = newton_step(&h, &g) else { break };
            let v: Vec<f64> = cur.to_vec().iter().zip(&s).map(|(a, b)| a - b).collect();
            let next = GarchParams::from_slice(self.p, self.q, &v);
            if !Self::feasible(&next) || next.arch.iter().chain(&next.garch).any(|c| *c <= 0.0) {
                break;
            }
            let (fn_, gn) = garch::shifted_objective(self.x, &next, self.alpha, self.init);
            if !(fn_ <= f + 1e-14 * (1.0 + f.abs())) || norm(&gn) >= norm(&g) {
                break;
            }
            cur = next;
            f = fn_;
            g = gn;
        }
        Params::Garch(cur)
    }

    fn value_and_free_grad_norm(&self, theta: &Params) -> (f64, f64) {
        let g = theta.as_garch().expect("garch parameter");
        let (f, grad) = garch::shifted_objective(self.x, g, self.alpha, self.init);
        (f, norm(&self.free_grad(g, &grad)))
    }
}
