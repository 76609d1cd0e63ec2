// SPDX-License-Identifier: MIT OR Apache-2.0

//! Small dense unconstrained minimizers: BFGS with a backtracking Armijo line
//! search, and a Nelder-Mead simplex used when the line search stalls.

#[derive(Clone, Copy, Debug)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Converged when `|grad| <= tol * (1 + |f|)`.
    pub tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search failed at least once and the simplex fallback ran.
    pub used_simplex: bool,
}

impl Minimum {
    pub fn grad_norm(&self) -> f64 {
        norm(&self.grad)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_converged(f: f64, g: &[f64], tol: f64) -> bool {
    norm(g) <= tol * (1.0 + f.abs())
}

enum BfgsExit {
    Converged,
    MaxIter,
    Stalled,
}

/// Minimizes `fg`, which returns the value and gradient at a point.
///
/// When the Armijo search cannot make progress, a Nelder-Mead run restarts
/// from the current point and BFGS resumes from its result; this happens at
/// most twice.
pub fn minimize<F>(mut fg: F, x0: &[f64], opts: &MinimizeOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut iterations = 0;
    let mut used_simplex = false;
    for attempt in 0..3 {
        let (exit, xs, fs, gs, it) = bfgs(&mut fg, x, f, g, opts, opts.max_iter.saturating_sub(iterations));
        iterations += it;
        x = xs;
        f = fs;
        g = gs;
        match exit {
            BfgsExit::Converged => {
                return Minimum {
                    x,
                    f,
                    grad: g,
                    iterations,
                    converged: true,
                    used_simplex,
                }
            }
            BfgsExit::MaxIter => break,
            BfgsExit::Stalled if attempt < 2 && iterations < opts.max_iter => {
                used_simplex = true;
                let (xn, it) = nelder_mead(|p| fg(p).0, &x, 200 * x.len().max(1));
                iterations += it;
                let (fn_, gn) = fg(&xn);
                if fn_.is_finite() && fn_ <= f {
                    x = xn;
                    f = fn_;
                    g = gn;
                }
                if is_converged(f, &g, opts.tol) {
                    break;
                }
            }
            BfgsExit::Stalled => break,
        }
    }
    let converged = f.is_finite() && is_converged(f, &g, opts.tol);
    Minimum {
        x,
        f,
        grad: g,
        iterations,
        converged,
        used_simplex,
    }
}

#[allow(clippy::type_complexity)]
fn bfgs<F>(
    fg: &mut F,
    mut x: Vec<f64>,
    mut f: f64,
    mut g: Vec<f64>,
    opts: &MinimizeOptions,
    budget: usize,
) -> (BfgsExit, Vec<f64>, f64, Vec<f64>, usize)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x.len();
    let mut hinv = identity(n);
    let mut first = true;
    for it in 0..budget {
        if !f.is_finite() {
            return (BfgsExit::Stalled, x, f, g, it);
        }
        if is_converged(f, &g, opts.tol) {
            return (BfgsExit::Converged, x, f, g, it);
        }
        let mut d = matvec(&hinv, &g);
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hinv = identity(n);
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if first { (1.0 / norm(&g)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = fg(&xn);
            if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= f + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= if fn_.is_finite() { 0.5 } else { 0.1 };
        }
        let Some((xn, fn_, gn)) = accepted else {
            return (BfgsExit::Stalled, x, f, g, it);
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let no_progress = (f - fn_).abs() <= 1e-15 * (1.0 + f.abs()) && norm(&s) <= 1e-15 * (1.0 + norm(&x));
        x = xn;
        f = fn_;
        g = gn;
        if no_progress && !is_converged(f, &g, opts.tol) {
            return (BfgsExit::Stalled, x, f, g, it + 1);
        }
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if first {
                let scale = sy / dot(&y, &y);
                hinv.iter_mut().for_each(|v| *v *= scale);
            }
            bfgs_update(&mut hinv, &s, &y, sy);
            first = false;
        }
    }
    let exit = if is_converged(f, &g, opts.tol) {
        BfgsExit::Converged
    } else {
        BfgsExit::MaxIter
    };
    (exit, x, f, g, budget)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn matvec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&m[i * n..(i + 1) * n], v)).collect()
}

/// `H <- (I - rho s y') H (I - rho y s') + rho s s'`
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Nelder-Mead simplex search; returns the best vertex and the iteration count.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], max_iter: usize) -> (Vec<f64>, usize)
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |f: &mut F, p: &[f64]| {
        let v = f(p);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(&mut f, x0)));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += 0.1 * (1.0 + x0[i].abs());
        let v = eval(&mut f, &p);
        simplex.push((p, v));
    }
    let mut it = 0;
    while it < max_iter {
        it += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if (worst - best).abs() <= 1e-14 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = eval(&mut f, &xr);
        if fr < best {
            let xe = along(-2.0);
            let fe = eval(&mut f, &xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst {
                let xc = along(-0.5);
                let fc = eval(&mut f, &xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&mut f, &xc);
                (xc, fc)
            };
            if fc < worst.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    for (pj, bj) in p.iter_mut().zip(&x_best) {
                        *pj = bj + 0.5 * (*pj - bj);
                    }
                    *v = eval(&mut f, p);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex.swap_remove(0).0, it)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        (f, g)
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let m = minimize(rosenbrock, &[-1.2, 1.0], &MinimizeOptions::default());
        assert!(m.converged, "{m:?}");
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn quadratic_in_one_step_region() {
        let q = |x: &[f64]| {
            let f = 0.5 * (4.0 * x[0] * x[0] + x[1] * x[1]) + x[0] - 2.0 * x[1];
            (f, vec![4.0 * x[0] + 1.0, x[1] - 2.0])
        };
        let m = minimize(q, &[3.0, -3.0], &MinimizeOptions::default());
        assert!(m.converged);
        assert!((m.x[0] + 0.25).abs() < 1e-9 && (m.x[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn starting_at_minimum_terminates() {
        let m = minimize(
            |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]),
            &[0.0],
            &MinimizeOptions::default(),
        );
        assert!(m.converged);
        assert_eq!(m.iterations, 0);
    }

    #[test]
    fn simplex_finds_minimum_without_gradients() {
        let (x, _) = nelder_mead(|x| rosenbrock(x).0, &[-1.2, 1.0], 5000);
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn wrong_gradient_falls_back_to_simplex() {
        // gradient sign flipped: every line search fails
        let bad = |x: &[f64]| (x[0] * x[0] + x[1] * x[1], vec![-2.0 * x[0], -2.0 * x[1]]);
        let m = minimize(bad, &[1.0, 1.0], &MinimizeOptions::default());
        assert!(m.used_simplex);
        assert!(m.f < 1e-8);
    }
}
