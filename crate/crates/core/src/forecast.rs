// SPDX-License-Identifier: MIT OR Apache-2.0

//! One-step-ahead GARCH variance forecasts, their RMSE against squared
//! returns, and alpha selection by forecast accuracy.
//!
//! Indices are 1-based. For an origin `t` in the window the model is fitted
//! to `r_{t_c+1}, ..., r_t`, where `t_c` is the last change point (0 for
//! none), and `r_{t+1}^2` serves as the realized variance.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::binseg::segment;
use crate::critical::CritSource;
use crate::error::{DpdError, Result};
use crate::fit::{fit, FitOptions};
use crate::garch::{variance_path, GarchParams, VarianceInit};
use crate::model::ModelSpec;
use crate::series::Series;
use crate::test::TestOptions;

/// Fewest observations after the last change that a forecasting fit may use.
pub const MIN_FIT_LEN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ForecastOptions {
    pub model: ModelSpec,
    /// Refit every `refit_every` origins; in between, the latest estimate is reused.
    pub refit_every: usize,
    pub fit: FitOptions,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            model: ModelSpec::garch11(),
            refit_every: 1,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastReport {
    pub alpha: f64,
    pub t_c: usize,
    /// First and last forecast origin, inclusive.
    pub window: (usize, usize),
    /// Forecast of `sigma2_{t+1}` for each origin; `None` where the fit failed.
    pub forecasts: Vec<Option<f64>>,
    pub failures: Vec<(usize, String)>,
    /// Available when the series extends past the last origin.
    pub rmse: Option<f64>,
}

impl ForecastReport {
    /// Rows `t, forecast, proxy` and a closing RMSE line.
    pub fn to_delimited(&self, realized: &Series, delim: char) -> String {
        let mut out = format!("t{delim}forecast{delim}proxy\n");
        for (i, f) in self.forecasts.iter().enumerate() {
            let t = self.window.0 + i;
            let proxy = realized.values().get(t).map(|r| r * r);
            let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(out, "{t}{delim}{}{delim}{}", fmt(*f), fmt(proxy));
        }
        match self.rmse {
            Some(r) => {
                let _ = writeln!(out, "# alpha = {} t_c = {} rmse = {r:.6}", self.alpha, self.t_c);
            }
            None => {
                let _ = writeln!(out, "# alpha = {} t_c = {} rmse = NA", self.alpha, self.t_c);
            }
        }
        out
    }
}

/// `omega + sum arch_i r_{t+1-i}^2 + sum garch_j s_{t+1-j}` from the
/// recursion run over `data` (which ends at the origin).
pub fn next_variance(data: &[f64], theta: &GarchParams) -> f64 {
    let init = VarianceInit::from_data(data);
    let path = variance_path(data, theta, init);
    let n = data.len();
    let mut s = theta.omega;
    for (i, a) in theta.arch.iter().enumerate() {
        let x2 = if n > i { data[n - 1 - i].powi(2) } else { init.x2_pre };
        s += a * x2;
    }
    for (j, b) in theta.garch.iter().enumerate() {
        let sj = if n > j { path.sigma2[n - 1 - j] } else { init.sigma2_0 };
        s += b * sj;
    }
    s
}

fn model_orders(model: ModelSpec) -> Result<(usize, usize)> {
    match model {
        ModelSpec::Garch { p, q } => Ok((p, q)),
        ModelSpec::Normal => Err(DpdError::param("forecasting needs a GARCH model")),
    }
}

/// Rolling one-step-ahead forecasts for origins `window.0..=window.1`.
pub fn one_step_forecasts(
    returns: &Series,
    alpha: f64,
    t_c: usize,
    window: (usize, usize),
    opts: &ForecastOptions,
) -> Result<ForecastReport> {
    model_orders(opts.model)?;
    let (start, end) = window;
    if start > end || end > returns.len() {
        return Err(DpdError::param(format!(
            "forecast window {start}..{end} does not fit a series of length {}",
            returns.len()
        )));
    }
    if start <= t_c + MIN_FIT_LEN {
        return Err(DpdError::invalid(format!(
            "forecast window must start after {} (last change {t_c} plus {MIN_FIT_LEN} observations), got {start}",
            t_c + MIN_FIT_LEN
        )));
    }
    if opts.refit_every == 0 {
        return Err(DpdError::param("refit_every must be at least 1"));
    }
    let x = returns.values();
    let origins: Vec<usize> = (start..=end).collect();
    let refits: Vec<usize> = origins.iter().copied().step_by(opts.refit_every).collect();
    let fits: Vec<std::result::Result<GarchParams, String>> = refits
        .par_iter()
        .map(|&t| {
            let data = Series::new(x[t_c..t].to_vec()).map_err(|e| e.to_string())?;
            let r = fit(opts.model, &data, alpha, &opts.fit).map_err(|e| e.to_string())?;
            Ok(r.garch().cloned().expect("GARCH fit"))
        })
        .collect();
    let mut forecasts = Vec::with_capacity(origins.len());
    let mut failures = Vec::new();
    for (i, &t) in origins.iter().enumerate() {
        match &fits[i / opts.refit_every] {
            Ok(theta) => forecasts.push(Some(next_variance(&x[t_c..t], theta))),
            Err(e) => {
                failures.push((t, e.clone()));
                forecasts.push(None);
            }
        }
    }
    let mut report = ForecastReport {
        alpha,
        t_c,
        window,
        forecasts,
        failures,
        rmse: None,
    };
    if end < returns.len() {
        report.rmse = rmse(&report, returns).ok();
    }
    Ok(report)
}

/// `sqrt(mean (proxy - forecast)^2)` over paired values.
pub fn rmse_of(forecasts: &[f64], proxies: &[f64]) -> Result<f64> {
    if forecasts.len() != proxies.len() || forecasts.is_empty() {
        return Err(DpdError::invalid(format!(
            "cannot pair {} forecasts with {} proxies",
            forecasts.len(),
            proxies.len()
        )));
    }
    let sse: f64 = forecasts.iter().zip(proxies).map(|(f, p)| (p - f).powi(2)).sum();
    Ok((sse / forecasts.len() as f64).sqrt())
}

/// RMSE of a report against squared returns, skipping missing forecasts.
pub fn rmse(report: &ForecastReport, realized: &Series) -> Result<f64> {
    let (start, end) = report.window;
    if report.forecasts.len() != end + 1 - start || end >= realized.len() {
        return Err(DpdError::invalid(format!(
            "forecast window {start}..{end} needs realized values up to {}, series has {}",
            end + 1,
            realized.len()
        )));
    }
    let (f, p): (Vec<f64>, Vec<f64>) = report
        .forecasts
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.map(|v| (v, realized.values()[start + i].powi(2))))
        .unzip();
    if f.is_empty() {
        return Err(DpdError::invalid("no forecasts available"));
    }
    rmse_of(&f, &p)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaCandidate {
    pub alpha: f64,
    pub t_c: usize,
    pub rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlphaSelection {
    pub alpha: f64,
    pub rmse: f64,
    pub candidates: Vec<AlphaCandidate>,
}

/// Picks the candidate with the smallest RMSE; ties go to the smallest alpha.
pub fn select_from(candidates: Vec<AlphaCandidate>) -> Result<AlphaSelection> {
    let best = candidates
        .iter()
        .filter_map(|c| c.rmse.map(|r| (r, c.alpha)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .ok_or_else(|| DpdError::FitFailed("no alpha candidate produced forecasts".into()))?;
    Ok(AlphaSelection {
        alpha: best.1,
        rmse: best.0,
        candidates,
    })
}

/// For each alpha, segments `r_1..r_{window.0}`, forecasts from the last
/// change point and keeps the alpha with the smallest RMSE.
pub fn select_alpha(
    returns: &Series,
    alphas: &[f64],
    window: (usize, usize),
    crit: &dyn CritSource,
    test: &TestOptions,
    opts: &ForecastOptions,
) -> Result<AlphaSelection> {
    if alphas.is_empty() {
        return Err(DpdError::param("no alpha candidates"));
    }
    if window.0 == 0 || window.0 > returns.len() {
        return Err(DpdError::param(format!(
            "forecast window start {} is out of range",
            window.0
        )));
    }
    let in_sample = returns.slice(0..window.0)?;
    let candidates = alphas
        .iter()
        .map(|&alpha| {
            let run = || -> Result<(usize, f64)> {
                let seg = segment(opts.model, &in_sample, alpha, None, crit, test)?;
                let t_c = seg.change_points.last().copied().unwrap_or(0);
                let rep = one_step_forecasts(returns, alpha, t_c, window, opts)?;
                Ok((t_c, rmse(&rep, returns)?))
            };
            match run() {
                Ok((t_c, r)) => AlphaCandidate {
                    alpha,
                    t_c,
                    rmse: Some(r),
                    error: None,
                },
                Err(e) => AlphaCandidate {
                    alpha,
                    t_c: 0,
                    rmse: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    select_from(candidates)
}
