// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `dpdcp` command line.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit status: 0 on success, 1 when the analysis fails and 2 for usage
//! errors. Reports go to the supplied writer unless `--output` names a file.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::binseg::segment;
use crate::critical::{CritCache, CritConfig, CritSource, DEFAULT_GRID_STEPS, DEFAULT_REPLICATIONS, DEFAULT_SEED};
use crate::error::{DpdError, Result};
use crate::fit::{fit, FitOptions};
use crate::forecast::{one_step_forecasts, select_alpha, ForecastOptions};
use crate::garch::KAlphaForm;
use crate::lab::{parse_scenarios, preset, size_power_experiment, ExperimentTable};
use crate::model::ModelSpec;
use crate::series::{load_series_with, log_returns, Column, LoadOptions, Series};
use crate::test::{dpd_test, residual_cusum_test, TestOptions};

/// Alphas used when a multi-alpha command is given none.
pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.5];

#[derive(Debug, Parser)]
#[command(
    name = "dpdcp",
    version,
    about = "Robust parameter change-point tests based on the density power divergence"
)]
struct Cli {
    /// Write a machine-readable JSON report instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Write the report to this file instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Seed for Monte Carlo work (critical values and simulations).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Critical-value cache directory (default: $DPD_CACHE_DIR, else no cache).
    #[arg(long, global = true, value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// Grid steps per simulated Brownian bridge.
    #[arg(long, global = true, default_value_t = DEFAULT_GRID_STEPS)]
    grid: usize,
    /// Monte Carlo replications for critical values.
    #[arg(long, global = true, default_value_t = DEFAULT_REPLICATIONS)]
    reps: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the model by minimum density power divergence.
    Fit(FitArgs),
    /// Test for a parameter change.
    Test(TestArgs),
    /// Find multiple change points by binary segmentation.
    Segment(SegmentArgs),
    /// Print Monte Carlo quantiles of the squared Brownian-bridge supremum.
    Critval(CritvalArgs),
    /// Run size/power experiments from a scenario file.
    Simulate(SimulateArgs),
    /// One-step-ahead variance forecasts and their RMSE.
    Forecast(ForecastArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Delimited text file with one observation per row.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Value column, by header name or 0-based index.
    #[arg(long)]
    column: Option<String>,
    /// Timestamp column, by header name or 0-based index.
    #[arg(long)]
    time_column: Option<String>,
    /// Treat the input as prices and analyse 100 * log returns.
    #[arg(long)]
    returns_from_prices: bool,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Model family.
    #[arg(long, value_enum, default_value_t = Family::Normal)]
    model: Family,
    /// ARCH order.
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// GARCH order.
    #[arg(long, default_value_t = 1)]
    q: usize,
    /// Optimizer iteration limit.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Gradient tolerance relative to 1 + |objective|.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Number of starting points (1-3).
    #[arg(long, default_value_t = 3)]
    starts: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Normal,
    Garch,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KForm {
    Printed,
    Moment,
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        match self.model {
            Family::Normal => Ok(ModelSpec::Normal),
            Family::Garch => {
                if self.p == 0 {
                    return Err(DpdError::param("--p must be at least 1"));
                }
                Ok(ModelSpec::Garch { p: self.p, q: self.q })
            }
        }
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            starts: self.starts,
        }
    }
}

#[derive(Debug, Args)]
struct AlphaArgs {
    /// A single DPD tuning parameter.
    #[arg(long, conflicts_with = "alphas")]
    alpha: Option<f64>,
    /// Comma-separated list of tuning parameters.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
}

impl AlphaArgs {
    fn list(&self) -> Vec<f64> {
        match (&self.alpha, &self.alphas) {
            (Some(a), _) => vec![*a],
            (None, Some(v)) => v.clone(),
            (None, None) => DEFAULT_ALPHAS.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    alpha: AlphaArgs,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    alpha: AlphaArgs,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Residual CUSUM test on squared GARCH residuals at the ML estimate.
    #[arg(long)]
    residual: bool,
    /// Include the CUSUM process in the text report.
    #[arg(long)]
    process: bool,
    /// Which k(alpha) form the J1 diagnostic uses.
    #[arg(long, value_enum, default_value_t = KForm::Printed)]
    k_form: KForm,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    alpha: AlphaArgs,
    /// Significance level of each test.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Shortest segment (default max(50, 20 * dim)).
    #[arg(long)]
    min_len: Option<usize>,
}

#[derive(Debug, Args)]
struct CritvalArgs {
    /// Bridge dimension.
    #[arg(long)]
    dim: usize,
    /// Comma-separated quantile levels.
    #[arg(long, value_delimiter = ',', default_values_t = [0.90, 0.95, 0.99])]
    levels: Vec<f64>,
    /// Use the plain grid maximum without the discrete-monitoring shift.
    #[arg(long)]
    raw: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario file.
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "preset",
        required_unless_present = "preset"
    )]
    scenario: Option<PathBuf>,
    /// Shipped scenario set (table1 ... table7).
    #[arg(long)]
    preset: Option<String>,
    /// Override the replication count of every scenario.
    #[arg(long)]
    replications: Option<usize>,
    /// Override the alphas of every scenario.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Run only scenarios whose name contains this text.
    #[arg(long)]
    only: Option<String>,
    /// Optimizer iteration limit.
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    alpha: AlphaArgs,
    /// First forecast origin (1-based).
    #[arg(long)]
    window_start: usize,
    /// Last forecast origin; defaults to the second-to-last observation.
    #[arg(long)]
    window_end: Option<usize>,
    /// Last change point; found by segmentation of the in-sample part if omitted.
    #[arg(long)]
    t_c: Option<usize>,
    /// Significance level for the segmentation.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Refit every k origins.
    #[arg(long, default_value_t = 1)]
    refit_every: usize,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(std::io::stderr(), "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(DpdError::param(format!("cannot start {n} worker threads: {e}"))),
        },
        None => execute(&cli),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            return match e {
                DpdError::InvalidParameter(_) => 2,
                _ => 1,
            };
        }
    };
    let written = match &cli.output {
        Some(path) => fs::write(path, report.as_bytes()).map_err(|source| DpdError::Io {
            path: path.clone(),
            source,
        }),
        None => out.write_all(report.as_bytes()).map_err(|source| DpdError::Io {
            path: PathBuf::from("<output>"),
            source,
        }),
    };
    match written {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            1
        }
    }
}

fn crit_source(cli: &Cli, corrected: bool) -> CritCache {
    let config = CritConfig {
        grid_steps: cli.grid,
        replications: cli.reps,
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
        corrected,
    };
    CritCache::from_env(config, cli.cache_dir.clone())
}

fn load(args: &InputArgs) -> Result<Series> {
    let opts = LoadOptions {
        column: args.column.as_deref().map(Column::parse),
        time_column: args.time_column.as_deref().map(Column::parse),
    };
    let s = load_series_with(&args.input, &opts)?;
    if args.returns_from_prices {
        log_returns(&s, 100.0)
    } else {
        Ok(s)
    }
}

fn json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| DpdError::invalid(format!("cannot encode report: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(DpdError::param("alphas must be finite and >= 0"));
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(cli, a),
        Command::Test(a) => cmd_test(cli, a),
        Command::Segment(a) => cmd_segment(cli, a),
        Command::Critval(a) => cmd_critval(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Forecast(a) => cmd_forecast(cli, a),
    }
}

fn cmd_fit(cli: &Cli, a: &FitArgs) -> Result<String> {
    let x = load(&a.input)?;
    let model = a.model.spec()?;
    let alphas = a.alpha.list();
    check_alphas(&alphas)?;
    let fits = alphas
        .iter()
        .map(|&alpha| fit(model, &x, alpha, &a.model.fit_options()))
        .collect::<Result<Vec<_>>>()?;
    if cli.json {
        return json(&fits);
    }
    let mut out = String::new();
    for f in &fits {
        out.push_str(&format!("model = {}\nalpha = {}\nn = {}\n", f.model, f.alpha, f.n));
        for (name, v) in f.theta_hat.names().iter().zip(f.theta_hat.to_vec()) {
            out.push_str(&format!("{name} = {v:.6}\n"));
        }
        out.push_str(&format!(
            "objective = {:.8}\ngrad_norm = {:.3e}\niterations = {}\nconverged = {}\nstarts_tried = {}\n\n",
            f.objective, f.grad_norm, f.iterations, f.converged, f.starts_tried
        ));
    }
    Ok(out)
}

fn cmd_test(cli: &Cli, a: &TestArgs) -> Result<String> {
    let x = load(&a.input)?;
    let model = a.model.spec()?;
    let crit = crit_source(cli, true);
    let outcomes = if a.residual {
        if !matches!(model, ModelSpec::Garch { .. }) {
            return Err(DpdError::param("--residual needs --model garch"));
        }
        let f = fit(model, &x, 0.0, &a.model.fit_options())?;
        vec![residual_cusum_test(&x, f.garch().expect("GARCH fit"), &crit, a.level)?]
    } else {
        let alphas = a.alpha.list();
        check_alphas(&alphas)?;
        let opts = TestOptions {
            level: a.level,
            fit: a.model.fit_options(),
            k_form: match a.k_form {
                KForm::Printed => KAlphaForm::Printed,
                KForm::Moment => KAlphaForm::Moment,
            },
        };
        alphas
            .iter()
            .map(|&alpha| dpd_test(model, &x, alpha, &crit, &opts))
            .collect::<Result<Vec<_>>>()?
    };
    if cli.json {
        return json(&outcomes);
    }
    Ok(outcomes
        .iter()
        .map(|o| o.report(a.process))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn cmd_segment(cli: &Cli, a: &SegmentArgs) -> Result<String> {
    let x = load(&a.input)?;
    let model = a.model.spec()?;
    let alphas = a.alpha.list();
    check_alphas(&alphas)?;
    let crit = crit_source(cli, true);
    let opts = TestOptions {
        level: a.level,
        fit: a.model.fit_options(),
        ..TestOptions::default()
    };
    let results = alphas
        .iter()
        .map(|&alpha| segment(model, &x, alpha, a.min_len, &crit, &opts))
        .collect::<Result<Vec<_>>>()?;
    if cli.json {
        return json(&results);
    }
    Ok(results.iter().map(|r| r.report()).collect::<Vec<_>>().join("\n"))
}

#[derive(Serialize)]
struct CritReport {
    dim: usize,
    grid_steps: usize,
    replications: usize,
    seed: u64,
    corrected: bool,
    quantiles: Vec<(f64, f64)>,
}

fn cmd_critval(cli: &Cli, a: &CritvalArgs) -> Result<String> {
    let crit = crit_source(cli, !a.raw);
    let table = crit.table(a.dim)?;
    let quantiles = a
        .levels
        .iter()
        .map(|&l| table.quantile(l).map(|q| (l, q)))
        .collect::<Result<Vec<_>>>()?;
    let rep = CritReport {
        dim: table.dim,
        grid_steps: table.grid_steps,
        replications: table.replications,
        seed: table.seed,
        corrected: table.corrected,
        quantiles,
    };
    if cli.json {
        return json(&rep);
    }
    let mut out = format!(
        "dim = {}\ngrid_steps = {}\nreplications = {}\nseed = {}\ncorrected = {}\n",
        rep.dim, rep.grid_steps, rep.replications, rep.seed, rep.corrected
    );
    for (l, q) in &rep.quantiles {
        out.push_str(&format!("q{l} = {q:.6}\n"));
    }
    Ok(out)
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<String> {
    let text = match (&a.scenario, &a.preset) {
        (Some(path), _) => fs::read_to_string(path).map_err(|source| DpdError::Io {
            path: path.clone(),
            source,
        })?,
        (None, Some(name)) => preset(name)
            .ok_or_else(|| DpdError::param(format!("unknown preset {name:?}")))?
            .to_string(),
        (None, None) => return Err(DpdError::param("give --scenario or --preset")),
    };
    let mut scenarios = parse_scenarios(&text)?;
    if let Some(only) = &a.only {
        scenarios.retain(|s| s.name.contains(only.as_str()));
        if scenarios.is_empty() {
            return Err(DpdError::param(format!("no scenario matches {only:?}")));
        }
    }
    for s in &mut scenarios {
        if let Some(r) = a.replications {
            s.replications = r;
        }
        if let Some(al) = &a.alphas {
            s.alphas = al.clone();
        }
        if let Some(seed) = cli.seed {
            s.seed = seed;
        }
        s.validate()?;
    }
    let crit = crit_source(cli, true);
    let opts = TestOptions {
        fit: FitOptions {
            max_iter: a.max_iter,
            ..FitOptions::default()
        },
        ..TestOptions::default()
    };
    let mut table = ExperimentTable::default();
    for s in &scenarios {
        table.extend(size_power_experiment(s, &crit, &opts)?);
    }
    if cli.json {
        return json(&table);
    }
    Ok(table.to_delimited(','))
}

fn cmd_forecast(cli: &Cli, a: &ForecastArgs) -> Result<String> {
    let x = load(&a.input)?;
    let model = a.model.spec()?;
    if !matches!(model, ModelSpec::Garch { .. }) {
        return Err(DpdError::param("forecast needs --model garch"));
    }
    let end = a.window_end.unwrap_or(x.len().saturating_sub(1));
    let window = (a.window_start, end);
    let fopts = ForecastOptions {
        model,
        refit_every: a.refit_every,
        fit: a.model.fit_options(),
    };
    let topts = TestOptions {
        level: a.level,
        fit: a.model.fit_options(),
        ..TestOptions::default()
    };
    let alphas = a.alpha.list();
    check_alphas(&alphas)?;
    let crit = crit_source(cli, true);
    #[derive(Serialize)]
    struct Out {
        selection: Option<crate::forecast::AlphaSelection>,
        report: crate::forecast::ForecastReport,
    }
    let (selection, alpha, t_c) = match a.t_c {
        Some(t_c) => {
            if alphas.len() != 1 {
                return Err(DpdError::param("--t-c needs a single --alpha"));
            }
            (None, alphas[0], t_c)
        }
        None => {
            let sel = select_alpha(&x, &alphas, window, &crit as &dyn CritSource, &topts, &fopts)?;
            let chosen = sel
                .candidates
                .iter()
                .find(|c| c.alpha == sel.alpha)
                .map(|c| c.t_c)
                .unwrap_or(0);
            (Some(sel.clone()), sel.alpha, chosen)
        }
    };
    let report = one_step_forecasts(&x, alpha, t_c, window, &fopts)?;
    if cli.json {
        return json(&Out { selection, report });
    }
    let mut out = String::new();
    if let Some(sel) = &selection {
        out.push_str("# alpha t_c rmse\n");
        for c in &sel.candidates {
            match c.rmse {
                Some(r) => out.push_str(&format!("# {} {} {r:.6}\n", c.alpha, c.t_c)),
                None => out.push_str(&format!(
                    "# {} - failed: {}\n",
                    c.alpha,
                    c.error.as_deref().unwrap_or("unknown")
                )),
            }
        }
        out.push_str(&format!("# selected alpha = {}\n", sel.alpha));
    }
    out.push_str(&report.to_delimited(&x, ','));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run(args.iter().copied(), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn help_and_usage_errors() {
        for sub in ["fit", "test", "segment", "critval", "simulate", "forecast"] {
            let (code, text) = run_cli(&["dpdcp", sub, "--help"]);
            assert_eq!(code, 0, "{sub}");
            assert!(text.contains("Usage"), "{sub}");
        }
        assert_eq!(run_cli(&["dpdcp", "test", "--bogus"]).0, 2);
        assert_eq!(run_cli(&["dpdcp"]).0, 2);
    }

    #[test]
    fn missing_input_is_an_analysis_error() {
        let (code, _) = run_cli(&["dpdcp", "fit", "--input", "/nonexistent/file.csv", "--alpha", "0.1"]);
        assert_eq!(code, 1);
    }

    #[test]
    fn critval_reports_three_levels() {
        let (code, text) = run_cli(&["dpdcp", "critval", "--dim", "1", "--grid", "1000", "--reps", "1000"]);
        assert_eq!(code, 0);
        assert_eq!(text.lines().filter(|l| l.starts_with('q')).count(), 3);
    }
}
