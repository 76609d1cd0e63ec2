// SPDX-License-Identifier: MIT OR Apache-2.0

//! Contaminated data generators and size/power experiments.
//!
//! Replication `r` of a scenario draws its innovations, outlier indicators and
//! outlier magnitudes from three separate generator streams, so switching the
//! contamination on or off never changes the underlying clean path.
//!
//! Scenario files are `key = value` lines. Keys before the first `[name]`
//! header are defaults inherited by every section; a file without sections is
//! a single scenario. `n` may be a comma-separated list, which expands the
//! section into one scenario per sample size.
//!
//! ```text
//! model = normal          # or garch, garch(p,q)
//! n = 500, 1000
//! before = 0, 1           # mu, sigma2  |  omega, arch.., garch..
//! after = 0, 1.5          # defaults to `before`
//! change_at = 0.5         # fraction of n; 1 means no change
//! contamination = iid     # none | iid | io | ao
//! p = 0.01
//! delta = 10              # iid outlier size
//! sigma_c2 = 10           # io/ao outlier variance
//! replications = 2000
//! level = 0.05
//! alphas = 0, 0.1, 0.2, 0.3, 0.5
//! seed = 1
//! ```

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::critical::CritSource;
use crate::error::{DpdError, Result};
use crate::garch::GarchParams;
use crate::model::{ModelSpec, Params};
use crate::normal::NormalParams;
use crate::rng::substream;
use crate::series::Series;
use crate::test::{dpd_test, TestOptions};

/// Observations simulated and discarded before a GARCH sample starts.
pub const GARCH_BURN_IN: usize = 500;
/// Failures below this fraction of runs are dropped from the denominator.
pub const FAILURE_TOLERANCE: f64 = 0.01;

const INNOVATIONS: u64 = 0;
const INDICATORS: u64 = 1;
const MAGNITUDES: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Contamination {
    None,
    /// `X_t = X_t,o + delta * p_t * sign(X_t,o)`.
    Iid {
        p: f64,
        delta: f64,
    },
    /// Innovation outliers: `e_t + |Z_t| p_t sign(e_t)`, `Z ~ N(0, sigma_c2)`.
    Io {
        p: f64,
        sigma_c2: f64,
    },
    /// Additive outliers: `X_t,o + |Z_t| p_t sign(X_t,o)`.
    Ao {
        p: f64,
        sigma_c2: f64,
    },
}

impl Contamination {
    fn probability(&self) -> f64 {
        match *self {
            Contamination::None => 0.0,
            Contamination::Iid { p, .. } | Contamination::Io { p, .. } | Contamination::Ao { p, .. } => p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub model: ModelSpec,
    pub n: usize,
    pub theta_before: Params,
    pub theta_after: Params,
    pub change_at: f64,
    pub contamination: Contamination,
    pub replications: usize,
    pub level: f64,
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Last index (1-based) generated with `theta_before`.
    pub fn change_index(&self) -> usize {
        ((self.change_at * self.n as f64).ceil() as usize).min(self.n)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DpdError::param(format!("scenario {:?}: {m}", self.name)));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        if !(self.change_at > 0.0 && self.change_at <= 1.0) {
            return bad(format!("change_at must lie in (0, 1], got {}", self.change_at));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("alphas must be a non-empty list of values >= 0".into());
        }
        let p = self.contamination.probability();
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("contamination probability must lie in [0, 1], got {p}"));
        }
        match self.contamination {
            Contamination::Iid { delta, .. } if !(delta >= 0.0) => return bad("delta must be >= 0".into()),
            Contamination::Io { sigma_c2, .. } | Contamination::Ao { sigma_c2, .. } if !(sigma_c2 >= 0.0) => {
                return bad("sigma_c2 must be >= 0".into())
            }
            _ => {}
        }
        for theta in [&self.theta_before, &self.theta_after] {
            if theta.spec() != self.model {
                return bad(format!(
                    "parameter {:?} does not belong to {}",
                    theta.to_vec(),
                    self.model
                ));
            }
            if let Params::Garch(g) = theta {
                g.validate()?;
                if g.garch.iter().sum::<f64>() >= 1.0 {
                    return bad("GARCH coefficients must sum to less than one".into());
                }
            }
        }
        match (self.model, self.contamination) {
            (ModelSpec::Normal, Contamination::Io { .. } | Contamination::Ao { .. }) => {
                bad("io/ao contamination applies to GARCH models".into())
            }
            (ModelSpec::Garch { .. }, Contamination::Iid { .. }) => {
                bad("iid contamination applies to the normal model".into())
            }
            _ => Ok(()),
        }
    }
}

fn stream(spec: &ScenarioSpec, rep: u64, which: u64) -> ChaCha8Rng {
    substream(spec.seed, (rep << 2) | which)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Replication `rep` of a normal scenario.
pub fn gen_iid_contaminated(spec: &ScenarioSpec, rep: u64) -> Result<Series> {
    spec.validate()?;
    let (Params::Normal(before), Params::Normal(after)) = (&spec.theta_before, &spec.theta_after) else {
        return Err(DpdError::param("gen_iid_contaminated needs a normal scenario"));
    };
    let (p, delta) = match spec.contamination {
        Contamination::None => (0.0, 0.0),
        Contamination::Iid { p, delta } => (p, delta),
        _ => unreachable!("validated"),
    };
    let m = spec.change_index();
    let mut eps = stream(spec, rep, INNOVATIONS);
    let mut ind = stream(spec, rep, INDICATORS);
    let x = (1..=spec.n)
        .map(|t| {
            let NormalParams { mu, sigma2 } = if t <= m { *before } else { *after };
            let xo = mu + sigma2.sqrt() * eps.sample::<f64, _>(StandardNormal);
            let hit = ind.random::<f64>() < p;
            if hit {
                xo + delta * sign(xo)
            } else {
                xo
            }
        })
        .collect();
    Series::new(x)
}

/// Replication `rep` of a GARCH scenario.
pub fn gen_garch(spec: &ScenarioSpec, rep: u64) -> Result<Series> {
    spec.validate()?;
    let (Params::Garch(before), Params::Garch(after)) = (&spec.theta_before, &spec.theta_after) else {
        return Err(DpdError::param("gen_garch needs a GARCH scenario"));
    };
    let (p, q) = (before.p(), before.q());
    let mut eps = stream(spec, rep, INNOVATIONS);
    let mut ind = stream(spec, rep, INDICATORS);
    let mut mag = stream(spec, rep, MAGNITUDES);
    let uncond = if before.persistence() < 1.0 {
        before.omega / (1.0 - before.persistence())
    } else {
        before.omega
    };
    // recursion state, most recent first
    let mut x2 = vec![uncond; p];
    let mut s2 = vec![uncond; q];
    let m = spec.change_index();
    let mut out = Vec::with_capacity(spec.n);
    for t in 0..GARCH_BURN_IN + spec.n {
        let obs = t >= GARCH_BURN_IN;
        // 1-based index within the kept sample
        let idx = (t + 1).saturating_sub(GARCH_BURN_IN);
        let theta: &GarchParams = if idx <= m { before } else { after };
        let s = theta.omega
            + theta.arch.iter().zip(&x2).map(|(a, v)| a * v).sum::<f64>()
            + theta.garch.iter().zip(&s2).map(|(b, v)| b * v).sum::<f64>();
        let e: f64 = eps.sample(StandardNormal);
        let (outlier, z) = if obs {
            let hit = ind.random::<f64>() < spec.contamination.probability();
            let z: f64 = mag.sample(StandardNormal);
            (hit, z)
        } else {
            (false, 0.0)
        };
        let (x_rec, x_obs) = match spec.contamination {
            Contamination::Io { sigma_c2, .. } if outlier => {
                let et = e + sigma_c2.sqrt() * z.abs() * sign(e);
                let v = s.sqrt() * et;
                (v, v)
            }
            Contamination::Ao { sigma_c2, .. } if outlier => {
                let v = s.sqrt() * e;
                (v, v + sigma_c2.sqrt() * z.abs() * sign(v))
            }
            _ => {
                let v = s.sqrt() * e;
                (v, v)
            }
        };
        if p > 0 {
            x2.rotate_right(1);
            x2[0] = x_rec * x_rec;
        }
        if q > 0 {
            s2.rotate_right(1);
            s2[0] = s;
        }
        if obs {
            out.push(x_obs);
        }
    }
    Series::new(out)
}

/// Replication `rep` of any scenario.
pub fn generate(spec: &ScenarioSpec, rep: u64) -> Result<Series> {
    match spec.model {
        ModelSpec::Normal => gen_iid_contaminated(spec, rep),
        ModelSpec::Garch { .. } => gen_garch(spec, rep),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub scenario: String,
    pub n: usize,
    pub alpha: f64,
    pub rejections: usize,
    /// Replications in the denominator of `rate`.
    pub reps: usize,
    pub rate: f64,
    pub mc_se: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentTable {
    pub const COLUMNS: [&'static str; 8] = [
        "scenario",
        "n",
        "alpha",
        "rejections",
        "reps",
        "rate",
        "mc_se",
        "failures",
    ];

    /// Delimiter-separated text with a header row.
    pub fn to_delimited(&self, delim: char) -> String {
        let mut out = Self::COLUMNS.join(&delim.to_string());
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{1}{0}{2}{0}{3}{0}{4}{0}{5}{0}{6:.4}{0}{7:.4}{0}{8}",
                delim, r.scenario, r.n, r.alpha, r.rejections, r.reps, r.rate, r.mc_se, r.failures
            );
        }
        out
    }

    pub fn extend(&mut self, other: ExperimentTable) {
        self.rows.extend(other.rows);
    }
}

/// Rejection frequencies of the DPD test for every `alpha` of the scenario.
///
/// All alphas see the same simulated samples. A replication whose test fails
/// is counted in `failures`; failures are removed from the denominator when
/// they are fewer than 1% of the runs and otherwise count as non-rejections.
pub fn size_power_experiment(
    spec: &ScenarioSpec,
    crit: &dyn CritSource,
    opts: &TestOptions,
) -> Result<ExperimentTable> {
    spec.validate()?;
    crit.table(spec.model.dim())?;
    let opts = TestOptions {
        level: spec.level,
        ..*opts
    };
    let outcomes: Vec<Vec<Option<bool>>> = (0..spec.replications as u64)
        .into_par_iter()
        .map(|rep| match generate(spec, rep) {
            Ok(x) => spec
                .alphas
                .iter()
                .map(|&a| dpd_test(spec.model, &x, a, crit, &opts).ok().map(|o| o.reject))
                .collect(),
            Err(_) => vec![None; spec.alphas.len()],
        })
        .collect();
    let rows = spec
        .alphas
        .iter()
        .enumerate()
        .map(|(j, &alpha)| {
            let rejections = outcomes.iter().filter(|o| o[j] == Some(true)).count();
            let failures = outcomes.iter().filter(|o| o[j].is_none()).count();
            let excluded = (failures as f64) < FAILURE_TOLERANCE * spec.replications as f64;
            if failures > 0 {
                log::warn!(
                    "scenario {:?}, alpha {alpha}: {failures} of {} replications failed",
                    spec.name,
                    spec.replications
                );
            }
            let reps = if excluded {
                spec.replications - failures
            } else {
                spec.replications
            };
            let rate = if reps > 0 { rejections as f64 / reps as f64 } else { 0.0 };
            let mc_se = if reps > 0 {
                (rate * (1.0 - rate) / reps as f64).sqrt()
            } else {
                0.0
            };
            ExperimentRow {
                scenario: spec.name.clone(),
                n: spec.n,
                alpha,
                rejections,
                reps,
                rate,
                mc_se,
                failures,
            }
        })
        .collect();
    Ok(ExperimentTable { rows })
}

/// Shipped scenario files, by name.
pub const PRESETS: [(&str, &str); 7] = [
    ("table1", include_str!("../presets/table1.scn")),
    ("table2", include_str!("../presets/table2.scn")),
    ("table3", include_str!("../presets/table3.scn")),
    ("table4", include_str!("../presets/table4.scn")),
    ("table5", include_str!("../presets/table5.scn")),
    ("table6", include_str!("../presets/table6.scn")),
    ("table7", include_str!("../presets/table7.scn")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Clone, Debug)]
struct Draft {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

/// Parses a scenario file.
pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioSpec>> {
    let mut defaults: Vec<(String, String, usize)> = Vec::new();
    let mut sections: Vec<Draft> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| DpdError::Scenario {
                line: line_no,
                message: format!("unterminated section header {line:?}"),
            })?;
            sections.push(Draft {
                name: name.trim().to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| DpdError::Scenario {
            line: line_no,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        let entry = (k.trim().to_ascii_lowercase(), v.trim().to_string(), line_no);
        match sections.last_mut() {
            Some(s) => s.entries.push(entry),
            None => defaults.push(entry),
        }
    }
    if sections.is_empty() {
        sections.push(Draft {
            name: String::new(),
            line: 1,
            entries: Vec::new(),
        });
    }
    let mut out = Vec::new();
    for s in sections {
        let mut entries = defaults.clone();
        entries.extend(s.entries);
        out.extend(build(&s.name, s.line, &entries)?);
    }
    Ok(out)
}

fn build(section: &str, header_line: usize, entries: &[(String, String, usize)]) -> Result<Vec<ScenarioSpec>> {
    const KEYS: [&str; 14] = [
        "name",
        "model",
        "n",
        "before",
        "after",
        "change_at",
        "contamination",
        "p",
        "delta",
        "sigma_c2",
        "replications",
        "level",
        "alphas",
        "seed",
    ];
    for (k, _, line) in entries {
        if !KEYS.contains(&k.as_str()) {
            return Err(DpdError::Scenario {
                line: *line,
                message: format!("unknown key {k:?}"),
            });
        }
    }
    let get = |key: &str| {
        entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    };
    let missing = |key: &str| DpdError::Scenario {
        line: header_line,
        message: format!("missing key {key:?}"),
    };
    fn num<T: std::str::FromStr>(v: &str, line: usize, key: &str) -> Result<T> {
        v.trim().parse().map_err(|_| DpdError::Scenario {
            line,
            message: format!("{key}: cannot parse {v:?}"),
        })
    }
    fn list(v: &str, line: usize, key: &str) -> Result<Vec<f64>> {
        v.split(',').map(|s| num::<f64>(s, line, key)).collect()
    }

    let name = match get("name") {
        Some((v, _)) if section.is_empty() => v.to_string(),
        _ if !section.is_empty() => section.to_string(),
        _ => "scenario".to_string(),
    };
    let (mv, ml) = get("model").ok_or_else(|| missing("model"))?;
    let model: ModelSpec = mv.parse().map_err(|e: DpdError| DpdError::Scenario {
        line: ml,
        message: e.to_string(),
    })?;
    let params = |key: &str| -> Result<Option<Params>> {
        let Some((v, l)) = get(key) else { return Ok(None) };
        let vals = list(v, l, key)?;
        let wrong = |m: String| DpdError::Scenario { line: l, message: m };
        Ok(Some(match model {
            ModelSpec::Normal => {
                if vals.len() != 2 {
                    return Err(wrong(format!("{key}: normal parameters are `mu, sigma2`")));
                }
                Params::Normal(NormalParams::new(vals[0], vals[1]).map_err(|e| wrong(e.to_string()))?)
            }
            ModelSpec::Garch { p, q } => {
                if vals.len() != 1 + p + q {
                    return Err(wrong(format!("{key}: {model} needs {} values", 1 + p + q)));
                }
                Params::Garch(GarchParams::from_slice(p, q, &vals))
            }
        }))
    };
    let before = params("before")?.ok_or_else(|| missing("before"))?;
    let after = params("after")?.unwrap_or_else(|| before.clone());
    let f = |key: &str, default: f64| -> Result<f64> { get(key).map_or(Ok(default), |(v, l)| num(v, l, key)) };
    let p = f("p", 0.0)?;
    let contamination = match get("contamination") {
        None => Contamination::None,
        Some((v, l)) => match v.to_ascii_lowercase().as_str() {
            "none" => Contamination::None,
            "iid" => Contamination::Iid {
                p,
                delta: f("delta", 0.0)?,
            },
            "io" => Contamination::Io {
                p,
                sigma_c2: f("sigma_c2", 0.0)?,
            },
            "ao" => Contamination::Ao {
                p,
                sigma_c2: f("sigma_c2", 0.0)?,
            },
            other => {
                return Err(DpdError::Scenario {
                    line: l,
                    message: format!("unknown contamination {other:?}"),
                })
            }
        },
    };
    let ns: Vec<usize> = match get("n") {
        Some((v, l)) => v.split(',').map(|s| num(s, l, "n")).collect::<Result<_>>()?,
        None => return Err(missing("n")),
    };
    let replications = get("replications").map_or(Ok(2000), |(v, l)| num(v, l, "replications"))?;
    let seed = get("seed").map_or(Ok(1), |(v, l)| num(v, l, "seed"))?;
    let alphas = match get("alphas") {
        Some((v, l)) => list(v, l, "alphas")?,
        None => crate::cli::DEFAULT_ALPHAS.to_vec(),
    };
    let level = f("level", 0.05)?;
    let change_at = f("change_at", 0.5)?;
    let multi = ns.len() > 1;
    ns.into_iter()
        .map(|n| {
            let spec = ScenarioSpec {
                name: if multi { format!("{name}/n={n}") } else { name.clone() },
                model,
                n,
                theta_before: before.clone(),
                theta_after: after.clone(),
                change_at,
                contamination,
                replications,
                level,
                alphas: alphas.clone(),
                seed,
            };
            spec.validate().map_err(|e| DpdError::Scenario {
                line: header_line,
                message: e.to_string(),
            })?;
            Ok(spec)
        })
        .collect()
}
