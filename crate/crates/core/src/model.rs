// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{DpdError, Result};
use crate::garch::GarchParams;
use crate::normal::NormalParams;

/// Parametric family under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    /// i.i.d. `N(mu, sigma2)`, parameter `(mu, sigma2)`.
    Normal,
    /// GARCH(p, q), parameter `(omega, arch_1..arch_p, garch_1..garch_q)`.
    Garch { p: usize, q: usize },
}

impl ModelSpec {
    pub fn garch11() -> Self {
        ModelSpec::Garch { p: 1, q: 1 }
    }

    /// Dimension of the parameter vector.
    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Normal => 2,
            ModelSpec::Garch { p, q } => 1 + p + q,
        }
    }

    /// Smallest sample the estimator accepts.
    pub fn min_sample(&self) -> usize {
        10 * self.dim()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Normal => write!(f, "normal"),
            ModelSpec::Garch { p, q } => write!(f, "garch({p},{q})"),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = DpdError;

    /// Accepts `normal`, `garch` (= GARCH(1,1)) and `garch(p,q)`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase().replace(' ', "");
        if t == "normal" {
            return Ok(ModelSpec::Normal);
        }
        if t == "garch" {
            return Ok(ModelSpec::garch11());
        }
        let inner = t
            .strip_prefix("garch(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| DpdError::param(format!("unknown model {s:?}")))?;
        let (p, q) = inner
            .split_once(',')
            .ok_or_else(|| DpdError::param(format!("unknown model {s:?}")))?;
        let p: usize = p
            .parse()
            .map_err(|_| DpdError::param(format!("bad ARCH order in {s:?}")))?;
        let q: usize = q
            .parse()
            .map_err(|_| DpdError::param(format!("bad GARCH order in {s:?}")))?;
        if p == 0 {
            return Err(DpdError::param("GARCH models need at least one ARCH term"));
        }
        Ok(ModelSpec::Garch { p, q })
    }
}

/// A parameter value of either family.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Params {
    Normal(NormalParams),
    Garch(GarchParams),
}

impl Params {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Params::Normal(p) => vec![p.mu, p.sigma2],
            Params::Garch(g) => g.to_vec(),
        }
    }

    pub fn as_normal(&self) -> Option<&NormalParams> {
        match self {
            Params::Normal(p) => Some(p),
            Params::Garch(_) => None,
        }
    }

    pub fn as_garch(&self) -> Option<&GarchParams> {
        match self {
            Params::Garch(g) => Some(g),
            Params::Normal(_) => None,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Params::Normal(_) => ModelSpec::Normal,
            Params::Garch(g) => ModelSpec::Garch { p: g.p(), q: g.q() },
        }
    }

    /// Parameter names in vector order.
    pub fn names(&self) -> Vec<String> {
        match self {
            Params::Normal(_) => vec!["mu".into(), "sigma2".into()],
            Params::Garch(g) => {
                let mut v = vec!["omega".to_string()];
                v.extend((1..=g.p()).map(|i| format!("arch{i}")));
                v.extend((1..=g.q()).map(|j| format!("garch{j}")));
                v
            }
        }
    }
}
