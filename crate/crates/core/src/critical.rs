// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte Carlo law of `sup_s |B_d(s)|^2` for a `d`-dimensional standard
//! Brownian bridge, with quantiles, p-values and an on-disk cache.
//!
//! Replication `r` draws `d` Gaussian random walks on an `N`-step grid from
//! its own generator stream, forms `B_j = (W_j - (j/N) W_N) / sqrt(N)` and
//! records the largest squared norm. Because the grid maximum of a continuous
//! path undershoots its supremum by an `O(N^(-1/2))` amount, the default
//! configuration shifts each maximal norm by `BRIDGE_SHIFT / sqrt(N)` before
//! squaring (the usual discrete-monitoring correction for Gaussian extrema).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DpdError, Result};
use crate::rng::{substream, RNG_ALGORITHM};

pub const DEFAULT_GRID_STEPS: usize = 5000;
pub const DEFAULT_REPLICATIONS: usize = 50_000;
pub const DEFAULT_SEED: u64 = 20_130_101;
pub const CACHE_FORMAT_VERSION: u32 = 1;
/// Environment variable naming the cache directory.
pub const CACHE_DIR_ENV: &str = "DPD_CACHE_DIR";
/// `-zeta(1/2) / sqrt(2 pi)`.
pub const BRIDGE_SHIFT: f64 = 0.582_597_157_939_010_7;

const MIN_GRID_STEPS: usize = 1000;
const MIN_REPLICATIONS: usize = 1000;

/// How a table is simulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CritConfig {
    pub grid_steps: usize,
    pub replications: usize,
    pub seed: u64,
    /// Apply the discrete-monitoring shift.
    pub corrected: bool,
}

impl Default for CritConfig {
    fn default() -> Self {
        Self {
            grid_steps: DEFAULT_GRID_STEPS,
            replications: DEFAULT_REPLICATIONS,
            seed: DEFAULT_SEED,
            corrected: true,
        }
    }
}

impl CritConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(DpdError::param("bridge dimension must be at least 1"));
        }
        if self.grid_steps < MIN_GRID_STEPS {
            return Err(DpdError::param(format!(
                "grid_steps must be at least {MIN_GRID_STEPS}, got {}",
                self.grid_steps
            )));
        }
        if self.replications < MIN_REPLICATIONS {
            return Err(DpdError::param(format!(
                "replications must be at least {MIN_REPLICATIONS}, got {}",
                self.replications
            )));
        }
        Ok(())
    }
}

/// Sorted Monte Carlo draws of `sup |B_d|^2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CritTable {
    pub dim: usize,
    pub grid_steps: usize,
    pub replications: usize,
    pub seed: u64,
    pub corrected: bool,
    #[serde(skip)]
    samples: Vec<f64>,
}

impl CritTable {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn config(&self) -> CritConfig {
        CritConfig {
            grid_steps: self.grid_steps,
            replications: self.replications,
            seed: self.seed,
            corrected: self.corrected,
        }
    }

    /// Empirical quantile: the `ceil(level * R)`-th order statistic.
    pub fn quantile(&self, level: f64) -> Result<f64> {
        if !(level > 0.0 && level < 1.0) {
            return Err(DpdError::param(format!(
                "quantile level must lie in (0, 1), got {level}"
            )));
        }
        Ok(self.samples[order_index(level, self.samples.len())])
    }

    /// Rough standard error of [`Self::quantile`] from the spread of
    /// neighbouring order statistics.
    pub fn quantile_se(&self, level: f64) -> Result<f64> {
        let q = self.quantile(level)?;
        let r = self.samples.len() as f64;
        let delta = (level * (1.0 - level) / r).sqrt();
        let lo = self.samples[order_index((level - delta).max(1.0 / r), self.samples.len())];
        let hi = self.samples[order_index((level + delta).min(1.0 - 1.0 / r), self.samples.len())];
        Ok(((hi - q) + (q - lo)) / 2.0)
    }

    /// `(r + 1) / (R + 1)` with `r` the number of draws `>= stat`.
    pub fn p_value(&self, stat: f64) -> f64 {
        let below = self.samples.partition_point(|s| *s < stat);
        let r = self.samples.len() - below;
        (r as f64 + 1.0) / (self.samples.len() as f64 + 1.0)
    }

    fn header(&self) -> String {
        format!(
            "# dpd-supbb v{CACHE_FORMAT_VERSION} rng={RNG_ALGORITHM} corrected={} dim={} grid={} reps={} seed={}",
            self.corrected, self.dim, self.grid_steps, self.replications, self.seed
        )
    }

    /// Writes the table as a header line followed by one sample per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.header();
        text.push('\n');
        for s in &self.samples {
            writeln!(text, "{s}").expect("writing to a String");
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        let io = |source| DpdError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io)?;
        }
        fs::write(&tmp, text).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    /// Reads a table written by [`Self::write`]; the header must match `dim` and `config`.
    pub fn read(path: &Path, dim: usize, config: &CritConfig) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DpdError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |message: String| DpdError::Cache {
            path: path.to_path_buf(),
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let expected = CritTable {
            dim,
            grid_steps: config.grid_steps,
            replications: config.replications,
            seed: config.seed,
            corrected: config.corrected,
            samples: Vec::new(),
        };
        if header != expected.header() {
            return Err(bad(format!("header {header:?} does not match {:?}", expected.header())));
        }
        let samples = lines
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("line {}: {l:?} is not a number", i + 2)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if samples.len() != config.replications {
            return Err(bad(format!(
                "expected {} samples, found {}",
                config.replications,
                samples.len()
            )));
        }
        if samples.windows(2).any(|w| !(w[0] <= w[1])) || samples.iter().any(|s| !(*s >= 0.0)) {
            return Err(bad("samples are not sorted non-negative numbers".into()));
        }
        Ok(Self { samples, ..expected })
    }
}

fn order_index(level: f64, r: usize) -> usize {
    ((level * r as f64).ceil() as usize).clamp(1, r) - 1
}

/// One bridge realisation: `dim` paths with `grid_steps + 1` points each.
pub fn sample_bridge<R: Rng>(dim: usize, grid_steps: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = grid_steps as f64;
    let scale = 1.0 / n.sqrt();
    (0..dim)
        .map(|_| {
            let mut w = Vec::with_capacity(grid_steps + 1);
            w.push(0.0);
            let mut acc = 0.0;
            for _ in 0..grid_steps {
                acc += rng.sample::<f64, _>(StandardNormal);
                w.push(acc);
            }
            let end = acc;
            w.iter()
                .enumerate()
                .map(|(j, wj)| (wj - j as f64 / n * end) * scale)
                .collect()
        })
        .collect()
}

/// Largest squared norm along one simulated bridge, without the shift.
fn grid_sup_sq(dim: usize, grid_steps: usize, walk: &mut [f64], norm2: &mut [f64], rng: &mut impl Rng) -> f64 {
    let n = grid_steps as f64;
    norm2.iter_mut().for_each(|v| *v = 0.0);
    for _ in 0..dim {
        let mut acc = 0.0;
        for w in walk.iter_mut() {
            acc += rng.sample::<f64, _>(StandardNormal);
            *w = acc;
        }
        let slope = acc / n;
        for (j, (w, s)) in walk.iter().zip(norm2.iter_mut()).enumerate() {
            let b = w - (j + 1) as f64 * slope;
            *s += b * b;
        }
    }
    norm2.iter().fold(0.0f64, |m, v| m.max(*v)) / n
}

/// Simulates the table with the default (corrected) configuration.
pub fn simulate_sup_bb_sq(dim: usize, grid_steps: usize, replications: usize, seed: u64) -> Result<CritTable> {
    simulate_with(
        dim,
        &CritConfig {
            grid_steps,
            replications,
            seed,
            corrected: true,
        },
    )
}

pub fn simulate_with(dim: usize, config: &CritConfig) -> Result<CritTable> {
    config.validate(dim)?;
    let n = config.grid_steps;
    let shift = if config.corrected {
        BRIDGE_SHIFT / (n as f64).sqrt()
    } else {
        0.0
    };
    let mut samples: Vec<f64> = (0..config.replications as u64)
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(walk, norm2), r| {
                let mut rng = substream(config.seed, r);
                let m = grid_sup_sq(dim, n, walk, norm2, &mut rng).sqrt();
                (m + shift).powi(2)
            },
        )
        .collect();
    samples.sort_by(f64::total_cmp);
    Ok(CritTable {
        dim,
        grid_steps: config.grid_steps,
        replications: config.replications,
        seed: config.seed,
        corrected: config.corrected,
        samples,
    })
}

/// Anything that can hand out a table for a given dimension.
pub trait CritSource: Sync {
    fn table(&self, dim: usize) -> Result<Arc<CritTable>>;
}

impl CritSource for Arc<CritTable> {
    fn table(&self, dim: usize) -> Result<Arc<CritTable>> {
        if dim != self.dim {
            return Err(DpdError::param(format!(
                "critical-value table has dimension {}, dimension {dim} requested",
                self.dim
            )));
        }
        Ok(Arc::clone(self))
    }
}

/// Memoizing table source backed by an optional cache directory.
#[derive(Debug)]
pub struct CritCache {
    config: CritConfig,
    dir: Option<PathBuf>,
    memo: Mutex<HashMap<usize, Arc<CritTable>>>,
}

impl CritCache {
    pub fn new(config: CritConfig, dir: Option<PathBuf>) -> Self {
        Self {
            config,
            dir,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Uses `dir` if given, otherwise `$DPD_CACHE_DIR` if set, otherwise memory only.
    pub fn from_env(config: CritConfig, dir: Option<PathBuf>) -> Self {
        let dir = dir.or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from));
        Self::new(config, dir)
    }

    pub fn config(&self) -> &CritConfig {
        &self.config
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn file_name(&self, dim: usize) -> String {
        let c = &self.config;
        format!(
            "supbb_d{dim}_g{}_r{}_s{}_{}_v{CACHE_FORMAT_VERSION}.txt",
            c.grid_steps,
            c.replications,
            c.seed,
            if c.corrected { "corr" } else { "raw" }
        )
    }

    fn load_or_simulate(&self, dim: usize) -> Result<CritTable> {
        let Some(dir) = &self.dir else {
            return simulate_with(dim, &self.config);
        };
        let path = dir.join(self.file_name(dim));
        if path.exists() {
            match CritTable::read(&path, dim, &self.config) {
                Ok(t) => return Ok(t),
                Err(e) => log::warn!("ignoring critical-value cache: {e}"),
            }
        }
        let table = simulate_with(dim, &self.config)?;
        if let Err(e) = table.write(&path) {
            log::warn!("could not write critical-value cache: {e}");
        }
        Ok(table)
    }
}

impl CritSource for CritCache {
    fn table(&self, dim: usize) -> Result<Arc<CritTable>> {
        if let Some(t) = self.memo.lock().expect("cache lock").get(&dim) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(self.load_or_simulate(dim)?);
        let mut memo = self.memo.lock().expect("cache lock");
        Ok(Arc::clone(memo.entry(dim).or_insert(table)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dim: usize, seed: u64) -> CritTable {
        simulate_sup_bb_sq(dim, 1000, 2000, seed).unwrap()
    }

    #[test]
    fn bridge_endpoints_vanish() {
        let mut rng = substream(3, 0);
        for path in sample_bridge(3, 1000, &mut rng) {
            assert_eq!(path.len(), 1001);
            assert_eq!(path[0], 0.0);
            assert!(path[1000].abs() < 1e-12);
        }
    }

    #[test]
    fn samples_sorted_nonnegative() {
        let t = small(2, 1);
        assert_eq!(t.samples().len(), 2000);
        assert!(t.samples().windows(2).all(|w| w[0] <= w[1]));
        assert!(t.samples()[0] >= 0.0);
    }

    #[test]
    fn quantiles_and_p_values() {
        let t = small(1, 2);
        let r = t.samples().len() as f64;
        assert!((t.p_value(0.0) - 1.0).abs() <= 1.0 / (r + 1.0));
        assert_eq!(t.p_value(1e300), 1.0 / (r + 1.0));
        let levels = [0.5, 0.9, 0.95, 0.99];
        let q: Vec<f64> = levels.iter().map(|l| t.quantile(*l).unwrap()).collect();
        assert!(q.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.quantile(0.0).is_err() && t.quantile(1.0).is_err());
        // the quantile itself sits at the level
        let q95 = t.quantile(0.95).unwrap();
        assert!((t.p_value(q95) - 0.05).abs() < 2.0 / r + 1e-12);
    }

    #[test]
    fn identical_across_thread_counts() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| small(2, 7));
        let b = four.install(|| small(2, 7));
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_configuration() {
        assert!(simulate_sup_bb_sq(0, 1000, 1000, 1).is_err());
        assert!(simulate_sup_bb_sq(1, 999, 1000, 1).is_err());
        assert!(simulate_sup_bb_sq(1, 1000, 999, 1).is_err());
    }

    #[test]
    fn cache_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CritConfig {
            grid_steps: 1000,
            replications: 1000,
            seed: 5,
            corrected: true,
        };
        let cache = CritCache::new(cfg, Some(dir.path().to_path_buf()));
        let t = cache.table(1).unwrap();
        let path = dir.path().join(cache.file_name(1));
        assert!(path.exists());
        let back = CritTable::read(&path, 1, &cfg).unwrap();
        assert_eq!(&back, t.as_ref());
        let other = CritConfig { seed: 6, ..cfg };
        assert!(matches!(CritTable::read(&path, 1, &other), Err(DpdError::Cache { .. })));

        // a second cache instance reads the file instead of simulating
        fs::write(&path, fs::read_to_string(&path).unwrap()).unwrap();
        let again = CritCache::new(cfg, Some(dir.path().to_path_buf())).table(1).unwrap();
        assert_eq!(again.as_ref(), t.as_ref());
    }

    #[test]
    fn corrupt_cache_is_regenerated() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CritConfig {
            grid_steps: 1000,
            replications: 1000,
            seed: 5,
            corrected: false,
        };
        let cache = CritCache::new(cfg, Some(dir.path().to_path_buf()));
        let path = dir.path().join(cache.file_name(1));
        fs::write(&path, "garbage\n").unwrap();
        let t = cache.table(1).unwrap();
        assert_eq!(t.samples().len(), 1000);
        assert!(CritTable::read(&path, 1, &cfg).is_ok());
    }

    #[test]
    fn shift_raises_every_sample() {
        let cfg = CritConfig {
            grid_steps: 1000,
            replications: 1000,
            seed: 9,
            corrected: false,
        };
        let raw = simulate_with(1, &cfg).unwrap();
        let cor = simulate_with(1, &CritConfig { corrected: true, ..cfg }).unwrap();
        assert!(raw.samples().iter().zip(cor.samples()).all(|(a, b)| a < b));
    }
}
