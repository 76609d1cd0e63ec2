// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multiple change points by binary segmentation.
//!
//! The whole sample is tested first; on rejection it is split after the
//! estimated change point and both halves are examined the same way. A
//! segment shorter than `2 * min_len` is not tested, and a split that would
//! leave a piece shorter than `min_len` is not made. Every test uses the
//! plain level, without a multiplicity adjustment.

use serde::Serialize;

use crate::critical::CritSource;
use crate::error::{DpdError, Result};
use crate::fit::{fit, FitResult};
use crate::model::ModelSpec;
use crate::series::Series;
use crate::test::{dpd_test, TestOptions, TestOutcome};

/// `max(50, 20 * dim)`.
pub fn default_min_len(model: ModelSpec) -> usize {
    50usize.max(20 * model.dim())
}

/// A maximal run of observations between change points (1-based, inclusive).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub start_time: Option<String>,
    pub end_time: Option<String>,
    pub fit: Option<FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
}

/// One test carried out during the recursion.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentTest {
    pub start: usize,
    pub end: usize,
    pub outcome: Option<TestOutcome>,
    /// Set when the segment could not be tested.
    pub error: Option<String>,
    /// Whether the segment was split after this test.
    pub split: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentationResult {
    pub model: ModelSpec,
    pub alpha: f64,
    pub level: f64,
    pub min_len: usize,
    /// Last index of each segment but the final one, increasing.
    pub change_points: Vec<usize>,
    pub change_times: Vec<Option<String>>,
    pub segments: Vec<Segment>,
    pub tests: Vec<SegmentTest>,
}

impl SegmentationResult {
    /// Text report: one line per change point, then one per segment.
    pub fn report(&self) -> String {
        let mut out = format!(
            "model = {}\nalpha = {}\nlevel = {} (per test, no multiplicity adjustment)\nmin_len = {}\nchange_points = {}\n",
            self.model,
            self.alpha,
            self.level,
            self.min_len,
            self.change_points.len()
        );
        for (k, t) in self.change_points.iter().zip(&self.change_times) {
            match t {
                Some(t) => out.push_str(&format!("change {k} ({t})\n")),
                None => out.push_str(&format!("change {k}\n")),
            }
        }
        for s in &self.segments {
            let span = match (&s.start_time, &s.end_time) {
                (Some(a), Some(b)) => format!("{}-{} ({a} to {b})", s.start, s.end),
                _ => format!("{}-{}", s.start, s.end),
            };
            match &s.fit {
                Some(f) => {
                    let est: Vec<String> = f
                        .theta_hat
                        .names()
                        .iter()
                        .zip(f.theta_hat.to_vec())
                        .map(|(n, v)| format!("{n}={v:.4}"))
                        .collect();
                    out.push_str(&format!("segment {span}: {}\n", est.join(" ")));
                }
                None => out.push_str(&format!(
                    "segment {span}: fit failed ({})\n",
                    s.fit_error.as_deref().unwrap_or("unknown")
                )),
            }
        }
        out
    }
}

struct Ctx<'a> {
    model: ModelSpec,
    x: &'a Series,
    alpha: f64,
    min_len: usize,
    crit: &'a dyn CritSource,
    opts: &'a TestOptions,
}

/// Binary segmentation of `x` with the DPD test at `opts.level`.
pub fn segment(
    model: ModelSpec,
    x: &Series,
    alpha: f64,
    min_len: Option<usize>,
    crit: &dyn CritSource,
    opts: &TestOptions,
) -> Result<SegmentationResult> {
    let min_len = min_len.unwrap_or_else(|| default_min_len(model));
    if min_len < model.min_sample() {
        return Err(DpdError::param(format!(
            "min_len must be at least {} for {model}, got {min_len}",
            model.min_sample()
        )));
    }
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(DpdError::param(format!("level must lie in (0, 1), got {}", opts.level)));
    }
    let ctx = Ctx {
        model,
        x,
        alpha,
        min_len,
        crit,
        opts,
    };
    let (mut change_points, mut tests) = examine(&ctx, 1, x.len());
    change_points.sort_unstable();
    tests.sort_by_key(|t| (t.start, t.end));

    let mut bounds = vec![0];
    bounds.extend(&change_points);
    bounds.push(x.len());
    let segments = bounds
        .windows(2)
        .map(|w| {
            let (start, end) = (w[0] + 1, w[1]);
            let (fit, fit_error) = match x.slice(start - 1..end).and_then(|s| fit(model, &s, alpha, &opts.fit)) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Segment {
                start,
                end,
                start_time: x.timestamp(start).map(str::to_string),
                end_time: x.timestamp(end).map(str::to_string),
                fit,
                fit_error,
            }
        })
        .collect();
    Ok(SegmentationResult {
        model,
        alpha,
        level: opts.level,
        min_len,
        change_times: change_points
            .iter()
            .map(|k| x.timestamp(*k).map(str::to_string))
            .collect(),
        change_points,
        segments,
        tests,
    })
}

fn examine(ctx: &Ctx<'_>, start: usize, end: usize) -> (Vec<usize>, Vec<SegmentTest>) {
    let len = end + 1 - start;
    if len < 2 * ctx.min_len {
        return (Vec::new(), Vec::new());
    }
    let result = ctx
        .x
        .slice(start - 1..end)
        .and_then(|seg| dpd_test(ctx.model, &seg, ctx.alpha, ctx.crit, ctx.opts));
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            log::warn!("segment {start}-{end} could not be tested: {e}");
            let t = SegmentTest {
                start,
                end,
                outcome: None,
                error: Some(e.to_string()),
                split: false,
            };
            return (Vec::new(), vec![t]);
        }
    };
    let k = outcome.change_point;
    let split = outcome.reject && k >= ctx.min_len && len - k >= ctx.min_len;
    let mut tests = vec![SegmentTest {
        start,
        end,
        outcome: Some(outcome),
        error: None,
        split,
    }];
    if !split {
        return (Vec::new(), tests);
    }
    let cp = start + k - 1;
    let ((mut lc, lt), (rc, rt)) = rayon::join(|| examine(ctx, start, cp), || examine(ctx, cp + 1, end));
    lc.push(cp);
    lc.extend(rc);
    tests.extend(lt);
    tests.extend(rt);
    (lc, tests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::{simulate_sup_bb_sq, CritTable};
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::sync::Arc;

    fn crit() -> Arc<CritTable> {
        Arc::new(simulate_sup_bb_sq(2, 1000, 4000, 8).unwrap())
    }

    fn two_breaks(n: usize, seed: u64) -> Series {
        let mut rng = substream(seed, 0);
        Series::new(
            (0..n)
                .map(|t| {
                    let shift = if t >= n / 3 && t < 2 * n / 3 { 1.0 } else { 0.0 };
                    shift + rng.sample::<f64, _>(StandardNormal)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn short_series_is_one_segment() {
        let x = two_breaks(90, 1);
        let r = segment(ModelSpec::Normal, &x, 0.2, None, &crit(), &TestOptions::default()).unwrap();
        assert!(r.change_points.is_empty());
        assert_eq!(r.segments.len(), 1);
        assert!(r.tests.is_empty());
        assert_eq!((r.segments[0].start, r.segments[0].end), (1, 90));
    }

    #[test]
    fn finds_two_mean_shifts() {
        let x = two_breaks(1500, 3);
        let r = segment(ModelSpec::Normal, &x, 0.2, None, &crit(), &TestOptions::default()).unwrap();
        assert_eq!(r.change_points.len(), 2, "{:?}", r.change_points);
        assert!((r.change_points[0] as i64 - 500).abs() <= 100);
        assert!((r.change_points[1] as i64 - 1000).abs() <= 100);
        // segments partition the sample
        assert_eq!(r.segments.first().unwrap().start, 1);
        assert_eq!(r.segments.last().unwrap().end, 1500);
        for w in r.segments.windows(2) {
            assert_eq!(w[0].end + 1, w[1].start);
        }
        assert!(r.segments.iter().all(|s| s.end + 1 - s.start >= r.min_len));
        // every change point is the argmax of a rejecting test
        for cp in &r.change_points {
            assert!(r.tests.iter().any(|t| {
                let o = t.outcome.as_ref().unwrap();
                o.reject && t.start + o.change_point - 1 == *cp
            }));
        }
        assert!(r.report().contains("change_points = 2"));
    }

    #[test]
    fn rejects_tiny_min_len() {
        let x = two_breaks(300, 1);
        assert!(segment(ModelSpec::Normal, &x, 0.2, Some(5), &crit(), &TestOptions::default()).is_err());
    }

    #[test]
    fn default_min_len_values() {
        assert_eq!(default_min_len(ModelSpec::Normal), 50);
        assert_eq!(default_min_len(ModelSpec::garch11()), 60);
    }
}
