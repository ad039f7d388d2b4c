//! Paired bootstrap confidence intervals and sign-permutation p-values.
//!
//! Iteration `i` draws from ChaCha8 seeded with the user seed on stream
//! `2i` (bootstrap resample) or `2i + 1` (permutation), so results do not
//! depend on how iterations are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Confusion, Metric};
use super::{kendall_tau_b, EvalError};
use crate::exec::{self, Execution};

pub const DEFAULT_ITERATIONS: usize = 2000;

/// Absolute tolerance when comparing permuted and observed differences.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub n_iter: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        BootstrapConfig { n_iter: DEFAULT_ITERATIONS, seed, execution: Execution::default() }
    }
}

/// Scores predictions against ground truth; `None` where undefined.
pub trait Scorer: Sync {
    type Pred: Copy + Send + Sync;
    type Truth: Copy + Send + Sync;

    fn score(&self, pred: &[Self::Pred], gt: &[Self::Truth]) -> Option<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct BinaryScorer(pub Metric);

impl Scorer for BinaryScorer {
    type Pred = bool;
    type Truth = bool;

    fn score(&self, pred: &[bool], gt: &[bool]) -> Option<f64> {
        Confusion::from_pairs(pred, gt).ok().map(|c| self.0.of(&c))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TauScorer;

impl Scorer for TauScorer {
    type Pred = f64;
    type Truth = f64;

    fn score(&self, pred: &[f64], gt: &[f64]) -> Option<f64> {
        kendall_tau_b(pred, gt).ok()
    }
}

/// Samples resampled together. With several strata the statistic is the
/// weighted mean of the per-stratum scores and each stratum is resampled on
/// its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum<P, T> {
    pub a: Vec<P>,
    pub b: Vec<P>,
    pub gt: Vec<T>,
    pub weight: f64,
}

impl<P, T> Stratum<P, T> {
    pub fn new(a: Vec<P>, b: Vec<P>, gt: Vec<T>) -> Self {
        Stratum { a, b, gt, weight: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedOutcome {
    pub a: Estimate,
    pub b: Estimate,
    /// Two-sided p-value for score(a) != score(b).
    pub p_value: f64,
}

fn check<P, T>(strata: &[Stratum<P, T>]) -> Result<(), EvalError> {
    let total: usize = strata.iter().map(Stratum::len).sum();
    if total < 2 {
        return Err(EvalError::TooFewSamples { needed: 2, got: total });
    }
    for s in strata {
        if s.a.len() != s.gt.len() || s.b.len() != s.gt.len() {
            return Err(EvalError::LengthMismatch(s.a.len().max(s.b.len()), s.gt.len()));
        }
        if s.is_empty() {
            return Err(EvalError::TooFewSamples { needed: 1, got: 0 });
        }
        if !(s.weight.is_finite() && s.weight > 0.0) {
            return Err(EvalError::Undefined(format!("stratum weight {}", s.weight)));
        }
    }
    Ok(())
}

fn weighted(parts: impl Iterator<Item = (f64, Option<f64>)>) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (w, v) in parts {
        if let Some(v) = v {
            num += w * v;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

fn statistic<S: Scorer>(scorer: &S, strata: &[Stratum<S::Pred, S::Truth>], side_b: bool) -> Option<f64> {
    weighted(strata.iter().map(|s| (s.weight, scorer.score(if side_b { &s.b } else { &s.a }, &s.gt))))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 2.5 / 97.5 percentile interval, widened if needed so it contains the
/// point estimate.
fn interval(point: f64, mut values: Vec<f64>) -> Estimate {
    if values.is_empty() {
        return Estimate { point, ci_low: point, ci_high: point };
    }
    values.sort_by(f64::total_cmp);
    let low = percentile(&values, 0.025);
    let high = percentile(&values, 0.975);
    Estimate { point, ci_low: low.min(point), ci_high: high.max(point) }
}

/// One bootstrap iteration: the same resampled indices for both labelers.
fn resample<S: Scorer>(
    scorer: &S,
    strata: &[Stratum<S::Pred, S::Truth>],
    rng: &mut ChaCha8Rng,
) -> (Option<f64>, Option<f64>) {
    let mut parts_a = Vec::with_capacity(strata.len());
    let mut parts_b = Vec::with_capacity(strata.len());
    let (mut a, mut b, mut gt) = (Vec::new(), Vec::new(), Vec::new());
    for s in strata {
        a.clear();
        b.clear();
        gt.clear();
        for _ in 0..s.len() {
            let i = rng.random_range(0..s.len());
            a.push(s.a[i]);
            b.push(s.b[i]);
            gt.push(s.gt[i]);
        }
        parts_a.push((s.weight, scorer.score(&a, &gt)));
        parts_b.push((s.weight, scorer.score(&b, &gt)));
    }
    (weighted(parts_a.into_iter()), weighted(parts_b.into_iter()))
}

/// One permutation: each sample's two predictions swapped with probability
/// one half; returns the permuted score difference.
fn permute<S: Scorer>(scorer: &S, strata: &[Stratum<S::Pred, S::Truth>], rng: &mut ChaCha8Rng) -> Option<f64> {
    let mut parts_a = Vec::with_capacity(strata.len());
    let mut parts_b = Vec::with_capacity(strata.len());
    for s in strata {
        let mut a = s.a.clone();
        let mut b = s.b.clone();
        for i in 0..s.len() {
            if rng.random_bool(0.5) {
                std::mem::swap(&mut a[i], &mut b[i]);
            }
        }
        parts_a.push((s.weight, scorer.score(&a, &s.gt)));
        parts_b.push((s.weight, scorer.score(&b, &s.gt)));
    }
    Some(weighted(parts_a.into_iter())? - weighted(parts_b.into_iter())?)
}

/// Paired comparison of labelers `a` and `b` on the same samples.
pub fn paired_bootstrap<S: Scorer>(
    scorer: &S,
    strata: &[Stratum<S::Pred, S::Truth>],
    cfg: &BootstrapConfig,
) -> Result<PairedOutcome, EvalError> {
    check(strata)?;
    let point_a = statistic(scorer, strata, false)
        .ok_or_else(|| EvalError::Undefined("score undefined on the full sample".into()))?;
    let point_b = statistic(scorer, strata, true)
        .ok_or_else(|| EvalError::Undefined("score undefined on the full sample".into()))?;
    let observed = (point_a - point_b).abs();

    let draws = exec::map_indexed(cfg.execution, cfg.n_iter, |i| {
        let boot = resample(scorer, strata, &mut rng_for(cfg.seed, 2 * i as u64));
        let perm = permute(scorer, strata, &mut rng_for(cfg.seed, 2 * i as u64 + 1));
        (boot, perm)
    });
    let a_vals: Vec<f64> = draws.iter().filter_map(|d| d.0 .0).collect();
    let b_vals: Vec<f64> = draws.iter().filter_map(|d| d.0 .1).collect();
    let diffs: Vec<f64> = draws.iter().filter_map(|d| d.1).collect();
    let extreme = diffs.iter().filter(|d| d.abs() >= observed - TIE_EPS).count();
    let p_value = (extreme + 1) as f64 / (diffs.len() + 1) as f64;
    Ok(PairedOutcome { a: interval(point_a, a_vals), b: interval(point_b, b_vals), p_value })
}

/// Confidence interval for a single labeler.
pub fn bootstrap_ci<S: Scorer>(
    scorer: &S,
    strata: &[(Vec<S::Pred>, Vec<S::Truth>, f64)],
    cfg: &BootstrapConfig,
) -> Result<Estimate, EvalError> {
    let paired: Vec<Stratum<S::Pred, S::Truth>> = strata
        .iter()
        .map(|(p, g, w)| Stratum { a: p.clone(), b: p.clone(), gt: g.clone(), weight: *w })
        .collect();
    check(&paired)?;
    let point = statistic(scorer, &paired, false)
        .ok_or_else(|| EvalError::Undefined("score undefined on the full sample".into()))?;
    let vals: Vec<f64> = exec::map_indexed(cfg.execution, cfg.n_iter, |i| {
        resample(scorer, &paired, &mut rng_for(cfg.seed, 2 * i as u64)).0
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(interval(point, vals))
}

/// p-value marker used in metric tables.
pub fn p_marker(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}
