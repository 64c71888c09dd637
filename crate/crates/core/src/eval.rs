//! Error metrics and fused / per-BS evaluation.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::infer::{estimate, InferOptions};
use crate::model::{Method, ModelBundle};
use crate::rng::{rng_for, stream};

/// Euclidean error in centimeters.
pub fn error_cm(estimate: Point2, truth: Point2) -> f64 {
    100.0 * (estimate.x - truth.x).hypot(estimate.y - truth.y)
}

pub fn errors_cm(estimates: &[Point2], truth: &[Point2]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(Error::arg(format!("{} estimates for {} ground-truth positions", estimates.len(), truth.len())));
    }
    Ok(estimates.iter().zip(truth).map(|(&e, &t)| error_cm(e, t)).collect())
}

/// Linear-interpolated percentile of sorted values, `q` in [0, 100].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub n: usize,
    pub mean_cm: f64,
    pub p50_cm: f64,
    pub p90_cm: f64,
    pub max_cm: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::arg("no test samples to evaluate"));
        }
        if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
            return Err(Error::arg("errors must be finite and non-negative"));
        }
        let mut s = errors.to_vec();
        s.sort_by(f64::total_cmp);
        Ok(Self {
            n: s.len(),
            mean_cm: s.iter().sum::<f64>() / s.len() as f64,
            p50_cm: percentile(&s, 50.0),
            p90_cm: percentile(&s, 90.0),
            max_cm: s[s.len() - 1],
        })
    }

    pub fn from_estimates(estimates: &[Point2], truth: &[Point2]) -> Result<Self> {
        Self::from_errors(&errors_cm(estimates, truth)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub method: Method,
    /// `(bs index, stats)` for each model used alone; empty for the supervised baseline.
    pub per_bs: Vec<(usize, ErrorStats)>,
    /// All models together; absent when a single per-BS model is evaluated.
    pub fused: Option<ErrorStats>,
    pub n_test: usize,
}

impl ErrorReport {
    pub fn per_bs_mean_cm(&self) -> Vec<f64> {
        self.per_bs.iter().map(|(_, s)| s.mean_cm).collect()
    }

    pub fn fused_mean_cm(&self) -> Option<f64> {
        self.fused.map(|s| s.mean_cm)
    }

    /// Worst per-BS mean error.
    pub fn max_per_bs_mean_cm(&self) -> Option<f64> {
        self.per_bs_mean_cm().into_iter().reduce(f64::max)
    }
}

/// Which parts of an [`ErrorReport`] to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalMode {
    pub per_bs: bool,
    pub fused: bool,
}

impl EvalMode {
    pub const BOTH: Self = Self { per_bs: true, fused: true };
    pub const FUSED: Self = Self { per_bs: false, fused: true };
    pub const PER_BS: Self = Self { per_bs: true, fused: false };
}

/// Evaluates models on dataset rows `indices`.
pub fn evaluate(
    bundles: &[&ModelBundle],
    data: &Dataset,
    indices: &[usize],
    mode: EvalMode,
    opts: &InferOptions,
) -> Result<ErrorReport> {
    if indices.is_empty() {
        return Err(Error::arg("test split is empty"));
    }
    let first = bundles.first().ok_or_else(|| Error::arg("no models given"))?;
    let method = first.meta.method;
    let truth = data.positions(indices);
    let stats = |set: &[&ModelBundle]| ErrorStats::from_estimates(&estimate(set, data, indices, opts)?, &truth);
    let mut per_bs = Vec::new();
    if method.is_per_bs() && (mode.per_bs || bundles.len() == 1) {
        for b in bundles {
            per_bs.push((b.bs_index(), stats(&[*b])?));
        }
        per_bs.sort_by_key(|(b, _)| *b);
    }
    let fused = if !method.is_per_bs() || (mode.fused && bundles.len() > 1) {
        Some(stats(bundles)?)
    } else {
        None
    };
    Ok(ErrorReport { method, per_bs, fused, n_test: indices.len() })
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k.min(n - k)).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Subsets of size `k` used by the fusion sweep: all of them when there are at
/// most `cap`, otherwise `cap` distinct ones drawn with the subsets stream.
pub fn sweep_subsets(n: usize, k: usize, cap: usize, seed: u64) -> Vec<Vec<usize>> {
    let all = combinations(n, k);
    if all.len() <= cap {
        return all;
    }
    let mut rng = rng_for(seed, stream::SUBSETS, k as u64);
    let mut pick = sample(&mut rng, all.len(), cap).into_vec();
    pick.sort_unstable();
    pick.into_iter().map(|i| all[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub bs: Vec<usize>,
    pub stats: ErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub n_subsets: usize,
    pub min_mean_cm: f64,
    pub median_mean_cm: f64,
    pub max_mean_cm: f64,
    /// Median over subsets of each subset's median error.
    pub median_p50_cm: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    percentile(v, 50.0)
}

impl SizeSummary {
    fn of(size: usize, rows: &[SubsetResult]) -> Self {
        let mut means: Vec<f64> = rows.iter().map(|r| r.stats.mean_cm).collect();
        let mut p50: Vec<f64> = rows.iter().map(|r| r.stats.p50_cm).collect();
        Self {
            size,
            n_subsets: rows.len(),
            min_mean_cm: means.iter().copied().fold(f64::INFINITY, f64::min),
            max_mean_cm: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            median_mean_cm: median(&mut means),
            median_p50_cm: median(&mut p50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FusionSweep {
    pub subsets: Vec<SubsetResult>,
    pub sizes: Vec<SizeSummary>,
}

/// Fused error for BS subsets of every size from 1 to the number of models.
pub fn fusion_sweep(
    bundles: &[&ModelBundle],
    data: &Dataset,
    indices: &[usize],
    max_subsets: usize,
    opts: &InferOptions,
) -> Result<FusionSweep> {
    if bundles.iter().any(|b| !b.meta.method.is_per_bs()) {
        return Err(Error::arg("the fusion sweep needs per-BS models"));
    }
    let truth = data.positions(indices);
    let mut sweep = FusionSweep::default();
    for k in 1..=bundles.len() {
        let rows = sweep_subsets(bundles.len(), k, max_subsets.max(1), opts.seed)
            .into_iter()
            .map(|s| {
                let set: Vec<&ModelBundle> = s.iter().map(|&i| bundles[i]).collect();
                let stats = ErrorStats::from_estimates(&estimate(&set, data, indices, opts)?, &truth)?;
                Ok(SubsetResult { bs: set.iter().map(|b| b.bs_index()).collect(), stats })
            })
            .collect::<Result<Vec<_>>>()?;
        sweep.sizes.push(SizeSummary::of(k, &rows));
        sweep.subsets.extend(rows);
    }
    Ok(sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_metric_hand_values() {
        let cases = [
            ((0.0, 0.0), (3.0, 4.0), 500.0),
            ((1.0, 1.0), (1.0, 1.01), 1.0),
            ((-2.0, 5.0), (-2.5, 5.0), 50.0),
        ];
        for ((ax, ay), (bx, by), want) in cases {
            assert!((error_cm(Point2::new(ax, ay), Point2::new(bx, by)) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn stub_estimators() {
        let truth: Vec<Point2> = (0..7).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        let perfect = ErrorStats::from_estimates(&truth, &truth).unwrap();
        assert_eq!((perfect.mean_cm, perfect.p50_cm, perfect.p90_cm, perfect.max_cm), (0.0, 0.0, 0.0, 0.0));
        let east: Vec<Point2> = truth.iter().map(|p| Point2::new(p.x + 1.0, p.y)).collect();
        let s = ErrorStats::from_estimates(&east, &truth).unwrap();
        assert_eq!(s.mean_cm, 100.0);
        assert_eq!(s.max_cm, 100.0);
    }

    #[test]
    fn percentiles_are_interpolated() {
        let s = ErrorStats::from_errors(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.mean_cm, s.p50_cm, s.max_cm), (3.0, 3.0, 5.0));
        assert!((s.p90_cm - 4.6).abs() < 1e-12);
        assert!(matches!(ErrorStats::from_errors(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn subset_counts() {
        for k in 1..=3 {
            assert_eq!(sweep_subsets(3, k, 20, 0).len(), binomial(3, k));
        }
        assert_eq!(binomial(7, 3), 35);
        let s = sweep_subsets(7, 3, 20, 9);
        assert_eq!(s.len(), 20);
        let uniq: std::collections::HashSet<_> = s.iter().collect();
        assert_eq!(uniq.len(), 20);
        assert_eq!(s, sweep_subsets(7, 3, 20, 9));
        assert_eq!(combinations(4, 2), vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
    }
}
