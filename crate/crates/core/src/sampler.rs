//! Deterministic DDIM reverse process with score-sum fusion across BSs.
//!
//! Every BS model predicts the noise for the shared state `x_t` from its own
//! fingerprint. The predictions are summed in ascending BS-index order, which
//! under conditionally independent measurements and a flat prior is the
//! noise parameterization of the product of the per-BS posteriors.

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::{rng_for, stream};

/// A per-BS model evaluated on a batch of states `x` (rows, normalized
/// positions) at normalized time `t_norm`.
pub trait ScoreModel: Sync {
    /// Per-row conditioning computed once per chain from the fingerprints.
    fn prepare(&self, fingerprints: ArrayView2<'_, f64>) -> Result<Array2<f64>>;

    fn predict(&self, x: ArrayView2<'_, f64>, t_norm: f64, prepared: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl ScoreModel for Network {
    fn prepare(&self, fingerprints: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.condition(fingerprints)
    }

    fn predict(&self, x: ArrayView2<'_, f64>, t_norm: f64, prepared: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let t = vec![t_norm; x.nrows()];
        self.forward_conditioned(prepared, Some(x.view()), Some(&t))
    }
}

/// Stub whose prediction is an arbitrary function of `(x, t_norm)`;
/// fingerprints are ignored.
pub struct FnModel<F>(pub F);

impl<F> ScoreModel for FnModel<F>
where
    F: Fn([f64; 2], f64) -> [f64; 2] + Sync,
{
    fn prepare(&self, fingerprints: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros((fingerprints.nrows(), 0)))
    }

    fn predict(&self, x: ArrayView2<'_, f64>, t_norm: f64, _: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(x.dim());
        for (xr, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            let v = (self.0)([xr[0], xr[1]], t_norm);
            o[0] = v[0];
            o[1] = v[1];
        }
        Ok(out)
    }
}

/// Exact noise prediction for clean positions distributed as `N(mu, var I)`:
/// at step `t` the noised marginal is `N(sqrt(abar) mu, (abar var + 1 - abar) I)`
/// and the prediction is `-sqrt(1 - abar)` times its score.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    pub mu: [f64; 2],
    pub var: f64,
    pub schedule: NoiseSchedule,
}

impl GaussianScore {
    /// Mean and per-axis variance of the noised marginal at step `t`.
    pub fn marginal(&self, t: usize) -> ([f64; 2], f64) {
        let ab = self.schedule.alpha_bar(t);
        let s = ab.sqrt();
        ([s * self.mu[0], s * self.mu[1]], ab * self.var + 1.0 - ab)
    }

    pub fn step_of(&self, t_norm: f64) -> usize {
        (t_norm * self.schedule.steps() as f64).round() as usize
    }

    pub fn eps(&self, x: [f64; 2], t: usize) -> [f64; 2] {
        let (m, v) = self.marginal(t);
        let k = (1.0 - self.schedule.alpha_bar(t)).sqrt() / v;
        [k * (x[0] - m[0]), k * (x[1] - m[1])]
    }
}

impl ScoreModel for GaussianScore {
    fn prepare(&self, fingerprints: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros((fingerprints.nrows(), 0)))
    }

    fn predict(&self, x: ArrayView2<'_, f64>, t_norm: f64, _: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let t = self.step_of(t_norm);
        let mut out = Array2::zeros(x.dim());
        for (xr, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            let e = self.eps([xr[0], xr[1]], t);
            o[0] = e[0];
            o[1] = e[1];
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Raw sum of the per-BS predictions.
    #[default]
    Sum,
    /// Sum divided by the number of BSs.
    Mean,
}

/// One BS in a fusion: its model and one normalized fingerprint row per chain.
pub struct FusionMember<'a> {
    pub bs_index: usize,
    pub model: &'a dyn ScoreModel,
    pub fingerprints: ArrayView2<'a, f64>,
}

/// Per-BS members sorted by BS index; every member carries the same number
/// of fingerprint rows (one per chain).
pub struct FusionSet<'a> {
    members: Vec<FusionMember<'a>>,
    prepared: Vec<Array2<f64>>,
    mode: FusionMode,
}

impl<'a> FusionSet<'a> {
    pub fn new(mut members: Vec<FusionMember<'a>>, mode: FusionMode) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Fusion("fusion set is empty".into()));
        }
        members.sort_by_key(|m| m.bs_index);
        if members.windows(2).any(|w| w[0].bs_index == w[1].bs_index) {
            return Err(Error::Fusion("duplicate BS index in fusion set".into()));
        }
        let rows = members[0].fingerprints.nrows();
        if rows == 0 || members.iter().any(|m| m.fingerprints.nrows() != rows) {
            return Err(Error::Fusion("members must carry the same positive number of fingerprint rows".into()));
        }
        let prepared = members.iter().map(|m| m.model.prepare(m.fingerprints)).collect::<Result<_>>()?;
        Ok(Self { members, prepared, mode })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn bs_indices(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.bs_index).collect()
    }

    pub fn n_chains(&self) -> usize {
        self.members[0].fingerprints.nrows()
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    /// Fused prediction for states `x` (one row per chain).
    pub fn fuse(&self, x: ArrayView2<'_, f64>, t_norm: f64) -> Result<Array2<f64>> {
        if x.dim() != (self.n_chains(), 2) {
            return Err(Error::arg(format!("state has shape {:?}, expected ({}, 2)", x.dim(), self.n_chains())));
        }
        let mut acc: Option<Array2<f64>> = None;
        for (m, prep) in self.members.iter().zip(&self.prepared) {
            let p = m.model.predict(x, t_norm, prep.view())?;
            acc = Some(match acc {
                None => p,
                Some(a) => a + &p,
            });
        }
        let mut out = acc.expect("non-empty");
        if self.mode == FusionMode::Mean && self.members.len() > 1 {
            out /= self.members.len() as f64;
        }
        Ok(out)
    }
}

/// Fused noise prediction at step `t` of `sched`.
pub fn fuse_noise(x: ArrayView2<'_, f64>, t: usize, sched: &NoiseSchedule, fs: &FusionSet<'_>) -> Result<Array2<f64>> {
    fs.fuse(x, sched.t_norm(t))
}

/// Initial states: chain `c` of replicate `r` draws from stream `(seed, r)`.
/// All chains of one replicate share the same start.
pub fn initial_states(seed: u64, replicate: u64, n_chains: usize, scale: f64) -> Array2<f64> {
    let mut rng = rng_for(seed, stream::SAMPLER, replicate);
    let x: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
    Array2::from_shape_fn((n_chains, 2), |(_, c)| scale * x[c])
}

/// Runs the deterministic reverse chain from `x_init` (normalized space).
///
/// Steps run from `t = T-1` down; while the previous step is positive the
/// state moves by the noise-free DDIM update, and the clean estimate from
/// the step with previous index 0 is returned. `on_step`, if given, sees the
/// state after every update.
pub fn ddim_run(
    fs: &FusionSet<'_>,
    sched: &NoiseSchedule,
    x_init: Array2<f64>,
    mut on_step: Option<&mut dyn FnMut(usize, &Array2<f64>)>,
) -> Result<Array2<f64>> {
    let steps = sched.steps();
    let mut x = x_init;
    for i in 0..steps - 1 {
        let t = steps - 1 - i;
        let tp = steps - 2 - i;
        let eps = fuse_noise(x.view(), t, sched, fs)?;
        let ab = sched.alpha_bar(t);
        let x0 = (&x - &(&eps * (1.0 - ab).sqrt())) / ab.sqrt();
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::Sampling { step: t, message: "clean estimate is not finite".into() });
        }
        if tp == 0 {
            return Ok(x0);
        }
        let abp = sched.alpha_bar(tp);
        x = x0 * abp.sqrt() + eps * (1.0 - abp).sqrt();
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Sampling { step: t, message: "state is not finite".into() });
        }
        if let Some(f) = on_step.as_deref_mut() {
            f(tp, &x);
        }
    }
    unreachable!("schedules have at least two steps")
}

/// One DDIM estimate per chain (normalized space), starting from the seeded prior draw.
pub fn ddim_sample(fs: &FusionSet<'_>, sched: &NoiseSchedule, seed: u64) -> Result<Array2<f64>> {
    ddim_run(fs, sched, initial_states(seed, 0, fs.n_chains(), 1.0), None)
}

/// Mean of `n_seeds` DDIM estimates per chain (normalized space).
pub fn estimate_batch(fs: &FusionSet<'_>, sched: &NoiseSchedule, seed: u64, n_seeds: usize) -> Result<Array2<f64>> {
    if n_seeds == 0 {
        return Err(Error::arg("n_seeds must be at least 1"));
    }
    let mut acc = ddim_sample(fs, sched, seed)?;
    for r in 1..n_seeds {
        acc += &ddim_run(fs, sched, initial_states(seed, r as u64, fs.n_chains(), 1.0), None)?;
    }
    if n_seeds > 1 {
        acc /= n_seeds as f64;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy_fp(rows: usize) -> Array2<f64> {
        Array2::zeros((rows, 1))
    }

    #[test]
    fn single_member_is_identity() {
        let m = FnModel(|x: [f64; 2], t: f64| [x[0] * 2.0 + t, x[1] - 1.0]);
        let fp = dummy_fp(3);
        let fs = FusionSet::new(vec![FusionMember { bs_index: 0, model: &m, fingerprints: fp.view() }], FusionMode::Sum)
            .unwrap();
        let x = Array2::from_shape_fn((3, 2), |(i, j)| i as f64 - j as f64);
        let direct = m.predict(x.view(), 0.3, Array2::zeros((3, 0)).view()).unwrap();
        assert_eq!(fs.fuse(x.view(), 0.3).unwrap(), direct);
    }

    #[test]
    fn constant_stubs_add_exactly() {
        let a = FnModel(|_, _| [0.25, -1.5]);
        let b = FnModel(|_, _| [1.125, 0.5]);
        let fp = dummy_fp(2);
        let fs = FusionSet::new(
            vec![
                FusionMember { bs_index: 1, model: &a, fingerprints: fp.view() },
                FusionMember { bs_index: 0, model: &b, fingerprints: fp.view() },
            ],
            FusionMode::Sum,
        )
        .unwrap();
        let out = fs.fuse(Array2::zeros((2, 2)).view(), 0.5).unwrap();
        assert!(out.rows().into_iter().all(|r| r[0] == 1.375 && r[1] == -1.0));
        let mean = FusionSet::new(
            vec![
                FusionMember { bs_index: 1, model: &a, fingerprints: fp.view() },
                FusionMember { bs_index: 0, model: &b, fingerprints: fp.view() },
            ],
            FusionMode::Mean,
        )
        .unwrap();
        let out = mean.fuse(Array2::zeros((2, 2)).view(), 0.5).unwrap();
        assert_eq!(out[[0, 0]], 0.6875);
    }

    #[test]
    fn empty_and_duplicate_sets_are_errors() {
        assert!(matches!(FusionSet::new(vec![], FusionMode::Sum), Err(Error::Fusion(_))));
        let a = FnModel(|_, _| [0.0, 0.0]);
        let fp = dummy_fp(1);
        let dup = vec![
            FusionMember { bs_index: 2, model: &a as &dyn ScoreModel, fingerprints: fp.view() },
            FusionMember { bs_index: 2, model: &a, fingerprints: fp.view() },
        ];
        assert!(matches!(FusionSet::new(dup, FusionMode::Sum), Err(Error::Fusion(_))));
    }

    #[test]
    fn gaussian_fusion_matches_product_density() {
        let sched = NoiseSchedule::default();
        let g1 = GaussianScore { mu: [0.3, -0.2], var: 0.04, schedule: sched.clone() };
        let g2 = GaussianScore { mu: [0.1, 0.4], var: 0.09, schedule: sched.clone() };
        let fp = dummy_fp(4);
        let fs = FusionSet::new(
            vec![
                FusionMember { bs_index: 0, model: &g1, fingerprints: fp.view() },
                FusionMember { bs_index: 1, model: &g2, fingerprints: fp.view() },
            ],
            FusionMode::Sum,
        )
        .unwrap();
        let x = Array2::from_shape_fn((4, 2), |(i, j)| 0.37 * i as f64 - 0.8 * j as f64 + 0.1);
        for t in [0usize, 17, 99, 199] {
            let fused = fuse_noise(x.view(), t, &sched, &fs).unwrap();
            // Product of the two noised marginals: precision-weighted Gaussian.
            let (m1, v1) = g1.marginal(t);
            let (m2, v2) = g2.marginal(t);
            let prec = 1.0 / v1 + 1.0 / v2;
            let mu = [(m1[0] / v1 + m2[0] / v2) / prec, (m1[1] / v1 + m2[1] / v2) / prec];
            let s = (1.0 - sched.alpha_bar(t)).sqrt();
            for (r, row) in x.rows().into_iter().enumerate() {
                for c in 0..2 {
                    let want = s * prec * (row[c] - mu[c]);
                    assert!((fused[[r, c]] - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn prior_stub_contracts_to_zero() {
        let sched = NoiseSchedule::default();
        let s2 = sched.clone();
        let m = FnModel(move |x: [f64; 2], t: f64| {
            let ab = s2.alpha_bar((t * s2.steps() as f64).round() as usize);
            let k = 1.0 / (1.0 - ab).sqrt();
            [x[0] * k, x[1] * k]
        });
        let fp = dummy_fp(5);
        let fs = FusionSet::new(vec![FusionMember { bs_index: 0, model: &m, fingerprints: fp.view() }], FusionMode::Sum)
            .unwrap();
        let x0 = ddim_run(&fs, &sched, Array2::from_elem((5, 2), 1.7), None).unwrap();
        assert!(x0.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn two_step_schedule_makes_one_evaluation() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let sched = NoiseSchedule::linear(2, 1e-4, 0.02).unwrap();
        let calls = AtomicUsize::new(0);
        let m = FnModel(|_, _| {
            calls.fetch_add(1, Ordering::SeqCst);
            [0.0, 0.0]
        });
        let fp = dummy_fp(1);
        let fs = FusionSet::new(vec![FusionMember { bs_index: 0, model: &m, fingerprints: fp.view() }], FusionMode::Sum)
            .unwrap();
        ddim_sample(&fs, &sched, 1).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn sampling_is_deterministic_and_order_free() {
        let sched = NoiseSchedule::default();
        let g1 = GaussianScore { mu: [0.3, -0.2], var: 0.01, schedule: sched.clone() };
        let g2 = GaussianScore { mu: [0.1, 0.4], var: 0.02, schedule: sched.clone() };
        let g3 = GaussianScore { mu: [-0.2, 0.0], var: 0.03, schedule: sched.clone() };
        let fp = dummy_fp(2);
        let members = |order: [usize; 3]| {
            let models: [&dyn ScoreModel; 3] = [&g1, &g2, &g3];
            order
                .iter()
                .map(|&b| FusionMember { bs_index: b, model: models[b], fingerprints: fp.view() })
                .collect::<Vec<_>>()
        };
        let trace = |order| {
            let fs = FusionSet::new(members(order), FusionMode::Sum).unwrap();
            let mut states = Vec::new();
            let mut rec = |_: usize, x: &Array2<f64>| states.push(x.clone());
            let out = ddim_run(&fs, &sched, initial_states(5, 0, 2, 1.0), Some(&mut rec)).unwrap();
            (out, states)
        };
        let a = trace([0, 1, 2]);
        let b = trace([2, 0, 1]);
        let c = trace([0, 1, 2]);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let sched = NoiseSchedule::linear(10, 1e-4, 0.02).unwrap();
        let m = FnModel(|_, t: f64| if t < 0.5 { [f64::NAN, 0.0] } else { [0.0, 0.0] });
        let fp = dummy_fp(1);
        let fs = FusionSet::new(vec![FusionMember { bs_index: 0, model: &m, fingerprints: fp.view() }], FusionMode::Sum)
            .unwrap();
        match ddim_sample(&fs, &sched, 0) {
            Err(Error::Sampling { step, .. }) => assert_eq!(step, 4),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn gaussian_product_mean_is_recovered() {
        let sched = NoiseSchedule::default();
        let g1 = GaussianScore { mu: [0.3, -0.2], var: 1e-4, schedule: sched.clone() };
        let g2 = GaussianScore { mu: [0.1, 0.4], var: 1e-4, schedule: sched.clone() };
        let fp = dummy_fp(1);
        let fs = FusionSet::new(
            vec![
                FusionMember { bs_index: 0, model: &g1, fingerprints: fp.view() },
                FusionMember { bs_index: 1, model: &g2, fingerprints: fp.view() },
            ],
            FusionMode::Sum,
        )
        .unwrap();
        let est = estimate_batch(&fs, &sched, 3, 20).unwrap();
        assert!((est[[0, 0]] - 0.2).abs() < 1e-2 && (est[[0, 1]] - 0.1).abs() < 1e-2);
        let one = estimate_batch(&fs, &sched, 3, 1).unwrap();
        assert_eq!(one, ddim_sample(&fs, &sched, 3).unwrap());
    }

    #[test]
    fn third_gaussian_shrinks_spread() {
        let sched = NoiseSchedule::default();
        let g = |mu| GaussianScore { mu, var: 0.05, schedule: sched.clone() };
        let (a, b, c) = (g([0.2, 0.0]), g([0.2, 0.0]), g([0.2, 0.0]));
        let fp = dummy_fp(1);
        let spread = |models: &[&dyn ScoreModel]| {
            let members = models
                .iter()
                .enumerate()
                .map(|(i, m)| FusionMember { bs_index: i, model: *m, fingerprints: fp.view() })
                .collect();
            let fs = FusionSet::new(members, FusionMode::Sum).unwrap();
            let xs: Vec<f64> = (0..200)
                .map(|s| ddim_run(&fs, &sched, initial_states(11, s, 1, 1.0), None).unwrap()[[0, 0]])
                .collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
        };
        let two = spread(&[&a, &b]);
        let three = spread(&[&a, &b, &c]);
        assert!(three < two, "two {two}, three {three}");
    }
}
