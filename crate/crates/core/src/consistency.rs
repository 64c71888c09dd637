//! Consistency training and few-step fused inference.
//!
//! The network maps a noised position `x0 + sigma * eps` directly to a clean
//! position estimate. Noise levels map to network time by
//! `t = ln(sigma / sigma_max) / ln(sigma_min / sigma_max)`, so `t = 0` is the
//! noisiest level and `t = 1` the cleanest.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{normalized_positions, Trained};
use crate::error::{Error, Result};
use crate::geometry::PositionNorm;
use crate::nn::{NetInput, Network, ParamSet};
use crate::rng::{rng_for, stream, Rng};
use crate::sampler::{initial_states, FusionSet, ScoreModel};
use crate::train::{fit, gather, Objective, Streams, TrainHyper, TrainSet};

/// Data scale used to precondition network inputs.
pub const SIGMA_DATA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaRange {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for SigmaRange {
    fn default() -> Self {
        Self { sigma_min: 0.002, sigma_max: 80.0 }
    }
}

impl SigmaRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::arg(format!(
                "sigma range needs 0 < {} < {}",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }

    pub fn t_to_sigma(&self, t: f64) -> f64 {
        self.sigma_max * (self.sigma_min / self.sigma_max).powf(t)
    }
}

pub fn sigma_to_t(sigma: f64, r: &SigmaRange) -> Result<f64> {
    if !(sigma >= r.sigma_min && sigma <= r.sigma_max) {
        return Err(Error::arg(format!(
            "sigma {sigma} outside [{}, {}]",
            r.sigma_min, r.sigma_max
        )));
    }
    if sigma == r.sigma_max {
        return Ok(0.0);
    }
    if sigma == r.sigma_min {
        return Ok(1.0);
    }
    Ok((sigma / r.sigma_max).ln() / (r.sigma_min / r.sigma_max).ln())
}

/// Input scale `1 / sqrt(sigma^2 + SIGMA_DATA^2)`.
pub fn c_in(sigma: f64) -> f64 {
    1.0 / (sigma * sigma + SIGMA_DATA * SIGMA_DATA).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub t_sequence: Vec<f64>,
}

impl Default for StepPlan {
    fn default() -> Self {
        Self { t_sequence: vec![0.0, 1.0] }
    }
}

impl StepPlan {
    /// `s` evenly spaced times from 0 to 1 (`[0]` for one step).
    pub fn uniform(s: usize) -> Result<Self> {
        match s {
            0 => Err(Error::arg("step plan needs at least one step")),
            1 => Ok(Self { t_sequence: vec![0.0] }),
            _ => Ok(Self { t_sequence: (0..s).map(|i| i as f64 / (s - 1) as f64).collect() }),
        }
    }

    pub fn len(&self) -> usize {
        self.t_sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_sequence.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_sequence.is_empty() || self.t_sequence.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::arg("step plan times must be a non-empty list in [0, 1]"));
        }
        Ok(())
    }
}

/// A consistency-trained network used as a fusion member.
pub struct ConsistencyModel<'a> {
    pub network: &'a Network,
    pub range: SigmaRange,
}

impl ScoreModel for ConsistencyModel<'_> {
    fn prepare(&self, fingerprints: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.network.condition(fingerprints)
    }

    fn predict(&self, x: ArrayView2<'_, f64>, t_norm: f64, prepared: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let scaled = &x * c_in(self.range.t_to_sigma(t_norm));
        let t = vec![t_norm; x.nrows()];
        self.network.forward_conditioned(prepared, Some(scaled.view()), Some(&t))
    }
}

/// Consistency loss on given predictions: mean over rows of
/// `|p1 - p2|^2 + |p1 - x0|^2 + |p2 - x0|^2`.
pub fn ct_loss_value(p1: ArrayView2<'_, f64>, p2: ArrayView2<'_, f64>, x0: ArrayView2<'_, f64>) -> f64 {
    let sq = |a: &Array2<f64>| a.mapv(|v| v * v).sum();
    (sq(&(&p1 - &p2)) + sq(&(&p1 - &x0)) + sq(&(&p2 - &x0))) / x0.nrows() as f64
}

/// Network inputs for noise levels `sigma` and noise `eps`: scaled state and time.
fn ct_inputs(
    x0: ArrayView2<'_, f64>,
    sigma: &[f64],
    eps: ArrayView2<'_, f64>,
    r: &SigmaRange,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let m = x0.nrows();
    if sigma.len() != m || eps.dim() != (m, 2) || x0.ncols() != 2 {
        return Err(Error::arg("consistency batch shapes do not agree"));
    }
    let mut x = Array2::zeros((m, 2));
    let mut t = Vec::with_capacity(m);
    for j in 0..m {
        let s = sigma[j];
        t.push(sigma_to_t(s, r)?);
        let k = c_in(s);
        for c in 0..2 {
            x[[j, c]] = k * (x0[[j, c]] + s * eps[[j, c]]);
        }
    }
    Ok((x, t))
}

/// Consistency loss and gradients; both noisings pass through the network
/// as one stacked batch.
#[allow(clippy::too_many_arguments)]
pub fn ct_batch_loss(
    net: &mut Network,
    x0: ArrayView2<'_, f64>,
    fp: ArrayView2<'_, f64>,
    sigma1: &[f64],
    sigma2: &[f64],
    eps1: ArrayView2<'_, f64>,
    eps2: ArrayView2<'_, f64>,
    r: &SigmaRange,
    dropout_rng: &mut Rng,
) -> Result<(f64, ParamSet)> {
    let m = x0.nrows();
    let (xa, ta) = ct_inputs(x0, sigma1, eps1, r)?;
    let (xb, tb) = ct_inputs(x0, sigma2, eps2, r)?;
    let x = concatenate(Axis(0), &[xa.view(), xb.view()]).expect("same width");
    let f = concatenate(Axis(0), &[fp.view(), fp.view()]).expect("same width");
    let t: Vec<f64> = ta.into_iter().chain(tb).collect();
    let (out, cache) = net.forward_train(&NetInput::new(x.view(), f.view(), &t), dropout_rng)?;
    let p1 = out.slice(ndarray::s![..m, ..]);
    let p2 = out.slice(ndarray::s![m.., ..]);
    let loss = ct_loss_value(p1, p2, x0);
    if !loss.is_finite() {
        return Err(Error::Training(format!("consistency loss is not finite ({loss})")));
    }
    let k = 2.0 / m as f64;
    let g1 = (&(&p1 - &p2) + &(&p1 - &x0)) * k;
    let g2 = (&(&p2 - &p1) + &(&p2 - &x0)) * k;
    let g = concatenate(Axis(0), &[g1.view(), g2.view()]).expect("same width");
    let grads = net.backward(&cache, g.view())?;
    Ok((loss, grads))
}

#[allow(clippy::too_many_arguments)]
pub fn ct_eval_loss(
    net: &Network,
    x0: ArrayView2<'_, f64>,
    fp: ArrayView2<'_, f64>,
    sigma1: &[f64],
    sigma2: &[f64],
    eps1: ArrayView2<'_, f64>,
    eps2: ArrayView2<'_, f64>,
    r: &SigmaRange,
) -> Result<f64> {
    let (xa, ta) = ct_inputs(x0, sigma1, eps1, r)?;
    let (xb, tb) = ct_inputs(x0, sigma2, eps2, r)?;
    let p1 = net.forward(&NetInput::new(xa.view(), fp.view(), &ta))?;
    let p2 = net.forward(&NetInput::new(xb.view(), fp.view(), &tb))?;
    Ok(ct_loss_value(p1.view(), p2.view(), x0))
}

struct Draws {
    sigma1: Vec<f64>,
    sigma2: Vec<f64>,
    eps1: Array2<f64>,
    eps2: Array2<f64>,
}

fn draw<R: rand::Rng>(m: usize, r: &SigmaRange, rng: &mut R) -> Draws {
    let mut sig = || (0..m).map(|_| rng.random_range(r.sigma_min..=r.sigma_max)).collect::<Vec<_>>();
    let sigma1 = sig();
    let sigma2 = sig();
    let eps1 = Array2::from_shape_fn((m, 2), |_| StandardNormal.sample(rng));
    let eps2 = Array2::from_shape_fn((m, 2), |_| StandardNormal.sample(rng));
    Draws { sigma1, sigma2, eps1, eps2 }
}

struct CtObjective<'a> {
    train: &'a TrainSet,
    x0: Array2<f64>,
    range: SigmaRange,
    val: Option<(Array2<f64>, Array2<f64>, Draws)>,
}

impl Objective for CtObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn batch_loss(&mut self, net: &mut Network, batch: &[usize], s: &mut Streams) -> Result<(f64, ParamSet)> {
        let d = draw(batch.len(), &self.range, &mut s.noise);
        let x0 = gather(&self.x0, batch);
        let fp = gather(&self.train.inputs, batch);
        ct_batch_loss(
            net,
            x0.view(),
            fp.view(),
            &d.sigma1,
            &d.sigma2,
            d.eps1.view(),
            d.eps2.view(),
            &self.range,
            &mut s.dropout,
        )
    }

    fn val_loss(&self, net: &Network) -> Result<Option<f64>> {
        self.val
            .as_ref()
            .map(|(x0, fp, d)| {
                ct_eval_loss(net, x0.view(), fp.view(), &d.sigma1, &d.sigma2, d.eps1.view(), d.eps2.view(), &self.range)
            })
            .transpose()
    }
}

/// Trains one per-BS consistency network.
pub fn train_consistency(
    net: Network,
    train: &TrainSet,
    val: Option<&TrainSet>,
    pos_norm: &PositionNorm,
    range: SigmaRange,
    hyper: &TrainHyper,
) -> Result<Trained> {
    range.validate()?;
    if train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    let val = val.filter(|v| !v.is_empty()).map(|v| {
        let mut rng = rng_for(hyper.seed, stream::VALIDATION, 1);
        (normalized_positions(&v.positions, pos_norm), v.inputs.clone(), draw(v.len(), &range, &mut rng))
    });
    let mut obj = CtObjective { train, x0: normalized_positions(&train.positions, pos_norm), range, val };
    let mut net = net;
    let fitted = fit(&mut net, hyper, &mut obj)?;
    Ok((net, fitted).into())
}

/// Few-step fused inference from `x ~ N(0, sigma_max^2 I)` (normalized space).
/// At each planned time the state is replaced by the fused member outputs.
pub fn few_step_infer(fs: &FusionSet<'_>, plan: &StepPlan, range: &SigmaRange, seed: u64) -> Result<Array2<f64>> {
    plan.validate()?;
    let mut x = initial_states(seed, 0, fs.n_chains(), range.sigma_max);
    for (i, &t) in plan.t_sequence.iter().enumerate() {
        x = fs.fuse(x.view(), t)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Sampling { step: i, message: "consistency state is not finite".into() });
        }
    }
    Ok(x)
}

/// Mean distance between outputs for two independent noisings of held-out
/// data, in normalized units.
pub fn consistency_gap(net: &Network, x0: ArrayView2<'_, f64>, fp: ArrayView2<'_, f64>, r: &SigmaRange, seed: u64) -> Result<f64> {
    let mut rng = rng_for(seed, stream::CONSISTENCY, 0);
    let d = draw(x0.nrows(), r, &mut rng);
    let (xa, ta) = ct_inputs(x0, &d.sigma1, d.eps1.view(), r)?;
    let (xb, tb) = ct_inputs(x0, &d.sigma2, d.eps2.view(), r)?;
    let p1 = net.forward(&NetInput::new(xa.view(), fp.view(), &ta))?;
    let p2 = net.forward(&NetInput::new(xb.view(), fp.view(), &tb))?;
    let diff = &p1 - &p2;
    Ok(diff.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum::<f64>() / x0.nrows() as f64)
}

#[cfg(test)]
mod tests {
    use rand::{Rng as _, SeedableRng};

    use super::*;
    use crate::geometry::{BoundingBox, Point2};
    use crate::nn::{ArchDescriptor, ParamKind};
    use crate::sampler::{FnModel, FusionMember, FusionMode};

    #[test]
    fn sigma_map_endpoints_and_midpoint() {
        let r = SigmaRange::default();
        assert_eq!(sigma_to_t(80.0, &r).unwrap(), 0.0);
        assert_eq!(sigma_to_t(0.002, &r).unwrap(), 1.0);
        let mid = (0.002f64 * 80.0).sqrt();
        assert!((sigma_to_t(mid, &r).unwrap() - 0.5).abs() < 1e-12);
        assert!(sigma_to_t(1.0, &r).unwrap() < sigma_to_t(0.5, &r).unwrap());
        assert!(matches!(sigma_to_t(100.0, &r), Err(Error::Argument(_))));
        assert!(matches!(sigma_to_t(0.001, &r), Err(Error::Argument(_))));
        for t in [0.0, 0.3, 0.77, 1.0] {
            assert!((sigma_to_t(r.t_to_sigma(t).clamp(0.002, 80.0), &r).unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_on_stub_predictions() {
        let x0 = Array2::from_shape_vec((2, 2), vec![0.6, 0.8, 1.0, 0.0]).unwrap();
        assert_eq!(ct_loss_value(x0.view(), x0.view(), x0.view()), 0.0);
        let zero = Array2::zeros((2, 2));
        assert!((ct_loss_value(zero.view(), zero.view(), x0.view()) - 2.0).abs() < 1e-15);
    }

    fn toy_unet() -> ArchDescriptor {
        let mut a = ArchDescriptor::unet(12);
        a.hidden = vec![6, 8, 10];
        a.decoder = vec![8, 6, 5];
        a.time_dim = 8;
        a
    }

    #[test]
    fn ct_gradient_matches_finite_differences() {
        let mut net = Network::new(toy_unet(), 2).unwrap();
        let mut rng = Rng::seed_from_u64(1);
        let m = 5;
        let x0 = Array2::from_shape_fn((m, 2), |_| rng.random_range(-1.0..1.0));
        let fp = Array2::from_shape_fn((m, 12), |_| rng.random_range(-1.0..1.0));
        let r = SigmaRange::default();
        let d = draw(m, &r, &mut rng);
        let eval = |net: &mut Network| {
            ct_batch_loss(net, x0.view(), fp.view(), &d.sigma1, &d.sigma2, d.eps1.view(), d.eps2.view(), &r, &mut Rng::seed_from_u64(0))
                .unwrap()
        };
        let (_, g) = eval(&mut net);
        let h = 1e-5;
        for idx in 0..net.params().len() {
            if net.params().get(idx).kind != ParamKind::Trainable {
                continue;
            }
            for k in 0..net.params().tensor(idx).len() {
                let orig = net.params().tensor(idx).data[k];
                net.params_mut().tensor_mut(idx).data[k] = orig + h;
                let lp = eval(&mut net).0;
                net.params_mut().tensor_mut(idx).data[k] = orig - h;
                let lm = eval(&mut net).0;
                net.params_mut().tensor_mut(idx).data[k] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = g.tensor(idx).data[k];
                assert!(
                    (num - ana).abs() <= 1e-4 * num.abs().max(ana.abs()).max(1e-6),
                    "{}[{k}]: {ana} vs {num}",
                    net.params().get(idx).name
                );
            }
        }
    }

    #[test]
    fn toy_training_drops_loss_tenfold() {
        let mut rng = Rng::seed_from_u64(3);
        let n = 50;
        let positions: Vec<Point2> =
            (0..n).map(|_| Point2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))).collect();
        // Fingerprint encodes the position linearly plus a fixed nonlinearity.
        let fp = Array2::from_shape_fn((n, 12), |(i, c)| {
            let p = positions[i];
            let v = if c % 2 == 0 { p.x } else { p.y } / 10.0;
            (v * (1.0 + c as f64 * 0.3)).sin()
        });
        let set = TrainSet::new(positions, fp).unwrap();
        let norm = PositionNorm::new(BoundingBox { min: Point2::new(0.0, 0.0), max: Point2::new(10.0, 10.0) }).unwrap();
        let mut arch = toy_unet();
        arch.hidden = vec![32, 64, 128];
        arch.decoder = vec![64, 32, 32];
        let hyper = TrainHyper { batch_size: 25, max_epochs: 1000, patience: 10_000, lr: 2e-3, seed: 5, max_steps: Some(2000) };
        let trained =
            train_consistency(Network::new(arch, 4).unwrap(), &set, Some(&set), &norm, SigmaRange::default(), &hyper)
                .unwrap();
        let r = &trained.report;
        assert!(r.best_val_loss * 10.0 <= r.initial_val_loss, "{} -> {}", r.initial_val_loss, r.best_val_loss);
    }

    #[test]
    fn few_step_with_perfect_stubs() {
        let x0 = [0.25, -0.5];
        let perfect = FnModel(move |_, _| x0);
        let fp = Array2::zeros((1, 1));
        let r = SigmaRange::default();
        let one = FusionSet::new(vec![FusionMember { bs_index: 0, model: &perfect, fingerprints: fp.view() }], FusionMode::Sum)
            .unwrap();
        let out = few_step_infer(&one, &StepPlan::uniform(1).unwrap(), &r, 1).unwrap();
        assert_eq!((out[[0, 0]], out[[0, 1]]), (0.25, -0.5));
        let members = || {
            vec![
                FusionMember { bs_index: 0, model: &perfect as &dyn ScoreModel, fingerprints: fp.view() },
                FusionMember { bs_index: 1, model: &perfect, fingerprints: fp.view() },
            ]
        };
        let sum = FusionSet::new(members(), FusionMode::Sum).unwrap();
        let out = few_step_infer(&sum, &StepPlan::default(), &r, 1).unwrap();
        assert_eq!((out[[0, 0]], out[[0, 1]]), (0.5, -1.0));
        let mean = FusionSet::new(members(), FusionMode::Mean).unwrap();
        let out = few_step_infer(&mean, &StepPlan::default(), &r, 1).unwrap();
        assert_eq!((out[[0, 0]], out[[0, 1]]), (0.25, -0.5));
    }

    #[test]
    fn evaluations_are_steps_times_stations() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let m = FnModel(|x, _| {
            calls.fetch_add(1, Ordering::SeqCst);
            x
        });
        let fp = Array2::zeros((1, 1));
        let members = (0..3)
            .map(|b| FusionMember { bs_index: b, model: &m as &dyn ScoreModel, fingerprints: fp.view() })
            .collect();
        let fs = FusionSet::new(members, FusionMode::Mean).unwrap();
        few_step_infer(&fs, &StepPlan::uniform(4).unwrap(), &SigmaRange::default(), 0).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 12);
    }

    #[test]
    fn default_plan_is_two_steps() {
        assert_eq!(StepPlan::default().t_sequence, vec![0.0, 1.0]);
        assert!(StepPlan::uniform(0).is_err());
    }
}
