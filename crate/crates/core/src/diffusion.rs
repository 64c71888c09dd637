//! Discrete diffusion: linear noise schedule, closed-form forward noising,
//! time-decaying soft labels and denoising score matching (DSM) training.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, PositionNorm};
use crate::nn::{LossSpec, NetInput, Network, ParamSet};
use crate::rng::{rng_for, stream, Rng};
use crate::train::{fit, gather, Fitted, Objective, Streams, TrainHyper, TrainSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { steps: 200, beta_start: 1e-4, beta_end: 0.02 }
    }
}

/// Per-step `beta_t` and `alpha_bar_t = prod_{i<=t} (1 - beta_i)`, 0-indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::arg(format!("schedule needs at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::arg(format!(
                "beta bounds must satisfy 0 < {beta_start} < {beta_end} < 1"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { spec: ScheduleSpec { steps, beta_start, beta_end }, betas, alpha_bars })
    }

    pub fn from_spec(spec: ScheduleSpec) -> Result<Self> {
        Self::linear(spec.steps, spec.beta_start, spec.beta_end)
    }

    pub fn spec(&self) -> ScheduleSpec {
        self.spec
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// Network time input for step `t`.
    pub fn t_norm(&self, t: usize) -> f64 {
        t as f64 / self.steps() as f64
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::from_spec(ScheduleSpec::default()).expect("valid default schedule")
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(x0: [f64; 2], t: usize, eps: [f64; 2], sched: &NoiseSchedule) -> [f64; 2] {
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    [a * x0[0] + s * eps[0], a * x0[1] + s * eps[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftLabelConfig {
    pub xi0_m: f64,
    pub gamma: f64,
    pub enabled: bool,
}

impl Default for SoftLabelConfig {
    fn default() -> Self {
        Self { xi0_m: 0.2, gamma: 0.8, enabled: true }
    }
}

impl SoftLabelConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi0_m > 0.0) || !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::arg("soft labels need xi0 > 0 and gamma in [0, 1)"));
        }
        Ok(())
    }

    /// Label noise std in meters at step `t` of `steps`.
    pub fn xi(&self, t: usize, steps: usize) -> f64 {
        self.xi0_m * (1.0 - self.gamma * t as f64 / steps as f64)
    }
}

/// Perturbs a position (meters) with `N(0, xi_t^2 I)`.
pub fn soft_label<R: rand::Rng>(x0: Point2, t: usize, steps: usize, cfg: &SoftLabelConfig, rng: &mut R) -> Point2 {
    let xi = cfg.xi(t, steps);
    let n = Normal::new(0.0, xi).expect("positive std");
    Point2::new(x0.x + n.sample(rng), x0.y + n.sample(rng))
}

/// DSM loss and gradients for one batch with given steps and noise.
/// `x0` rows are normalized clean positions.
pub fn dsm_batch_loss(
    net: &mut Network,
    x0: ArrayView2<'_, f64>,
    fp: ArrayView2<'_, f64>,
    t: &[usize],
    eps: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
    dropout_rng: &mut Rng,
) -> Result<(f64, ParamSet)> {
    let (xt, tn) = noised_batch(x0, t, eps, sched)?;
    let input = NetInput::new(xt.view(), fp.view(), &tn);
    net.loss_and_grad(&input, &LossSpec::Mse(eps), dropout_rng)
}

/// Eval-mode DSM loss without gradients.
pub fn dsm_eval_loss(
    net: &Network,
    x0: ArrayView2<'_, f64>,
    fp: ArrayView2<'_, f64>,
    t: &[usize],
    eps: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let (xt, tn) = noised_batch(x0, t, eps, sched)?;
    let out = net.forward(&NetInput::new(xt.view(), fp.view(), &tn))?;
    Ok((&out - &eps).mapv(|v| v * v).sum() / out.nrows() as f64)
}

fn noised_batch(
    x0: ArrayView2<'_, f64>,
    t: &[usize],
    eps: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let m = x0.nrows();
    if t.len() != m || eps.dim() != (m, 2) || x0.ncols() != 2 {
        return Err(Error::arg("DSM batch shapes do not agree"));
    }
    if let Some(&bad) = t.iter().find(|&&s| s >= sched.steps()) {
        return Err(Error::arg(format!("step {bad} outside schedule of {} steps", sched.steps())));
    }
    let mut xt = Array2::zeros((m, 2));
    for j in 0..m {
        let v = forward_noise([x0[[j, 0]], x0[[j, 1]]], t[j], [eps[[j, 0]], eps[[j, 1]]], sched);
        xt[[j, 0]] = v[0];
        xt[[j, 1]] = v[1];
    }
    Ok((xt, t.iter().map(|&s| sched.t_norm(s)).collect()))
}

pub(crate) fn normal_pair<R: rand::Rng>(rng: &mut R) -> [f64; 2] {
    [StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

pub(crate) fn normalized_positions(positions: &[Point2], norm: &PositionNorm) -> Array2<f64> {
    let mut a = Array2::zeros((positions.len(), 2));
    for (mut row, p) in a.rows_mut().into_iter().zip(positions) {
        let v = norm.normalize(*p);
        row[0] = v[0];
        row[1] = v[1];
    }
    a
}

/// Fixed validation noisings, drawn once so epochs are comparable.
struct DsmValidation {
    x0: Array2<f64>,
    fp: Array2<f64>,
    t: Vec<usize>,
    eps: Array2<f64>,
}

struct DsmObjective<'a> {
    train: &'a TrainSet,
    x0_norm: Array2<f64>,
    pos_norm: &'a PositionNorm,
    sched: &'a NoiseSchedule,
    soft: SoftLabelConfig,
    val: Option<DsmValidation>,
}

impl Objective for DsmObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn batch_loss(&mut self, net: &mut Network, batch: &[usize], s: &mut Streams) -> Result<(f64, ParamSet)> {
        let m = batch.len();
        let steps = self.sched.steps();
        let t: Vec<usize> = (0..m).map(|_| s.noise.random_range(0..steps)).collect();
        let mut eps = Array2::zeros((m, 2));
        for j in 0..m {
            let e = normal_pair(&mut s.noise);
            eps[[j, 0]] = e[0];
            eps[[j, 1]] = e[1];
        }
        let mut x0 = gather(&self.x0_norm, batch);
        if self.soft.enabled {
            for (j, &i) in batch.iter().enumerate() {
                let p = soft_label(self.train.positions[i], t[j], steps, &self.soft, &mut s.soft_label);
                let v = self.pos_norm.normalize(p);
                x0[[j, 0]] = v[0];
                x0[[j, 1]] = v[1];
            }
        }
        let fp = gather(&self.train.inputs, batch);
        dsm_batch_loss(net, x0.view(), fp.view(), &t, eps.view(), self.sched, &mut s.dropout)
    }

    fn val_loss(&self, net: &Network) -> Result<Option<f64>> {
        self.val
            .as_ref()
            .map(|v| dsm_eval_loss(net, v.x0.view(), v.fp.view(), &v.t, v.eps.view(), self.sched))
            .transpose()
    }
}

/// Result of training one network.
#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    pub report: crate::train::TrainReport,
    pub optimizer: crate::nn::AdamState,
}

impl From<(Network, Fitted)> for Trained {
    fn from((network, f): (Network, Fitted)) -> Self {
        Self { network, report: f.report, optimizer: f.optimizer }
    }
}

/// Trains one per-BS noise-prediction network with the DSM loss.
pub fn train_score_network(
    net: Network,
    train: &TrainSet,
    val: Option<&TrainSet>,
    pos_norm: &PositionNorm,
    sched: &NoiseSchedule,
    soft: SoftLabelConfig,
    hyper: &TrainHyper,
) -> Result<Trained> {
    if train.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if soft.enabled {
        soft.validate()?;
    }
    let val = val.filter(|v| !v.is_empty()).map(|v| {
        let mut rng = rng_for(hyper.seed, stream::VALIDATION, 0);
        let n = v.len();
        let t = (0..n).map(|_| rng.random_range(0..sched.steps())).collect();
        let eps = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng));
        DsmValidation { x0: normalized_positions(&v.positions, pos_norm), fp: v.inputs.clone(), t, eps }
    });
    let mut obj = DsmObjective {
        train,
        x0_norm: normalized_positions(&train.positions, pos_norm),
        pos_norm,
        sched,
        soft,
        val,
    };
    let mut net = net;
    let fitted = fit(&mut net, hyper, &mut obj)?;
    Ok((net, fitted).into())
}
