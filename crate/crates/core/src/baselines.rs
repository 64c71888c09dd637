//! Baselines sharing the score-MLP hidden stack: direct coordinate regression
//! from concatenated fingerprints, and per-BS grid classifiers fused by
//! multiplying their probability maps.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::diffusion::{normalized_positions, Trained};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point2, PositionNorm};
use crate::nn::{Activation, ArchDescriptor, LossSpec, NetInput, Network, ParamSet};
use crate::train::{fit, gather, Objective, Streams, TrainHyper, TrainSet};

/// Largest grid accepted; finer grids make the classifier output unwieldy.
pub const MAX_GRID_CELLS: usize = 10_000;

/// Square cells of side `spacing`; cell `k = iy * nx + ix` has its center at
/// `origin + spacing * (ix + 1/2, iy + 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    /// Smallest grid of the given spacing centered on and covering `bbox`.
    pub fn covering(bbox: &BoundingBox, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Config(format!("grid spacing must be positive, got {spacing}")));
        }
        let nx = ((bbox.width() / spacing).ceil() as usize).max(1);
        let ny = ((bbox.height() / spacing).ceil() as usize).max(1);
        let g = Self {
            origin: bbox.center() - Point2::new(nx as f64 * spacing / 2.0, ny as f64 * spacing / 2.0),
            spacing,
            nx,
            ny,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) || self.nx == 0 || self.ny == 0 {
            return Err(Error::Config("grid needs positive spacing and cell counts".into()));
        }
        if self.len() >= MAX_GRID_CELLS {
            return Err(Error::Config(format!("grid has {} cells, limit is {MAX_GRID_CELLS}", self.len())));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, k: usize) -> Point2 {
        let (ix, iy) = (k % self.nx, k / self.nx);
        self.origin + Point2::new((ix as f64 + 0.5) * self.spacing, (iy as f64 + 0.5) * self.spacing)
    }

    pub fn centers(&self) -> Vec<Point2> {
        (0..self.len()).map(|k| self.center(k)).collect()
    }

    /// Gaussian-kernel target mass around `p` with width equal to the spacing.
    pub fn soft_target(&self, p: Point2) -> Vec<f64> {
        let two_s2 = 2.0 * self.spacing * self.spacing;
        let logw: Vec<f64> = (0..self.len()).map(|k| -(self.center(k).dist(p).powi(2)) / two_s2).collect();
        let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Product of the maps, renormalized, computed with logarithms.
pub fn fuse_log_space(posteriors: &[&[f64]]) -> Result<Vec<f64>> {
    let k = check_posteriors(posteriors)?;
    let mut logp = vec![0.0; k];
    for p in posteriors {
        for (acc, &v) in logp.iter_mut().zip(p.iter()) {
            *acc += v.ln();
        }
    }
    let mx = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Err(Error::Fusion("probability maps share no cell with positive mass".into()));
    }
    let w: Vec<f64> = logp.iter().map(|l| (l - mx).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Direct product of the maps, renormalized (reference implementation).
pub fn fuse_direct(posteriors: &[&[f64]]) -> Result<Vec<f64>> {
    let k = check_posteriors(posteriors)?;
    let mut prod = vec![1.0; k];
    for p in posteriors {
        for (acc, &v) in prod.iter_mut().zip(p.iter()) {
            *acc *= v;
        }
    }
    let s: f64 = prod.iter().sum();
    if !(s > 0.0) {
        return Err(Error::Fusion("product of probability maps vanishes".into()));
    }
    Ok(prod.into_iter().map(|v| v / s).collect())
}

fn check_posteriors(posteriors: &[&[f64]]) -> Result<usize> {
    let k = posteriors.first().ok_or_else(|| Error::Fusion("no probability maps to fuse".into()))?.len();
    if k == 0 || posteriors.iter().any(|p| p.len() != k) {
        return Err(Error::Fusion("probability maps must share one non-empty grid".into()));
    }
    if posteriors.iter().flat_map(|p| p.iter()).any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Fusion("probabilities must be finite and non-negative".into()));
    }
    Ok(k)
}

/// Fused expected position `sum_k g_k fused_k`.
pub fn grid_fuse_estimate(posteriors: &[&[f64]], grid: &GridSpec) -> Result<Point2> {
    let fused = fuse_log_space(posteriors)?;
    if fused.len() != grid.len() {
        return Err(Error::Fusion(format!("maps have {} cells, grid has {}", fused.len(), grid.len())));
    }
    Ok(expected_position(&fused, grid))
}

pub fn expected_position(p: &[f64], grid: &GridSpec) -> Point2 {
    p.iter().enumerate().fold(Point2::new(0.0, 0.0), |acc, (k, &w)| acc + grid.center(k) * w)
}

/// Regression-baseline architecture: the score MLP's hidden stack on
/// concatenated fingerprints, ReLU, no position or time input.
pub fn supervised_arch(template: &ArchDescriptor, concat_dim: usize) -> ArchDescriptor {
    ArchDescriptor { pos_dim: 0, time_dim: 0, fp_dim: concat_dim, activation: Activation::Relu, ..template.clone() }
}

/// Grid-classifier architecture: the score MLP with a `K`-way output head.
pub fn grid_arch(template: &ArchDescriptor, fp_dim: usize, cells: usize) -> ArchDescriptor {
    ArchDescriptor { pos_dim: 0, time_dim: 0, fp_dim, output_dim: cells, ..template.clone() }
}

/// Names and shapes of the hidden blocks (everything but input projection and head).
pub fn hidden_shapes(params: &ParamSet) -> Vec<(String, Vec<usize>)> {
    params.shapes().into_iter().filter(|(n, _)| !n.starts_with("in.") && !n.starts_with("head.")).collect()
}

struct RegressionObjective<'a> {
    train: &'a TrainSet,
    target: Array2<f64>,
    val: Option<(Array2<f64>, Array2<f64>)>,
}

impl Objective for RegressionObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn batch_loss(&mut self, net: &mut Network, batch: &[usize], s: &mut Streams) -> Result<(f64, ParamSet)> {
        let x = gather(&self.train.inputs, batch);
        let y = gather(&self.target, batch);
        net.loss_and_grad(&NetInput::fingerprint_only(x.view()), &LossSpec::Mse(y.view()), &mut s.dropout)
    }

    fn val_loss(&self, net: &Network) -> Result<Option<f64>> {
        self.val
            .as_ref()
            .map(|(x, y)| {
                let out = net.forward(&NetInput::fingerprint_only(x.view()))?;
                Ok((&out - y).mapv(|v| v * v).sum() / out.nrows() as f64)
            })
            .transpose()
    }
}

/// Trains direct regression of normalized positions.
pub fn train_supervised(
    net: Network,
    train: &TrainSet,
    val: Option<&TrainSet>,
    pos_norm: &PositionNorm,
    hyper: &TrainHyper,
) -> Result<Trained> {
    let val = val
        .filter(|v| !v.is_empty())
        .map(|v| (v.inputs.clone(), normalized_positions(&v.positions, pos_norm)));
    let mut obj = RegressionObjective { train, target: normalized_positions(&train.positions, pos_norm), val };
    let mut net = net;
    let fitted = fit(&mut net, hyper, &mut obj)?;
    Ok((net, fitted).into())
}

fn soft_targets(positions: &[Point2], grid: &GridSpec) -> Array2<f64> {
    let mut a = Array2::zeros((positions.len(), grid.len()));
    for (mut row, p) in a.rows_mut().into_iter().zip(positions) {
        row.assign(&ndarray::Array1::from(grid.soft_target(*p)));
    }
    a
}

struct GridObjective<'a> {
    train: &'a TrainSet,
    target: Array2<f64>,
    val: Option<(Array2<f64>, Array2<f64>)>,
}

impl Objective for GridObjective<'_> {
    fn n_train(&self) -> usize {
        self.train.len()
    }

    fn batch_loss(&mut self, net: &mut Network, batch: &[usize], s: &mut Streams) -> Result<(f64, ParamSet)> {
        let x = gather(&self.train.inputs, batch);
        let q = gather(&self.target, batch);
        net.loss_and_grad(&NetInput::fingerprint_only(x.view()), &LossSpec::SoftCrossEntropy(q.view()), &mut s.dropout)
    }

    fn val_loss(&self, net: &Network) -> Result<Option<f64>> {
        self.val
            .as_ref()
            .map(|(x, q)| {
                let out = net.forward(&NetInput::fingerprint_only(x.view()))?;
                crate::nn::loss_and_output_grad(&LossSpec::SoftCrossEntropy(q.view()), out.view()).map(|(l, _)| l)
            })
            .transpose()
    }
}

/// Trains a per-BS grid classifier with cross-entropy against soft targets.
pub fn train_grid(net: Network, train: &TrainSet, val: Option<&TrainSet>, grid: &GridSpec, hyper: &TrainHyper) -> Result<Trained> {
    grid.validate()?;
    if net.arch().output_dim != grid.len() {
        return Err(Error::arg(format!(
            "classifier has {} outputs for a {}-cell grid",
            net.arch().output_dim,
            grid.len()
        )));
    }
    let val = val.filter(|v| !v.is_empty()).map(|v| (v.inputs.clone(), soft_targets(&v.positions, grid)));
    let mut obj = GridObjective { train, target: soft_targets(&train.positions, grid), val };
    let mut net = net;
    let fitted = fit(&mut net, hyper, &mut obj)?;
    Ok((net, fitted).into())
}

/// Probability maps (rows) for normalized fingerprints.
pub fn grid_posteriors(net: &Network, fp: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let logits = net.forward(&NetInput::fingerprint_only(fp))?;
    let mut out = Array2::zeros(logits.dim());
    for (l, mut o) in logits.rows().into_iter().zip(out.rows_mut()) {
        o.assign(&ndarray::Array1::from(softmax(&l.to_vec())));
    }
    Ok(out)
}
