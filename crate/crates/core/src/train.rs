//! Mini-batch training loop shared by every method.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::nn::{adam_step, AdamConfig, AdamState, Network, ParamSet};
use crate::rng::{rng_for, stream, Rng};

/// Training inputs for one model: positions in meters and one input row per
/// sample (a normalized fingerprint, or several concatenated).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub positions: Vec<Point2>,
    pub inputs: Array2<f64>,
}

impl TrainSet {
    pub fn new(positions: Vec<Point2>, inputs: Array2<f64>) -> Result<Self> {
        if positions.len() != inputs.nrows() {
            return Err(Error::arg(format!(
                "{} positions but {} input rows",
                positions.len(),
                inputs.nrows()
            )));
        }
        Ok(Self { positions, inputs })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Hard cap on optimizer steps, if any.
    pub max_steps: Option<u64>,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self { batch_size: 32, max_epochs: 500, patience: 20, max_steps: None, lr: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }

    /// Writes `epoch,train_loss,val_loss,wall_time`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        for r in &self.epochs {
            w.serialize(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format { offset: 0, message: format!("{}: {other:?}", path.display()) },
    }
}

/// Independent random streams used while training.
pub(crate) struct Streams {
    pub shuffle: Rng,
    pub noise: Rng,
    pub soft_label: Rng,
    pub dropout: Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            shuffle: rng_for(seed, stream::SHUFFLE, 0),
            noise: rng_for(seed, stream::DIFFUSION, 0),
            soft_label: rng_for(seed, stream::SOFT_LABEL, 0),
            dropout: rng_for(seed, stream::DROPOUT, 0),
        }
    }
}

pub(crate) trait Objective {
    fn n_train(&self) -> usize;

    fn batch_loss(&mut self, net: &mut Network, batch: &[usize], streams: &mut Streams) -> Result<(f64, ParamSet)>;

    /// Loss on fixed held-out draws; `None` disables early stopping.
    fn val_loss(&self, net: &Network) -> Result<Option<f64>>;
}

pub(crate) struct Fitted {
    pub report: TrainReport,
    pub optimizer: AdamState,
}

pub(crate) fn fit(net: &mut Network, hyper: &TrainHyper, obj: &mut impl Objective) -> Result<Fitted> {
    let n = obj.n_train();
    if n == 0 {
        return Err(Error::arg("training set is empty"));
    }
    if hyper.batch_size == 0 {
        return Err(Error::arg("batch size must be positive"));
    }
    let adam = AdamConfig { lr: hyper.lr, ..AdamConfig::default() };
    let mut opt = AdamState::new(net.params());
    let mut streams = Streams::new(hyper.seed);
    let start = Instant::now();
    let mut report = TrainReport { best_val_loss: f64::INFINITY, ..Default::default() };
    report.initial_val_loss = obj.val_loss(net)?.unwrap_or(f64::NAN);
    let mut best: Option<ParamSet> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..n).collect();
    'epochs: for epoch in 0..hyper.max_epochs {
        order.shuffle(&mut streams.shuffle);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(hyper.batch_size) {
            if hyper.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let (loss, grads) = obj.batch_loss(net, batch, &mut streams).map_err(|e| match e {
                Error::Training(msg) => Error::Training(format!("epoch {epoch}, step {}: {msg}", report.steps)),
                other => other,
            })?;
            adam_step(net.params_mut(), &grads, &mut opt, &adam)
                .map_err(|e| Error::Training(format!("epoch {epoch}, step {}: {e}", report.steps)))?;
            report.steps += 1;
            sum += loss;
            batches += 1;
        }
        if batches == 0 {
            break;
        }
        let train_loss = sum / batches as f64;
        let val = obj.val_loss(net)?;
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.unwrap_or(f64::NAN),
            wall_time: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val:?}");
        if let Some(v) = val {
            if v < report.best_val_loss {
                report.best_val_loss = v;
                report.best_epoch = epoch;
                best = Some(net.params().clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= hyper.patience {
                    break 'epochs;
                }
            }
        } else {
            report.best_epoch = epoch;
            report.best_val_loss = train_loss;
        }
    }
    if let Some(p) = best {
        *net.params_mut() = p;
    }
    Ok(Fitted { report, optimizer: opt })
}

/// Gathers rows of `a` in `idx` order.
pub(crate) fn gather(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    a.select(ndarray::Axis(0), idx)
}
