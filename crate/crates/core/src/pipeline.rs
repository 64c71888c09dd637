//! Training of every method from a dataset and a run configuration.

use log::info;

use crate::baselines::{grid_arch, supervised_arch, train_grid, train_supervised, GridSpec};
use crate::config::Config;
use crate::consistency::train_consistency;
use crate::dataset::{Dataset, Split};
use crate::diffusion::{train_score_network, NoiseSchedule, ScheduleSpec, SoftLabelConfig};
use crate::error::{Error, Result};
use crate::model::{BundleMeta, Method, ModelBundle};
use crate::nn::Network;
use crate::rng::{derive_seed, stream};

/// Per-run knobs that sweeps vary without touching the config.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub schedule: ScheduleSpec,
    pub soft_label: SoftLabelConfig,
    pub seed: u64,
}

impl TrainOptions {
    pub fn from_config(cfg: &Config) -> Self {
        Self { schedule: cfg.diffusion.schedule(), soft_label: cfg.diffusion.soft_label, seed: cfg.seed }
    }
}

fn method_tag(m: Method) -> u64 {
    0x100 + Method::ALL.iter().position(|&x| x == m).expect("listed") as u64
}

/// Seed of the model for `(method, bs)`; the supervised model uses `bs = n_bs`.
pub fn model_seed(run_seed: u64, method: Method, bs: usize) -> u64 {
    derive_seed(run_seed, method_tag(method), bs as u64)
}

pub fn grid_for(cfg: &Config, data: &Dataset) -> Result<GridSpec> {
    GridSpec::covering(&data.header.bbox, cfg.grid.spacing_m)
}

/// Trains one model. `bs` is ignored by the supervised baseline, which sees every BS.
pub fn train_one(cfg: &Config, data: &Dataset, method: Method, bs: usize, opts: &TrainOptions) -> Result<ModelBundle> {
    let n_bs = data.n_bs();
    if method.is_per_bs() && bs >= n_bs {
        return Err(Error::arg(format!("BS index {bs} out of range (B = {n_bs})")));
    }
    let bs = if method.is_per_bs() { bs } else { n_bs };
    let seed = model_seed(opts.seed, method, bs);
    let init = derive_seed(seed, stream::INIT, 0);
    let hyper = cfg.train.hyper(seed);
    let pos_norm = data.pos_norm()?;
    let d = data.fp_dim();
    let started = std::time::Instant::now();

    let (trained, meta, norms) = if method == Method::Supervised {
        let all: Vec<usize> = (0..n_bs).collect();
        let train = data.concat_train_set(Split::Train)?;
        let val = data.concat_train_set(Split::Val)?;
        let net = Network::new(supervised_arch(&cfg.model.baseline_template(d), d * n_bs), init)?;
        let t = train_supervised(net, &train, Some(&val), &pos_norm, &hyper)?;
        (t, BundleMeta::new(method, all, pos_norm, seed), data.norms.clone())
    } else {
        let train = data.train_set(bs, Split::Train)?;
        let val = data.train_set(bs, Split::Val)?;
        let mut meta = BundleMeta::new(method, vec![bs], pos_norm, seed);
        let t = match method {
            Method::DifflocMlp | Method::DifflocUnet => {
                let arch = if method == Method::DifflocMlp { cfg.model.mlp(d) } else { cfg.model.unet(d) };
                let sched = NoiseSchedule::from_spec(opts.schedule)?;
                meta.schedule = Some(opts.schedule);
                meta.soft_label = Some(opts.soft_label);
                train_score_network(Network::new(arch, init)?, &train, Some(&val), &pos_norm, &sched, opts.soft_label, &hyper)?
            }
            Method::DifflocCt => {
                let range = cfg.consistency.range();
                meta.sigma = Some(range);
                let arch = cfg.model.backbone(cfg.model.ct_backbone, d);
                train_consistency(Network::new(arch, init)?, &train, Some(&val), &pos_norm, range, &hyper)?
            }
            Method::Grid => {
                let grid = grid_for(cfg, data)?;
                meta.grid = Some(grid);
                let arch = grid_arch(&cfg.model.baseline_template(d), d, grid.len());
                train_grid(Network::new(arch, init)?, &train, Some(&val), &grid, &hyper)?
            }
            Method::Supervised => unreachable!(),
        };
        (t, meta, vec![data.norms[bs].clone()])
    };
    info!(
        "trained {method} bs={bs}: {} epochs, best val {:.5} at epoch {}, {:.1}s",
        trained.report.epochs.len(),
        trained.report.best_val_loss,
        trained.report.best_epoch,
        started.elapsed().as_secs_f64()
    );
    ModelBundle::from_trained(meta, trained, norms)
}

/// One model per BS for fused methods, a single model for the supervised baseline.
pub fn train_all(cfg: &Config, data: &Dataset, method: Method, opts: &TrainOptions) -> Result<Vec<ModelBundle>> {
    if method.is_per_bs() {
        (0..data.n_bs()).map(|b| train_one(cfg, data, method, b, opts)).collect()
    } else {
        Ok(vec![train_one(cfg, data, method, 0, opts)?])
    }
}
