//! Position estimates from trained bundles.

use ndarray::Array2;

use crate::baselines::{grid_fuse_estimate, grid_posteriors};
use crate::config::Config;
use crate::consistency::{few_step_infer, ConsistencyModel, StepPlan};
use crate::dataset::Dataset;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::model::{Method, ModelBundle};
use crate::nn::NetInput;
use crate::sampler::{estimate_batch, FusionMember, FusionMode, FusionSet, ScoreModel};

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    pub seed: u64,
    /// DDIM replicates averaged per estimate.
    pub n_seeds: usize,
    pub ddim_fusion: FusionMode,
    pub ct_fusion: FusionMode,
    pub ct_plan: StepPlan,
    pub chunk: usize,
}

impl InferOptions {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self {
            seed: cfg.seed,
            n_seeds: cfg.diffusion.n_seeds,
            ddim_fusion: cfg.diffusion.fusion,
            ct_fusion: cfg.consistency.fusion,
            ct_plan: cfg.consistency.plan()?,
            chunk: cfg.eval.chunk,
        })
    }
}

fn check_compatible(bundles: &[&ModelBundle]) -> Result<Method> {
    let first = bundles.first().ok_or_else(|| Error::arg("no models given"))?;
    let m = &first.meta;
    for b in &bundles[1..] {
        let o = &b.meta;
        if o.method != m.method {
            return Err(Error::Fusion(format!("cannot fuse {} with {}", m.method, o.method)));
        }
        if o.pos_norm != m.pos_norm || o.schedule != m.schedule || o.sigma != m.sigma || o.grid != m.grid {
            return Err(Error::Fusion("models disagree on position normalization or inference settings".into()));
        }
    }
    if !m.method.is_per_bs() && bundles.len() != 1 {
        return Err(Error::Fusion("the supervised baseline takes exactly one model".into()));
    }
    Ok(m.method)
}

/// Estimates (meters) for the dataset rows `indices`, fusing every given
/// bundle. Per-BS methods need distinct BS indices.
pub fn estimate(bundles: &[&ModelBundle], data: &Dataset, indices: &[usize], opts: &InferOptions) -> Result<Vec<Point2>> {
    let method = check_compatible(bundles)?;
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    if opts.chunk == 0 {
        return Err(Error::arg("chunk must be positive"));
    }
    let pos_norm = bundles[0].meta.pos_norm;
    let mut out = Vec::with_capacity(indices.len());
    for idx in indices.chunks(opts.chunk) {
        let inputs = bundles.iter().map(|b| b.inputs(data, idx)).collect::<Result<Vec<_>>>()?;
        match method {
            Method::Supervised => {
                let y = bundles[0].network.forward(&NetInput::fingerprint_only(inputs[0].view()))?;
                out.extend(y.rows().into_iter().map(|r| pos_norm.denormalize([r[0], r[1]])));
            }
            Method::Grid => {
                let grid = bundles[0].meta.grid.expect("validated bundle");
                let posts = bundles
                    .iter()
                    .zip(&inputs)
                    .map(|(b, x)| grid_posteriors(&b.network, x.view()))
                    .collect::<Result<Vec<_>>>()?;
                for i in 0..idx.len() {
                    let rows: Vec<&[f64]> = posts.iter().map(|p| p.row(i).to_slice().expect("contiguous")).collect();
                    out.push(grid_fuse_estimate(&rows, &grid)?);
                }
            }
            Method::DifflocMlp | Method::DifflocUnet => {
                let sched = NoiseSchedule::from_spec(bundles[0].meta.schedule.expect("validated bundle"))?;
                let models: Vec<&dyn ScoreModel> = bundles.iter().map(|b| &b.network as &dyn ScoreModel).collect();
                let fs = fusion_set(bundles, &models, &inputs, opts.ddim_fusion)?;
                push_denormalized(&mut out, &estimate_batch(&fs, &sched, opts.seed, opts.n_seeds)?, &pos_norm);
            }
            Method::DifflocCt => {
                let range = bundles[0].meta.sigma.expect("validated bundle");
                let cms: Vec<ConsistencyModel<'_>> =
                    bundles.iter().map(|b| ConsistencyModel { network: &b.network, range }).collect();
                let models: Vec<&dyn ScoreModel> = cms.iter().map(|c| c as &dyn ScoreModel).collect();
                let fs = fusion_set(bundles, &models, &inputs, opts.ct_fusion)?;
                push_denormalized(&mut out, &few_step_infer(&fs, &opts.ct_plan, &range, opts.seed)?, &pos_norm);
            }
        }
    }
    Ok(out)
}

fn fusion_set<'a>(
    bundles: &[&ModelBundle],
    models: &[&'a dyn ScoreModel],
    inputs: &'a [Array2<f64>],
    mode: FusionMode,
) -> Result<FusionSet<'a>> {
    let members = bundles
        .iter()
        .zip(models)
        .zip(inputs)
        .map(|((b, &model), x)| FusionMember { bs_index: b.bs_index(), model, fingerprints: x.view() })
        .collect();
    FusionSet::new(members, mode)
}

fn push_denormalized(out: &mut Vec<Point2>, x: &Array2<f64>, pos_norm: &crate::geometry::PositionNorm) {
    out.extend(x.rows().into_iter().map(|r| pos_norm.denormalize([r[0], r[1]])));
}
