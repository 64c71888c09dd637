//! Labeled fingerprint datasets: generation from a scene, train/val/test
//! splits and per-BS normalization.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::{add_awgn, FingerprintNorm, Preprocessor, Snr};
use crate::geometry::{BoundingBox, Point2, PositionNorm};
use crate::rng::{rng_for, stream};
use crate::scene::{Scene, TrajectorySpec};
use crate::train::TrainSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Individual samples are shuffled into the splits.
    #[serde(rename = "random_3_1_1")]
    Random,
    /// Whole users are shuffled into the splits.
    UserHoldout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Train : val : test proportions.
    pub ratios: [usize; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { mode: SplitMode::Random, ratios: [3, 1, 1], seed: 0 }
    }
}

/// Split tag per unit (sample or user) after a seeded shuffle.
fn split_units(n: usize, spec: &SplitSpec) -> Result<Vec<Split>> {
    let total: usize = spec.ratios.iter().sum();
    if total == 0 {
        return Err(Error::arg("split ratios must not all be zero"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(spec.seed, stream::SPLIT, 0));
    let n_train = n * spec.ratios[0] / total;
    let n_val = n * spec.ratios[1] / total;
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub position: Point2,
    /// One raw fingerprint per BS.
    pub fingerprints: Vec<Vec<f32>>,
    pub split: Split,
    pub user: u32,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_subcarriers: usize,
    pub taps: usize,
    pub n_bs: usize,
    pub seed: u64,
    /// Region used for position normalization.
    pub bbox: BoundingBox,
}

impl DatasetHeader {
    pub fn fp_dim(&self) -> usize {
        2 * self.n_rx * self.n_tx * self.taps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    /// Per-BS normalization fitted on the train split.
    pub norms: Vec<FingerprintNorm>,
    pub samples: Vec<Sample>,
}

/// How channel noise is applied while generating fingerprints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoisePlan {
    Clean,
    Fixed(f64),
    /// Each sample draws one SNR (dB) uniformly from the list.
    Mixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSpec {
    pub trajectories: TrajectorySpec,
    pub taps: usize,
    pub split: SplitSpec,
    pub noise: NoisePlan,
    /// Seed for channel noise draws.
    pub noise_seed: u64,
}

impl Dataset {
    /// Simulates trajectories, synthesizes and preprocesses every link, assigns splits.
    pub fn generate(scene: &Scene, spec: &GenerateSpec) -> Result<Self> {
        let cfg = scene.config();
        let pre = Preprocessor::new(cfg.n_subcarriers, spec.taps)?;
        let trajectories = scene.sample_trajectories(&spec.trajectories)?;
        let n_bs = scene.n_bs();
        let user_split = match spec.split.mode {
            SplitMode::UserHoldout => Some(split_units(trajectories.len(), &spec.split)?),
            SplitMode::Random => None,
        };
        let mut samples = Vec::new();
        for tr in &trajectories {
            for (&p, &ts) in tr.positions.iter().zip(&tr.timestamps) {
                let index = samples.len() as u64;
                let mut rng = rng_for(spec.noise_seed, stream::CHANNEL_NOISE, index);
                let snr = match &spec.noise {
                    NoisePlan::Clean => Snr::Clean,
                    NoisePlan::Fixed(db) => Snr::Db(*db),
                    NoisePlan::Mixed(list) if !list.is_empty() => Snr::Db(list[rng.random_range(0..list.len())]),
                    NoisePlan::Mixed(_) => return Err(Error::arg("mixed SNR list is empty")),
                };
                let fingerprints = (0..n_bs)
                    .map(|b| {
                        let cfr = add_awgn(&scene.synthesize_cfr(p, b)?, snr, &mut rng);
                        Ok(pre.fingerprint(&cfr)?.values().iter().map(|&v| v as f32).collect())
                    })
                    .collect::<Result<Vec<Vec<f32>>>>()?;
                let split = user_split.as_ref().map_or(Split::Train, |s| s[tr.user as usize]);
                samples.push(Sample { position: p, fingerprints, split, user: tr.user, timestamp: ts });
            }
        }
        if user_split.is_none() {
            let tags = split_units(samples.len(), &spec.split)?;
            for (s, t) in samples.iter_mut().zip(tags) {
                s.split = t;
            }
        }
        let header = DatasetHeader {
            n_rx: cfg.n_rx,
            n_tx: cfg.n_tx,
            n_subcarriers: cfg.n_subcarriers,
            taps: spec.taps,
            n_bs,
            seed: cfg.seed,
            bbox: scene.spawn_polygon().bounding_box(),
        };
        let mut ds = Self { header, norms: Vec::new(), samples };
        ds.refit_norms()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fp_dim(&self) -> usize {
        self.header.fp_dim()
    }

    pub fn n_bs(&self) -> usize {
        self.header.n_bs
    }

    pub fn pos_norm(&self) -> Result<PositionNorm> {
        PositionNorm::new(self.header.bbox)
    }

    /// Refits per-BS statistics on the train split (all samples if it is empty).
    pub fn refit_norms(&mut self) -> Result<()> {
        let train = self.indices(Split::Train);
        let rows: Vec<usize> = if train.is_empty() { (0..self.len()).collect() } else { train };
        if rows.is_empty() {
            self.norms = Vec::new();
            return Ok(());
        }
        self.norms = (0..self.n_bs())
            .map(|b| FingerprintNorm::fit(rows.iter().map(|&i| self.samples[i].fingerprints[b].as_slice())))
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.samples[i].split == split).collect()
    }

    pub fn positions(&self, indices: &[usize]) -> Vec<Point2> {
        indices.iter().map(|&i| self.samples[i].position).collect()
    }

    /// Normalized fingerprints of BS `bs` for `indices`, using `norm`.
    pub fn normalized(&self, bs: usize, indices: &[usize], norm: &FingerprintNorm) -> Result<Array2<f64>> {
        if bs >= self.n_bs() {
            return Err(Error::arg(format!("BS index {bs} out of range (B = {})", self.n_bs())));
        }
        let d = self.fp_dim();
        let mut out = Array2::zeros((indices.len(), d));
        for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
            norm.normalize_into(&self.samples[i].fingerprints[bs], row.as_slice_mut().expect("contiguous"))?;
        }
        Ok(out)
    }

    /// Concatenated normalized fingerprints of several BSs.
    pub fn normalized_concat(&self, bs: &[usize], indices: &[usize], norms: &[FingerprintNorm]) -> Result<Array2<f64>> {
        if bs.len() != norms.len() || bs.is_empty() {
            return Err(Error::arg("need one normalization per concatenated BS"));
        }
        let parts = bs
            .iter()
            .zip(norms)
            .map(|(&b, n)| self.normalized(b, indices, n))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(1), &views).expect("same rows"))
    }

    /// Training inputs for BS `bs` on `split`, normalized with this dataset's statistics.
    pub fn train_set(&self, bs: usize, split: Split) -> Result<TrainSet> {
        let idx = self.indices(split);
        let norm = self.norms.get(bs).ok_or_else(|| Error::State("dataset has no normalization stats".into()))?;
        TrainSet::new(self.positions(&idx), self.normalized(bs, &idx, norm)?)
    }

    pub fn concat_train_set(&self, split: Split) -> Result<TrainSet> {
        let idx = self.indices(split);
        let bs: Vec<usize> = (0..self.n_bs()).collect();
        TrainSet::new(self.positions(&idx), self.normalized_concat(&bs, &idx, &self.norms)?)
    }

    /// Copy keeping only samples of the given splits.
    pub fn subset(&self, splits: &[Split]) -> Self {
        Self {
            header: self.header,
            norms: self.norms.clone(),
            samples: self.samples.iter().filter(|s| splits.contains(&s.split)).cloned().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.fp_dim();
        for (i, s) in self.samples.iter().enumerate() {
            if s.fingerprints.len() != self.n_bs() || s.fingerprints.iter().any(|f| f.len() != d) {
                return Err(Error::arg(format!("sample {i} does not match the header dimensions")));
            }
        }
        if !self.norms.is_empty() && (self.norms.len() != self.n_bs() || self.norms.iter().any(|n| n.dim() != d)) {
            return Err(Error::arg("normalization stats do not match the header dimensions"));
        }
        Ok(())
    }
}
