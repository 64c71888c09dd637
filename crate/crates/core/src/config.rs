//! Run configuration, read from TOML. Every section and field is optional;
//! missing values take the desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::consistency::{SigmaRange, StepPlan};
use crate::dataset::{GenerateSpec, NoisePlan, SplitMode, SplitSpec};
use crate::diffusion::{ScheduleSpec, SoftLabelConfig};
use crate::error::{Error, Result};
use crate::nn::{Activation, ArchDescriptor, NetKind, DEFAULT_TIME_DIM};
use crate::sampler::FusionMode;
use crate::scene::{SceneConfig, TrajectorySpec};
use crate::train::TrainHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_ue: usize,
    pub n_snapshots: usize,
    pub interval_s: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// CIR taps kept per link.
    pub taps: usize,
    pub split_mode: SplitMode,
    pub split_ratios: [usize; 3],
    /// Channel SNR in dB applied at generation; absent means clean.
    pub snr_db: Option<f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_ue: 60,
            n_snapshots: 10,
            interval_s: 1.0,
            speed_min: 1.5,
            speed_max: 2.5,
            taps: 32,
            split_mode: SplitMode::Random,
            split_ratios: [3, 1, 1],
            snr_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub time_dim: usize,
    pub mlp_hidden: Vec<usize>,
    pub mlp_dropout: f64,
    pub mlp_batchnorm: bool,
    pub unet_hidden: Vec<usize>,
    pub unet_decoder: Vec<usize>,
    /// Backbone of the consistency model.
    pub ct_backbone: NetKind,
}

/// Desk widths: the UNet is halved at every level so that a CPU run can
/// afford the several hundred epochs DSM needs to use the fingerprint.
impl Default for ModelConfig {
    fn default() -> Self {
        Self { unet_hidden: vec![128, 256, 512], unet_decoder: vec![256, 128, 64], ..Self::full_width() }
    }
}

impl ModelConfig {
    /// Reference widths.
    pub fn full_width() -> Self {
        let m = ArchDescriptor::mlp(1);
        let u = ArchDescriptor::unet(1);
        Self {
            time_dim: DEFAULT_TIME_DIM,
            mlp_hidden: m.hidden,
            mlp_dropout: m.dropout_rate,
            mlp_batchnorm: m.uses_batchnorm,
            unet_hidden: u.hidden,
            unet_decoder: u.decoder,
            ct_backbone: NetKind::Unet1d,
        }
    }
}

impl ModelConfig {
    pub fn mlp(&self, fp_dim: usize) -> ArchDescriptor {
        ArchDescriptor {
            time_dim: self.time_dim,
            hidden: self.mlp_hidden.clone(),
            dropout_rate: self.mlp_dropout,
            uses_batchnorm: self.mlp_batchnorm,
            ..ArchDescriptor::mlp(fp_dim)
        }
    }

    pub fn unet(&self, fp_dim: usize) -> ArchDescriptor {
        ArchDescriptor {
            time_dim: self.time_dim,
            hidden: self.unet_hidden.clone(),
            decoder: self.unet_decoder.clone(),
            ..ArchDescriptor::unet(fp_dim)
        }
    }

    pub fn backbone(&self, kind: NetKind, fp_dim: usize) -> ArchDescriptor {
        match kind {
            NetKind::Mlp => self.mlp(fp_dim),
            NetKind::Unet1d => self.unet(fp_dim),
        }
    }

    /// Template for the baselines: the MLP trunk with ReLU.
    pub fn baseline_template(&self, fp_dim: usize) -> ArchDescriptor {
        ArchDescriptor { activation: Activation::Relu, ..self.mlp(fp_dim) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub max_steps: Option<u64>,
    pub lr: f64,
}

/// Desk training: a larger step than the reference `1e-4`, since the desk
/// budget allows far fewer epochs.
impl Default for TrainConfig {
    fn default() -> Self {
        Self { max_epochs: 300, patience: 50, lr: 1e-3, ..Self::reference() }
    }
}

impl TrainConfig {
    /// Reference optimizer settings.
    pub fn reference() -> Self {
        let h = TrainHyper::default();
        Self { batch_size: h.batch_size, max_epochs: h.max_epochs, patience: h.patience, max_steps: h.max_steps, lr: h.lr }
    }
}

impl TrainConfig {
    pub fn hyper(&self, seed: u64) -> TrainHyper {
        TrainHyper {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            max_steps: self.max_steps,
            lr: self.lr,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub soft_label: SoftLabelConfig,
    pub fusion: FusionMode,
    /// DDIM replicates averaged per estimate.
    pub n_seeds: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        let s = ScheduleSpec::default();
        Self {
            steps: s.steps,
            beta_start: s.beta_start,
            beta_end: s.beta_end,
            soft_label: SoftLabelConfig::default(),
            fusion: FusionMode::Sum,
            n_seeds: 1,
        }
    }
}

impl DiffusionConfig {
    pub fn schedule(&self) -> ScheduleSpec {
        ScheduleSpec { steps: self.steps, beta_start: self.beta_start, beta_end: self.beta_end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Explicit inference times in [0, 1]; overrides `steps` when given.
    pub t_sequence: Option<Vec<f64>>,
    pub steps: usize,
    /// CT fuses by averaging; the sum would scale the clean estimate by B.
    pub fusion: FusionMode,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        let r = SigmaRange::default();
        Self { sigma_min: r.sigma_min, sigma_max: r.sigma_max, t_sequence: None, steps: 2, fusion: FusionMode::Mean }
    }
}

impl ConsistencyConfig {
    pub fn range(&self) -> SigmaRange {
        SigmaRange { sigma_min: self.sigma_min, sigma_max: self.sigma_max }
    }

    pub fn plan(&self) -> Result<StepPlan> {
        match &self.t_sequence {
            Some(t) => {
                let p = StepPlan { t_sequence: t.clone() };
                p.validate()?;
                Ok(p)
            }
            None => StepPlan::uniform(self.steps),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub spacing_m: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { spacing_m: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Random subsets per size in the fusion sweep.
    pub max_subsets: usize,
    pub snrs_db: Vec<f64>,
    /// Step counts for the DDIM / CT step sweep.
    pub step_counts: Vec<usize>,
    /// Method used by the SNR and holdout experiments.
    pub snr_method: crate::model::Method,
    pub high_speed_min: f64,
    pub high_speed_max: f64,
    pub high_speed_n_ue: usize,
    pub high_speed_interval_s: f64,
    /// Chains evaluated per batch during inference.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_subsets: 20,
            snrs_db: vec![50.0, 40.0, 30.0, 20.0, 10.0],
            step_counts: vec![2, 5, 10, 20, 50],
            snr_method: crate::model::Method::DifflocMlp,
            high_speed_min: 15.0,
            high_speed_max: 25.0,
            high_speed_n_ue: 20,
            high_speed_interval_s: 0.1,
            chunk: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Base seed for every random stream of a run; `--seed` overrides it.
    pub seed: u64,
    pub scene: SceneConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub diffusion: DiffusionConfig,
    pub consistency: ConsistencyConfig,
    pub grid: GridConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The shipped laptop profile: 3 BSs, 8x2 antennas, 256 subcarriers, 32 taps, 600 samples.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Full-size profile: 7 BSs, 32x4 antennas, 4096 subcarriers, 150 taps, 2000 samples.
    pub fn large() -> Self {
        let r = 200.0;
        let mut bs = vec![crate::geometry::Point2::new(0.0, 0.0)];
        bs.extend((0..6).map(|k| {
            let a = std::f64::consts::FRAC_PI_3 * k as f64;
            crate::geometry::Point2::new(r * a.cos(), r * a.sin())
        }));
        Self {
            scene: SceneConfig {
                bs_positions: bs,
                spawn_polygon: None,
                n_paths: 8,
                carrier_freq_hz: 3.6e9,
                bandwidth_hz: 100e6,
                n_subcarriers: 4096,
                n_rx: 32,
                n_tx: 4,
                seed: 0,
            },
            data: DataConfig { n_ue: 200, taps: 150, ..DataConfig::default() },
            model: ModelConfig::full_width(),
            train: TrainConfig { max_epochs: 100_000, patience: 200, ..TrainConfig::reference() },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        let d = &self.data;
        if d.n_ue == 0 || d.n_snapshots == 0 {
            return Err(Error::Config("data needs at least one UE and one snapshot".into()));
        }
        if d.taps == 0 || d.taps > self.scene.n_subcarriers {
            return Err(Error::Config(format!("taps must be in 1..={}", self.scene.n_subcarriers)));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.diffusion.steps < 2 {
            return Err(Error::Config("diffusion needs at least 2 steps".into()));
        }
        if self.diffusion.n_seeds == 0 || self.eval.chunk == 0 {
            return Err(Error::Config("n_seeds and chunk must be positive".into()));
        }
        self.consistency.range().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.consistency.plan().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.grid.spacing_m > 0.0) {
            return Err(Error::Config("grid spacing must be positive".into()));
        }
        Ok(())
    }

    /// Scene with the run seed applied.
    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig { seed: self.seed, ..self.scene.clone() }
    }

    pub fn trajectories(&self) -> TrajectorySpec {
        TrajectorySpec {
            n_ue: self.data.n_ue,
            speed_min: self.data.speed_min,
            speed_max: self.data.speed_max,
            n_snapshots: self.data.n_snapshots,
            interval_s: self.data.interval_s,
            tag: 0,
        }
    }

    pub fn generate_spec(&self) -> GenerateSpec {
        GenerateSpec {
            trajectories: self.trajectories(),
            taps: self.data.taps,
            split: SplitSpec { mode: self.data.split_mode, ratios: self.data.split_ratios, seed: self.seed },
            noise: self.data.snr_db.map_or(NoisePlan::Clean, NoisePlan::Fixed),
            noise_seed: self.seed,
        }
    }

    /// Test set of fast movers drawn from the same scene.
    pub fn high_speed_spec(&self) -> GenerateSpec {
        let e = &self.eval;
        GenerateSpec {
            trajectories: TrajectorySpec {
                n_ue: e.high_speed_n_ue,
                speed_min: e.high_speed_min,
                speed_max: e.high_speed_max,
                n_snapshots: self.data.n_snapshots,
                interval_s: e.high_speed_interval_s,
                tag: 1,
            },
            split: SplitSpec { ratios: [0, 0, 1], ..self.generate_spec().split },
            ..self.generate_spec()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::desk());
        assert_eq!(c.scene.n_bs(), 3);
        assert_eq!(c.data.n_ue * c.data.n_snapshots, 600);
        assert_eq!((c.scene.n_rx, c.scene.n_tx, c.scene.n_subcarriers, c.data.taps), (8, 2, 256, 32));
    }

    #[test]
    fn toml_round_trip_and_partial_sections() {
        for c in [Config::desk(), Config::large()] {
            assert_eq!(Config::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        }
        let c = Config::from_toml("seed = 4\n[train]\nmax_epochs = 3\n[scene]\nn_rx = 2\n").unwrap();
        assert_eq!((c.seed, c.train.max_epochs, c.scene.n_rx, c.scene.n_tx), (4, 3, 2, 2));
    }

    #[test]
    fn large_profile_sizes() {
        let c = Config::large();
        assert_eq!(c.scene.n_bs(), 7);
        assert_eq!(c.data.n_ue * c.data.n_snapshots, 2000);
        assert_eq!((c.scene.n_rx, c.scene.n_tx, c.scene.n_subcarriers, c.data.taps), (32, 4, 4096, 150));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Config::from_toml("[train]\nepochs = 3\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[data]\ntaps = 0\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[grid]\nspacing_m = -1.0\n"), Err(Error::Config(_))));
    }
}
