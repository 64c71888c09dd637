//! Trained models as self-contained bundles: network, normalization and the
//! settings needed to run inference.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::baselines::GridSpec;
use crate::consistency::SigmaRange;
use crate::dataset::Dataset;
use crate::diffusion::{ScheduleSpec, SoftLabelConfig, Trained};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintNorm;
use crate::geometry::PositionNorm;
use crate::nn::{AdamState, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DifflocMlp,
    DifflocUnet,
    DifflocCt,
    Supervised,
    Grid,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::DifflocMlp, Method::DifflocUnet, Method::DifflocCt, Method::Supervised, Method::Grid];

    pub fn name(self) -> &'static str {
        match self {
            Method::DifflocMlp => "diffloc-mlp",
            Method::DifflocUnet => "diffloc-unet",
            Method::DifflocCt => "diffloc-ct",
            Method::Supervised => "supervised",
            Method::Grid => "grid",
        }
    }

    /// One network per BS, fused at inference.
    pub fn is_per_bs(self) -> bool {
        !matches!(self, Method::Supervised)
    }

    pub fn is_generative(self) -> bool {
        matches!(self, Method::DifflocMlp | Method::DifflocUnet | Method::DifflocCt)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown method `{s}` (expected one of diffloc-mlp, diffloc-unet, diffloc-ct, supervised, grid)")))
    }
}

/// Everything about a trained model except its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub method: Method,
    /// BSs whose fingerprints feed the network, in input order.
    pub bs: Vec<usize>,
    pub pos_norm: PositionNorm,
    pub schedule: Option<ScheduleSpec>,
    pub sigma: Option<SigmaRange>,
    pub grid: Option<GridSpec>,
    pub soft_label: Option<SoftLabelConfig>,
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub steps: u64,
    /// `None` when no epoch ran or the value was not finite.
    pub final_train_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
}

impl BundleMeta {
    pub fn new(method: Method, bs: Vec<usize>, pos_norm: PositionNorm, seed: u64) -> Self {
        Self {
            method,
            bs,
            pos_norm,
            schedule: None,
            sigma: None,
            grid: None,
            soft_label: None,
            seed,
            epochs: 0,
            best_epoch: 0,
            steps: 0,
            final_train_loss: None,
            best_val_loss: None,
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub meta: BundleMeta,
    pub network: Network,
    /// One normalization per entry of `meta.bs`.
    pub fp_norms: Vec<FingerprintNorm>,
    pub optimizer: Option<AdamState>,
}

impl ModelBundle {
    pub fn from_trained(mut meta: BundleMeta, trained: Trained, fp_norms: Vec<FingerprintNorm>) -> Result<Self> {
        let r = &trained.report;
        meta.epochs = r.epochs.len();
        meta.best_epoch = r.best_epoch;
        meta.steps = r.steps;
        meta.final_train_loss = finite(r.final_train_loss());
        meta.best_val_loss = finite(r.best_val_loss);
        let b = Self { meta, network: trained.network, fp_norms, optimizer: Some(trained.optimizer) };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        if m.bs.is_empty() || m.bs.len() != self.fp_norms.len() {
            return Err(Error::State(format!(
                "bundle lists {} BSs but carries {} normalizations",
                m.bs.len(),
                self.fp_norms.len()
            )));
        }
        if m.method.is_per_bs() && m.bs.len() != 1 {
            return Err(Error::State(format!("{} bundles serve exactly one BS", m.method)));
        }
        let want: usize = self.fp_norms.iter().map(FingerprintNorm::dim).sum();
        if self.network.arch().fp_dim != want {
            return Err(Error::State(format!(
                "network expects {} fingerprint inputs, normalization covers {want}",
                self.network.arch().fp_dim
            )));
        }
        let needs = match m.method {
            Method::DifflocMlp | Method::DifflocUnet => m.schedule.is_some(),
            Method::DifflocCt => m.sigma.is_some(),
            Method::Grid => m.grid.is_some(),
            Method::Supervised => true,
        };
        if !needs {
            return Err(Error::State(format!("{} bundle is missing its inference settings", m.method)));
        }
        Ok(())
    }

    /// The single BS of a per-BS bundle.
    pub fn bs_index(&self) -> usize {
        self.meta.bs[0]
    }

    /// Network inputs for `indices`, normalized with the bundle's own statistics.
    pub fn inputs(&self, data: &Dataset, indices: &[usize]) -> Result<Array2<f64>> {
        if let Some(&b) = self.meta.bs.iter().find(|&&b| b >= data.n_bs()) {
            return Err(Error::arg(format!("model uses BS {b}, dataset has {}", data.n_bs())));
        }
        if self.meta.bs.len() == 1 {
            data.normalized(self.meta.bs[0], indices, &self.fp_norms[0])
        } else {
            data.normalized_concat(&self.meta.bs, indices, &self.fp_norms)
        }
    }
}
