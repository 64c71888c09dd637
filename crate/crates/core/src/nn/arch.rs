use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Mlp,
    Unet1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Network shape and layer options.
///
/// Input is `[x_t ; fingerprint ; time embedding]`, any of which may be
/// empty (`pos_dim = 0` / `time_dim = 0` for the baselines). Both kinds start
/// with an input projection followed by the activation.
///
/// * `Mlp`: projection to `hidden[0]`, then one residual block per entry of
///   `hidden` (linear, optional batch norm, activation, dropout; identity skip
///   when widths match, bias-free linear projection otherwise), then a linear head.
/// * `Unet1d`: projection to `decoder.last()`, encoder layers widening through
///   `hidden`, decoder layers contracting through `decoder`; each decoder
///   output is concatenated with the encoder activation of the same width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub kind: NetKind,
    pub pos_dim: usize,
    pub fp_dim: usize,
    pub time_dim: usize,
    pub hidden: Vec<usize>,
    pub decoder: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub uses_batchnorm: bool,
    pub bn_momentum: f64,
    pub output_dim: usize,
}

pub const DEFAULT_TIME_DIM: usize = 32;

impl ArchDescriptor {
    pub fn mlp(fp_dim: usize) -> Self {
        Self {
            kind: NetKind::Mlp,
            pos_dim: 2,
            fp_dim,
            time_dim: DEFAULT_TIME_DIM,
            hidden: vec![512, 256, 128],
            decoder: Vec::new(),
            activation: Activation::Silu,
            dropout_rate: 0.1,
            uses_batchnorm: true,
            bn_momentum: 0.1,
            output_dim: 2,
        }
    }

    pub fn unet(fp_dim: usize) -> Self {
        Self {
            kind: NetKind::Unet1d,
            pos_dim: 2,
            fp_dim,
            time_dim: DEFAULT_TIME_DIM,
            hidden: vec![256, 512, 1024],
            decoder: vec![512, 256, 128],
            activation: Activation::Silu,
            dropout_rate: 0.0,
            uses_batchnorm: false,
            bn_momentum: 0.1,
            output_dim: 2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.pos_dim + self.fp_dim + self.time_dim
    }

    /// Width of the input projection.
    pub fn projection_width(&self) -> usize {
        match self.kind {
            NetKind::Mlp => self.hidden[0],
            NetKind::Unet1d => *self.decoder.last().expect("validated"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim() == 0 || self.output_dim == 0 {
            return Err(Error::arg("network input and output dims must be positive"));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::arg(format!("time embedding dim {} must be even", self.time_dim)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::arg("hidden widths must be non-empty and positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::arg("dropout rate must lie in [0, 1)"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::arg("batch-norm momentum must lie in (0, 1]"));
        }
        if self.kind == NetKind::Unet1d {
            if self.decoder.len() != self.hidden.len() || self.decoder.contains(&0) {
                return Err(Error::arg("UNet decoder must have one level per encoder level"));
            }
            let skips = self.unet_skip_widths();
            let n = skips.len();
            for (i, &w) in self.decoder.iter().enumerate() {
                if skips[n - 1 - i] != w {
                    return Err(Error::arg(format!(
                        "UNet decoder level {i} width {w} does not match skip width {}",
                        skips[n - 1 - i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Widths of the activations offered as skips: the input projection,
    /// then every encoder level except the bottleneck.
    pub fn unet_skip_widths(&self) -> Vec<usize> {
        let mut w = vec![*self.decoder.last().unwrap_or(&0)];
        w.extend_from_slice(&self.hidden[..self.hidden.len().saturating_sub(1)]);
        w
    }
}
