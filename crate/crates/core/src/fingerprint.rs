//! Frequency-domain channel tensors and the fingerprint pipeline:
//! reshape to antenna pairs, unitary inverse DFT over subcarriers, keep the
//! first `L` delay taps, then stack magnitudes and wrapped phases.
//!
//! Vectorization order is receive-major, then transmit, then tap/subcarrier:
//! entry `(i, j, k)` lives at `(i * nt + j) * n + k`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complex array over (receive antennas, transmit antennas, subcarriers or taps).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    dims: (usize, usize, usize),
    data: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn new(dims: (usize, usize, usize), data: Vec<Complex64>) -> Result<Self> {
        let (nr, nt, n) = dims;
        if nr == 0 || nt == 0 || n == 0 {
            return Err(Error::arg(format!("channel dims must be positive, got {dims:?}")));
        }
        if data.len() != nr * nt * n {
            return Err(Error::arg(format!(
                "channel data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::arg("channel tensor has non-finite entries"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self { dims, data: vec![Complex64::new(0.0, 0.0); dims.0 * dims.1 * dims.2] }
    }

    pub fn from_fn(dims: (usize, usize, usize), mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dims.0 * dims.1 * dims.2);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                for k in 0..dims.2 {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[(i * self.dims.1 + j) * self.dims.2 + k]
    }

    /// Vector along the last axis for antenna pair `(i, j)`.
    pub fn pair(&self, i: usize, j: usize) -> &[Complex64] {
        let n = self.dims.2;
        let start = (i * self.dims.1 + j) * n;
        &self.data[start..start + n]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.energy().sqrt()
    }
}

/// Cached unitary DFT plans for one subcarrier count.
pub struct DelayTransform {
    n: usize,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl DelayTransform {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("subcarrier count must be at least 1"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self { n, inverse: planner.plan_fft_inverse(n), forward: planner.plan_fft_forward(n) })
    }

    fn apply(&self, t: &ChannelTensor, plan: &Arc<dyn Fft<f64>>) -> Result<ChannelTensor> {
        if t.dims.2 != self.n {
            return Err(Error::arg(format!("expected {} subcarriers, got {}", self.n, t.dims.2)));
        }
        let scale = 1.0 / (self.n as f64).sqrt();
        let mut out = t.clone();
        for chunk in out.data.chunks_exact_mut(self.n) {
            plan.process(chunk);
            for z in chunk.iter_mut() {
                *z *= scale;
            }
        }
        Ok(out)
    }

    /// Unitary inverse DFT: `h[l] = n^{-1/2} sum_k g[k] e^{+j 2 pi k l / n}`.
    pub fn cfr_to_cir(&self, cfr: &ChannelTensor) -> Result<ChannelTensor> {
        self.apply(cfr, &self.inverse)
    }

    /// Unitary forward DFT, the inverse of [`Self::cfr_to_cir`].
    pub fn cir_to_cfr(&self, cir: &ChannelTensor) -> Result<ChannelTensor> {
        self.apply(cir, &self.forward)
    }
}

pub fn cfr_to_cir(cfr: &ChannelTensor) -> Result<ChannelTensor> {
    DelayTransform::new(cfr.dims.2)?.cfr_to_cir(cfr)
}

pub fn cir_to_cfr(cir: &ChannelTensor) -> Result<ChannelTensor> {
    DelayTransform::new(cir.dims.2)?.cir_to_cfr(cir)
}

/// Keep delay taps `0..taps` of every antenna pair.
pub fn truncate_cir(cir: &ChannelTensor, taps: usize) -> Result<ChannelTensor> {
    let (nr, nt, n) = cir.dims;
    if taps == 0 || taps > n {
        return Err(Error::arg(format!("truncation length {taps} outside 1..={n}")));
    }
    let mut data = Vec::with_capacity(nr * nt * taps);
    for chunk in cir.data.chunks_exact(n) {
        data.extend_from_slice(&chunk[..taps]);
    }
    Ok(ChannelTensor { dims: (nr, nt, taps), data })
}

/// Principal argument in `(-pi, pi]`, with `Arg(0) = 0`.
pub fn principal_arg(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

/// Real fingerprint: `d/2` magnitudes followed by `d/2` wrapped phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    values: Vec<f64>,
    layout: (usize, usize, usize),
}

impl Fingerprint {
    pub fn from_values(values: Vec<f64>, layout: (usize, usize, usize)) -> Result<Self> {
        if values.len() != 2 * layout.0 * layout.1 * layout.2 {
            return Err(Error::arg(format!(
                "fingerprint length {} does not match layout {layout:?}",
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `(Nr, Nt, L)`.
    pub fn layout(&self) -> (usize, usize, usize) {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn split_point(&self) -> usize {
        self.values.len() / 2
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.values[..self.split_point()]
    }

    pub fn phases(&self) -> &[f64] {
        &self.values[self.split_point()..]
    }
}

pub fn fingerprint_dim(nr: usize, nt: usize, taps: usize) -> usize {
    2 * nr * nt * taps
}

pub fn make_fingerprint(h: &ChannelTensor) -> Fingerprint {
    let half = h.data.len();
    let mut values = vec![0.0; 2 * half];
    for (idx, z) in h.data.iter().enumerate() {
        values[idx] = z.norm();
        values[half + idx] = principal_arg(*z);
    }
    Fingerprint { values, layout: h.dims }
}

/// The whole preprocessing chain for one subcarrier count and truncation length.
pub struct Preprocessor {
    transform: DelayTransform,
    taps: usize,
}

impl Preprocessor {
    pub fn new(n_subcarriers: usize, taps: usize) -> Result<Self> {
        if taps == 0 || taps > n_subcarriers {
            return Err(Error::arg(format!("truncation length {taps} outside 1..={n_subcarriers}")));
        }
        Ok(Self { transform: DelayTransform::new(n_subcarriers)?, taps })
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn transform(&self) -> &DelayTransform {
        &self.transform
    }

    pub fn truncated_cir(&self, cfr: &ChannelTensor) -> Result<ChannelTensor> {
        truncate_cir(&self.transform.cfr_to_cir(cfr)?, self.taps)
    }

    pub fn fingerprint(&self, cfr: &ChannelTensor) -> Result<Fingerprint> {
        Ok(make_fingerprint(&self.truncated_cir(cfr)?))
    }
}

/// Floor applied to per-coordinate standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Normalization statistics fitted on a training split: per-coordinate
/// mean/std for the magnitude half, fixed `1/pi` scaling for the phase half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FingerprintNorm {
    /// Fit on rows of raw fingerprints (each of length `d`).
    pub fn fit<'a, I, T>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [T]>,
        T: Copy + Into<f64> + 'a,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        let mut half = 0usize;
        let mut rows_seen: Vec<&'a [T]> = Vec::new();
        for row in rows {
            if count == 0 {
                if row.len() % 2 != 0 || row.is_empty() {
                    return Err(Error::arg("fingerprint length must be even and positive"));
                }
                half = row.len() / 2;
                sum = vec![0.0; half];
            } else if row.len() != 2 * half {
                return Err(Error::arg("fingerprint rows have inconsistent lengths"));
            }
            for (s, &v) in sum.iter_mut().zip(row[..half].iter()) {
                *s += v.into();
            }
            rows_seen.push(row);
            count += 1;
        }
        if count == 0 {
            return Err(Error::arg("cannot fit normalization on an empty split"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        sum_sq.resize(half, 0.0);
        for row in rows_seen {
            for ((acc, &v), m) in sum_sq.iter_mut().zip(row[..half].iter()).zip(&mean) {
                let d = v.into() - m;
                *acc += d * d;
            }
        }
        let std = sum_sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        2 * self.mean.len()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::arg(format!(
                "normalization stats cover d={}, fingerprint has d={len}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Normalize raw values into `out`.
    pub fn normalize_into<T: Copy + Into<f64>>(&self, raw: &[T], out: &mut [f64]) -> Result<()> {
        self.check(raw.len())?;
        self.check(out.len())?;
        let half = self.mean.len();
        for k in 0..half {
            out[k] = (raw[k].into() - self.mean[k]) / self.std[k];
        }
        for k in half..2 * half {
            out[k] = raw[k].into() / PI;
        }
        Ok(())
    }

    pub fn normalize(&self, f: &Fingerprint) -> Result<Fingerprint> {
        let mut out = vec![0.0; f.dim()];
        self.normalize_into(f.values(), &mut out)?;
        Ok(Fingerprint { values: out, layout: f.layout })
    }

    pub fn denormalize(&self, f: &Fingerprint) -> Result<Fingerprint> {
        self.check(f.dim())?;
        let half = self.mean.len();
        let mut out = f.values.clone();
        for k in 0..half {
            out[k] = out[k] * self.std[k] + self.mean[k];
        }
        for v in &mut out[half..] {
            *v *= PI;
        }
        Ok(Fingerprint { values: out, layout: f.layout })
    }
}

/// Channel signal-to-noise ratio: total channel power over total noise power
/// per tensor. `Clean` is the noise-free sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Snr {
    Clean,
    Db(f64),
}

impl Snr {
    pub fn label(&self) -> String {
        match self {
            Snr::Clean => "clean".to_string(),
            Snr::Db(db) => format!("{db}"),
        }
    }
}

/// Add circularly-symmetric complex white Gaussian noise to a CFR so that
/// `mean |g|^2 / E|n|^2` equals the requested SNR.
pub fn add_awgn<R: Rng>(cfr: &ChannelTensor, snr: Snr, rng: &mut R) -> ChannelTensor {
    let db = match snr {
        Snr::Clean => return cfr.clone(),
        Snr::Db(db) => db,
    };
    let signal_power = cfr.energy() / cfr.data.len() as f64;
    let noise_power = signal_power / 10f64.powf(db / 10.0);
    let component_std = (noise_power / 2.0).sqrt();
    let mut out = cfr.clone();
    for z in out.data.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(re * component_std, im * component_std);
    }
    out
}
