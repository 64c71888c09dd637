//! Binary on-disk formats for datasets and model checkpoints.
//!
//! Both are little-endian, start with an 8-byte magic and a `u32` version,
//! and are parsed fully in memory before anything is returned. Unknown
//! versions, truncation and trailing bytes are rejected with the offending
//! byte offset.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetHeader, Sample, Split};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintNorm;
use crate::geometry::{BoundingBox, Point2};
use crate::model::{BundleMeta, ModelBundle};
use crate::nn::{AdamState, ArchDescriptor, Network, Param, ParamKind, ParamSet, Tensor};

pub const DATASET_MAGIC: &[u8; 8] = b"DLDSET\0\0";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DLCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn len32(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::arg(format!("length {n} does not fit the file format")))?;
        self.u32(n);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated: need {n} bytes for {what}, {} left", self.buf.len() - self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.arr::<1>(what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.arr(what)?))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr(what)?))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.arr(what)?))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr(what)?))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        self.need(n, 8, what)?;
        (0..n).map(|_| self.f64(what)).collect()
    }
    /// Fails early when `n` items of `size` bytes cannot possibly fit.
    fn need(&self, n: usize, size: usize, what: &str) -> Result<()> {
        match n.checked_mul(size) {
            Some(b) if b <= self.buf.len() - self.pos => Ok(()),
            _ => Err(self.err(format!("truncated: {n} entries of {what} do not fit"))),
        }
    }
    fn count32(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn magic(&mut self, want: &[u8; 8], version: u32, kind: &str) -> Result<()> {
        if self.take(8, "magic")? != want {
            self.pos = 0;
            return Err(self.err(format!("not a {kind} file (bad magic)")));
        }
        let at = self.pos;
        let v = self.u32("version")?;
        if v != version {
            self.pos = at;
            return Err(self.err(format!("unsupported {kind} version {v} (this build reads {version})")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_norms(w: &mut Writer, norms: &[FingerprintNorm]) -> Result<()> {
    w.len32(norms.len())?;
    for n in norms {
        w.len32(n.mean.len())?;
        w.f64s(&n.mean);
        w.f64s(&n.std);
    }
    Ok(())
}

fn read_norms(r: &mut Reader<'_>) -> Result<Vec<FingerprintNorm>> {
    let n = r.count32("normalization count")?;
    r.need(n, 4, "normalizations")?;
    (0..n)
        .map(|_| {
            let half = r.count32("normalization width")?;
            Ok(FingerprintNorm { mean: r.f64s(half, "normalization mean")?, std: r.f64s(half, "normalization std")? })
        })
        .collect()
}

// ---------------------------------------------------------------- datasets

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let h = &ds.header;
    let mut w = Writer::default();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    for n in [h.n_rx, h.n_tx, h.n_subcarriers, h.taps, h.n_bs] {
        w.len32(n)?;
    }
    w.u64(ds.len() as u64);
    w.u64(h.seed);
    w.f64s(&[h.bbox.min.x, h.bbox.min.y, h.bbox.max.x, h.bbox.max.y]);
    write_norms(&mut w, &ds.norms)?;
    for s in &ds.samples {
        w.f64(s.position.x);
        w.f64(s.position.y);
        for fp in &s.fingerprints {
            fp.iter().for_each(|&v| w.f32(v));
        }
        w.u8(s.split.tag());
        w.u32(s.user);
        w.f64(s.timestamp);
    }
    Ok(w.buf)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC, DATASET_VERSION, "dataset")?;
    let at = r.pos;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.count32("header dimension")?;
    }
    let [n_rx, n_tx, n_subcarriers, taps, n_bs] = dims;
    if dims.contains(&0) || taps > n_subcarriers {
        r.pos = at;
        return Err(r.err(format!("invalid dimensions Nr={n_rx} Nt={n_tx} Nc={n_subcarriers} L={taps} B={n_bs}")));
    }
    let n_samples = r.u64("sample count")? as usize;
    let seed = r.u64("seed")?;
    let b = r.f64s(4, "bounding box")?;
    let header = DatasetHeader {
        n_rx,
        n_tx,
        n_subcarriers,
        taps,
        n_bs,
        seed,
        bbox: BoundingBox { min: Point2::new(b[0], b[1]), max: Point2::new(b[2], b[3]) },
    };
    let d = header.fp_dim();
    let norms_at = r.pos;
    let norms = read_norms(&mut r)?;
    if !norms.is_empty() && (norms.len() != n_bs || norms.iter().any(|n| n.dim() != d)) {
        r.pos = norms_at;
        return Err(r.err(format!("normalization stats do not match B={n_bs}, d={d}")));
    }
    let record = 16 + 4 * n_bs * d + 1 + 4 + 8;
    r.need(n_samples, record, "records")?;
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let position = Point2::new(r.f64("position")?, r.f64("position")?);
        let fingerprints = (0..n_bs)
            .map(|_| (0..d).map(|_| r.f32("fingerprint")).collect::<Result<Vec<f32>>>())
            .collect::<Result<_>>()?;
        let tag = r.u8("split tag")?;
        let split = Split::from_tag(tag).ok_or_else(|| {
            Error::Format { offset: r.pos as u64 - 1, message: format!("unknown split tag {tag}") }
        })?;
        samples.push(Sample { position, fingerprints, split, user: r.u32("user id")?, timestamp: r.f64("timestamp")? });
    }
    r.finish()?;
    Ok(Dataset { header, norms, samples })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &encode_dataset(ds)?)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { offset, message } => Error::Format { offset, message: format!("{}: {message}", path.display()) },
        other => other,
    }
}

// ------------------------------------------------------------- checkpoints

/// JSON block stored at the front of a checkpoint.
#[derive(Serialize, Deserialize)]
struct CheckpointHead {
    meta: BundleMeta,
    arch: ArchDescriptor,
    init_seed: u64,
}

fn write_params(w: &mut Writer, ps: &ParamSet) -> Result<()> {
    w.len32(ps.len())?;
    for p in ps.iter() {
        w.len32(p.name.len())?;
        w.bytes(p.name.as_bytes());
        w.u8(match p.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        });
        w.len32(p.tensor.shape.len())?;
        p.tensor.shape.iter().for_each(|&s| w.u64(s as u64));
        w.f64s(&p.tensor.data);
    }
    Ok(())
}

fn read_params(r: &mut Reader<'_>, init_seed: u64) -> Result<ParamSet> {
    let n = r.count32("parameter count")?;
    r.need(n, 9, "parameters")?;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.count32("name length")?;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| Error::Format { offset: at as u64, message: "parameter name is not UTF-8".into() })?
            .to_owned();
        let kind = match r.u8("parameter kind")? {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(Error::Format { offset: r.pos as u64 - 1, message: format!("unknown parameter kind {k}") }),
        };
        let rank = r.count32("rank")?;
        r.need(rank, 8, "shape")?;
        let shape = (0..rank).map(|_| r.u64("shape").map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &s| a.checked_mul(s)).ok_or_else(|| r.err("shape overflows"))?;
        let data = r.f64s(numel, "parameter data")?;
        params.push(Param { name, kind, tensor: Tensor { shape, data } });
    }
    Ok(ParamSet::from_params(params, init_seed))
}

fn read_moments(r: &mut Reader<'_>, like: &ParamSet) -> Result<ParamSet> {
    let mut m = like.zeros_like();
    for p in m.iter_mut() {
        let n = p.tensor.data.len();
        p.tensor.data = r.f64s(n, "optimizer moment")?;
    }
    Ok(m)
}

pub fn encode_checkpoint(b: &ModelBundle) -> Result<Vec<u8>> {
    b.validate()?;
    let head = CheckpointHead {
        meta: b.meta.clone(),
        arch: b.network.arch().clone(),
        init_seed: b.network.params().init_seed,
    };
    let json = serde_json::to_vec(&head).map_err(|e| Error::State(format!("checkpoint metadata: {e}")))?;
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.len32(json.len())?;
    w.bytes(&json);
    write_params(&mut w, b.network.params())?;
    write_norms(&mut w, &b.fp_norms)?;
    match &b.optimizer {
        None => w.u8(0),
        Some(opt) => {
            b.network.params().check_same_structure(&opt.m)?;
            w.u8(1);
            w.u64(opt.step);
            for ps in [&opt.m, &opt.v] {
                ps.iter().for_each(|p| w.f64s(&p.tensor.data));
            }
        }
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
    let len = r.count32("metadata length")?;
    let at = r.pos;
    let head: CheckpointHead = serde_json::from_slice(r.take(len, "metadata")?)
        .map_err(|e| Error::Format { offset: at as u64, message: format!("bad metadata: {e}") })?;
    let params_at = r.pos;
    let params = read_params(&mut r, head.init_seed)?;
    let network = Network::from_params(head.arch, params).map_err(|e| Error::Format {
        offset: params_at as u64,
        message: format!("parameters do not match the architecture: {e}"),
    })?;
    let fp_norms = read_norms(&mut r)?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let m = read_moments(&mut r, network.params())?;
            let v = read_moments(&mut r, network.params())?;
            Some(AdamState { step, m, v })
        }
        f => return Err(Error::Format { offset: r.pos as u64 - 1, message: format!("bad optimizer flag {f}") }),
    };
    r.finish()?;
    let bundle = ModelBundle { meta: head.meta, network, fp_norms, optimizer };
    bundle
        .validate()
        .map_err(|e| Error::Format { offset: 0, message: format!("inconsistent checkpoint: {e}") })?;
    Ok(bundle)
}

pub fn save_checkpoint(b: &ModelBundle, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(b)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelBundle> {
    decode_checkpoint(&read_file(path)?).map_err(|e| with_path(e, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{GenerateSpec, NoisePlan, SplitSpec};
    use crate::diffusion::ScheduleSpec;
    use crate::geometry::PositionNorm;
    use crate::model::Method;
    use crate::scene::{Scene, SceneConfig, TrajectorySpec};

    fn tiny_dataset(n_ue: usize) -> Dataset {
        let mut cfg = SceneConfig::desk();
        cfg.n_rx = 2;
        cfg.n_tx = 1;
        cfg.n_subcarriers = 32;
        let scene = Scene::new(cfg).unwrap();
        let mut tr = TrajectorySpec::pedestrian(n_ue);
        tr.n_snapshots = 2;
        let spec = GenerateSpec { trajectories: tr, taps: 4, split: SplitSpec::default(), noise: NoisePlan::Clean, noise_seed: 3 };
        Dataset::generate(&scene, &spec).unwrap()
    }

    fn tiny_bundle() -> ModelBundle {
        let ds = tiny_dataset(5);
        let mut arch = ArchDescriptor::mlp(ds.fp_dim());
        arch.hidden = vec![8, 6];
        let mut net = Network::new(arch, 11).unwrap();
        let mut rng = crate::rng::rng_for(1, 99, 0);
        let mut opt = AdamState::new(net.params());
        for p in opt.m.iter_mut().chain(opt.v.iter_mut()) {
            p.tensor.data.iter_mut().for_each(|v| *v = rand::Rng::random::<f64>(&mut rng));
        }
        opt.step = 17;
        net.params_mut().iter_mut().for_each(|p| p.tensor.data.iter_mut().for_each(|v| *v += 0.25));
        let mut meta = BundleMeta::new(Method::DifflocMlp, vec![1], PositionNorm::new(ds.header.bbox).unwrap(), 5);
        meta.schedule = Some(ScheduleSpec::default());
        meta.best_val_loss = Some(0.1 + 0.2);
        ModelBundle { meta, network: net, fp_norms: vec![ds.norms[1].clone()], optimizer: Some(opt) }
    }

    #[test]
    fn dataset_round_trip_is_byte_exact() {
        let ds = tiny_dataset(5);
        assert_eq!(ds.len(), 10);
        let bytes = encode_dataset(&ds).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
        assert_eq!(&bytes[..8], DATASET_MAGIC);
    }

    #[test]
    fn dataset_truncation_is_rejected_everywhere() {
        let bytes = encode_dataset(&tiny_dataset(2)).unwrap();
        for cut in [0, 4, 9, 13, 40, 80, bytes.len() / 2, bytes.len() - 1] {
            match decode_dataset(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_dataset(&long), Err(Error::Format { offset, .. }) if offset as usize == bytes.len()));
    }

    #[test]
    fn version_and_magic_mismatch_fail() {
        let mut bytes = encode_dataset(&tiny_dataset(2)).unwrap();
        bytes[8] = 2;
        let e = decode_dataset(&bytes).unwrap_err();
        assert!(matches!(e, Error::Format { offset: 8, .. }), "{e}");
        bytes[0] = b'X';
        assert!(matches!(decode_dataset(&bytes), Err(Error::Format { offset: 0, .. })));
        let ck = encode_checkpoint(&tiny_bundle()).unwrap();
        assert!(decode_dataset(&ck).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let b = tiny_bundle();
        let bytes = encode_checkpoint(&b).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.meta, b.meta);
        assert_eq!(back.network.params(), b.network.params());
        assert_eq!(back.optimizer, b.optimizer);
        assert_eq!(back.fp_norms, b.fp_norms);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn checkpoint_truncation_and_corruption() {
        let bytes = encode_checkpoint(&tiny_bundle()).unwrap();
        for cut in [3, 12, 20, bytes.len() / 3, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[14] = b'#';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { offset: 16, .. })));
    }

    #[test]
    fn file_helpers_report_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/ds.bin");
        let ds = tiny_dataset(2);
        save_dataset(&ds, &p).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), ds);
        let missing = load_dataset(&dir.path().join("nope.bin")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
        assert!(missing.to_string().contains("nope.bin"));
    }
}
