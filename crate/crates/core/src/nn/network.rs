use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

use super::arch::{ArchDescriptor, NetKind};
use super::embed::time_embed_into;
use super::params::{ParamKind, ParamSet};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream, Rng};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One batch of network inputs; rows are samples.
#[derive(Debug, Clone, Copy, Default)]
pub struct NetInput<'a> {
    pub pos: Option<ArrayView2<'a, f64>>,
    pub fp: Option<ArrayView2<'a, f64>>,
    pub t_norm: Option<&'a [f64]>,
}

impl<'a> NetInput<'a> {
    pub fn new(pos: ArrayView2<'a, f64>, fp: ArrayView2<'a, f64>, t_norm: &'a [f64]) -> Self {
        Self { pos: Some(pos), fp: Some(fp), t_norm: Some(t_norm) }
    }

    pub fn fingerprint_only(fp: ArrayView2<'a, f64>) -> Self {
        Self { pos: None, fp: Some(fp), t_norm: None }
    }
}

pub enum LossSpec<'a> {
    /// Mean over rows of the squared L2 distance to the target.
    Mse(ArrayView2<'a, f64>),
    /// Cross-entropy of the row softmax against soft target distributions.
    SoftCrossEntropy(ArrayView2<'a, f64>),
}

pub fn loss_and_output_grad(spec: &LossSpec<'_>, out: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    let m = out.nrows() as f64;
    let (loss, grad) = match spec {
        LossSpec::Mse(target) => {
            check_shape(target, out.dim(), "loss target")?;
            let diff = &out - target;
            let loss = diff.iter().map(|v| v * v).sum::<f64>() / m;
            (loss, diff * (2.0 / m))
        }
        LossSpec::SoftCrossEntropy(target) => {
            check_shape(target, out.dim(), "loss target")?;
            let mut grad = Array2::zeros(out.dim());
            let mut loss = 0.0;
            for ((row, q), mut g) in out.rows().into_iter().zip(target.rows()).zip(grad.rows_mut()) {
                let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                let qsum = q.sum();
                for ((gi, &oi), &qi) in g.iter_mut().zip(row).zip(q) {
                    let logp = oi - lse;
                    loss -= qi * logp;
                    *gi = (logp.exp() * qsum - qi) / m;
                }
            }
            (loss / m, grad)
        }
    };
    if !loss.is_finite() {
        return Err(Error::Training(format!("loss is not finite ({loss})")));
    }
    Ok((loss, grad))
}

fn check_shape(a: &ArrayView2<'_, f64>, want: (usize, usize), what: &str) -> Result<()> {
    if a.dim() != want {
        return Err(Error::arg(format!("{what} has shape {:?}, expected {:?}", a.dim(), want)));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Linear {
    w: usize,
    b: Option<usize>,
}

#[derive(Debug, Clone)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone)]
struct Unit {
    lin: Linear,
    bn: Option<Bn>,
}

#[derive(Debug, Clone)]
struct Block {
    unit: Unit,
    proj: Option<usize>,
}

#[derive(Debug, Clone)]
struct InputProj {
    w_pos: Option<usize>,
    w_fp: Option<usize>,
    w_time: Option<usize>,
    b: usize,
}

#[derive(Debug, Clone)]
enum Body {
    Mlp(Vec<Block>),
    Unet { enc: Vec<Unit>, dec: Vec<Unit> },
}

#[derive(Debug, Clone)]
struct Layout {
    input: InputProj,
    body: Body,
    head: Linear,
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct UnitCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    bn: Option<BnCache>,
    mask: Option<Array2<f64>>,
}

/// Activations kept by a training forward pass for the backward pass.
pub struct ForwardCache {
    pos: Option<Array2<f64>>,
    fp: Option<Array2<f64>>,
    temb: Option<Array2<f64>>,
    in_pre: Array2<f64>,
    units: Vec<UnitCache>,
    head_in: Array2<f64>,
}

struct BnUpdate {
    mean_idx: usize,
    var_idx: usize,
    mean: Array1<f64>,
    var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchDescriptor,
    params: ParamSet,
    layout: Layout,
}

fn build_layout(arch: &ArchDescriptor, ps: &mut ParamSet) -> Layout {
    let p = arch.projection_width();
    let input = InputProj {
        w_pos: (arch.pos_dim > 0).then(|| ps.push("in.w_pos", ParamKind::Trainable, &[arch.pos_dim, p])),
        w_fp: (arch.fp_dim > 0).then(|| ps.push("in.w_fp", ParamKind::Trainable, &[arch.fp_dim, p])),
        w_time: (arch.time_dim > 0).then(|| ps.push("in.w_time", ParamKind::Trainable, &[arch.time_dim, p])),
        b: ps.push("in.b", ParamKind::Trainable, &[p]),
    };
    let unit = |ps: &mut ParamSet, name: &str, fan_in: usize, width: usize| Unit {
        lin: Linear {
            w: ps.push(format!("{name}.w"), ParamKind::Trainable, &[fan_in, width]),
            b: Some(ps.push(format!("{name}.b"), ParamKind::Trainable, &[width])),
        },
        bn: arch.uses_batchnorm.then(|| Bn {
            gamma: ps.push(format!("{name}.bn.gamma"), ParamKind::Trainable, &[width]),
            beta: ps.push(format!("{name}.bn.beta"), ParamKind::Trainable, &[width]),
            mean: ps.push(format!("{name}.bn.running_mean"), ParamKind::Buffer, &[width]),
            var: ps.push(format!("{name}.bn.running_var"), ParamKind::Buffer, &[width]),
        }),
    };
    let (body, head_in) = match arch.kind {
        NetKind::Mlp => {
            let mut blocks = Vec::new();
            let mut width = p;
            for (i, &h) in arch.hidden.iter().enumerate() {
                let name = format!("block{i}");
                let u = unit(ps, &name, width, h);
                let proj = (width != h).then(|| ps.push(format!("{name}.proj"), ParamKind::Trainable, &[width, h]));
                blocks.push(Block { unit: u, proj });
                width = h;
            }
            (Body::Mlp(blocks), width)
        }
        NetKind::Unet1d => {
            let skips = arch.unet_skip_widths();
            let n = skips.len();
            let mut enc = Vec::new();
            let mut width = p;
            for (i, &h) in arch.hidden.iter().enumerate() {
                enc.push(unit(ps, &format!("enc{i}"), width, h));
                width = h;
            }
            let mut dec = Vec::new();
            for (i, &h) in arch.decoder.iter().enumerate() {
                dec.push(unit(ps, &format!("dec{i}"), width, h));
                width = h + skips[n - 1 - i];
            }
            (Body::Unet { enc, dec }, width)
        }
    };
    let head = Linear {
        w: ps.push("head.w", ParamKind::Trainable, &[head_in, arch.output_dim]),
        b: Some(ps.push("head.b", ParamKind::Trainable, &[arch.output_dim])),
    };
    Layout { input, body, head }
}

impl Network {
    /// Fresh network with uniform `±1/sqrt(fan_in)` initialization.
    pub fn new(arch: ArchDescriptor, init_seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamSet::new(init_seed);
        let layout = build_layout(&arch, &mut params);
        let mut rng = rng_for(init_seed, stream::INIT, 0);
        let in_fan = arch.input_dim();
        // Biases share the fan-in of their weight matrix.
        let fans: Vec<usize> = params
            .iter()
            .map(|p| {
                let name = p.name.as_str();
                if name.starts_with("in.") {
                    in_fan
                } else if p.tensor.shape.len() == 2 {
                    p.tensor.shape[0]
                } else {
                    let w = format!("{}.w", name.trim_end_matches(".b"));
                    params.by_name(&w).map_or(1, |w| w.tensor.shape[0])
                }
            })
            .collect();
        for (p, fan_in) in params.iter_mut().zip(fans) {
            let name = p.name.as_str();
            if name.ends_with("running_var") || name.ends_with("bn.gamma") {
                p.tensor.data.iter_mut().for_each(|v| *v = 1.0);
                continue;
            }
            if p.kind == ParamKind::Buffer || name.ends_with("bn.beta") {
                continue;
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            p.tensor.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        }
        Ok(Self { arch, params, layout })
    }

    /// Network from saved parameters; names and shapes must match the architecture.
    pub fn from_params(arch: ArchDescriptor, params: ParamSet) -> Result<Self> {
        arch.validate()?;
        let mut expected = ParamSet::new(params.init_seed);
        let layout = build_layout(&arch, &mut expected);
        expected
            .check_same_structure(&params)
            .map_err(|_| Error::State("parameter names or shapes do not match the architecture".into()))?;
        Ok(Self { arch, params, layout })
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.params.n_trainable()
    }

    /// Fingerprint contribution to the input projection. Rows of the result
    /// can be passed to [`Network::forward_conditioned`] in place of the fingerprint.
    pub fn condition(&self, fp: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if fp.ncols() != self.arch.fp_dim {
            return Err(Error::arg(format!("fingerprint has {} columns, expected {}", fp.ncols(), self.arch.fp_dim)));
        }
        match self.layout.input.w_fp {
            Some(w) => Ok(fp.dot(&self.params.tensor(w).view2())),
            None => Ok(Array2::zeros((fp.nrows(), self.arch.projection_width()))),
        }
    }

    pub fn forward(&self, input: &NetInput<'_>) -> Result<Array2<f64>> {
        let m = self.validate_input(input)?;
        let (pre, _) = self.input_pre(None, input, m)?;
        let (out, _, _) = self.body_forward(pre, Mode::Eval, None, false)?;
        Ok(out)
    }

    /// Eval-mode forward with a precomputed fingerprint term from [`Network::condition`].
    pub fn forward_conditioned<'a>(
        &self,
        cond: ArrayView2<'_, f64>,
        pos: Option<ArrayView2<'a, f64>>,
        t_norm: Option<&'a [f64]>,
    ) -> Result<Array2<f64>> {
        let input = NetInput { pos, fp: None, t_norm };
        let m = cond.nrows();
        check_shape(&cond, (m, self.arch.projection_width()), "conditioning")?;
        self.validate_parts(&input, m, false)?;
        let (pre, _) = self.input_pre(Some(cond), &input, m)?;
        let (out, _, _) = self.body_forward(pre, Mode::Eval, None, false)?;
        Ok(out)
    }

    /// Training-mode forward: batch statistics, dropout, running-stat updates.
    pub fn forward_train(&mut self, input: &NetInput<'_>, rng: &mut Rng) -> Result<(Array2<f64>, ForwardCache)> {
        let m = self.validate_input(input)?;
        let (pre, temb) = self.input_pre(None, input, m)?;
        let in_pre = pre.clone();
        let (out, cache, updates) = self.body_forward(pre, Mode::Train, Some(rng), true)?;
        let (units, head_in) = cache.expect("cache requested");
        for u in updates {
            let mom = self.arch.bn_momentum;
            let rm = &mut self.params.tensor_mut(u.mean_idx).data;
            rm.iter_mut().zip(&u.mean).for_each(|(r, v)| *r = (1.0 - mom) * *r + mom * v);
            let rv = &mut self.params.tensor_mut(u.var_idx).data;
            rv.iter_mut().zip(&u.var).for_each(|(r, v)| *r = (1.0 - mom) * *r + mom * v);
        }
        let cache = ForwardCache {
            pos: input.pos.map(|p| p.to_owned()),
            fp: input.fp.map(|p| p.to_owned()),
            temb,
            in_pre,
            units,
            head_in,
        };
        Ok((out, cache))
    }

    /// Gradients of all parameters given `d loss / d output`. Buffers get zero gradient.
    pub fn backward(&self, cache: &ForwardCache, grad_out: ArrayView2<'_, f64>) -> Result<ParamSet> {
        check_shape(&grad_out, (cache.head_in.nrows(), self.arch.output_dim), "output gradient")?;
        let mut grads = self.params.zeros_like();
        let head = &self.layout.head;
        grads.tensor_mut(head.w).view2_mut().assign(&cache.head_in.t().dot(&grad_out));
        if let Some(b) = head.b {
            grads.tensor_mut(b).view1_mut().assign(&grad_out.sum_axis(Axis(0)));
        }
        let mut g = grad_out.dot(&self.params.tensor(head.w).view2().t());
        let act = self.arch.activation;
        let g_h0 = match &self.layout.body {
            Body::Mlp(blocks) => {
                for (k, block) in blocks.iter().enumerate().rev() {
                    let uc = &cache.units[k];
                    let g_res = match block.proj {
                        None => g.clone(),
                        Some(p) => {
                            grads.tensor_mut(p).view2_mut().assign(&uc.input.t().dot(&g));
                            g.dot(&self.params.tensor(p).view2().t())
                        }
                    };
                    g = self.unit_backward(&block.unit, uc, g, &mut grads) + g_res;
                }
                g
            }
            Body::Unet { enc, dec } => {
                let skips = self.arch.unet_skip_widths();
                let n = skips.len();
                let mut skip_grads: Vec<Option<Array2<f64>>> = vec![None; n];
                for (i, unit) in dec.iter().enumerate().rev() {
                    let w = self.arch.decoder[i];
                    let g_skip = g.slice(s![.., w..]).to_owned();
                    let slot = &mut skip_grads[n - 1 - i];
                    *slot = Some(match slot.take() {
                        Some(acc) => acc + &g_skip,
                        None => g_skip,
                    });
                    let g_u = g.slice(s![.., ..w]).to_owned();
                    g = self.unit_backward(unit, &cache.units[enc.len() + i], g_u, &mut grads);
                }
                for (j, unit) in enc.iter().enumerate().rev() {
                    if j + 1 < n {
                        if let Some(sg) = &skip_grads[j + 1] {
                            g += sg;
                        }
                    }
                    g = self.unit_backward(unit, &cache.units[j], g, &mut grads);
                }
                if let Some(sg) = &skip_grads[0] {
                    g += sg;
                }
                g
            }
        };
        let mut g_pre = g_h0;
        Zip::from(&mut g_pre).and(&cache.in_pre).for_each(|gv, &x| *gv *= act.derivative(x));
        let ip = &self.layout.input;
        if let (Some(w), Some(fp)) = (ip.w_fp, &cache.fp) {
            grads.tensor_mut(w).view2_mut().assign(&fp.t().dot(&g_pre));
        }
        if let (Some(w), Some(pos)) = (ip.w_pos, &cache.pos) {
            grads.tensor_mut(w).view2_mut().assign(&pos.t().dot(&g_pre));
        }
        if let (Some(w), Some(te)) = (ip.w_time, &cache.temb) {
            grads.tensor_mut(w).view2_mut().assign(&te.t().dot(&g_pre));
        }
        grads.tensor_mut(ip.b).view1_mut().assign(&g_pre.sum_axis(Axis(0)));
        Ok(grads)
    }

    /// Training forward, loss and backward in one call.
    pub fn loss_and_grad(&mut self, input: &NetInput<'_>, loss: &LossSpec<'_>, rng: &mut Rng) -> Result<(f64, ParamSet)> {
        let (out, cache) = self.forward_train(input, rng)?;
        let (l, g_out) = loss_and_output_grad(loss, out.view())?;
        let grads = self.backward(&cache, g_out.view())?;
        Ok((l, grads))
    }

    fn validate_input(&self, input: &NetInput<'_>) -> Result<usize> {
        let m = input
            .fp
            .map(|f| f.nrows())
            .or(input.pos.map(|p| p.nrows()))
            .or(input.t_norm.map(|t| t.len()))
            .ok_or_else(|| Error::arg("empty network input"))?;
        self.validate_parts(input, m, true)?;
        Ok(m)
    }

    fn validate_parts(&self, input: &NetInput<'_>, m: usize, with_fp: bool) -> Result<()> {
        if m == 0 {
            return Err(Error::arg("network input has no rows"));
        }
        let a = &self.arch;
        let check = |v: Option<ArrayView2<'_, f64>>, dim: usize, what: &str| -> Result<()> {
            match (v, dim) {
                (None, 0) => Ok(()),
                (Some(v), d) if d > 0 => {
                    check_shape(&v, (m, d), what)?;
                    if v.iter().all(|x| x.is_finite()) {
                        Ok(())
                    } else {
                        Err(Error::arg(format!("{what} contains non-finite values")))
                    }
                }
                (None, d) => Err(Error::arg(format!("{what} missing (expected {d} columns)"))),
                (Some(_), _) => Err(Error::arg(format!("{what} given but the network does not take it"))),
            }
        };
        check(input.pos, a.pos_dim, "position input")?;
        if with_fp {
            check(input.fp, a.fp_dim, "fingerprint input")?;
        }
        match (input.t_norm, a.time_dim) {
            (None, 0) => {}
            (Some(t), d) if d > 0 => {
                if t.len() != m {
                    return Err(Error::arg(format!("time input has {} entries, expected {m}", t.len())));
                }
                if !t.iter().all(|v| v.is_finite()) {
                    return Err(Error::arg("time input contains non-finite values"));
                }
            }
            _ => return Err(Error::arg("time input does not match the network")),
        }
        Ok(())
    }

    fn input_pre(
        &self,
        cond: Option<ArrayView2<'_, f64>>,
        input: &NetInput<'_>,
        m: usize,
    ) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
        let ip = &self.layout.input;
        let p = self.arch.projection_width();
        let mut pre = match (cond, input.fp, ip.w_fp) {
            (Some(c), _, _) => c.to_owned(),
            (None, Some(fp), Some(w)) => fp.dot(&self.params.tensor(w).view2()),
            _ => Array2::zeros((m, p)),
        };
        if let (Some(pos), Some(w)) = (input.pos, ip.w_pos) {
            pre += &pos.dot(&self.params.tensor(w).view2());
        }
        let temb = match (input.t_norm, ip.w_time) {
            (Some(t), Some(w)) => {
                let mut te = Array2::zeros((m, self.arch.time_dim));
                for (row, &tv) in te.rows_mut().into_iter().zip(t) {
                    time_embed_into(tv, row.into_slice().expect("standard layout"));
                }
                pre += &te.dot(&self.params.tensor(w).view2());
                Some(te)
            }
            _ => None,
        };
        pre += &self.params.tensor(ip.b).view1();
        Ok((pre, temb))
    }

    #[allow(clippy::type_complexity)]
    fn body_forward(
        &self,
        in_pre: Array2<f64>,
        mode: Mode,
        mut rng: Option<&mut Rng>,
        keep: bool,
    ) -> Result<(Array2<f64>, Option<(Vec<UnitCache>, Array2<f64>)>, Vec<BnUpdate>)> {
        let act = self.arch.activation;
        let h0 = in_pre.mapv(|x| act.apply(x));
        let mut caches = Vec::new();
        let mut updates = Vec::new();
        let head_in = match &self.layout.body {
            Body::Mlp(blocks) => {
                let mut h = h0;
                for block in blocks {
                    let res = match block.proj {
                        None => h.clone(),
                        Some(p) => h.dot(&self.params.tensor(p).view2()),
                    };
                    let (out, uc) = self.unit_forward(&block.unit, h, mode, rng.as_deref_mut(), &mut updates, keep)?;
                    caches.extend(uc);
                    h = out + res;
                }
                h
            }
            Body::Unet { enc, dec } => {
                let mut skips = vec![h0.clone()];
                let mut h = h0;
                for (j, unit) in enc.iter().enumerate() {
                    let (out, uc) = self.unit_forward(unit, h, mode, rng.as_deref_mut(), &mut updates, keep)?;
                    caches.extend(uc);
                    if j + 1 < enc.len() {
                        skips.push(out.clone());
                    }
                    h = out;
                }
                let n = skips.len();
                for (i, unit) in dec.iter().enumerate() {
                    let (out, uc) = self.unit_forward(unit, h, mode, rng.as_deref_mut(), &mut updates, keep)?;
                    caches.extend(uc);
                    let skip = &skips[n - 1 - i];
                    assert_eq!(out.ncols(), skip.ncols(), "skip width mismatch at decoder level {i}");
                    h = concatenate(Axis(1), &[out.view(), skip.view()]).expect("equal row counts");
                }
                h
            }
        };
        let head = &self.layout.head;
        let mut out = head_in.dot(&self.params.tensor(head.w).view2());
        if let Some(b) = head.b {
            out += &self.params.tensor(b).view1();
        }
        let cache = keep.then_some((caches, head_in));
        Ok((out, cache, updates))
    }

    fn unit_forward(
        &self,
        unit: &Unit,
        input: Array2<f64>,
        mode: Mode,
        rng: Option<&mut Rng>,
        updates: &mut Vec<BnUpdate>,
        keep: bool,
    ) -> Result<(Array2<f64>, Option<UnitCache>)> {
        let ps = &self.params;
        let mut z = input.dot(&ps.tensor(unit.lin.w).view2());
        if let Some(b) = unit.lin.b {
            z += &ps.tensor(b).view1();
        }
        let m = z.nrows();
        let (pre, bn_cache) = match &unit.bn {
            None => (z, None),
            Some(bn) => {
                let gamma = ps.tensor(bn.gamma).view1();
                let beta = ps.tensor(bn.beta).view1();
                let (mean, var) = match mode {
                    Mode::Train => {
                        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                        let var = z.var_axis(Axis(0), 0.0);
                        let unbiased = if m > 1 { &var * (m as f64 / (m as f64 - 1.0)) } else { var.clone() };
                        updates.push(BnUpdate { mean_idx: bn.mean, var_idx: bn.var, mean: mean.clone(), var: unbiased });
                        (mean, var)
                    }
                    Mode::Eval => (ps.tensor(bn.mean).view1().to_owned(), ps.tensor(bn.var).view1().to_owned()),
                };
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xhat = (z - &mean) * &inv_std;
                let pre = &xhat * &gamma + &beta;
                (pre, Some(BnCache { xhat, inv_std }))
            }
        };
        let act = self.arch.activation;
        let mut out = pre.mapv(|x| act.apply(x));
        let p = self.arch.dropout_rate;
        let mask = if mode == Mode::Train && p > 0.0 {
            let rng = rng.ok_or_else(|| Error::arg("training with dropout requires an rng"))?;
            let keep_scale = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_fn(out.dim(), |_| if rng.random::<f64>() < p { 0.0 } else { keep_scale });
            out *= &mask;
            Some(mask)
        } else {
            None
        };
        let cache = keep.then(|| UnitCache { input, pre, bn: bn_cache, mask });
        Ok((out, cache))
    }

    fn unit_backward(&self, unit: &Unit, uc: &UnitCache, mut g: Array2<f64>, grads: &mut ParamSet) -> Array2<f64> {
        if let Some(mask) = &uc.mask {
            g *= mask;
        }
        let act = self.arch.activation;
        Zip::from(&mut g).and(&uc.pre).for_each(|gv, &x| *gv *= act.derivative(x));
        let g_z = match (&unit.bn, &uc.bn) {
            (Some(bn), Some(c)) => {
                grads.tensor_mut(bn.gamma).view1_mut().assign(&(&g * &c.xhat).sum_axis(Axis(0)));
                grads.tensor_mut(bn.beta).view1_mut().assign(&g.sum_axis(Axis(0)));
                let m = g.nrows() as f64;
                let g_xhat = g * &self.params.tensor(bn.gamma).view1();
                let sum_g = g_xhat.sum_axis(Axis(0));
                let sum_gx = (&g_xhat * &c.xhat).sum_axis(Axis(0));
                let scaled = (g_xhat * m - &sum_g) - &(&c.xhat * &sum_gx);
                scaled * &(&c.inv_std / m)
            }
            _ => g,
        };
        grads.tensor_mut(unit.lin.w).view2_mut().assign(&uc.input.t().dot(&g_z));
        if let Some(b) = unit.lin.b {
            grads.tensor_mut(b).view1_mut().assign(&g_z.sum_axis(Axis(0)));
        }
        g_z.dot(&self.params.tensor(unit.lin.w).view2().t())
    }
}
