use rand::Rng;
use serde_json::{json, Map, Value};

use super::layers::{dropout, Act, BatchNorm, BatchNormCache, Conv1d, Mode};
use super::{NormStats, TpnConfig};
use crate::error::{Error, Result};
use crate::skeleton::Vec3;

pub const MODEL_VERSION: &str = "tpn-v1";

/// Convolution followed by batch norm, ReLU and dropout.
#[derive(Debug, Clone, PartialEq)]
struct Unit {
    conv: Conv1d,
    bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct UnitCache {
    input: Act,
    bn: BatchNormCache,
    pre_relu: Act,
    mask: Option<Vec<f64>>,
}

impl Unit {
    fn new(cfg: &TpnConfig, c_in: usize, kernel: usize, dilation: usize) -> Self {
        let mut bn = BatchNorm::new(cfg.channels);
        bn.momentum = cfg.bn_momentum;
        bn.eps = cfg.bn_eps;
        Unit {
            conv: Conv1d::new(c_in, cfg.channels, kernel, dilation, false),
            bn,
        }
    }

    fn forward_eval(&self, x: &Act) -> Result<Act> {
        let mut y = self.bn.forward_eval(&self.conv.forward(x)?);
        y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(y)
    }

    fn forward_train<R: Rng>(&mut self, x: Act, p: f64, rng: &mut R) -> Result<(Act, UnitCache)> {
        let z = self.conv.forward(&x)?;
        let (pre_relu, bn) = self.bn.forward_train(&z)?;
        let mut r = pre_relu.clone();
        r.data.iter_mut().for_each(|v| *v = v.max(0.0));
        let (out, mask) = dropout(&r, p, rng, Mode::Train)?;
        Ok((
            out,
            UnitCache {
                input: x,
                bn,
                pre_relu,
                mask,
            },
        ))
    }

    /// `grads` holds `[conv weight, bn scale, bn shift]`.
    fn backward(&self, cache: &UnitCache, mut dy: Act, grads: &mut [Vec<f64>]) -> Act {
        if let Some(mask) = &cache.mask {
            dy.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        dy.data
            .iter_mut()
            .zip(&cache.pre_relu.data)
            .for_each(|(g, &y)| {
                if y <= 0.0 {
                    *g = 0.0
                }
            });
        let (gw, rest) = grads.split_at_mut(1);
        let (gs, gb) = rest.split_at_mut(1);
        let dz = self.bn.backward(&cache.bn, &dy, &mut gs[0], &mut gb[0]);
        self.conv.backward(&cache.input, &dz, &mut gw[0], None)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    dilated: Unit,
    pointwise: Unit,
}

/// Activations recorded by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stem: UnitCache,
    blocks: Vec<(UnitCache, UnitCache, usize)>,
    head_input: Act,
}

/// Parameter gradients in the order of [`TpnModel::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpnModel {
    pub config: TpnConfig,
    pub norm: NormStats,
    stem: Unit,
    blocks: Vec<Block>,
    head: Conv1d,
}

impl TpnModel {
    /// Model with zero weights and identity normalization.
    pub fn zeros(config: TpnConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let stem = Unit::new(&config, config.input_dim(), 3, 1);
        let blocks = config
            .dilations
            .iter()
            .map(|&d| Block {
                dilated: Unit::new(&config, c, 3, d),
                pointwise: Unit::new(&config, c, 1, 1),
            })
            .collect();
        let head = Conv1d::new(c, config.output_dim(), 1, 1, true);
        Ok(TpnModel {
            norm: NormStats::identity(config.input_dim(), config.output_dim()),
            config,
            stem,
            blocks,
            head,
        })
    }

    pub fn new<R: Rng>(config: TpnConfig, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        m.stem.conv.init(rng);
        for b in &mut m.blocks {
            b.dilated.conv.init(rng);
            b.pointwise.conv.init(rng);
        }
        m.head.init(rng);
        Ok(m)
    }

    fn units(&self) -> impl Iterator<Item = &Unit> {
        std::iter::once(&self.stem)
            .chain(self.blocks.iter().flat_map(|b| [&b.dilated, &b.pointwise]))
    }

    fn units_mut(&mut self) -> impl Iterator<Item = &mut Unit> {
        std::iter::once(&mut self.stem).chain(
            self.blocks
                .iter_mut()
                .flat_map(|b| [&mut b.dilated, &mut b.pointwise]),
        )
    }

    /// Trainable tensors: for every conv unit its weight, BN scale and BN
    /// shift, then the head weight and bias.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for u in self.units() {
            out.push(&u.conv.weight);
            out.push(&u.bn.scale);
            out.push(&u.bn.shift);
        }
        out.push(&self.head.weight);
        out.push(self.head.bias.as_deref().expect("head has bias"));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let TpnModel {
            stem, blocks, head, ..
        } = self;
        for u in std::iter::once(stem).chain(
            blocks
                .iter_mut()
                .flat_map(|b| [&mut b.dilated, &mut b.pointwise]),
        ) {
            out.push(&mut u.conv.weight);
            out.push(&mut u.bn.scale);
            out.push(&mut u.bn.shift);
        }
        out.push(&mut head.weight);
        out.push(head.bias.as_deref_mut().expect("head has bias"));
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            tensors: self
                .parameters()
                .iter()
                .map(|p| vec![0.0; p.len()])
                .collect(),
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
            && self.units().all(|u| {
                u.bn.running_mean
                    .iter()
                    .chain(&u.bn.running_var)
                    .all(|v| v.is_finite())
            })
    }

    fn standardize_input(&self, x: &Act) -> Result<Act> {
        if x.c != self.config.input_dim() {
            return Err(Error::shape(format!(
                "expected {} input channels, got {}",
                self.config.input_dim(),
                x.c
            )));
        }
        if x.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let mut out = x.clone();
        for n in 0..x.n {
            for c in 0..x.c {
                let (m, s) = (self.norm.input_mean[c], self.norm.input_std[c]);
                out.row_mut(n, c).iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        Ok(out)
    }

    fn destandardize_output(&self, mut y: Act) -> Act {
        for n in 0..y.n {
            for c in 0..y.c {
                let (m, s) = (self.norm.output_mean[c], self.norm.output_std[c]);
                y.row_mut(n, c).iter_mut().for_each(|v| *v = *v * s + m);
            }
        }
        y
    }

    /// Eval-mode forward over `[n][2J][T]` raw normalized coordinates.
    /// Returns `[n][output_dim][T - receptive_field + 1]` in mm.
    pub fn forward(&self, x: &Act) -> Result<Act> {
        let mut h = self.stem.forward_eval(&self.standardize_input(x)?)?;
        for b in &self.blocks {
            let inner = b.pointwise.forward_eval(&b.dilated.forward_eval(&h)?)?;
            let mut res = h.center_crop(inner.t);
            res.data
                .iter_mut()
                .zip(&inner.data)
                .for_each(|(r, v)| *r += v);
            h = res;
        }
        Ok(self.destandardize_output(self.head.forward(&h)?))
    }

    /// Train-mode forward: batch statistics, dropout, running-stat updates.
    pub fn forward_train<R: Rng>(&mut self, x: &Act, rng: &mut R) -> Result<(Act, ForwardCache)> {
        let p = self.config.dropout;
        let input = self.standardize_input(x)?;
        let (mut h, stem) = self.stem.forward_train(input, p, rng)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (a, ca) = b.dilated.forward_train(h.clone(), p, rng)?;
            let (inner, cb) = b.pointwise.forward_train(a, p, rng)?;
            let t_in = h.t;
            let mut res = h.center_crop(inner.t);
            res.data
                .iter_mut()
                .zip(&inner.data)
                .for_each(|(r, v)| *r += v);
            caches.push((ca, cb, t_in));
            h = res;
        }
        let out = self.head.forward(&h)?;
        Ok((
            self.destandardize_output(out),
            ForwardCache {
                stem,
                blocks: caches,
                head_input: h,
            },
        ))
    }

    /// Reverse pass for a train-mode forward. `d_out` is the gradient with
    /// respect to the de-standardized output. Returns parameter gradients and
    /// the gradient with respect to the raw input.
    pub fn backward(&self, cache: &ForwardCache, d_out: &Act) -> (Gradients, Act) {
        let mut grads = self.zero_gradients();
        let n_tensors = grads.tensors.len();
        let mut d = d_out.clone();
        for nn in 0..d.n {
            for c in 0..d.c {
                let s = self.norm.output_std[c];
                d.row_mut(nn, c).iter_mut().for_each(|v| *v *= s);
            }
        }
        let (head_w, head_b) = grads.tensors[n_tensors - 2..].split_at_mut(1);
        let mut dh =
            self.head
                .backward(&cache.head_input, &d, &mut head_w[0], Some(&mut head_b[0]));

        for (bi, (b, (ca, cb, t_in))) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let base = 3 + bi * 6;
            let mut dx = Act::zeros(dh.n, dh.c, *t_in);
            let off = (t_in - dh.t) / 2;
            for nn in 0..dh.n {
                for c in 0..dh.c {
                    dx.row_mut(nn, c)[off..off + dh.t].copy_from_slice(dh.row(nn, c));
                }
            }
            let da = b
                .pointwise
                .backward(cb, dh, &mut grads.tensors[base + 3..base + 6]);
            let dxa = b
                .dilated
                .backward(ca, da, &mut grads.tensors[base..base + 3]);
            dx.data.iter_mut().zip(&dxa.data).for_each(|(a, v)| *a += v);
            dh = dx;
        }
        let mut dx = self
            .stem
            .backward(&cache.stem, dh, &mut grads.tensors[0..3]);
        for nn in 0..dx.n {
            for c in 0..dx.c {
                let s = self.norm.input_std[c];
                dx.row_mut(nn, c).iter_mut().for_each(|v| *v /= s);
            }
        }
        (grads, dx)
    }

    /// Runs one window of `2w+1` frames, each `2J` normalized coordinates,
    /// and returns the location and the `J`-row relative pose (zero root row).
    pub fn forward_window(&self, window: &[Vec<f64>], mode: Mode) -> Result<(Vec3, Vec<Vec3>)> {
        let len = self.config.window_len();
        if window.len() != len {
            return Err(Error::shape(format!(
                "window has {} frames, expected {len}",
                window.len()
            )));
        }
        let x = window_to_act(
            std::slice::from_ref(&window.to_vec()),
            self.config.input_dim(),
        )?;
        let y = match mode {
            Mode::Eval => self.forward(&x)?,
            Mode::Train => {
                return Err(Error::invalid(
                    "a single window cannot be normalized with batch statistics",
                ))
            }
        };
        let out: Vec<f64> = (0..y.c).map(|c| y.row(0, c)[0]).collect();
        Ok(split_output(&out, self.config.root_index))
    }

    /// Serializes to the `tpn-v1` JSON document.
    pub fn to_json(&self) -> Value {
        let mut tensors = Map::new();
        let mut bns = Map::new();
        let names = self.unit_names();
        for (name, u) in names.iter().zip(self.units()) {
            let c = &u.conv;
            tensors.insert(
                format!("{name}.weight"),
                tensor_json(&[c.c_out, c.c_in, c.kernel], &c.weight),
            );
            bns.insert(
                name.clone(),
                json!({
                    "scale": u.bn.scale,
                    "shift": u.bn.shift,
                    "running_mean": u.bn.running_mean,
                    "running_var": u.bn.running_var,
                }),
            );
        }
        let h = &self.head;
        tensors.insert(
            "head.weight".into(),
            tensor_json(&[h.c_out, h.c_in, h.kernel], &h.weight),
        );
        tensors.insert(
            "head.bias".into(),
            tensor_json(&[h.c_out], h.bias.as_deref().expect("head has bias")),
        );
        json!({
            "version": MODEL_VERSION,
            "config": self.config,
            "norm": self.norm,
            "tensors": tensors,
            "batchnorm": bns,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let version = v.get("version").and_then(Value::as_str).unwrap_or_default();
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version:?}"
            )));
        }
        let config: TpnConfig = serde_json::from_value(field(v, "config")?.clone())?;
        let mut m = TpnModel::zeros(config)?;
        m.norm = serde_json::from_value(field(v, "norm")?.clone())?;
        m.norm
            .validate(m.config.input_dim(), m.config.output_dim())?;
        let tensors = field(v, "tensors")?;
        let bns = field(v, "batchnorm")?;
        let names = m.unit_names();
        for (name, u) in names.iter().zip(m.units_mut()) {
            let shape = [u.conv.c_out, u.conv.c_in, u.conv.kernel];
            u.conv.weight = read_tensor(field(tensors, &format!("{name}.weight"))?, &shape)?;
            let bn = field(bns, name)?;
            let c = u.bn.channels();
            for (key, dst) in [
                ("scale", &mut u.bn.scale),
                ("shift", &mut u.bn.shift),
                ("running_mean", &mut u.bn.running_mean),
                ("running_var", &mut u.bn.running_var),
            ] {
                *dst = read_tensor(field(bn, key)?, &[c])?;
            }
            if u.bn.running_var.iter().any(|v| *v < 0.0) {
                return Err(Error::Format(format!("{name}: negative running variance")));
            }
        }
        let shape = [m.head.c_out, m.head.c_in, m.head.kernel];
        m.head.weight = read_tensor(field(tensors, "head.weight")?, &shape)?;
        m.head.bias = Some(read_tensor(field(tensors, "head.bias")?, &[m.head.c_out])?);
        if !m.is_finite() {
            return Err(Error::Format("model contains non-finite parameters".into()));
        }
        Ok(m)
    }

    fn unit_names(&self) -> Vec<String> {
        let mut names = vec!["stem".to_string()];
        for i in 0..self.blocks.len() {
            names.push(format!("block{i}.dilated"));
            names.push(format!("block{i}.pointwise"));
        }
        names
    }
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::Format(format!("missing field {key:?}")))
}

fn nest(shape: &[usize], data: &[f64]) -> Value {
    match shape {
        [] => json!(data[0]),
        [_] => json!(data),
        [first, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array(
                (0..*first)
                    .map(|i| nest(rest, &data[i * stride..(i + 1) * stride]))
                    .collect(),
            )
        }
    }
}

fn tensor_json(shape: &[usize], data: &[f64]) -> Value {
    json!({ "shape": shape, "values": nest(shape, data) })
}

fn flatten_into(v: &Value, out: &mut Vec<f64>) -> Result<()> {
    match v {
        Value::Array(items) => items.iter().try_for_each(|i| flatten_into(i, out)),
        Value::Number(n) => {
            out.push(
                n.as_f64()
                    .ok_or_else(|| Error::Format("bad number".into()))?,
            );
            Ok(())
        }
        _ => Err(Error::Format("tensor values must be numbers".into())),
    }
}

/// Accepts either a `{shape, values}` tensor or a bare (nested) array.
fn read_tensor(v: &Value, shape: &[usize]) -> Result<Vec<f64>> {
    let values = if let Some(s) = v.get("shape") {
        let declared: Vec<usize> = serde_json::from_value(s.clone())?;
        if declared != shape {
            return Err(Error::Format(format!(
                "tensor shape {declared:?}, expected {shape:?}"
            )));
        }
        field(v, "values")?
    } else {
        v
    };
    let mut out = Vec::with_capacity(shape.iter().product());
    flatten_into(values, &mut out)?;
    if out.len() != shape.iter().product::<usize>() {
        return Err(Error::Format(format!(
            "tensor has {} values, expected shape {shape:?}",
            out.len()
        )));
    }
    Ok(out)
}

/// Packs frame-major windows (`[n][t][dim]`) into a channel-major batch.
pub(crate) fn window_to_act(windows: &[Vec<Vec<f64>>], dim: usize) -> Result<Act> {
    let n = windows.len();
    let t = windows.first().map_or(0, Vec::len);
    let mut act = Act::zeros(n, dim, t);
    for (i, w) in windows.iter().enumerate() {
        if w.len() != t {
            return Err(Error::shape("windows of different lengths in one batch"));
        }
        for (ti, frame) in w.iter().enumerate() {
            if frame.len() != dim {
                return Err(Error::shape(format!(
                    "frame has {} values, expected {dim}",
                    frame.len()
                )));
            }
            for (c, &v) in frame.iter().enumerate() {
                act.data[(i * dim + c) * t + ti] = v;
            }
        }
    }
    Ok(act)
}

/// `[location; relative without root]` to location plus a `J`-row relative pose.
pub(crate) fn split_output(out: &[f64], root_index: usize) -> (Vec3, Vec<Vec3>) {
    let pose = crate::skeleton::Pose3D::from_parts([out[0], out[1], out[2]], &out[3..], root_index);
    (pose.location, pose.relative)
}
