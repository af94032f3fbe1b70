//! Layer graph shared by both autoencoders: a strided convolutional encoder,
//! a fully connected bottleneck and a transposed-convolution decoder.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{ParamSet, Tensor};
use super::tensor::{col2im, gemm, im2col, Act, Geom, MatRef, Real};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Position of the normalization relative to the activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerOrder {
    /// conv → batch norm → ReLU
    #[default]
    NormThenRelu,
    /// conv → ReLU → batch norm
    ReluThenNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Softmax over rows, independently for every column.
    ColumnSoftmax,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Conv {
        geom: Geom,
        cin: usize,
        cout: usize,
        w: usize,
        b: usize,
    },
    /// `adj` is the geometry of the forward convolution this layer is the
    /// transpose of: it maps the output size back to the input size.
    ConvT {
        adj: Geom,
        cin: usize,
        cout: usize,
        w: usize,
        b: usize,
    },
    Linear {
        fin: usize,
        fout: usize,
        w: usize,
        b: usize,
    },
    BatchNorm {
        c: usize,
        gamma: usize,
        beta: usize,
        mean: usize,
        var: usize,
    },
    Relu,
    Flatten,
    Unflatten {
        c: usize,
        h: usize,
        w: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// `U(-1/√fan_in, 1/√fan_in)`
    FanIn(f64),
    Const(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

/// Activation shape after one layer, for `describe` and shape tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerShape {
    pub layer: String,
    /// `[channels, height, width]` per sample.
    pub shape: [usize; 3],
}

/// A fully specified network: layer sequence, parameter slots and head.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    ops: Vec<Op>,
    head: Head,
    input: [usize; 3],
    params: Vec<Slot>,
    buffers: Vec<Slot>,
    shapes: Vec<LayerShape>,
}

/// Geometry of one down- or up-sampling stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Default for StageGeom {
    fn default() -> Self {
        Self {
            kernel: 5,
            stride: 2,
            padding: 2,
        }
    }
}

/// Declarative description the two model configs lower to.
#[derive(Debug, Clone, PartialEq)]
pub struct AeLayout {
    /// `[channels, height, width]`; height 1 for 1-D models.
    pub input: [usize; 3],
    pub channels: Vec<usize>,
    pub stage: StageGeom,
    pub embedding: usize,
    pub order: LayerOrder,
    pub bottleneck_relu: bool,
    pub head: Head,
}

struct Builder {
    ops: Vec<Op>,
    params: Vec<Slot>,
    buffers: Vec<Slot>,
    shapes: Vec<LayerShape>,
    cur: [usize; 3],
}

impl Builder {
    fn param(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.params.push(Slot { name, shape, init });
        self.params.len() - 1
    }

    fn buffer(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.buffers.push(Slot { name, shape, init });
        self.buffers.len() - 1
    }

    fn record(&mut self, layer: &str) {
        self.shapes.push(LayerShape {
            layer: layer.to_string(),
            shape: self.cur,
        });
    }

    fn conv(&mut self, name: &str, cout: usize, g: StageGeom, one_d: bool) {
        let [cin, h, w] = self.cur;
        let (kh, sh, ph) = if one_d { (1, 1, 0) } else { (g.kernel, g.stride, g.padding) };
        let geom = Geom {
            h,
            w,
            kh,
            kw: g.kernel,
            sh,
            sw: g.stride,
            ph,
            pw: g.padding,
        };
        let fan_in = (cin * kh * g.kernel) as f64;
        let wi = self.param(
            format!("{name}.weight"),
            vec![cout, cin, kh, g.kernel],
            Init::FanIn(fan_in),
        );
        let bi = self.param(format!("{name}.bias"), vec![cout], Init::FanIn(fan_in));
        self.ops.push(Op::Conv {
            geom,
            cin,
            cout,
            w: wi,
            b: bi,
        });
        self.cur = [cout, geom.out_h(), geom.out_w()];
        self.record(name);
    }

    /// Transposed convolution that doubles every strided dimension
    /// (one extra row/column of output padding).
    fn conv_t(&mut self, name: &str, cout: usize, g: StageGeom, one_d: bool) {
        let [cin, h, w] = self.cur;
        let (kh, sh, ph) = if one_d { (1, 1, 0) } else { (g.kernel, g.stride, g.padding) };
        let out_pad = g.stride - 1;
        let up = |n: usize, k: usize, s: usize, p: usize, op: usize| (n - 1) * s + k + op - 2 * p;
        let oh = if one_d { h } else { up(h, kh, sh, ph, out_pad) };
        let ow = up(w, g.kernel, g.stride, g.padding, out_pad);
        let adj = Geom {
            h: oh,
            w: ow,
            kh,
            kw: g.kernel,
            sh,
            sw: g.stride,
            ph,
            pw: g.padding,
        };
        debug_assert_eq!((adj.out_h(), adj.out_w()), (h, w));
        // each output pixel sees about cin·k²/s² inputs
        let fan_in = (cin * kh * g.kernel) as f64 / (sh * g.stride) as f64;
        let wi = self.param(
            format!("{name}.weight"),
            vec![cin, cout, kh, g.kernel],
            Init::FanIn(fan_in),
        );
        let bi = self.param(format!("{name}.bias"), vec![cout], Init::FanIn(fan_in));
        self.ops.push(Op::ConvT {
            adj,
            cin,
            cout,
            w: wi,
            b: bi,
        });
        self.cur = [cout, oh, ow];
        self.record(name);
    }

    fn linear(&mut self, name: &str, fout: usize) {
        let fin = self.cur.iter().product::<usize>();
        let wi = self.param(format!("{name}.weight"), vec![fout, fin], Init::FanIn(fin as f64));
        let bi = self.param(format!("{name}.bias"), vec![fout], Init::FanIn(fin as f64));
        self.ops.push(Op::Linear {
            fin,
            fout,
            w: wi,
            b: bi,
        });
        self.cur = [fout, 1, 1];
        self.record(name);
    }

    fn batch_norm(&mut self, name: &str) {
        let c = self.cur[0];
        let gamma = self.param(format!("{name}.gamma"), vec![c], Init::Const(1.0));
        let beta = self.param(format!("{name}.beta"), vec![c], Init::Const(0.0));
        let mean = self.buffer(format!("{name}.running_mean"), vec![c], Init::Const(0.0));
        let var = self.buffer(format!("{name}.running_var"), vec![c], Init::Const(1.0));
        self.ops.push(Op::BatchNorm {
            c,
            gamma,
            beta,
            mean,
            var,
        });
    }

    fn relu(&mut self) {
        self.ops.push(Op::Relu);
    }

    fn norm_act(&mut self, name: &str, order: LayerOrder) {
        match order {
            LayerOrder::NormThenRelu => {
                self.batch_norm(name);
                self.relu();
            }
            LayerOrder::ReluThenNorm => {
                self.relu();
                self.batch_norm(name);
            }
        }
    }
}

impl Architecture {
    pub fn build(layout: &AeLayout) -> Result<Self> {
        let [c0, h0, w0] = layout.input;
        let one_d = h0 == 1;
        let g = layout.stage;
        if layout.channels.is_empty() {
            return Err(Error::param("channels", "at least one stage"));
        }
        if g.stride < 1 || g.kernel < 1 || 2 * g.padding >= g.kernel + g.stride {
            return Err(Error::param("stage", "inconsistent kernel/stride/padding"));
        }
        let down = g.stride.pow(layout.channels.len() as u32);
        if w0 % down != 0 || (!one_d && h0 % down != 0) {
            return Err(Error::param(
                "input",
                format!("spatial size must be divisible by {down}"),
            ));
        }
        if layout.embedding == 0 || layout.embedding >= c0 * h0 * w0 {
            return Err(Error::param(
                "embedding",
                "must be positive and smaller than the input (undercomplete)",
            ));
        }
        let mut b = Builder {
            ops: Vec::new(),
            params: Vec::new(),
            buffers: Vec::new(),
            shapes: Vec::new(),
            cur: layout.input,
        };
        b.record("input");
        for (i, &ch) in layout.channels.iter().enumerate() {
            let name = format!("enc.{i}");
            b.conv(&name, ch, g, one_d);
            b.norm_act(&format!("{name}.bn"), layout.order);
        }
        let bottleneck = b.cur;
        b.ops.push(Op::Flatten);
        b.linear("enc.fc", layout.embedding);
        if layout.bottleneck_relu {
            b.relu();
        }
        b.linear("dec.fc", bottleneck.iter().product());
        b.ops.push(Op::Unflatten {
            c: bottleneck[0],
            h: bottleneck[1],
            w: bottleneck[2],
        });
        b.cur = bottleneck;
        b.record("dec.unflatten");
        b.norm_act("dec.fc.bn", layout.order);
        let n = layout.channels.len();
        for i in (0..n).rev() {
            let name = format!("dec.{}", n - 1 - i);
            let cout = if i == 0 { c0 } else { layout.channels[i - 1] };
            b.conv_t(&name, cout, g, one_d);
            if i > 0 {
                b.norm_act(&format!("{name}.bn"), layout.order);
            }
        }
        if b.cur != layout.input {
            return Err(Error::param("layout", "decoder does not mirror the encoder"));
        }
        Ok(Self {
            ops: b.ops,
            head: layout.head,
            input: layout.input,
            params: b.params,
            buffers: b.buffers,
            shapes: b.shapes,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn head(&self) -> Head {
        self.head
    }

    /// Per-sample activation shape after every weighted layer.
    pub fn layer_shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }

    pub fn param_names(&self) -> Vec<(String, Vec<usize>)> {
        self.params
            .iter()
            .chain(&self.buffers)
            .map(|s| (s.name.clone(), s.shape.clone()))
            .collect()
    }

    /// Weights and biases uniform in `±1/√fan_in`; normalization scale 1,
    /// shift 0, running statistics (0, 1).
    pub fn init_params<T: Real>(&self, rng: &mut Rng) -> ParamSet<T> {
        let make = |slot: &Slot, rng: &mut Rng| {
            let len: usize = slot.shape.iter().product();
            let data = match slot.init {
                Init::Const(v) => vec![T::of(v); len],
                Init::FanIn(fan) => {
                    let bound = 1.0 / fan.sqrt();
                    (0..len)
                        .map(|_| T::of(rng.random_range(-bound..bound)))
                        .collect()
                }
            };
            Tensor {
                name: slot.name.clone(),
                shape: slot.shape.clone(),
                data,
            }
        };
        ParamSet {
            params: self.params.iter().map(|s| make(s, rng)).collect(),
            buffers: self.buffers.iter().map(|s| make(s, rng)).collect(),
        }
    }

    /// Checks that `params` has exactly the declared names and shapes.
    pub fn check_params<T: Real>(&self, params: &ParamSet<T>) -> Result<()> {
        let same = |slots: &[Slot], ts: &[Tensor<T>]| {
            slots.len() == ts.len()
                && slots.iter().zip(ts).all(|(s, t)| {
                    s.name == t.name && s.shape == t.shape && t.data.len() == s.shape.iter().product::<usize>()
                })
        };
        if !same(&self.params, &params.params) || !same(&self.buffers, &params.buffers) {
            return Err(Error::Checkpoint(
                "parameter layout does not match the architecture".into(),
            ));
        }
        Ok(())
    }

    fn check_input<T: Real>(&self, x: &Act<T>) -> Result<()> {
        if [x.c, x.h, x.w] != self.input || x.data.len() != x.c * x.n * x.h * x.w {
            return Err(Error::mismatch(
                format!("{:?}", self.input),
                format!("{:?}", [x.c, x.h, x.w]),
            ));
        }
        Ok(())
    }

    /// Inference-mode forward pass (normalization uses running statistics).
    pub fn forward<T: Real>(&self, params: &ParamSet<T>, x: &Act<T>) -> Result<Act<T>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for op in &self.ops {
            a = match op {
                Op::BatchNorm {
                    c,
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let m = a.data.len() / c;
                    let (g, bt) = (&params.params[*gamma].data, &params.params[*beta].data);
                    let (rm, rv) = (&params.buffers[*mean].data, &params.buffers[*var].data);
                    for ch in 0..*c {
                        let inv = T::one() / (rv[ch] + T::of(BN_EPS)).sqrt();
                        let scale = g[ch] * inv;
                        let shift = bt[ch] - rm[ch] * scale;
                        for v in &mut a.data[ch * m..(ch + 1) * m] {
                            *v = *v * scale + shift;
                        }
                    }
                    a
                }
                _ => forward_stateless(op, params, a, None),
            };
        }
        Ok(apply_head(self.head, a))
    }

    /// Training-mode forward pass. Normalization uses batch statistics and
    /// updates the running averages in `params`.
    pub fn forward_train<T: Real>(
        &self,
        params: &mut ParamSet<T>,
        x: &Act<T>,
    ) -> Result<(Act<T>, Tape<T>)> {
        self.check_input(x)?;
        if x.n < 2 && self.ops.iter().any(|o| matches!(o, Op::BatchNorm { .. })) {
            return Err(Error::param("batch", "training needs at least 2 examples"));
        }
        let mut caches = Vec::with_capacity(self.ops.len());
        let mut a = x.clone();
        for op in &self.ops {
            a = match op {
                Op::BatchNorm {
                    c,
                    gamma,
                    beta,
                    mean,
                    var,
                } => {
                    let m = a.data.len() / c;
                    let mut xhat = vec![T::zero(); a.data.len()];
                    let mut inv_std = vec![T::zero(); *c];
                    for ch in 0..*c {
                        let xs = &mut a.data[ch * m..(ch + 1) * m];
                        let mu = xs.iter().map(|v| v.as_f64()).sum::<f64>() / m as f64;
                        let var_b =
                            xs.iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>() / m as f64;
                        let inv = 1.0 / (var_b + BN_EPS).sqrt();
                        inv_std[ch] = T::of(inv);
                        let (g, bt) = (params.params[*gamma].data[ch], params.params[*beta].data[ch]);
                        for (v, xh) in xs.iter_mut().zip(&mut xhat[ch * m..(ch + 1) * m]) {
                            *xh = T::of((v.as_f64() - mu) * inv);
                            *v = g * *xh + bt;
                        }
                        let rm = &mut params.buffers[*mean].data[ch];
                        *rm = T::of((1.0 - BN_MOMENTUM) * rm.as_f64() + BN_MOMENTUM * mu);
                        let unbiased = if m > 1 { var_b * m as f64 / (m - 1) as f64 } else { var_b };
                        let rv = &mut params.buffers[*var].data[ch];
                        *rv = T::of((1.0 - BN_MOMENTUM) * rv.as_f64() + BN_MOMENTUM * unbiased);
                    }
                    caches.push(Cache::Bn { xhat, inv_std });
                    a
                }
                _ => {
                    let mut cache = Cache::None;
                    let out = forward_stateless(op, params, a, Some(&mut cache));
                    caches.push(cache);
                    out
                }
            };
        }
        let out = apply_head(self.head, a);
        Ok((
            out.clone(),
            Tape {
                caches,
                output: out,
            },
        ))
    }

    /// Gradients of a loss with respect to every parameter, given the
    /// loss gradient with respect to the network output.
    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        tape: &Tape<T>,
        grad_output: &Act<T>,
    ) -> Result<(ParamSet<T>, Act<T>)> {
        if grad_output.shape() != tape.output.shape() {
            return Err(Error::mismatch(
                format!("{:?}", tape.output.shape()),
                format!("{:?}", grad_output.shape()),
            ));
        }
        let mut grads = params.zeros_like();
        let mut g = head_backward(self.head, &tape.output, grad_output);
        for (op, cache) in self.ops.iter().zip(&tape.caches).rev() {
            g = backward_op(op, cache, params, &mut grads, g);
        }
        Ok((grads, g))
    }
}

/// Intermediate values kept by [`Architecture::forward_train`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
    pub output: Act<T>,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    None,
    Input(Act<T>),
    Bn { xhat: Vec<T>, inv_std: Vec<T> },
    Relu(Vec<bool>),
    Shape([usize; 3]),
}

fn forward_stateless<T: Real>(
    op: &Op,
    params: &ParamSet<T>,
    x: Act<T>,
    cache: Option<&mut Cache<T>>,
) -> Act<T> {
    let p = |i: usize| params.params[i].data.as_slice();
    match op {
        Op::Conv {
            geom,
            cin,
            cout,
            w,
            b,
        } => {
            let y = conv_forward(&x, geom, *cin, *cout, p(*w), p(*b));
            if let Some(c) = cache {
                *c = Cache::Input(x);
            }
            y
        }
        Op::ConvT {
            adj,
            cin,
            cout,
            w,
            b,
        } => {
            let y = conv_t_forward(&x, adj, *cin, *cout, p(*w), p(*b));
            if let Some(c) = cache {
                *c = Cache::Input(x);
            }
            y
        }
        Op::Linear { fin, fout, w, b } => {
            let mut y = Act::zeros(*fout, x.n, 1, 1);
            let wm = MatRef::dense(p(*w), *fout, *fin);
            let xm = MatRef::dense(&x.data, *fin, x.n);
            gemm(T::one(), wm, xm, T::zero(), &mut y.data, 0, x.n, 1);
            let bias = p(*b);
            for (o, row) in y.data.chunks_mut(x.n).enumerate() {
                for v in row {
                    *v += bias[o];
                }
            }
            if let Some(c) = cache {
                *c = Cache::Input(x);
            }
            y
        }
        Op::Relu => {
            let mut y = x;
            let mut mask = Vec::new();
            let keep = cache.is_some();
            if keep {
                mask.reserve(y.data.len());
            }
            for v in &mut y.data {
                let on = *v > T::zero();
                if !on {
                    *v = T::zero();
                }
                if keep {
                    mask.push(on);
                }
            }
            if let Some(c) = cache {
                *c = Cache::Relu(mask);
            }
            y
        }
        Op::Flatten => {
            if let Some(c) = cache {
                *c = Cache::Shape([x.c, x.h, x.w]);
            }
            x.flatten()
        }
        Op::Unflatten { c, h, w } => x.unflatten(*c, *h, *w),
        Op::BatchNorm { .. } => unreachable!("batch norm is handled by the caller"),
    }
}

fn conv_forward<T: Real>(x: &Act<T>, g: &Geom, cin: usize, cout: usize, w: &[T], b: &[T]) -> Act<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (si, so, n) = (g.h * g.w, oh * ow, x.n);
    let k = cin * g.patch();
    let mut y = Act::zeros(cout, n, oh, ow);
    let mut cols = vec![T::zero(); k * so];
    let wm = MatRef::dense(w, cout, k);
    for s in 0..n {
        im2col(&x.data, x.plane(0, s), n * si, cin, g, &mut cols);
        let plane = y.plane(0, s);
        gemm(T::one(), wm, MatRef::dense(&cols, k, so), T::zero(), &mut y.data, plane, n * so, 1);
    }
    for (co, chunk) in y.data.chunks_mut(n * so).enumerate() {
        for v in chunk {
            *v += b[co];
        }
    }
    y
}

fn conv_t_forward<T: Real>(
    x: &Act<T>,
    adj: &Geom,
    cin: usize,
    cout: usize,
    w: &[T],
    b: &[T],
) -> Act<T> {
    let (si, so, n) = (x.spatial(), adj.h * adj.w, x.n);
    let k = cout * adj.patch();
    let mut y = Act::zeros(cout, n, adj.h, adj.w);
    let mut cols = vec![T::zero(); k * si];
    let wm = MatRef::dense(w, cin, k);
    for s in 0..n {
        let xs = MatRef {
            data: &x.data,
            offset: x.plane(0, s),
            rows: cin,
            cols: si,
            rs: n * si,
            cs: 1,
        };
        gemm(T::one(), wm.t(), xs, T::zero(), &mut cols, 0, si, 1);
        let plane = y.plane(0, s);
        col2im(&cols, cout, adj, &mut y.data, plane, n * so);
    }
    for (co, chunk) in y.data.chunks_mut(n * so).enumerate() {
        for v in chunk {
            *v += b[co];
        }
    }
    y
}

fn apply_head<T: Real>(head: Head, mut a: Act<T>) -> Act<T> {
    if head == Head::ColumnSoftmax {
        let (h, w) = (a.h, a.w);
        for plane in a.data.chunks_mut(h * w) {
            for col in 0..w {
                let mut mx = T::neg_infinity();
                for r in 0..h {
                    mx = mx.max(plane[r * w + col]);
                }
                let mut z = T::zero();
                for r in 0..h {
                    let e = (plane[r * w + col] - mx).exp();
                    plane[r * w + col] = e;
                    z += e;
                }
                for r in 0..h {
                    plane[r * w + col] = plane[r * w + col] / z;
                }
            }
        }
    }
    a
}

fn head_backward<T: Real>(head: Head, out: &Act<T>, g: &Act<T>) -> Act<T> {
    match head {
        Head::Identity => g.clone(),
        Head::ColumnSoftmax => {
            let (h, w) = (out.h, out.w);
            let mut dz = g.clone();
            for (q, d) in out.data.chunks(h * w).zip(dz.data.chunks_mut(h * w)) {
                for col in 0..w {
                    let dot: T = (0..h).map(|r| q[r * w + col] * d[r * w + col]).sum();
                    for r in 0..h {
                        let i = r * w + col;
                        d[i] = q[i] * (d[i] - dot);
                    }
                }
            }
            dz
        }
    }
}

fn backward_op<T: Real>(
    op: &Op,
    cache: &Cache<T>,
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    gy: Act<T>,
) -> Act<T> {
    let p = |i: usize| params.params[i].data.as_slice();
    match (op, cache) {
        (
            Op::Conv {
                geom,
                cin,
                cout,
                w,
                b,
            },
            Cache::Input(x),
        ) => {
            let g = geom;
            let (so, si, n) = (gy.spatial(), g.h * g.w, x.n);
            let k = cin * g.patch();
            for (co, chunk) in gy.data.chunks(n * so).enumerate() {
                grads.params[*b].data[co] += chunk.iter().copied().sum::<T>();
            }
            let mut dx = Act::zeros(*cin, n, g.h, g.w);
            let mut cols = vec![T::zero(); k * so];
            let mut dcols = vec![T::zero(); k * so];
            let wm = MatRef::dense(p(*w), *cout, k);
            for s in 0..n {
                im2col(&x.data, x.plane(0, s), n * si, *cin, g, &mut cols);
                let gys = MatRef {
                    data: &gy.data,
                    offset: gy.plane(0, s),
                    rows: *cout,
                    cols: so,
                    rs: n * so,
                    cs: 1,
                };
                gemm(
                    T::one(),
                    gys,
                    MatRef::dense(&cols, k, so).t(),
                    T::one(),
                    &mut grads.params[*w].data,
                    0,
                    k,
                    1,
                );
                gemm(T::one(), wm.t(), gys, T::zero(), &mut dcols, 0, so, 1);
                let plane = dx.plane(0, s);
                col2im(&dcols, *cin, g, &mut dx.data, plane, n * si);
            }
            dx
        }
        (
            Op::ConvT {
                adj,
                cin,
                cout,
                w,
                b,
            },
            Cache::Input(x),
        ) => {
            let (si, so, n) = (x.spatial(), adj.h * adj.w, x.n);
            let k = cout * adj.patch();
            for (co, chunk) in gy.data.chunks(n * so).enumerate() {
                grads.params[*b].data[co] += chunk.iter().copied().sum::<T>();
            }
            let mut dx = Act::zeros(*cin, n, x.h, x.w);
            let mut gcols = vec![T::zero(); k * si];
            let wm = MatRef::dense(p(*w), *cin, k);
            for s in 0..n {
                im2col(&gy.data, gy.plane(0, s), n * so, *cout, adj, &mut gcols);
                let gc = MatRef::dense(&gcols, k, si);
                let plane = dx.plane(0, s);
                gemm(T::one(), wm, gc, T::zero(), &mut dx.data, plane, n * si, 1);
                let xs = MatRef {
                    data: &x.data,
                    offset: x.plane(0, s),
                    rows: *cin,
                    cols: si,
                    rs: n * si,
                    cs: 1,
                };
                gemm(T::one(), xs, gc.t(), T::one(), &mut grads.params[*w].data, 0, k, 1);
            }
            dx
        }
        (Op::Linear { fin, fout, w, b }, Cache::Input(x)) => {
            let n = x.n;
            for (o, row) in gy.data.chunks(n).enumerate() {
                grads.params[*b].data[o] += row.iter().copied().sum::<T>();
            }
            let gm = MatRef::dense(&gy.data, *fout, n);
            let xm = MatRef::dense(&x.data, *fin, n);
            gemm(T::one(), gm, xm.t(), T::one(), &mut grads.params[*w].data, 0, *fin, 1);
            let mut dx = Act::zeros(*fin, n, 1, 1);
            gemm(
                T::one(),
                MatRef::dense(p(*w), *fout, *fin).t(),
                gm,
                T::zero(),
                &mut dx.data,
                0,
                n,
                1,
            );
            dx
        }
        (
            Op::BatchNorm {
                c, gamma, beta, ..
            },
            Cache::Bn { xhat, inv_std },
        ) => {
            let m = gy.data.len() / c;
            let mut dx = gy;
            let gam = p(*gamma);
            for ch in 0..*c {
                let gs = &mut dx.data[ch * m..(ch + 1) * m];
                let xh = &xhat[ch * m..(ch + 1) * m];
                let sum_g: f64 = gs.iter().map(|v| v.as_f64()).sum();
                let sum_gx: f64 = gs.iter().zip(xh).map(|(g, x)| g.as_f64() * x.as_f64()).sum();
                grads.params[*gamma].data[ch] += T::of(sum_gx);
                grads.params[*beta].data[ch] += T::of(sum_g);
                let k = gam[ch].as_f64() * inv_std[ch].as_f64() / m as f64;
                for (g, x) in gs.iter_mut().zip(xh) {
                    *g = T::of(k * (m as f64 * g.as_f64() - sum_g - x.as_f64() * sum_gx));
                }
            }
            dx
        }
        (Op::Relu, Cache::Relu(mask)) => {
            let mut dx = gy;
            for (g, &on) in dx.data.iter_mut().zip(mask) {
                if !on {
                    *g = T::zero();
                }
            }
            dx
        }
        (Op::Flatten, Cache::Shape([c, h, w])) => gy.unflatten(*c, *h, *w),
        (Op::Unflatten { .. }, _) => gy.flatten(),
        _ => unreachable!("cache does not match layer"),
    }
}
