//! Convolutional autoencoders: the image-to-image VisualAE and the 1-D
//! NumAE, with hand-written forward and reverse passes.

mod arch;
pub mod checkpoint;
pub mod loss;
pub mod params;
pub mod tensor;

use serde::{Deserialize, Serialize};

pub use arch::{AeLayout, Architecture, Head, LayerOrder, LayerShape, StageGeom, Tape, BN_EPS, BN_MOMENTUM};
pub use loss::Loss;
pub use params::{ParamSet, Tensor};
pub use tensor::{Act, Real};

use crate::error::{Error, Result};
use crate::raster::SeriesImage;
use crate::rng::{stream_for, Purpose};

/// Image autoencoder trained with a column-wise divergence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualAeConfig {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<usize>,
    pub embedding: usize,
    pub stage: StageGeom,
    pub order: LayerOrder,
    pub bottleneck_relu: bool,
}

impl Default for VisualAeConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            channels: vec![128, 256, 512],
            embedding: 512,
            stage: StageGeom::default(),
            order: LayerOrder::default(),
            bottleneck_relu: false,
        }
    }
}

impl VisualAeConfig {
    /// Narrower variant for single-machine CPU experiments; same depth,
    /// geometry and head.
    pub fn desk() -> Self {
        Self {
            channels: vec![16, 32, 64],
            embedding: 128,
            ..Self::default()
        }
    }

    /// Smallest configuration that still exercises every layer type.
    pub fn tiny() -> Self {
        Self {
            height: 8,
            width: 8,
            channels: vec![2, 2, 2],
            embedding: 4,
            ..Self::default()
        }
    }

    pub fn layout(&self) -> AeLayout {
        AeLayout {
            input: [1, self.height, self.width],
            channels: self.channels.clone(),
            stage: self.stage,
            embedding: self.embedding,
            order: self.order,
            bottleneck_relu: self.bottleneck_relu,
            head: Head::ColumnSoftmax,
        }
    }
}

/// 1-D autoencoder over min-max normalized series of length `len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumAeConfig {
    pub len: usize,
    pub kernel: usize,
    pub order: LayerOrder,
    pub bottleneck_relu: bool,
}

impl Default for NumAeConfig {
    fn default() -> Self {
        Self {
            len: 160,
            kernel: 5,
            order: LayerOrder::default(),
            bottleneck_relu: false,
        }
    }
}

impl NumAeConfig {
    pub fn with_len(len: usize) -> Self {
        Self {
            len,
            ..Self::default()
        }
    }

    pub fn layout(&self) -> Result<AeLayout> {
        if self.len == 0 || !self.len.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "numeric model length {} is not divisible by 4",
                self.len
            )));
        }
        let t = self.len;
        Ok(AeLayout {
            input: [1, 1, t],
            channels: vec![t / 2, t / 4],
            stage: StageGeom {
                kernel: self.kernel,
                stride: 2,
                padding: self.kernel / 2,
            },
            embedding: t / 4,
            order: self.order,
            bottleneck_relu: self.bottleneck_relu,
            head: Head::Identity,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Visual(VisualAeConfig),
    Numeric(NumAeConfig),
}

impl ModelConfig {
    pub fn architecture(&self) -> Result<Architecture> {
        match self {
            ModelConfig::Visual(c) => Architecture::build(&c.layout()),
            ModelConfig::Numeric(c) => Architecture::build(&c.layout()?),
        }
    }

    pub fn default_loss(&self) -> Loss {
        match self {
            ModelConfig::Visual(_) => Loss::ColumnJsd,
            ModelConfig::Numeric(_) => Loss::Huber,
        }
    }

    /// Canonical serialization, hashed into checkpoints.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// A built network with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub arch: Architecture,
    pub params: ParamSet<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let arch = config.architecture()?;
        arch.check_params(&params)?;
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = config.architecture()?;
        let params = init_params(&arch, seed);
        Ok(Self {
            config,
            arch,
            params,
        })
    }

    pub fn forward(&self, x: &Act<T>) -> Result<Act<T>> {
        self.arch.forward(&self.params, x)
    }
}

/// Seeded fan-in uniform initialization.
pub fn init_params<T: Real>(arch: &Architecture, seed: u64) -> ParamSet<T> {
    let mut rng = stream_for(seed, Purpose::Init, 0);
    arch.init_params(&mut rng)
}

/// Packs equally sized images into a one-channel batch.
pub fn images_to_act<T: Real>(images: &[SeriesImage]) -> Result<Act<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::DegenerateInput("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut act = Act::zeros(1, images.len(), h, w);
    for (i, img) in images.iter().enumerate() {
        if img.height != h || img.width != w {
            return Err(Error::mismatch(format!("{h}x{w}"), format!("{}x{}", img.height, img.width)));
        }
        for (d, &p) in act.data[i * h * w..(i + 1) * h * w].iter_mut().zip(&img.pixels) {
            *d = T::of(p);
        }
    }
    Ok(act)
}

/// Packs equal-length series into a `[1][N][1][T]` batch.
pub fn series_to_act<T: Real>(series: &[Vec<f64>]) -> Result<Act<T>> {
    let t = series
        .first()
        .ok_or_else(|| Error::DegenerateInput("empty series batch".into()))?
        .len();
    let mut act = Act::zeros(1, series.len(), 1, t);
    for (i, s) in series.iter().enumerate() {
        if s.len() != t {
            return Err(Error::mismatch(t, s.len()));
        }
        for (d, &v) in act.data[i * t..(i + 1) * t].iter_mut().zip(s) {
            *d = T::of(v);
        }
    }
    Ok(act)
}

/// Splits a one-channel batch back into per-example `f64` vectors.
pub fn act_to_rows<T: Real>(act: &Act<T>) -> Vec<Vec<f64>> {
    act.to_samples()
        .into_iter()
        .map(|s| s.into_iter().map(Real::as_f64).collect())
        .collect()
}

/// Inference-mode VisualAE pass. Output images carry the value and time
/// bounds of the corresponding inputs.
pub fn visual_ae_forward<T: Real>(
    arch: &Architecture,
    params: &ParamSet<T>,
    batch: &[SeriesImage],
) -> Result<Vec<SeriesImage>> {
    let x = images_to_act::<T>(batch)?;
    let y = arch.forward(params, &x)?;
    act_to_rows(&y)
        .into_iter()
        .zip(batch)
        .map(|(pixels, src)| {
            let mut img =
                SeriesImage::from_pixels(src.height, src.width, pixels, (src.value_lo, src.value_hi))?;
            img.t_lo = src.t_lo;
            img.t_hi = src.t_hi;
            Ok(img)
        })
        .collect()
}

/// Min-max bounds of a window, widened when the window is constant.
pub fn minmax_bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo > 0.0 {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

pub fn normalize_minmax(values: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

pub fn denormalize_minmax(values: &[f64], (lo, hi): (f64, f64)) -> Vec<f64> {
    values.iter().map(|v| lo + v * (hi - lo)).collect()
}

/// Inference-mode NumAE pass on raw input windows: each window is scaled to
/// `[0, 1]` with its own bounds, run through the network and mapped back
/// with the same bounds.
pub fn num_ae_forward<T: Real>(
    arch: &Architecture,
    params: &ParamSet<T>,
    inputs: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let bounds: Vec<_> = inputs.iter().map(|s| minmax_bounds(s)).collect();
    let normed: Vec<_> = inputs
        .iter()
        .zip(&bounds)
        .map(|(s, &b)| normalize_minmax(s, b))
        .collect();
    let y = arch.forward(params, &series_to_act::<T>(&normed)?)?;
    Ok(act_to_rows(&y)
        .into_iter()
        .zip(&bounds)
        .map(|(s, &b)| denormalize_minmax(&s, b))
        .collect())
}

/// Loss of one training-mode pass and the parameter gradients.
pub fn loss_and_grad<T: Real>(
    arch: &Architecture,
    params: &mut ParamSet<T>,
    x: &Act<T>,
    target: &Act<T>,
    loss: Loss,
) -> Result<(f64, ParamSet<T>)> {
    let (out, tape) = arch.forward_train(params, x)?;
    let (value, g) = loss.value_and_grad(&out, target)?;
    let (grads, _) = arch.backward(params, &tape, &g)?;
    Ok((value, grads))
}

/// Text summary: layer shapes and parameter count.
pub fn describe(arch: &Architecture) -> String {
    let mut s = String::new();
    for l in arch.layer_shapes() {
        s.push_str(&format!(
            "{:<16} {:>5} x {:>3} x {:>3}\n",
            l.layer, l.shape[0], l.shape[1], l.shape[2]
        ));
    }
    s.push_str(&format!("parameters: {}\n", arch.param_count()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{render, RenderSpec};
    use crate::series::sample_harmonic_params;

    fn tiny_batch(n: usize, seed: u64) -> (Vec<SeriesImage>, Vec<SeriesImage>) {
        let spec = RenderSpec {
            width: 8,
            height: 8,
            ..RenderSpec::default()
        };
        let mut rng = stream_for(seed, Purpose::Misc, 0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let p = sample_harmonic_params(&mut rng, 40);
            let s = crate::series::gen_harmonic(&p).unwrap().values;
            xs.push(render(&s[..32], &spec).unwrap());
            ys.push(render(&s[8..40], &spec).unwrap());
        }
        (xs, ys)
    }

    fn fd_check(order: LayerOrder, bottleneck_relu: bool, h: f64) {
        let cfg = VisualAeConfig {
            order,
            bottleneck_relu,
            ..VisualAeConfig::tiny()
        };
        let arch = Architecture::build(&cfg.layout()).unwrap();
        let mut params: ParamSet<f64> = init_params(&arch, 3);
        let (xs, ys) = tiny_batch(4, 11);
        let x = images_to_act::<f64>(&xs).unwrap();
        let y = images_to_act::<f64>(&ys).unwrap();
        let (_, grads) = loss_and_grad(&arch, &mut params.clone(), &x, &y, Loss::ColumnJsd).unwrap();
        let loss_at = |p: &ParamSet<f64>| {
            let mut p = p.clone();
            let (out, _) = arch.forward_train(&mut p, &x).unwrap();
            Loss::ColumnJsd.value_and_grad(&out, &y).unwrap().0
        };
        let mut worst: f64 = 0.0;
        for (ti, t) in params.params.clone().iter().enumerate() {
            for k in 0..t.len() {
                let orig = t.data[k];
                params.params[ti].data[k] = orig + h;
                let up = loss_at(&params);
                params.params[ti].data[k] = orig - h;
                let down = loss_at(&params);
                params.params[ti].data[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.params[ti].data[k];
                let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-3, "max relative gradient error {worst}");
    }

    #[test]
    fn gradients_match_central_differences() {
        fd_check(LayerOrder::NormThenRelu, false, 1e-4);
    }

    #[test]
    fn gradients_match_for_alternate_layer_order() {
        // normalizing after ReLU sees near-constant channels in a net this
        // small, so the loss is sharply curved and needs a finer step
        fd_check(LayerOrder::ReluThenNorm, true, 1e-6);
    }

    #[test]
    fn huber_gradients_match_on_numeric_model() {
        let arch = Architecture::build(&NumAeConfig::with_len(16).layout().unwrap()).unwrap();
        let params: ParamSet<f64> = init_params(&arch, 5);
        let mut rng = stream_for(1, Purpose::Misc, 0);
        let series: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..16).map(|_| rand::Rng::random::<f64>(&mut rng)).collect())
            .collect();
        let x = series_to_act::<f64>(&series).unwrap();
        let y = series_to_act::<f64>(&series.iter().map(|s| s.iter().map(|v| 1.0 - v).collect()).collect::<Vec<_>>()).unwrap();
        let (_, grads) = loss_and_grad(&arch, &mut params.clone(), &x, &y, Loss::Huber).unwrap();
        let h = 1e-5;
        for (ti, t) in params.params.clone().iter().enumerate() {
            for k in (0..t.len()).step_by(7) {
                let orig = t.data[k];
                let eval = |v: f64| {
                    let mut p = params.clone();
                    p.params[ti].data[k] = v;
                    let (out, _) = arch.forward_train(&mut p, &x).unwrap();
                    Loss::Huber.value_and_grad(&out, &y).unwrap().0
                };
                let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
                let an = grads.params[ti].data[k];
                assert!(
                    (fd - an).abs() <= 1e-3 * (fd.abs() + an.abs()).max(1e-6),
                    "{} [{k}]: fd {fd} analytic {an}",
                    t.name
                );
            }
        }
    }

    #[test]
    fn kld_gradient_matches_differences() {
        let cfg = VisualAeConfig::tiny();
        let arch = Architecture::build(&cfg.layout()).unwrap();
        let params: ParamSet<f64> = init_params(&arch, 9);
        let (xs, ys) = tiny_batch(3, 2);
        let x = images_to_act::<f64>(&xs).unwrap();
        let y = images_to_act::<f64>(&ys).unwrap();
        let (_, grads) = loss_and_grad(&arch, &mut params.clone(), &x, &y, Loss::ColumnKld).unwrap();
        let last = params.params.len() - 1;
        let h = 1e-5;
        for k in 0..params.params[last].len() {
            let orig = params.params[last].data[k];
            let eval = |v: f64| {
                let mut p = params.clone();
                p.params[last].data[k] = v;
                let (out, _) = arch.forward_train(&mut p, &x).unwrap();
                Loss::ColumnKld.value_and_grad(&out, &y).unwrap().0
            };
            let fd = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            let an = grads.params[last].data[k];
            assert!((fd - an).abs() < 1e-4 * fd.abs().max(1.0), "fd {fd} analytic {an}");
        }
    }

    #[test]
    fn visual_shape_trace() {
        let arch = Architecture::build(&VisualAeConfig::default().layout()).unwrap();
        let enc: Vec<[usize; 3]> = arch
            .layer_shapes()
            .iter()
            .filter(|l| l.layer.starts_with("enc.") && !l.layer.contains("fc"))
            .map(|l| l.shape)
            .collect();
        // out = (in + 2p - k) / s + 1
        let mut side = 64;
        let mut expected = Vec::new();
        for ch in [128, 256, 512] {
            side = (side + 2 * 2 - 5) / 2 + 1;
            expected.push([ch, side, side]);
        }
        assert_eq!(enc, expected);
        assert_eq!(expected.last(), Some(&[512, 8, 8]));
        let dec: Vec<[usize; 3]> = arch
            .layer_shapes()
            .iter()
            .filter(|l| l.layer.starts_with("dec.") && !l.layer.contains("fc") && l.layer != "dec.unflatten")
            .map(|l| l.shape)
            .collect();
        assert_eq!(dec, vec![[256, 16, 16], [128, 32, 32], [1, 64, 64]]);
    }

    #[test]
    fn visual_param_count_matches_hand_arithmetic() {
        let arch = Architecture::build(&VisualAeConfig::default().layout()).unwrap();
        let conv = |cin: usize, cout: usize| cin * cout * 25 + cout;
        let bn = |c: usize| 2 * c;
        let enc = conv(1, 128) + bn(128) + conv(128, 256) + bn(256) + conv(256, 512) + bn(512);
        let fc = 2 * 8 * 8 * 512 * 512 + 512 + 8 * 8 * 512;
        let dec = bn(512) + conv(512, 256) + bn(256) + conv(256, 128) + bn(128) + conv(128, 1);
        assert_eq!(arch.param_count(), enc + fc + dec);
        assert!(describe(&arch).contains(&format!("parameters: {}", arch.param_count())));
    }

    #[test]
    fn numeric_shape_trace() {
        let arch = Architecture::build(&NumAeConfig::with_len(80).layout().unwrap()).unwrap();
        let shapes: Vec<(String, [usize; 3])> = arch
            .layer_shapes()
            .iter()
            .map(|l| (l.layer.clone(), l.shape))
            .collect();
        assert_eq!(shapes[1], ("enc.0".to_string(), [40, 1, 40]));
        assert_eq!(shapes[2], ("enc.1".to_string(), [20, 1, 20]));
        assert_eq!(shapes[3], ("enc.fc".to_string(), [20, 1, 1]));
        assert_eq!(shapes.last().unwrap().1, [1, 1, 80]);
        assert!(NumAeConfig::with_len(82).layout().is_err());
    }

    #[test]
    fn outputs_are_column_stochastic_and_deterministic() {
        let cfg = VisualAeConfig {
            height: 16,
            width: 16,
            channels: vec![4, 4, 4],
            embedding: 8,
            ..VisualAeConfig::default()
        };
        let model = Model::<f32>::init(ModelConfig::Visual(cfg), 1).unwrap();
        let spec = RenderSpec {
            width: 16,
            height: 16,
            ..RenderSpec::default()
        };
        let imgs: Vec<_> = (0..3)
            .map(|i| render(&[0.0, i as f64, 2.0, -1.0, 0.5], &spec).unwrap())
            .collect();
        let a = visual_ae_forward(&model.arch, &model.params, &imgs).unwrap();
        let b = visual_ae_forward(&model.arch, &model.params, &imgs).unwrap();
        assert_eq!(a, b);
        for img in &a {
            assert!(img.stochastic_error().unwrap() < 1e-6);
        }
    }

    #[test]
    fn initialization_is_seeded() {
        let arch = Architecture::build(&VisualAeConfig::tiny().layout()).unwrap();
        let a: ParamSet<f32> = init_params(&arch, 1);
        assert_eq!(a, init_params(&arch, 1));
        assert_ne!(a, init_params(&arch, 2));
    }

    #[test]
    fn zero_loss_is_stationary() {
        let arch = Architecture::build(&VisualAeConfig::tiny().layout()).unwrap();
        let mut params: ParamSet<f64> = init_params(&arch, 4);
        let (xs, _) = tiny_batch(3, 5);
        let x = images_to_act::<f64>(&xs).unwrap();
        let (out, tape) = arch.forward_train(&mut params, &x).unwrap();
        let (value, g) = Loss::ColumnJsd.value_and_grad(&out, &out).unwrap();
        assert!(value.abs() < 1e-12);
        let (grads, _) = arch.backward(&params, &tape, &g).unwrap();
        assert!(grads.norm() <= 1e-9, "{}", grads.norm());
    }

    #[test]
    fn constant_numeric_input_is_finite() {
        let arch = Architecture::build(&NumAeConfig::with_len(16).layout().unwrap()).unwrap();
        let params: ParamSet<f32> = init_params(&arch, 0);
        let out = num_ae_forward(&arch, &params, &[vec![3.0; 16], vec![3.0; 16]]).unwrap();
        assert!(out.iter().flatten().all(|v| v.is_finite()));
        assert_eq!(out, num_ae_forward(&arch, &params, &[vec![3.0; 16], vec![3.0; 16]]).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_digest() {
        let config = ModelConfig::Visual(VisualAeConfig::tiny());
        let model = Model::<f32>::init(config.clone(), 7).unwrap();
        let bytes = checkpoint::encode(&model);
        assert_eq!(&bytes[..4], b"VFCK");
        let back = checkpoint::decode(&bytes, &config).unwrap();
        assert_eq!(back.params, model.params);
        let other = ModelConfig::Visual(VisualAeConfig {
            embedding: 5,
            ..VisualAeConfig::tiny()
        });
        assert!(matches!(checkpoint::decode(&bytes, &other), Err(Error::Checkpoint(_))));
    }
}
