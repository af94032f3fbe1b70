//! Mini-batch SGD with momentum, plateau learning-rate decay and early
//! stopping on the validation loss.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{
    minmax_bounds, normalize_minmax, Act, Architecture, Loss, Model, ModelConfig, ParamSet, Real,
};
use crate::raster::{render, window_pair, RenderSpec, WindowSpec};
use crate::rng::{stream_for, Purpose};
use crate::series::TimeSeries;

/// Validation losses must drop by more than this to count as progress.
pub const IMPROVEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_floor: f64,
    pub lr_patience: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Overrides the model's default objective.
    pub loss: Option<Loss>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr_init: 0.1,
            lr_decay_factor: 0.1,
            lr_floor: 1e-4,
            lr_patience: 5,
            early_stop_patience: 15,
            max_epochs: 200,
            momentum: 0.9,
            seed: 0,
            loss: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the initial rate used for `model`.
    pub fn for_model(model: &ModelConfig) -> Self {
        let lr_init = match model {
            ModelConfig::Visual(_) => 0.1,
            ModelConfig::Numeric(_) => 0.01,
        };
        Self {
            lr_init,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::param("batch_size", "must be at least 2"));
        }
        if !(self.lr_init > 0.0 && self.lr_floor > 0.0 && self.lr_floor <= self.lr_init) {
            return Err(Error::param("lr", "need 0 < lr_floor <= lr_init"));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::param("lr_decay_factor", "must be in (0, 1)"));
        }
        if self.lr_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::param("patience", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::param("max_epochs", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Outcome of feeding one validation loss to [`PlateauSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Plateau,
    /// The learning rate was just lowered.
    Decayed,
    Stop,
}

/// Learning-rate decay and early stopping driven by one streak of
/// non-improving validation epochs. Decay fires every `lr_patience`
/// epochs of the streak, stopping fires at `early_stop_patience`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    best: f64,
    streak: usize,
    factor: f64,
    floor: f64,
    decay_every: usize,
    stop_after: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.lr_init,
            best: f64::INFINITY,
            streak: 0,
            factor: cfg.lr_decay_factor,
            floor: cfg.lr_floor,
            decay_every: cfg.lr_patience,
            stop_after: cfg.early_stop_patience,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn streak(&self) -> usize {
        self.streak
    }

    pub fn observe(&mut self, val_loss: f64) -> Verdict {
        if val_loss < self.best - IMPROVEMENT_TOL || (self.best.is_infinite() && val_loss.is_finite()) {
            self.best = val_loss;
            self.streak = 0;
            return Verdict::Improved;
        }
        self.streak += 1;
        if self.streak >= self.stop_after {
            return Verdict::Stop;
        }
        if self.streak.is_multiple_of(self.decay_every) && self.lr > self.floor {
            self.lr = (self.lr * self.factor).max(self.floor);
            return Verdict::Decayed;
        }
        Verdict::Plateau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs
            .get(self.best_epoch.checked_sub(1)?)
            .map(|e| e.val_loss)
    }

    /// Everything except wall time, which is the only non-reproducible field.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_loss.to_bits() == b.val_loss.to_bits()
                    && a.lr.to_bits() == b.lr.to_bits()
            })
    }

    /// `epoch,train_loss,val_loss,lr`. Wall time is left out so reruns with
    /// the same seed write byte-identical files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{:?},{:?},{:?}\n", e.epoch, e.train_loss, e.val_loss, e.lr));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Input/target pairs stored as flat per-example planes of size `h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub h: usize,
    pub w: usize,
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f32>>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn batch(&self, idx: &[usize]) -> (Act<f32>, Act<f32>) {
        let pack = |src: &[Vec<f32>]| {
            let mut a = Act::zeros(1, idx.len(), self.h, self.w);
            let s = self.h * self.w;
            for (k, &i) in idx.iter().enumerate() {
                a.data[k * s..(k + 1) * s].copy_from_slice(&src[i]);
            }
            a
        };
        (pack(&self.inputs), pack(&self.targets))
    }

    pub fn subset(&self, n: usize) -> PairSet {
        let n = n.min(self.len());
        PairSet {
            h: self.h,
            w: self.w,
            inputs: self.inputs[..n].to_vec(),
            targets: self.targets[..n].to_vec(),
        }
    }
}

/// Rasterized (input window, shifted target window) image pairs.
pub fn visual_pairs(series: &[TimeSeries], window: &WindowSpec, spec: &RenderSpec) -> Result<PairSet> {
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = series
        .par_iter()
        .map(|s| {
            let (x, y) = window_pair(&s.values, window)?;
            let to32 = |v: Vec<f64>| v.into_iter().map(|p| p as f32).collect::<Vec<_>>();
            Ok((to32(render(&x, spec)?.pixels), to32(render(&y, spec)?.pixels)))
        })
        .collect::<Result<_>>()?;
    let (inputs, targets) = pairs.into_iter().unzip();
    Ok(PairSet {
        h: spec.height,
        w: spec.width,
        inputs,
        targets,
    })
}

/// Window pairs min-max scaled with the input window's bounds.
pub fn numeric_pairs(series: &[TimeSeries], window: &WindowSpec) -> Result<PairSet> {
    let pairs: Vec<(Vec<f32>, Vec<f32>)> = series
        .par_iter()
        .map(|s| {
            let (x, y) = window_pair(&s.values, window)?;
            let b = minmax_bounds(&x);
            let to32 = |v: Vec<f64>| v.into_iter().map(|p| p as f32).collect::<Vec<_>>();
            Ok((to32(normalize_minmax(&x, b)), to32(normalize_minmax(&y, b))))
        })
        .collect::<Result<_>>()?;
    let (inputs, targets) = pairs.into_iter().unzip();
    Ok(PairSet {
        h: 1,
        w: window.input_len,
        inputs,
        targets,
    })
}

const EVAL_CHUNK: usize = 64;

/// Per-example inference-mode losses, in dataset order.
pub fn example_losses(arch: &Architecture, params: &ParamSet<f32>, data: &PairSet, loss: Loss) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts: Vec<Vec<f64>> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (x, y) = data.batch(chunk);
            let out = arch.forward(params, &x)?;
            loss.per_example(&out, &y)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Mean loss over `data` with normalization in inference mode.
pub fn evaluate_epoch(arch: &Architecture, params: &ParamSet<f32>, data: &PairSet, loss: Loss) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::DegenerateInput("empty evaluation set".into()));
    }
    let l = example_losses(arch, params, data, loss)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

/// Momentum SGD: `v ← μ v + g`, `p ← p − lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    velocity: ParamSet<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &ParamSet<T>, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64) {
        let (mu, lr) = (T::of(self.momentum), T::of(lr));
        for ((p, v), g) in params
            .params
            .iter_mut()
            .zip(&mut self.velocity.params)
            .zip(&grads.params)
        {
            for ((pi, vi), &gi) in p.data.iter_mut().zip(&mut v.data).zip(&g.data) {
                *vi = mu * *vi + gi;
                *pi -= lr * *vi;
            }
        }
    }
}

/// Called after every epoch with the record and current parameters.
pub type EpochHook<'a> = dyn FnMut(&EpochRecord, &Model<f32>) + 'a;

/// Trains a fresh model and returns the parameters of the best
/// validation epoch.
pub fn train(
    model_config: &ModelConfig,
    train_set: &PairSet,
    val_set: &PairSet,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, TrainHistory)> {
    train_with_hook(model_config, train_set, val_set, cfg, &mut |_, _| {})
}

pub fn train_with_hook(
    model_config: &ModelConfig,
    train_set: &PairSet,
    val_set: &PairSet,
    cfg: &TrainConfig,
    hook: &mut EpochHook<'_>,
) -> Result<(Model<f32>, TrainHistory)> {
    cfg.validate()?;
    if train_set.len() < 2 || val_set.is_empty() {
        return Err(Error::DegenerateInput(
            "training needs at least 2 training and 1 validation example".into(),
        ));
    }
    let loss = cfg.loss.unwrap_or_else(|| model_config.default_loss());
    let mut model = Model::<f32>::init(model_config.clone(), cfg.seed)?;
    let [_, h, w] = model.arch.input_shape();
    if (train_set.h, train_set.w) != (h, w) || (val_set.h, val_set.w) != (h, w) {
        return Err(Error::mismatch(
            format!("{h}x{w}"),
            format!("{}x{}", train_set.h, train_set.w),
        ));
    }
    let mut opt = Sgd::new(&model.params, cfg.momentum);
    let mut schedule = PlateauSchedule::new(cfg);
    let mut history = TrainHistory::default();
    let mut best = model.params.clone();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let lr = schedule.lr();
        let mut rng = stream_for(cfg.seed, Purpose::Shuffle, epoch as u64);
        order.shuffle(&mut rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            // normalization statistics need two examples
            if idx.len() < 2 {
                continue;
            }
            let (x, y) = train_set.batch(idx);
            let (out, tape) = model.arch.forward_train(&mut model.params, &x)?;
            let (value, g) = loss.value_and_grad(&out, &y)?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let (grads, _) = model.arch.backward(&model.params, &tape, &g)?;
            opt.step(&mut model.params, &grads, lr);
            if !model.params.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total += value * idx.len() as f64;
            seen += idx.len();
        }
        let val_loss = evaluate_epoch(&model.arch, &model.params, val_set, loss)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        let record = EpochRecord {
            epoch,
            train_loss: total / seen as f64,
            val_loss,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        hook(&record, &model);
        history.epochs.push(record);
        let verdict = schedule.observe(val_loss);
        if verdict == Verdict::Improved {
            best.clone_from(&model.params);
            history.best_epoch = epoch;
        }
        if verdict == Verdict::Stop {
            break;
        }
    }
    model.params = best;
    Ok((model, history))
}
