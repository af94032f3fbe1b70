//! Python bindings: series generation, rasterization, divergences, IoU,
//! WPE, the random-walk baseline, autoencoder models and the experiment
//! harness.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use vforecast::baselines::{rw_fit, rw_predict, RwMode};
use vforecast::complexity::{wpe as wpe_impl, WpeConfig};
use vforecast::divergence;
use vforecast::harness::{self, ExperimentConfig, Method};
use vforecast::iou::{image_iou_profile, region_scores, ThresholdRule};
use vforecast::nets::{self, checkpoint, Model, ModelConfig, NumAeConfig, VisualAeConfig};
use vforecast::raster::{self, RenderSpec, SeriesImage, WindowSpec};
use vforecast::rng::{stream_for, Purpose};
use vforecast::series::{GeneratorSpec, HarmonicPrior, OuPrior, TimeSeries};
use vforecast::train::{self, EpochRecord, TrainConfig, TrainHistory};

create_exception!(vforecast, VforecastError, PyValueError);

fn err(e: vforecast::Error) -> PyErr {
    VforecastError::new_err(e.to_string())
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for vforecast::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn generator(family: &str, length: usize) -> PyResult<GeneratorSpec> {
    match family {
        "harmonic" => Ok(GeneratorSpec::Harmonic(HarmonicPrior::with_len(length))),
        "ou" => Ok(GeneratorSpec::Ou(OuPrior::with_len(length))),
        other => Err(VforecastError::new_err(format!("unknown family `{other}`"))),
    }
}

fn purpose(split: &str) -> PyResult<Purpose> {
    match split {
        "train" => Ok(Purpose::Train),
        "validation" => Ok(Purpose::Validation),
        "test" => Ok(Purpose::Test),
        other => Err(VforecastError::new_err(format!("unknown split `{other}`"))),
    }
}

fn rw_mode(mode: &str) -> PyResult<RwMode> {
    match mode {
        "mean" => Ok(RwMode::Mean),
        "sample" => Ok(RwMode::Sample),
        other => Err(VforecastError::new_err(format!("unknown random-walk mode `{other}`"))),
    }
}

/// `n` seeded series of a synthetic family ("harmonic" or "ou").
#[pyfunction]
#[pyo3(signature = (family, n, seed=0, length=200, split="test"))]
fn generate(family: &str, n: usize, seed: u64, length: usize, split: &str) -> PyResult<Vec<Vec<f64>>> {
    let g = generator(family, length)?;
    let p = purpose(split)?;
    (0..n)
        .map(|i| g.generate(seed, p, i).map(|s| s.values))
        .collect::<vforecast::Result<_>>()
        .py()
}

/// A column-stochastic rendering of a series.
#[pyclass(name = "Image", module = "vforecast", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: SeriesImage,
}

#[pymethods]
impl PyImage {
    /// Builds an image from rows of non-negative pixels; each column is
    /// normalized to sum 1.
    #[staticmethod]
    #[pyo3(signature = (rows, value_lo=0.0, value_hi=1.0))]
    fn from_rows(rows: Vec<Vec<f64>>, value_lo: f64, value_hi: f64) -> PyResult<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(VforecastError::new_err("rows have different lengths"));
        }
        let mut pixels: Vec<f64> = rows.concat();
        for c in 0..w {
            let sum: f64 = (0..h).map(|r| pixels[r * w + c]).sum();
            for r in 0..h {
                pixels[r * w + c] = if sum > 0.0 { pixels[r * w + c] / sum } else { 1.0 / h as f64 };
            }
        }
        let inner = SeriesImage::from_pixels(h, w, pixels, (value_lo, value_hi)).py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn value_bounds(&self) -> (f64, f64) {
        (self.inner.value_lo, self.inner.value_hi)
    }

    /// Pixels as a list of rows, row 0 at the top.
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.pixels.chunks(self.inner.width).map(<[f64]>::to_vec).collect()
    }

    fn column(&self, c: usize) -> PyResult<Vec<f64>> {
        if c >= self.inner.width {
            return Err(VforecastError::new_err(format!("column {c} out of range")));
        }
        Ok(self.inner.column(c))
    }

    /// Argmax row of every column mapped back to series values.
    fn decode(&self) -> Vec<f64> {
        raster::decode(&self.inner)
    }

    /// Binary PGM bytes, ink scaled to each column's maximum.
    fn to_pgm<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &raster::to_pgm(&self.inner))
    }

    fn __repr__(&self) -> String {
        format!(
            "Image({}x{}, values [{:.4}, {:.4}])",
            self.inner.height, self.inner.width, self.inner.value_lo, self.inner.value_hi
        )
    }
}

#[pyfunction]
#[pyo3(signature = (values, width=64, height=64, antialias=true))]
fn render(values: Vec<f64>, width: usize, height: usize, antialias: bool) -> PyResult<PyImage> {
    let spec = RenderSpec {
        width,
        height,
        antialias,
        ..RenderSpec::default()
    };
    Ok(PyImage {
        inner: raster::render(&values, &spec).py()?,
    })
}

/// Input and shifted target window of a series.
#[pyfunction]
#[pyo3(signature = (values, overlap=0.75, input_len=None))]
fn window_pair(values: Vec<f64>, overlap: f64, input_len: Option<usize>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let spec = match input_len {
        Some(l) => WindowSpec::new(overlap, l),
        None => WindowSpec::for_series_len(overlap, values.len()),
    }
    .py()?;
    raster::window_pair(&values, &spec).py()
}

fn check_dist(p: &[f64], q: &[f64]) -> PyResult<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(VforecastError::new_err("distributions must be non-empty and of equal length"));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats.
#[pyfunction]
fn jsd(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    check_dist(&p, &q)?;
    Ok(divergence::jsd(&p, &q))
}

/// Smoothed, renormalized Kullback-Leibler divergence KL(p || q).
#[pyfunction]
#[pyo3(signature = (p, q, smoothing=1e-8))]
fn kld(p: Vec<f64>, q: Vec<f64>, smoothing: f64) -> PyResult<f64> {
    check_dist(&p, &q)?;
    Ok(divergence::kld(&p, &q, smoothing))
}

/// Per-column JSD between two images.
#[pyfunction]
fn column_jsd(truth: &PyImage, pred: &PyImage) -> PyResult<Vec<f64>> {
    divergence::column_distances(&truth.inner, &pred.inner, divergence::Distance::Jsd).py()
}

fn threshold(fraction: Option<f64>) -> ThresholdRule {
    match fraction {
        Some(fraction) => ThresholdRule::RelativeToMax { fraction },
        None => ThresholdRule::AboveUniform,
    }
}

/// Per-column IoU of the "on" row spans. `fraction=None` switches to the
/// above-uniform rule.
#[pyfunction]
#[pyo3(signature = (truth, pred, fraction=Some(0.2)))]
fn column_iou(truth: &PyImage, pred: &PyImage, fraction: Option<f64>) -> PyResult<Vec<f64>> {
    Ok(image_iou_profile(&truth.inner, &pred.inner, threshold(fraction), 0.0).py()?.per_column)
}

/// Mean IoU over the reconstruction and the prediction region.
#[pyfunction]
#[pyo3(signature = (truth, pred, overlap=0.75, fraction=Some(0.2)))]
fn region_iou(truth: &PyImage, pred: &PyImage, overlap: f64, fraction: Option<f64>) -> PyResult<(f64, f64)> {
    let profile = image_iou_profile(&truth.inner, &pred.inner, threshold(fraction), overlap).py()?;
    region_scores(&profile).py()
}

/// Normalized weighted permutation entropy (embedding dimension 3).
#[pyfunction]
#[pyo3(signature = (values, tie_epsilon=0.0))]
fn wpe(values: Vec<f64>, tie_epsilon: f64) -> PyResult<f64> {
    wpe_impl(&values, &WpeConfig { tie_epsilon }).py()
}

/// Random-walk forecast of the next `steps` values.
#[pyfunction]
#[pyo3(signature = (values, steps, mode="mean", seed=0))]
fn random_walk(values: Vec<f64>, steps: usize, mode: &str, seed: u64) -> PyResult<Vec<f64>> {
    let model = rw_fit(&values, rw_mode(mode)?).py()?;
    let mut rng = stream_for(seed, Purpose::Baseline, 0);
    Ok(rw_predict(&model, steps, &mut rng))
}

fn history_rows(h: &TrainHistory) -> Vec<(usize, f64, f64, f64)> {
    h.epochs
        .iter()
        .map(|r: &EpochRecord| (r.epoch, r.train_loss, r.val_loss, r.lr))
        .collect()
}

fn to_series(values: Vec<Vec<f64>>) -> PyResult<Vec<TimeSeries>> {
    values.into_iter().map(TimeSeries::new).collect::<vforecast::Result<_>>().py()
}

/// A VisualAE or NumAE with f32 parameters.
#[pyclass(name = "Model", module = "vforecast")]
struct PyModel {
    inner: Model<f32>,
}

#[pymethods]
impl PyModel {
    /// Image autoencoder; `preset` is "tiny", "desk" or "full".
    #[staticmethod]
    #[pyo3(signature = (preset="desk", seed=0))]
    fn visual(preset: &str, seed: u64) -> PyResult<Self> {
        let cfg = match preset {
            "tiny" => VisualAeConfig::tiny(),
            "desk" => VisualAeConfig::desk(),
            "full" => VisualAeConfig::default(),
            other => return Err(VforecastError::new_err(format!("unknown preset `{other}`"))),
        };
        let inner = Model::init(ModelConfig::Visual(cfg), seed).py()?;
        Ok(Self { inner })
    }

    /// 1-D autoencoder over input windows of `length` samples.
    #[staticmethod]
    #[pyo3(signature = (length=160, seed=0))]
    fn numeric(length: usize, seed: u64) -> PyResult<Self> {
        let inner = Model::init(ModelConfig::Numeric(NumAeConfig::with_len(length)), seed).py()?;
        Ok(Self { inner })
    }

    /// Loads a checkpoint written for the configuration `config_json`.
    #[staticmethod]
    fn load(path: PathBuf, config_json: &str) -> PyResult<Self> {
        let config: ModelConfig =
            serde_json::from_str(config_json).map_err(|e| VforecastError::new_err(e.to_string()))?;
        Ok(Self {
            inner: checkpoint::load(&path, &config).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.inner).py()
    }

    #[getter]
    fn config_json(&self) -> String {
        self.inner.config.canonical()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.arch.param_count()
    }

    fn describe(&self) -> String {
        nets::describe(&self.inner.arch)
    }

    /// Inference pass of a VisualAE on rendered input windows.
    fn forecast_images(&self, py: Python<'_>, images: Vec<PyImage>) -> PyResult<Vec<PyImage>> {
        let ModelConfig::Visual(_) = self.inner.config else {
            return Err(VforecastError::new_err("forecast_images needs a visual model"));
        };
        let batch: Vec<SeriesImage> = images.into_iter().map(|i| i.inner).collect();
        let m = &self.inner;
        let out = py.detach(|| nets::visual_ae_forward(&m.arch, &m.params, &batch)).py()?;
        Ok(out.into_iter().map(|inner| PyImage { inner }).collect())
    }

    /// Inference pass of a NumAE on raw input windows; returns the
    /// reconstructed target windows.
    fn forecast_series(&self, py: Python<'_>, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let ModelConfig::Numeric(_) = self.inner.config else {
            return Err(VforecastError::new_err("forecast_series needs a numeric model"));
        };
        let m = &self.inner;
        py.detach(|| nets::num_ae_forward(&m.arch, &m.params, &inputs)).py()
    }

    /// Trains from scratch on full-length series (windowed internally) and
    /// replaces the parameters with the best validation epoch. Returns
    /// `(epoch, train_loss, val_loss, lr)` rows.
    #[pyo3(signature = (train_series, val_series, overlap=0.75, max_epochs=20, batch_size=128, lr=None, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        py: Python<'_>,
        train_series: Vec<Vec<f64>>,
        val_series: Vec<Vec<f64>>,
        overlap: f64,
        max_epochs: usize,
        batch_size: usize,
        lr: Option<f64>,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64, f64)>> {
        let (tr, va) = (to_series(train_series)?, to_series(val_series)?);
        let len = tr.first().map_or(0, TimeSeries::len);
        let window = WindowSpec::for_series_len(overlap, len).py()?;
        let base = TrainConfig::for_model(&self.inner.config);
        let cfg = TrainConfig {
            max_epochs,
            batch_size,
            lr_init: lr.unwrap_or(base.lr_init),
            seed,
            ..base
        };
        let model_cfg = self.inner.config.clone();
        let (model, history) = py
            .detach(|| -> vforecast::Result<_> {
                let (a, b) = match &model_cfg {
                    ModelConfig::Visual(v) => {
                        let spec = RenderSpec {
                            width: v.width,
                            height: v.height,
                            ..RenderSpec::default()
                        };
                        (train::visual_pairs(&tr, &window, &spec)?, train::visual_pairs(&va, &window, &spec)?)
                    }
                    ModelConfig::Numeric(_) => (train::numeric_pairs(&tr, &window)?, train::numeric_pairs(&va, &window)?),
                };
                train::train(&model_cfg, &a, &b, &cfg)
            })
            .py()?;
        self.inner = model;
        Ok(history_rows(&history))
    }

    fn __repr__(&self) -> String {
        format!("Model({}, {} params)", self.inner.config.canonical(), self.inner.arch.param_count())
    }
}

/// A full experiment: dataset, windowing, model, training and evaluation.
#[pyclass(name = "Experiment", module = "vforecast")]
struct PyExperiment {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn desk(family: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::desk(family).py()?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ExperimentConfig::from_toml_str(text).py()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.name()
    }

    #[setter]
    fn set_method(&mut self, name: &str) -> PyResult<()> {
        self.inner.method = Method::parse(name).py()?;
        Ok(())
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir.clone()
    }

    #[setter]
    fn set_out_dir(&mut self, dir: PathBuf) {
        self.inner.out_dir = dir;
    }

    /// Overrides the split sizes.
    fn set_counts(&mut self, train: usize, validation: usize, test: usize) {
        self.inner.dataset.counts = vforecast::series::SplitCounts { train, validation, test };
    }

    fn set_max_epochs(&mut self, epochs: usize) {
        self.inner.train.max_epochs = Some(epochs);
    }

    /// Writes the dataset and its manifest; returns the manifest.
    fn generate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let m = py.detach(|| harness::cmd_gen(&self.inner)).py()?;
        json_to_py(py, &serde_json::to_string(&m).expect("manifest serializes"))
    }

    /// Trains one seed and writes its checkpoint; returns the history rows.
    fn train(&self, py: Python<'_>, seed: u64) -> PyResult<Vec<(usize, f64, f64, f64)>> {
        let (_, h) = py.detach(|| harness::cmd_train(&self.inner, seed)).py()?;
        Ok(history_rows(&h))
    }

    /// Evaluates the configured method and returns the report as a dict.
    fn evaluate(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let r = py.detach(|| harness::cmd_eval(&self.inner, &[])).py()?;
        json_to_py(py, &serde_json::to_string(&r).expect("report serializes"))
    }
}

#[pymodule(name = "vforecast")]
fn vforecast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VforecastError", m.py().get_type::<VforecastError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(window_pair, m)?)?;
    m.add_function(wrap_pyfunction!(jsd, m)?)?;
    m.add_function(wrap_pyfunction!(kld, m)?)?;
    m.add_function(wrap_pyfunction!(column_jsd, m)?)?;
    m.add_function(wrap_pyfunction!(column_iou, m)?)?;
    m.add_function(wrap_pyfunction!(region_iou, m)?)?;
    m.add_function(wrap_pyfunction!(wpe, m)?)?;
    m.add_function(wrap_pyfunction!(random_walk, m)?)?;
    Ok(())
}
