//! Experiment orchestration behind the `vforecast` command line: dataset
//! builds, training runs, evaluation and comparison reports.

pub mod config;
pub mod eval;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{DatasetConfig, EvalOptions, ExperimentConfig, Method, TrainOverrides, WindowConfig};
pub use eval::{evaluate, EvalReport, ExampleScore, Forecaster, Summary};

use crate::complexity::{wpe, WpeConfig};
use crate::error::{Error, Result};
use crate::nets::{checkpoint, Model};
use crate::raster::{render_series, write_pgm, write_vfim, RenderSpec, SeriesImage};
use crate::series::{make_splits, write_series_csv, DatasetSplit, GeneratorSpec, SplitCounts, TimeSeries};
use crate::train::{EpochRecord, numeric_pairs, train_with_hook, visual_pairs, PairSet, TrainHistory};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "VFORECAST_THREADS";

/// Sizes the global worker pool from `VFORECAST_THREADS` when set.
/// Returns the number of workers in use.
pub fn init_threads() -> Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Where each artifact of an experiment lives.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn checkpoint(&self, method: Method, seed: u64) -> PathBuf {
        self.root
            .join("models")
            .join(format!("{}-seed{seed}.ckpt", method.name().to_lowercase()))
    }

    pub fn history(&self, method: Method, seed: u64) -> PathBuf {
        self.checkpoint(method, seed).with_extension("history.csv")
    }

    pub fn snapshots(&self, method: Method, seed: u64) -> PathBuf {
        self.root
            .join("snapshots")
            .join(format!("{}-seed{seed}", method.name().to_lowercase()))
    }

    pub fn report(&self, method: Method) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{}.json", method.name().to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub split: String,
    pub path: String,
    pub rows: usize,
    pub sha256: String,
}

/// Written next to generated data: what produced it and what it contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: GeneratorSpec,
    pub counts: SplitCounts,
    pub seed: u64,
    pub series_len: Option<usize>,
    pub files: Vec<ManifestFile>,
}

/// Builds the configured dataset splits.
pub fn load_split(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    make_splits(&cfg.dataset.generator, cfg.dataset.counts, cfg.dataset.seed)
}

/// Writes `train.csv`, `validation.csv`, `test.csv` and `manifest.json`
/// under `<out_dir>/data`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    let dir = Layout::new(&cfg.out_dir).data_dir();
    create_dir(&dir)?;
    let mut files = Vec::new();
    for (name, set) in [
        ("train", &split.train),
        ("validation", &split.validation),
        ("test", &split.test),
    ] {
        let path = dir.join(format!("{name}.csv"));
        write_series_csv(&path, set)?;
        files.push(ManifestFile {
            split: name.to_string(),
            path: format!("{name}.csv"),
            rows: set.len(),
            sha256: sha256_file(&path)?,
        });
    }
    let manifest = Manifest {
        generator: cfg.dataset.generator.clone(),
        counts: cfg.dataset.counts,
        seed: cfg.dataset.seed,
        series_len: cfg.series_len(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&dir.join("manifest.json"), &(text + "\n"))?;
    Ok(manifest)
}

/// Training pairs for the configured trained method.
pub fn build_pairs(cfg: &ExperimentConfig, series: &[TimeSeries]) -> Result<PairSet> {
    let window = cfg.window_spec()?;
    match cfg.method {
        Method::Visual => visual_pairs(series, &window, &cfg.render),
        Method::Numeric => numeric_pairs(series, &window),
        m => Err(Error::Config(format!("{} is not trained", m.name()))),
    }
}

/// Trains one model seed, writing its checkpoint and history CSV.
pub fn cmd_train(cfg: &ExperimentConfig, seed: u64) -> Result<(Model<f32>, TrainHistory)> {
    cmd_train_with_progress(cfg, seed, &mut |_| {})
}

/// [`cmd_train`] reporting every finished epoch to `progress`.
pub fn cmd_train_with_progress(
    cfg: &ExperimentConfig,
    seed: u64,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<(Model<f32>, TrainHistory)> {
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config(seed)?;
    let split = load_split(cfg)?;
    let train_set = build_pairs(cfg, &split.train)?;
    let val_set = build_pairs(cfg, &split.validation)?;
    let layout = Layout::new(&cfg.out_dir);
    let ckpt = layout.checkpoint(cfg.method, seed);
    create_dir(ckpt.parent().expect("checkpoint has a parent"))?;

    let snap_dir = layout.snapshots(cfg.method, seed);
    let every = cfg.train.snapshot_every.unwrap_or(0);
    if every > 0 {
        create_dir(&snap_dir)?;
    }
    let probe = split.validation[..1].to_vec();
    let mut snap_err = None;
    let mut hook = |rec: &EpochRecord, model: &Model<f32>| {
        progress(rec);
        if every == 0 || !rec.epoch.is_multiple_of(every) || snap_err.is_some() {
            return;
        }
        let path = snap_dir.join(format!("epoch{:04}.pgm", rec.epoch));
        let f = if cfg.method == Method::Visual {
            Forecaster::Visual(model)
        } else {
            Forecaster::Numeric(model)
        };
        let res = eval::forecast_images(cfg, &f, &probe, 0).and_then(|imgs| write_pgm(&path, &imgs[0].1));
        if let Err(e) = res {
            snap_err = Some(e);
        }
    };
    let (model, history) = train_with_hook(&model_cfg, &train_set, &val_set, &train_cfg, &mut hook)?;
    if let Some(e) = snap_err {
        return Err(e);
    }
    checkpoint::save(&ckpt, &model)?;
    history.write_csv(&layout.history(cfg.method, seed))?;
    Ok((model, history))
}

/// Loads the checkpoints for the configured seeds (or the explicit list).
pub fn load_models(cfg: &ExperimentConfig, explicit: &[(u64, PathBuf)]) -> Result<Vec<(u64, Model<f32>)>> {
    if !cfg.method.is_trained() {
        return Ok(Vec::new());
    }
    let model_cfg = cfg.model_config()?;
    let layout = Layout::new(&cfg.out_dir);
    let paths: Vec<(u64, PathBuf)> = if explicit.is_empty() {
        cfg.eval
            .model_seeds
            .iter()
            .map(|&s| (s, layout.checkpoint(cfg.method, s)))
            .collect()
    } else {
        explicit.to_vec()
    };
    paths
        .into_iter()
        .map(|(seed, p)| Ok((seed, checkpoint::load(&p, &model_cfg)?)))
        .collect()
}

/// Evaluates the configured method on the test split and writes the JSON
/// report plus a per-column profile CSV.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoints: &[(u64, PathBuf)]) -> Result<EvalReport> {
    cfg.validate()?;
    let models = load_models(cfg, checkpoints)?;
    let split = load_split(cfg)?;
    let report = evaluate(cfg, &split.test, &models)?;
    let path = Layout::new(&cfg.out_dir).report(cfg.method);
    create_dir(path.parent().expect("report has a parent"))?;
    report.write_json(&path)?;
    write_text(&path.with_extension("profile.csv"), &report.profile_csv())?;
    Ok(report)
}

/// Comparison table and prediction-region IoU curves.
pub struct ReportOutput {
    pub table: String,
    pub table_csv: String,
    pub profile_csv: String,
}

pub fn cmd_report(reports: &[EvalReport], force: bool) -> Result<ReportOutput> {
    if reports.is_empty() {
        return Err(Error::Config("at least one report is required".into()));
    }
    if !force {
        report::check_compatible(reports)?;
    }
    Ok(ReportOutput {
        table: report::render_table(reports),
        table_csv: report::table_csv(reports),
        profile_csv: report::profile_csv(reports),
    })
}

/// Input, ground truth and forecast images of one test example.
pub struct Prediction {
    pub input: SeriesImage,
    pub truth: SeriesImage,
    pub forecast: SeriesImage,
    pub score: ExampleScore,
}

pub fn cmd_predict(cfg: &ExperimentConfig, index: usize, checkpoint: Option<&Path>, out_dir: &Path) -> Result<Prediction> {
    cfg.validate()?;
    let split = load_split(cfg)?;
    let series = split.test.get(index).ok_or_else(|| {
        Error::Config(format!("test index {index} out of range (0..{})", split.test.len()))
    })?;
    let models = match checkpoint {
        Some(p) => load_models(cfg, &[(0, p.to_path_buf())])?,
        None => load_models(cfg, &[])?.into_iter().take(1).collect(),
    };
    if cfg.method.is_trained() && models.is_empty() {
        return Err(Error::Config(format!("{} needs a checkpoint", cfg.method.name())));
    }
    let forecaster = match cfg.method {
        Method::Control => Forecaster::Control,
        Method::RandomWalk => Forecaster::RandomWalk,
        Method::Visual => Forecaster::Visual(&models[0].1),
        Method::Numeric => Forecaster::Numeric(&models[0].1),
    };
    let one = std::slice::from_ref(series);
    let (truth, forecast) = eval::forecast_images(cfg, &forecaster, one, index)?.remove(0);
    let score = eval::score_examples(cfg, &forecaster, one)?.remove(0);
    let window = cfg.window_spec()?;
    let (x, _) = crate::raster::window_pair(&series.values, &window)?;
    let input = crate::raster::render(&x, &cfg.render)?;
    create_dir(out_dir)?;
    write_pgm(&out_dir.join("input.pgm"), &input)?;
    write_pgm(&out_dir.join("truth.pgm"), &truth)?;
    write_pgm(&out_dir.join("forecast.pgm"), &forecast)?;
    Ok(Prediction {
        input,
        truth,
        forecast,
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Vfim,
}

/// Renders every series to `<out_dir>/<index>.<ext>`; returns the paths.
pub fn cmd_rasterize(series: &[TimeSeries], spec: &RenderSpec, format: ImageFormat, out_dir: &Path) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    create_dir(out_dir)?;
    series
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let img = render_series(s, spec)?;
            let path = match format {
                ImageFormat::Pgm => {
                    let p = out_dir.join(format!("{i:06}.pgm"));
                    write_pgm(&p, &img)?;
                    p
                }
                ImageFormat::Vfim => {
                    let p = out_dir.join(format!("{i:06}.vfim"));
                    write_vfim(&p, &img)?;
                    p
                }
            };
            Ok(path)
        })
        .collect()
}

/// WPE of every series plus summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WpeSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub bin_edges: Vec<f64>,
    pub bin_counts: Vec<usize>,
}

pub fn cmd_wpe(series: &[TimeSeries], config: &WpeConfig, bins: usize) -> Result<WpeSummary> {
    if series.is_empty() {
        return Err(Error::DegenerateInput("no series".into()));
    }
    let values: Vec<f64> = series
        .iter()
        .map(|s| wpe(&s.values, config))
        .collect::<Result<_>>()?;
    let ms = crate::iou::MeanStd::of(&values);
    let (bin_edges, bin_counts) = crate::complexity::histogram(&values, bins.max(1));
    Ok(WpeSummary {
        values,
        mean: ms.mean,
        std: ms.std,
        bin_edges,
        bin_counts,
    })
}
