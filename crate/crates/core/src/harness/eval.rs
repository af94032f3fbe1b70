//! Test-set evaluation: forecast every test window, render the forecast and
//! score it column by column against the rendered ground truth.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::baselines::{numeric_to_image, rw_fit, rw_predict};
use crate::divergence::{column_distances, Distance};
use crate::error::{Error, Result};
use crate::iou::{image_iou_profile, split_column, IouProfile, MeanStd};
use crate::nets::{num_ae_forward, visual_ae_forward, Model};
use crate::raster::{render, window_pair, SeriesImage};
use crate::rng::{stream_for, Purpose};
use crate::series::TimeSeries;

/// Scores of one test example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub iou: IouProfile,
    pub jsd: Vec<f64>,
}

impl ExampleScore {
    pub fn recon_iou(&self) -> f64 {
        let s = self.iou.split_column().expect("validated overlap");
        mean(&self.iou.per_column[..s])
    }

    pub fn pred_iou(&self) -> f64 {
        let s = self.iou.split_column().expect("validated overlap");
        mean(&self.iou.per_column[s..])
    }

    pub fn pred_jsd(&self) -> f64 {
        let s = self.iou.split_column().expect("validated overlap");
        mean(&self.jsd[s..])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Forecast source for one evaluation run.
pub enum Forecaster<'a> {
    Control,
    RandomWalk,
    Visual(&'a Model<f32>),
    Numeric(&'a Model<f32>),
}

/// Rendered ground truth and forecast image of one test series.
pub fn forecast_images(
    cfg: &ExperimentConfig,
    forecaster: &Forecaster<'_>,
    series: &[TimeSeries],
    first_index: usize,
) -> Result<Vec<(SeriesImage, SeriesImage)>> {
    let window = cfg.window_spec()?;
    let k = window.shift()?;
    let windows: Vec<(Vec<f64>, Vec<f64>)> = series
        .iter()
        .map(|s| window_pair(&s.values, &window))
        .collect::<Result<_>>()?;
    let truths: Vec<SeriesImage> = windows
        .iter()
        .map(|(_, y)| render(y, &cfg.render))
        .collect::<Result<_>>()?;
    let preds: Vec<SeriesImage> = match forecaster {
        Forecaster::Control => windows
            .iter()
            .map(|(x, y)| numeric_to_image(x, &y[y.len() - k..], &window, &cfg.render))
            .collect::<Result<_>>()?,
        Forecaster::RandomWalk => windows
            .iter()
            .enumerate()
            .map(|(i, (x, _))| {
                let model = rw_fit(x, cfg.eval.rw_mode)?;
                let mut rng = stream_for(cfg.eval.rw_seed, Purpose::Baseline, (first_index + i) as u64);
                numeric_to_image(x, &rw_predict(&model, k, &mut rng), &window, &cfg.render)
            })
            .collect::<Result<_>>()?,
        Forecaster::Visual(model) => {
            let inputs: Vec<SeriesImage> = windows
                .iter()
                .map(|(x, _)| render(x, &cfg.render))
                .collect::<Result<_>>()?;
            visual_ae_forward(&model.arch, &model.params, &inputs)?
        }
        Forecaster::Numeric(model) => {
            let inputs: Vec<Vec<f64>> = windows.iter().map(|(x, _)| x.clone()).collect();
            let outs = num_ae_forward(&model.arch, &model.params, &inputs)?;
            // the network reproduces the whole target window; its last
            // (1 - c)·L values are the forecast
            windows
                .iter()
                .zip(&outs)
                .map(|((x, _), out)| numeric_to_image(x, &out[out.len() - k..], &window, &cfg.render))
                .collect::<Result<_>>()?
        }
    };
    Ok(truths.into_iter().zip(preds).collect())
}

const CHUNK: usize = 64;

/// Scores every test series, in order.
pub fn score_examples(cfg: &ExperimentConfig, forecaster: &Forecaster<'_>, test: &[TimeSeries]) -> Result<Vec<ExampleScore>> {
    let overlap = cfg.window.overlap;
    split_column(cfg.render.width, overlap)?;
    let starts: Vec<usize> = (0..test.len()).step_by(CHUNK).collect();
    let parts: Vec<Vec<ExampleScore>> = starts
        .par_iter()
        .map(|&start| {
            let chunk = &test[start..(start + CHUNK).min(test.len())];
            forecast_images(cfg, forecaster, chunk, start)?
                .iter()
                .map(|(gt, pred)| {
                    Ok(ExampleScore {
                        iou: image_iou_profile(gt, pred, cfg.eval.threshold, overlap)?,
                        jsd: column_distances(gt, pred, Distance::Jsd)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Aggregates of one set of example scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub examples: usize,
    pub recon_iou: MeanStd,
    pub pred_iou: MeanStd,
    pub pred_jsd: MeanStd,
    /// Mean IoU per image column over the full width.
    pub iou_profile: Vec<f64>,
    /// Mean JSD per image column over the full width.
    pub jsd_profile: Vec<f64>,
}

impl Summary {
    pub fn of(scores: &[ExampleScore]) -> Result<Self> {
        let first = scores
            .first()
            .ok_or_else(|| Error::DegenerateInput("no test examples".into()))?;
        let w = first.iou.per_column.len();
        let col_mean = |f: &dyn Fn(&ExampleScore) -> &[f64]| -> Vec<f64> {
            (0..w)
                .map(|c| scores.iter().map(|s| f(s)[c]).sum::<f64>() / scores.len() as f64)
                .collect()
        };
        let collect = |f: fn(&ExampleScore) -> f64| scores.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            examples: scores.len(),
            recon_iou: MeanStd::of(&collect(ExampleScore::recon_iou)),
            pred_iou: MeanStd::of(&collect(ExampleScore::pred_iou)),
            pred_jsd: MeanStd::of(&collect(ExampleScore::pred_jsd)),
            iou_profile: col_mean(&|s| &s.iou.per_column),
            jsd_profile: col_mean(&|s| &s.jsd),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    /// Model seed, absent for untrained methods.
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Evaluation of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: String,
    /// Digest of the data, window, render and threshold settings.
    pub data_digest: String,
    pub overlap: f64,
    pub width: usize,
    pub dataset_seed: u64,
    /// Statistics over all examples of all model seeds.
    pub pooled: Summary,
    pub per_seed: Vec<SeedSummary>,
}

impl EvalReport {
    pub fn split_column(&self) -> usize {
        split_column(self.width, self.overlap).expect("validated overlap")
    }

    /// Per-column mean IoU over the prediction region.
    pub fn prediction_profile(&self) -> &[f64] {
        &self.pooled.iou_profile[self.split_column()..]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: e.line(),
            reason: e.to_string(),
        })
    }

    /// `column,region,iou,jsd` over the full width.
    pub fn profile_csv(&self) -> String {
        let split = self.split_column();
        let mut s = String::from("column,region,iou,jsd\n");
        for (c, (iou, jsd)) in self
            .pooled
            .iou_profile
            .iter()
            .zip(&self.pooled.jsd_profile)
            .enumerate()
        {
            let region = if c < split { "reconstruction" } else { "prediction" };
            s.push_str(&format!("{c},{region},{iou:.6},{jsd:.6}\n"));
        }
        s
    }
}

/// Evaluates `method` on the test split. Trained methods need one model per
/// seed; scores are pooled over seeds.
pub fn evaluate(
    cfg: &ExperimentConfig,
    test: &[TimeSeries],
    models: &[(u64, Model<f32>)],
) -> Result<EvalReport> {
    let runs: Vec<(Option<u64>, Vec<ExampleScore>)> = match cfg.method {
        Method::Control => vec![(None, score_examples(cfg, &Forecaster::Control, test)?)],
        Method::RandomWalk => vec![(None, score_examples(cfg, &Forecaster::RandomWalk, test)?)],
        Method::Visual | Method::Numeric => {
            if models.is_empty() {
                return Err(Error::Config(format!("{} needs at least one checkpoint", cfg.method.name())));
            }
            let expected = cfg.model_config()?;
            models
                .iter()
                .map(|(seed, m)| {
                    if m.config != expected {
                        return Err(Error::Checkpoint(format!(
                            "model for seed {seed} does not match the experiment config"
                        )));
                    }
                    let f = if cfg.method == Method::Visual {
                        Forecaster::Visual(m)
                    } else {
                        Forecaster::Numeric(m)
                    };
                    Ok((Some(*seed), score_examples(cfg, &f, test)?))
                })
                .collect::<Result<_>>()?
        }
    };
    let all: Vec<ExampleScore> = runs.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    Ok(EvalReport {
        dataset: cfg.dataset.label(),
        method: cfg.method.name().to_string(),
        data_digest: cfg.data_digest(),
        overlap: cfg.window.overlap,
        width: cfg.render.width,
        dataset_seed: cfg.dataset.seed,
        pooled: Summary::of(&all)?,
        per_seed: runs
            .iter()
            .map(|(seed, s)| {
                Ok(SeedSummary {
                    seed: *seed,
                    summary: Summary::of(s)?,
                })
            })
            .collect::<Result<_>>()?,
    })
}
