//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::RwMode;
use crate::error::{Error, Result};
use crate::iou::ThresholdRule;
use crate::nets::{Loss, ModelConfig, NumAeConfig, VisualAeConfig};
use crate::raster::{RenderSpec, WindowSpec};
use crate::series::{GeneratorSpec, HarmonicPrior, OuPrior, SplitCounts, DEFAULT_LEN};
use crate::train::TrainConfig;

/// Forecasting method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Visual,
    Numeric,
    RandomWalk,
    /// Ground truth fed through the forecast path; must score perfectly.
    Control,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Visual => "VisualAE",
            Method::Numeric => "NumAE",
            Method::RandomWalk => "RandomWalk",
            Method::Control => "Control",
        }
    }

    pub fn is_trained(&self) -> bool {
        matches!(self, Method::Visual | Method::Numeric)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "visual" | "visualae" => Ok(Method::Visual),
            "numeric" | "numae" => Ok(Method::Numeric),
            "randomwalk" | "rw" => Ok(Method::RandomWalk),
            "control" => Ok(Method::Control),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Label used in reports; defaults to the generator name.
    pub name: Option<String>,
    pub generator: GeneratorSpec,
    pub counts: SplitCounts,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: None,
            generator: GeneratorSpec::Harmonic(HarmonicPrior::default()),
            counts: SplitCounts::DESK,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.generator.name().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub overlap: f64,
    /// Input window length; derived from the series length when absent.
    pub input_len: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            overlap: 0.75,
            input_len: None,
        }
    }
}

/// Training settings that differ from the per-model defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub lr_init: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_floor: Option<f64>,
    pub lr_patience: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub momentum: Option<f64>,
    pub loss: Option<Loss>,
    /// Dump a validation prediction PGM every this many epochs.
    pub snapshot_every: Option<usize>,
}

impl TrainOverrides {
    /// Fields set in `other` replace ours.
    pub fn merge(&mut self, other: &TrainOverrides) {
        macro_rules! take {
            ($($f:ident),*) => {$(if other.$f.is_some() { self.$f = other.$f; })*};
        }
        take!(
            batch_size,
            lr_init,
            lr_decay_factor,
            lr_floor,
            lr_patience,
            early_stop_patience,
            max_epochs,
            momentum,
            loss,
            snapshot_every
        );
    }

    pub fn resolve(&self, model: &ModelConfig, seed: u64) -> TrainConfig {
        let d = TrainConfig::for_model(model);
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            lr_init: self.lr_init.unwrap_or(d.lr_init),
            lr_decay_factor: self.lr_decay_factor.unwrap_or(d.lr_decay_factor),
            lr_floor: self.lr_floor.unwrap_or(d.lr_floor),
            lr_patience: self.lr_patience.unwrap_or(d.lr_patience),
            early_stop_patience: self.early_stop_patience.unwrap_or(d.early_stop_patience),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            momentum: self.momentum.unwrap_or(d.momentum),
            seed,
            loss: self.loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub threshold: ThresholdRule,
    pub rw_mode: RwMode,
    pub rw_seed: u64,
    /// Model seeds trained and pooled in evaluation.
    pub model_seeds: Vec<u64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: ThresholdRule::default(),
            rw_mode: RwMode::Mean,
            rw_seed: 0,
            model_seeds: vec![0, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub window: WindowConfig,
    pub render: RenderSpec,
    pub method: Method,
    pub visual: VisualAeConfig,
    pub numeric: NumAeConfig,
    pub train: TrainOverrides,
    pub eval: EvalOptions,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            window: WindowConfig::default(),
            render: RenderSpec::default(),
            method: Method::default(),
            visual: VisualAeConfig::default(),
            numeric: NumAeConfig::default(),
            train: TrainOverrides::default(),
            eval: EvalOptions::default(),
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Single-machine profile: 4,000/500/1,000 series of length 200,
    /// 64×64 images, the narrow VisualAE and two model seeds.
    pub fn desk(family: &str) -> Result<Self> {
        let generator = match family {
            "harmonic" => GeneratorSpec::Harmonic(HarmonicPrior::with_len(DEFAULT_LEN)),
            "ou" => GeneratorSpec::Ou(OuPrior::with_len(DEFAULT_LEN)),
            other => return Err(Error::Config(format!("no desk profile for `{other}`"))),
        };
        Ok(Self {
            dataset: DatasetConfig {
                name: None,
                generator,
                counts: SplitCounts::DESK,
                seed: 0,
            },
            visual: VisualAeConfig::desk(),
            train: TrainOverrides {
                max_epochs: Some(60),
                ..TrainOverrides::default()
            },
            out_dir: PathBuf::from(format!("runs/desk-{family}")),
            ..Self::default()
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a TOML file; an unreadable file is a configuration error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Length of the generated or segmented series.
    pub fn series_len(&self) -> Option<usize> {
        match &self.dataset.generator {
            GeneratorSpec::Harmonic(p) => Some(p.len),
            GeneratorSpec::Ou(p) => Some(p.n),
            GeneratorSpec::Csv { segmenting, .. } => segmenting.map(|s| s.len),
        }
    }

    pub fn window_spec(&self) -> Result<WindowSpec> {
        match (self.window.input_len, self.series_len()) {
            (Some(l), _) => WindowSpec::new(self.window.overlap, l),
            (None, Some(n)) => WindowSpec::for_series_len(self.window.overlap, n),
            (None, None) => Err(Error::Config(
                "window.input_len is required for unsegmented csv data".into(),
            )),
        }
    }

    /// Network config for the trained methods. The numeric model's length
    /// follows the input window.
    pub fn model_config(&self) -> Result<ModelConfig> {
        match self.method {
            Method::Visual => {
                let mut v = self.visual.clone();
                v.height = self.render.height;
                v.width = self.render.width;
                Ok(ModelConfig::Visual(v))
            }
            Method::Numeric => {
                let mut n = self.numeric.clone();
                n.len = self.window_spec()?.input_len;
                n.layout()?;
                Ok(ModelConfig::Numeric(n))
            }
            m => Err(Error::Config(format!("{} has no network", m.name()))),
        }
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = self.train.resolve(&self.model_config()?, seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        let w = self.window_spec()?;
        crate::iou::split_column(self.render.width, self.window.overlap)
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(n) = self.series_len() {
            if w.total_len()? > n {
                return Err(Error::Config(format!(
                    "window needs {} samples, series have {n}",
                    w.total_len()?
                )));
            }
        }
        if self.method.is_trained() {
            self.model_config()?.architecture()?;
            for &s in &self.eval.model_seeds {
                self.train_config(s)?;
            }
        }
        Ok(())
    }

    /// Hex digest of the settings that determine the data and the metric,
    /// shared by every method run on the same experiment.
    pub fn data_digest(&self) -> String {
        let key = serde_json::json!({
            "dataset": self.dataset,
            "window": self.window,
            "render": self.render,
            "threshold": self.eval.threshold,
        });
        let h = Sha256::digest(key.to_string().as_bytes());
        hex::encode(&h[..8])
    }
}
