use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vforecast::baselines::RwMode;
use vforecast::complexity::WpeConfig;
use vforecast::error::{Error, Result};
use vforecast::harness::{self, EvalReport, ExperimentConfig, ImageFormat, Method};
use vforecast::iou::ThresholdRule;
use vforecast::raster::RenderSpec;
use vforecast::series::{load_series_csv, Segmenting, SplitCounts};

#[derive(Parser)]
#[command(name = "vforecast", version, about = "Forecast time series as images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/validation/test CSVs and a manifest
    Gen(ExpArgs),
    /// Render series from a CSV into images
    Rasterize(RasterizeArgs),
    /// Weighted permutation entropy of a dataset
    Wpe(WpeArgs),
    /// Train a model
    Train(TrainArgs),
    /// Evaluate a method on the test split
    Eval(EvalArgs),
    /// Compare evaluation reports
    Report(ReportArgs),
    /// Dump input, ground-truth and forecast images for one test example
    Predict(PredictArgs),
}

#[derive(Args, Clone)]
struct ExpArgs {
    /// Experiment TOML file
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in profile used when no config file is given
    #[arg(long, value_enum, default_value = "desk-harmonic")]
    profile: Profile,
    /// Output directory (overrides `out_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Dataset seed
    #[arg(long)]
    data_seed: Option<u64>,
    /// Split sizes as TRAIN,VALIDATION,TEST
    #[arg(long)]
    counts: Option<String>,
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    DeskHarmonic,
    DeskOu,
}

impl ExpArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::desk(match self.profile {
                Profile::DeskHarmonic => "harmonic",
                Profile::DeskOu => "ou",
            })?,
        };
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(m) = &self.method {
            cfg.method = Method::parse(m)?;
        }
        if let Some(s) = self.data_seed {
            cfg.dataset.seed = s;
        }
        if let Some(c) = &self.counts {
            cfg.dataset.counts = parse_counts(c)?;
        }
        if let Some(o) = self.overlap {
            cfg.window.overlap = o;
        }
        Ok(cfg)
    }
}

fn parse_counts(s: &str) -> Result<SplitCounts> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad --counts `{s}`")))?;
    match v[..] {
        [train, validation, test] => Ok(SplitCounts {
            train,
            validation,
            test,
        }),
        _ => Err(Error::Config("--counts needs three numbers".into())),
    }
}

#[derive(Args)]
struct RasterizeArgs {
    /// Headerless CSV, one series per row
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, value_enum, default_value = "pgm")]
    format: Format,
    /// Cut rows into segments of this length
    #[arg(long)]
    segment_len: Option<usize>,
    #[arg(long, requires = "segment_len")]
    stride: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Pgm,
    Vfim,
}

#[derive(Args)]
struct WpeArgs {
    /// Headerless CSV; when absent the configured dataset's training split is used
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    exp: ExpArgs,
    /// Write per-series values here
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    tie_epsilon: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Model seeds; defaults to the configured list
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Dump a validation forecast PGM every N epochs
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// SEED=PATH pairs; defaults to the checkpoints under the output directory
    #[arg(long)]
    checkpoint: Vec<String>,
    #[arg(long, value_enum)]
    rw_mode: Option<RwModeArg>,
    /// `relative:F` (fraction of the column max) or `above-uniform`
    #[arg(long)]
    threshold: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RwModeArg {
    Mean,
    Sample,
}

#[derive(Args)]
struct ReportArgs {
    /// Report JSON files
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Write table.csv and profile.csv here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare reports even when their settings differ
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Index into the test split
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory for the PGM files
    #[arg(long)]
    images: PathBuf,
}

fn parse_threshold(s: &str) -> Result<ThresholdRule> {
    if s == "above-uniform" {
        return Ok(ThresholdRule::AboveUniform);
    }
    let frac = s
        .strip_prefix("relative:")
        .and_then(|f| f.parse::<f64>().ok())
        .filter(|f| (0.0..=1.0).contains(f))
        .ok_or_else(|| Error::Config(format!("bad --threshold `{s}`")))?;
    Ok(ThresholdRule::RelativeToMax { fraction: frac })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(cli: Cli) -> Result<()> {
    let threads = harness::init_threads()?;
    match cli.command {
        Command::Gen(a) => {
            let cfg = a.load()?;
            let m = harness::cmd_gen(&cfg)?;
            for f in &m.files {
                println!("{:<10} {:>6} rows  {}", f.split, f.rows, f.sha256);
            }
            println!("wrote {}", harness::Layout::new(&cfg.out_dir).data_dir().display());
        }
        Command::Rasterize(a) => {
            let seg = a.segment_len.map(|len| Segmenting {
                len,
                stride: a.stride.unwrap_or(len),
            });
            let series = load_series_csv(&a.input, seg)?;
            let spec = RenderSpec {
                width: a.width,
                height: a.height,
                ..RenderSpec::default()
            };
            let format = match a.format {
                Format::Pgm => ImageFormat::Pgm,
                Format::Vfim => ImageFormat::Vfim,
            };
            let paths = harness::cmd_rasterize(&series, &spec, format, &a.out)?;
            println!("wrote {} images to {}", paths.len(), a.out.display());
        }
        Command::Wpe(a) => {
            let series = match &a.input {
                Some(p) => load_series_csv(p, None)?,
                None => harness::load_split(&a.exp.load()?)?.train,
            };
            let cfg = WpeConfig {
                tie_epsilon: a.tie_epsilon,
            };
            let s = harness::cmd_wpe(&series, &cfg, a.bins)?;
            println!("series {}  mean {:.4}  std {:.4}", s.values.len(), s.mean, s.std);
            for (i, c) in s.bin_counts.iter().enumerate() {
                println!("[{:.3}, {:.3}) {c}", s.bin_edges[i], s.bin_edges[i + 1]);
            }
            if let Some(p) = &a.csv {
                let mut text = String::from("index,wpe\n");
                for (i, v) in s.values.iter().enumerate() {
                    text.push_str(&format!("{i},{v:?}\n"));
                }
                write(p, &text)?;
            }
        }
        Command::Train(a) => {
            let mut cfg = a.exp.load()?;
            let flags = harness::TrainOverrides {
                max_epochs: a.epochs,
                batch_size: a.batch_size,
                lr_init: a.lr,
                momentum: a.momentum,
                snapshot_every: a.snapshot_every,
                ..Default::default()
            };
            cfg.train.merge(&flags);
            if !cfg.method.is_trained() {
                return Err(Error::Config(format!("{} needs no training", cfg.method.name())));
            }
            let seeds = if a.seed.is_empty() {
                cfg.eval.model_seeds.clone()
            } else {
                a.seed.clone()
            };
            eprintln!("training {} on {} with {threads} worker(s)", cfg.method.name(), cfg.dataset.label());
            for seed in seeds {
                let (_, h) = harness::cmd_train_with_progress(&cfg, seed, &mut |r| {
                    eprintln!(
                        "seed {seed} epoch {:>3}  train {:.5}  val {:.5}  lr {:.0e}  {:.1}s",
                        r.epoch, r.train_loss, r.val_loss, r.lr, r.seconds
                    )
                })?;
                let layout = harness::Layout::new(&cfg.out_dir);
                println!(
                    "seed {seed}: {} epochs, best epoch {} (val loss {:.6}) -> {}",
                    h.epochs.len(),
                    h.best_epoch,
                    h.best_val_loss().unwrap_or(f64::NAN),
                    layout.checkpoint(cfg.method, seed).display()
                );
            }
        }
        Command::Eval(a) => {
            let mut cfg = a.exp.load()?;
            if let Some(m) = a.rw_mode {
                cfg.eval.rw_mode = match m {
                    RwModeArg::Mean => RwMode::Mean,
                    RwModeArg::Sample => RwMode::Sample,
                };
            }
            if let Some(t) = &a.threshold {
                cfg.eval.threshold = parse_threshold(t)?;
            }
            let explicit = a
                .checkpoint
                .iter()
                .map(|s| {
                    let (seed, path) = s
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("--checkpoint expects SEED=PATH, got `{s}`")))?;
                    let seed = seed
                        .parse()
                        .map_err(|_| Error::Config(format!("bad seed in `{s}`")))?;
                    Ok((seed, PathBuf::from(path)))
                })
                .collect::<Result<Vec<_>>>()?;
            let r = harness::cmd_eval(&cfg, &explicit)?;
            println!(
                "{} / {}: IoU pred {}  JSD pred {}  IoU recon {}",
                r.dataset, r.method, r.pooled.pred_iou, r.pooled.pred_jsd, r.pooled.recon_iou
            );
            println!("wrote {}", harness::Layout::new(&cfg.out_dir).report(cfg.method).display());
        }
        Command::Report(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| EvalReport::read_json(p))
                .collect::<Result<Vec<_>>>()?;
            let out = harness::cmd_report(&reports, a.force)?;
            print!("{}", out.table);
            if let Some(dir) = &a.out {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                write(&dir.join("table.csv"), &out.table_csv)?;
                write(&dir.join("profile.csv"), &out.profile_csv)?;
            }
        }
        Command::Predict(a) => {
            let cfg = a.exp.load()?;
            let p = harness::cmd_predict(&cfg, a.index, a.checkpoint.as_deref(), &a.images)?;
            println!(
                "example {}: IoU recon {:.3}  IoU pred {:.3}  JSD pred {:.4}",
                a.index,
                p.score.recon_iou(),
                p.score.pred_iou(),
                p.score.pred_jsd()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
