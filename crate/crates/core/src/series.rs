//! Series generation and ingestion.
//!
//! Two synthetic families are supported: a two-timescale harmonic signal with
//! linearly growing amplitudes, and a mean-reverting Ornstein-Uhlenbeck path.
//! Real data comes in through headerless CSV files.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose, Rng};

/// Minimum number of samples a series must carry.
pub const MIN_LEN: usize = 4;

/// Default length of synthetic series.
pub const DEFAULT_LEN: usize = 200;

/// One minute in nanoseconds.
pub const MINUTE_NS: f64 = 6.0e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    /// Sampling interval in the source's natural unit.
    pub dt: f64,
    pub origin: Option<String>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_meta(values, 1.0, None)
    }

    pub fn with_meta(values: Vec<f64>, dt: f64, origin: Option<String>) -> Result<Self> {
        if values.len() < MIN_LEN {
            return Err(Error::TooShort {
                needed: MIN_LEN,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self { values, dt, origin })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Harmonic
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicParams {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub t1: f64,
    pub t2: f64,
    pub phi1: f64,
    pub phi2: f64,
    /// Total length; time runs over `1..=len`.
    pub len: usize,
}

impl HarmonicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0) {
            return Err(Error::param("t1", format!("must be > 0, got {}", self.t1)));
        }
        if !(self.t2 > 0.0) {
            return Err(Error::param("t2", format!("must be > 0, got {}", self.t2)));
        }
        if self.len < MIN_LEN {
            return Err(Error::param("len", format!("must be >= {MIN_LEN}")));
        }
        let all = [
            self.a1, self.a2, self.b1, self.b2, self.phi1, self.phi2,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("harmonic", "non-finite parameter"));
        }
        Ok(())
    }
}

/// `s_t = (A1 + B1 t) sin(2πt/T1 + φ1) + (A2 + B2 t) sin(2πt/T2 + φ2)` for `t = 1..=len`.
pub fn gen_harmonic(params: &HarmonicParams) -> Result<TimeSeries> {
    params.validate()?;
    let p = params;
    let values = (1..=p.len)
        .map(|t| {
            let t = t as f64;
            (p.a1 + p.b1 * t) * (2.0 * PI * t / p.t1 + p.phi1).sin()
                + (p.a2 + p.b2 * t) * (2.0 * PI * t / p.t2 + p.phi2).sin()
        })
        .collect();
    TimeSeries::with_meta(values, 1.0, Some("harmonic".into()))
}

/// A scalar sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dist {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    Fixed { value: f64 },
}

impl Dist {
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match *self {
            Dist::Normal { mean, std } => {
                if std > 0.0 {
                    Normal::new(mean, std).expect("finite std").sample(rng)
                } else {
                    mean
                }
            }
            Dist::Uniform { lo, hi } => {
                if hi > lo {
                    Uniform::new(lo, hi).expect("lo < hi").sample(rng)
                } else {
                    lo
                }
            }
            Dist::Fixed { value } => value,
        }
    }

    /// Rejection-samples until the draw is strictly positive.
    pub fn sample_positive(&self, rng: &mut Rng) -> f64 {
        for _ in 0..10_000 {
            let v = self.sample(rng);
            if v > 0.0 {
                return v;
            }
        }
        panic!("distribution {self:?} has negligible positive mass");
    }

    fn scaled(&self, k: f64) -> Dist {
        match *self {
            Dist::Normal { mean, std } => Dist::Normal {
                mean: mean * k,
                std: std * k,
            },
            Dist::Uniform { lo, hi } => Dist::Uniform {
                lo: lo * k,
                hi: hi * k,
            },
            Dist::Fixed { value } => Dist::Fixed { value: value * k },
        }
    }
}

/// Parameter distributions for the harmonic family. Periods and trends are
/// expressed relative to the series length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicPrior {
    pub len: usize,
    pub amplitude: Dist,
    /// `B ~ U(-k/len, k/len)` is stored as `U(-k, k)`.
    pub trend_per_len: Dist,
    pub short_period_per_len: Dist,
    pub long_period_per_len: Dist,
    pub phase: Dist,
}

impl HarmonicPrior {
    pub fn with_len(len: usize) -> Self {
        Self {
            len,
            amplitude: Dist::Normal { mean: 1.0, std: 0.5 },
            trend_per_len: Dist::Uniform { lo: -1.0, hi: 1.0 },
            short_period_per_len: Dist::Normal { mean: 0.2, std: 0.1 },
            long_period_per_len: Dist::Normal { mean: 1.0, std: 0.5 },
            phase: Dist::Uniform {
                lo: 0.0,
                hi: 2.0 * PI,
            },
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> HarmonicParams {
        let len = self.len as f64;
        let trend = self.trend_per_len.scaled(1.0 / len);
        let short = self.short_period_per_len.scaled(len);
        let long = self.long_period_per_len.scaled(len);
        HarmonicParams {
            a1: self.amplitude.sample(rng),
            a2: self.amplitude.sample(rng),
            b1: trend.sample(rng),
            b2: trend.sample(rng),
            t1: short.sample_positive(rng),
            t2: long.sample_positive(rng),
            phi1: self.phase.sample(rng),
            phi2: self.phase.sample(rng),
            len: self.len,
        }
    }
}

impl Default for HarmonicPrior {
    fn default() -> Self {
        Self::with_len(DEFAULT_LEN)
    }
}

/// Draws harmonic parameters from the default prior for a series of length `len`.
pub fn sample_harmonic_params(rng: &mut Rng, len: usize) -> HarmonicParams {
    HarmonicPrior::with_len(len.max(MIN_LEN)).sample(rng)
}

// ---------------------------------------------------------------------------
// Ornstein-Uhlenbeck
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub mu: f64,
    /// Mean-reversion rate per nanosecond.
    pub gamma: f64,
    pub sigma: f64,
    pub s0: f64,
    pub step_ns: f64,
    /// Number of samples emitted after `s0`.
    pub n: usize,
}

impl OuParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::param("gamma", "must be > 0"));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::param("sigma", "must be >= 0"));
        }
        if !(self.step_ns > 0.0) {
            return Err(Error::param("step_ns", "must be > 0"));
        }
        if !self.mu.is_finite() || !self.s0.is_finite() {
            return Err(Error::param("mu", "must be finite"));
        }
        if self.n < MIN_LEN {
            return Err(Error::param("n", format!("must be >= {MIN_LEN}")));
        }
        Ok(())
    }

    /// Per-step decay factor `e^{-γΔt}`.
    pub fn decay(&self) -> f64 {
        (-self.gamma * self.step_ns).exp()
    }

    /// Stationary variance `σ²/(2γ)`.
    pub fn stationary_variance(&self) -> f64 {
        self.sigma * self.sigma / (2.0 * self.gamma)
    }
}

/// Iterates the exact one-step Gaussian transition
/// `s_t ~ N(μ + (s_{t-1} - μ) e^{-γΔt}, σ²/(2γ) (1 - e^{-2γΔt}))`.
pub fn gen_ou(params: &OuParams, rng: &mut Rng) -> Result<TimeSeries> {
    params.validate()?;
    let decay = params.decay();
    // 1 - e^{-2γΔt}, accurate for small exponents
    let var = params.stationary_variance() * -(-2.0 * params.gamma * params.step_ns).exp_m1();
    let std = var.sqrt();
    let mut s = params.s0;
    let mut values = Vec::with_capacity(params.n);
    for _ in 0..params.n {
        let mean = params.mu + (s - params.mu) * decay;
        let z: f64 = rand_distr::StandardNormal.sample(rng);
        s = mean + std * z;
        values.push(s);
    }
    TimeSeries::with_meta(values, params.step_ns, Some("ou".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuPrior {
    pub n: usize,
    pub mu: f64,
    pub step_ns: f64,
    pub gamma: Dist,
    pub sigma: Dist,
}

impl OuPrior {
    pub fn with_len(n: usize) -> Self {
        Self {
            n,
            mu: 0.0,
            step_ns: MINUTE_NS,
            gamma: Dist::Normal {
                mean: 8e-8,
                std: 4e-8,
            },
            sigma: Dist::Normal {
                mean: 1e-2,
                std: 5e-3,
            },
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> OuParams {
        OuParams {
            mu: self.mu,
            gamma: self.gamma.sample_positive(rng),
            sigma: self.sigma.sample_positive(rng),
            s0: self.mu,
            step_ns: self.step_ns,
            n: self.n,
        }
    }
}

impl Default for OuPrior {
    fn default() -> Self {
        Self::with_len(DEFAULT_LEN)
    }
}

/// Draws OU parameters from the default prior.
pub fn sample_ou_params(rng: &mut Rng) -> OuParams {
    OuPrior::default().sample(rng)
}

// ---------------------------------------------------------------------------
// CSV ingestion and normalization
// ---------------------------------------------------------------------------

/// Cuts each CSV row into windows of `len` samples every `stride` samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmenting {
    pub len: usize,
    pub stride: usize,
}

/// Reads a headerless CSV. Without `segmenting` every row is one series;
/// with it, every row is cut into sliding segments. Row numbers in errors are
/// 1-based.
pub fn load_series_csv(path: &Path, segmenting: Option<Segmenting>) -> Result<Vec<TimeSeries>> {
    if let Some(seg) = segmenting {
        if seg.len < MIN_LEN {
            return Err(Error::param("segment_len", format!("must be >= {MIN_LEN}")));
        }
        if seg.stride == 0 {
            return Err(Error::param("stride", "must be >= 1"));
        }
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |row: usize, reason: String| Error::Parse {
        path: PathBuf::from(path),
        row,
        reason,
    };
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| {
                let cell = cell.trim();
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(
                        row,
                        format!("column {}: `{cell}` is not a finite number", col + 1),
                    )),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        match segmenting {
            None => {
                let ts = TimeSeries::with_meta(values, 1.0, Some(origin.clone()))
                    .map_err(|e| parse_err(row, e.to_string()))?;
                out.push(ts);
            }
            Some(seg) => {
                if values.len() < seg.len {
                    return Err(parse_err(
                        row,
                        format!("{} values, shorter than segment length {}", values.len(), seg.len),
                    ));
                }
                let mut start = 0;
                while start + seg.len <= values.len() {
                    out.push(TimeSeries::with_meta(
                        values[start..start + seg.len].to_vec(),
                        1.0,
                        Some(origin.clone()),
                    )?);
                    start += seg.stride;
                }
            }
        }
    }
    Ok(out)
}

/// Writes series as headerless CSV, one per row, using shortest round-trip
/// decimal formatting.
pub fn write_series_csv(path: &Path, series: &[TimeSeries]) -> Result<()> {
    let mut text = String::new();
    for s in series {
        let row: Vec<String> = s.values.iter().map(|v| format!("{v:?}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Zero mean, unit population standard deviation.
pub fn standardize(series: &TimeSeries) -> Result<TimeSeries> {
    let n = series.values.len() as f64;
    let mean = series.values.iter().sum::<f64>() / n;
    let var = series.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 0.0) || std < 1e-300 {
        return Err(Error::DegenerateInput("zero-variance series".into()));
    }
    let values = series.values.iter().map(|v| (v - mean) / std).collect();
    Ok(TimeSeries {
        values,
        dt: series.dt,
        origin: series.origin.clone(),
    })
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub const HARMONIC_FULL: SplitCounts = SplitCounts {
        train: 40_500,
        validation: 4_500,
        test: 15_000,
    };
    pub const OU_FULL: SplitCounts = SplitCounts {
        train: 45_000,
        validation: 5_000,
        test: 15_000,
    };
    pub const DESK: SplitCounts = SplitCounts {
        train: 4_000,
        validation: 500,
        test: 1_000,
    };

    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Harmonic(HarmonicPrior),
    Ou(OuPrior),
    Csv {
        path: PathBuf,
        segmenting: Option<Segmenting>,
        standardize: bool,
    },
}

impl GeneratorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            GeneratorSpec::Harmonic(_) => "harmonic",
            GeneratorSpec::Ou(_) => "ou",
            GeneratorSpec::Csv { .. } => "csv",
        }
    }

    /// Full-scale split sizes for the synthetic families.
    pub fn full_counts(&self) -> Option<SplitCounts> {
        match self {
            GeneratorSpec::Harmonic(_) => Some(SplitCounts::HARMONIC_FULL),
            GeneratorSpec::Ou(_) => Some(SplitCounts::OU_FULL),
            GeneratorSpec::Csv { .. } => None,
        }
    }

    /// Generates example `index` of a synthetic family from its own stream.
    pub fn generate(&self, seed: u64, purpose: Purpose, index: usize) -> Result<TimeSeries> {
        let mut rng = rng::stream_for(seed, purpose, index as u64);
        match self {
            GeneratorSpec::Harmonic(prior) => gen_harmonic(&prior.sample(&mut rng)),
            GeneratorSpec::Ou(prior) => {
                let params = prior.sample(&mut rng);
                gen_ou(&params, &mut rng)
            }
            GeneratorSpec::Csv { .. } => Err(Error::Config(
                "csv datasets are partitioned, not generated per index".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<TimeSeries>,
    pub validation: Vec<TimeSeries>,
    pub test: Vec<TimeSeries>,
    pub seed: u64,
}

/// Builds train/validation/test sets. Synthetic families draw every example
/// from its own substream; CSV sources are shuffled with the seed and then
/// partitioned by row, so the three sets never share a source row.
pub fn make_splits(generator: &GeneratorSpec, counts: SplitCounts, seed: u64) -> Result<DatasetSplit> {
    if counts.train == 0 || counts.validation == 0 || counts.test == 0 {
        return Err(Error::param("counts", "every split needs at least one example"));
    }
    match generator {
        GeneratorSpec::Csv {
            path,
            segmenting,
            standardize: std_each,
        } => {
            let mut all = load_series_csv(path, *segmenting)?;
            if *std_each {
                all = all.iter().map(standardize).collect::<Result<_>>()?;
            }
            if all.len() < counts.total() {
                return Err(Error::Config(format!(
                    "{} has {} series, {} requested",
                    path.display(),
                    all.len(),
                    counts.total()
                )));
            }
            let mut rng = rng::stream_for(seed, Purpose::Shuffle, 0);
            all.shuffle(&mut rng);
            let test = all.split_off(counts.train + counts.validation);
            let validation = all.split_off(counts.train);
            let mut test = test;
            test.truncate(counts.test);
            Ok(DatasetSplit {
                train: all,
                validation,
                test,
                seed,
            })
        }
        _ => {
            let gen = |purpose, n| {
                (0..n)
                    .map(|i| generator.generate(seed, purpose, i))
                    .collect::<Result<Vec<_>>>()
            };
            Ok(DatasetSplit {
                train: gen(Purpose::Train, counts.train)?,
                validation: gen(Purpose::Validation, counts.validation)?,
                test: gen(Purpose::Test, counts.test)?,
                seed,
            })
        }
    }
}

/// Random draw used by examples that need an arbitrary but seeded series.
pub fn random_walk_series(rng: &mut Rng, len: usize) -> Vec<f64> {
    let mut v = 0.0;
    (0..len)
        .map(|_| {
            v += rng.random_range(-1.0..1.0);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zero_amplitudes_give_zero_series() {
        let p = HarmonicParams {
            a1: 0.0,
            a2: 0.0,
            b1: 0.0,
            b2: 0.0,
            t1: 3.3,
            t2: 17.0,
            phi1: 1.0,
            phi2: 2.0,
            len: 10,
        };
        let s = gen_harmonic(&p).unwrap();
        assert_eq!(s.values, vec![0.0; 10]);
    }

    #[test]
    fn quarter_period_cosine() {
        let p = HarmonicParams {
            a1: 1.0,
            a2: 0.0,
            b1: 0.0,
            b2: 0.0,
            t1: 4.0,
            t2: 1.0,
            phi1: PI / 2.0,
            phi2: 0.0,
            len: 4,
        };
        let s = gen_harmonic(&p).unwrap();
        assert!(close(&s.values, &[0.0, -1.0, 0.0, 1.0], 1e-12), "{:?}", s.values);
    }

    #[test]
    fn harmonic_rejects_bad_periods() {
        let mut p = sample_harmonic_params(&mut rng::substream(1, 0), 50);
        p.t1 = 0.0;
        assert!(matches!(gen_harmonic(&p), Err(Error::InvalidParameter { .. })));
        p.t1 = 5.0;
        p.len = 3;
        assert!(gen_harmonic(&p).is_err());
    }

    #[test]
    fn harmonic_sampling_is_deterministic_and_positive() {
        let a = sample_harmonic_params(&mut rng::substream(5, 1), 200);
        let b = sample_harmonic_params(&mut rng::substream(5, 1), 200);
        assert_eq!(a, b);
        let mut rng = rng::substream(5, 2);
        let mut sum_a1 = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let p = sample_harmonic_params(&mut rng, 200);
            assert!(p.t1 > 0.0 && p.t2 > 0.0);
            assert!(p.b1.abs() <= 1.0 / 200.0 && p.b2.abs() <= 1.0 / 200.0);
            assert!((0.0..2.0 * PI).contains(&p.phi1));
            sum_a1 += p.a1;
        }
        let mean = sum_a1 / n as f64;
        assert!((mean - 1.0).abs() < 3.0 * 0.5 / (n as f64).sqrt(), "mean a1 = {mean}");
    }

    #[test]
    fn ou_sigma_zero_decays_geometrically() {
        let p = OuParams {
            mu: 0.0,
            gamma: std::f64::consts::LN_2 / MINUTE_NS,
            sigma: 0.0,
            s0: 1.0,
            step_ns: MINUTE_NS,
            n: 4,
        };
        let s = gen_ou(&p, &mut rng::substream(0, 0)).unwrap();
        assert!(close(&s.values[..3], &[0.5, 0.25, 0.125], 1e-12), "{:?}", s.values);
    }

    #[test]
    fn ou_fixed_point_at_mean() {
        let p = OuParams {
            mu: 3.5,
            gamma: 1e-9,
            sigma: 0.0,
            s0: 3.5,
            step_ns: MINUTE_NS,
            n: 50,
        };
        let s = gen_ou(&p, &mut rng::substream(0, 0)).unwrap();
        assert!(s.values.iter().all(|&v| v == 3.5));
    }

    #[test]
    fn ou_sampling_matches_prior() {
        let a = sample_ou_params(&mut rng::substream(8, 0));
        let b = sample_ou_params(&mut rng::substream(8, 0));
        assert_eq!(a, b);
        let mut rng = rng::substream(8, 1);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let p = sample_ou_params(&mut rng);
            assert!(p.gamma > 0.0 && p.sigma > 0.0);
            assert_eq!(p.s0, p.mu);
            sum += p.gamma;
        }
        let mean = sum / n as f64;
        // Truncation at zero lifts the mean of N(8e-8, 4e-8) by about
        // std * φ(2)/Φ(2) ≈ 0.055 std; the standard error is 0.01 std.
        let std = 4e-8;
        let truncated_mean = 8e-8 + std * 0.05399 / 0.97725;
        assert!(
            (mean - truncated_mean).abs() < 3.0 * std / (n as f64).sqrt(),
            "mean gamma = {mean}"
        );
    }

    #[test]
    fn ou_rejects_invalid() {
        let mut p = sample_ou_params(&mut rng::substream(1, 0));
        p.gamma = 0.0;
        assert!(gen_ou(&p, &mut rng::substream(0, 0)).is_err());
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_row_per_series() {
        let f = write_tmp("1,2,3,4\n");
        let s = load_series_csv(f.path(), None).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].values, vec![1.0, 2.0, 3.0, 4.0]);
        let s = load_series_csv(f.path(), Some(Segmenting { len: 4, stride: 1 })).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn csv_sliding_segments() {
        let f = write_tmp("1,2,3,4,5,6\n");
        let s = load_series_csv(f.path(), Some(Segmenting { len: 4, stride: 2 })).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].values, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s[1].values, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        let f = write_tmp("1,x,3\n");
        match load_series_csv(f.path(), None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("1,2,3,4,5\n1,2,3\n");
        match load_series_csv(f.path(), Some(Segmenting { len: 4, stride: 1 })) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_series_csv(Path::new("/nonexistent/x.csv"), None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn standardize_cases() {
        let flat = TimeSeries::new(vec![1.0; 4]).unwrap();
        assert!(matches!(standardize(&flat), Err(Error::DegenerateInput(_))));
        let s = TimeSeries::new(vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(standardize(&s).unwrap().values, vec![-1.0, 1.0, -1.0, 1.0]);
        let s = gen_harmonic(&sample_harmonic_params(&mut rng::substream(3, 3), 64)).unwrap();
        let once = standardize(&s).unwrap();
        let twice = standardize(&once).unwrap();
        assert!(close(&once.values, &twice.values, 1e-12));
    }

    #[test]
    fn splits_have_requested_sizes_and_are_deterministic() {
        let gen = GeneratorSpec::Harmonic(HarmonicPrior::with_len(40));
        let counts = SplitCounts {
            train: 100,
            validation: 10,
            test: 20,
        };
        let a = make_splits(&gen, counts, 7).unwrap();
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (100, 10, 20));
        let b = make_splits(&gen, counts, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train[0], a.test[0]);
        assert_eq!(
            GeneratorSpec::Ou(OuPrior::default()).full_counts(),
            Some(SplitCounts {
                train: 45_000,
                validation: 5_000,
                test: 15_000
            })
        );
    }

    #[test]
    fn csv_splits_partition_rows() {
        let rows: String = (0..12)
            .map(|r| format!("{r},{},{},{}\n", r + 1, r * 2, r + 5))
            .collect();
        let f = write_tmp(&rows);
        let gen = GeneratorSpec::Csv {
            path: f.path().to_path_buf(),
            segmenting: None,
            standardize: false,
        };
        let counts = SplitCounts {
            train: 6,
            validation: 3,
            test: 3,
        };
        let split = make_splits(&gen, counts, 1).unwrap();
        let mut firsts: Vec<i64> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .map(|s| s.values[0] as i64)
            .collect();
        firsts.sort();
        assert_eq!(firsts, (0..12).collect::<Vec<_>>());
    }
}
