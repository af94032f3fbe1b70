//! Numeric forecasters compared against the image model, and the shared
//! path that turns any numeric forecast into an image.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{render, RenderSpec, SeriesImage, WindowSpec};
use crate::rng::Rng;

/// Which realization of the random walk is used as the point forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RwMode {
    /// Flat path at the last observed value (the predictive mean).
    #[default]
    Mean,
    /// One Gaussian-increment path.
    Sample,
}

/// Random walk without drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomWalkModel {
    /// RMS of the first differences.
    pub sigma_hat: f64,
    /// Last observed value.
    pub anchor: f64,
    pub mode: RwMode,
}

/// `σ̂ = sqrt(mean((s_i − s_{i−1})²))`, anchored at the last value.
pub fn rw_fit(input: &[f64], mode: RwMode) -> Result<RandomWalkModel> {
    if input.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: input.len(),
        });
    }
    let ms = input.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (input.len() - 1) as f64;
    Ok(RandomWalkModel {
        sigma_hat: ms.sqrt(),
        anchor: input[input.len() - 1],
        mode,
    })
}

/// Forecast of the next `n` values. In sample mode the step-`k` marginal
/// is `N(anchor, √k σ̂)`.
pub fn rw_predict(model: &RandomWalkModel, n: usize, rng: &mut Rng) -> Vec<f64> {
    match model.mode {
        RwMode::Mean => vec![model.anchor; n],
        RwMode::Sample => {
            if model.sigma_hat == 0.0 {
                return vec![model.anchor; n];
            }
            let step = Normal::new(0.0, model.sigma_hat).expect("sigma is finite and positive");
            let mut s = model.anchor;
            (0..n)
                .map(|_| {
                    s += step.sample(rng);
                    s
                })
                .collect()
        }
    }
}

/// Renders a numeric forecast of the shifted window: the last `c·L` input
/// samples followed by the `(1 − c)·L` predicted ones, drawn with the
/// assembled segment's own bounds.
pub fn numeric_to_image(
    input: &[f64],
    prediction: &[f64],
    window: &WindowSpec,
    spec: &RenderSpec,
) -> Result<SeriesImage> {
    render(&assemble_target(input, prediction, window)?, spec)
}

/// The full target-window series implied by a forecast.
pub fn assemble_target(input: &[f64], prediction: &[f64], window: &WindowSpec) -> Result<Vec<f64>> {
    let k = window.shift()?;
    if input.len() != window.input_len {
        return Err(Error::mismatch(window.input_len, input.len()));
    }
    if prediction.len() != k {
        return Err(Error::mismatch(k, prediction.len()));
    }
    let mut full = input[k..].to_vec();
    full.extend_from_slice(prediction);
    Ok(full)
}
