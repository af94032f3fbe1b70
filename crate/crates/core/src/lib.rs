//! Forecasting time series as images: series are rasterized into
//! column-stochastic images, a convolutional autoencoder maps an input
//! window image to the image of a shifted window, and forecasts are scored
//! column by column.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod complexity;
pub mod divergence;
pub mod error;
pub mod harness;
pub mod iou;
pub mod nets;
pub mod raster;
pub mod rng;
pub mod series;
pub mod train;

pub use error::{Error, Result};
