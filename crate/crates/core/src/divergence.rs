//! Distances between column distributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::SeriesImage;

/// Additive smoothing used by [`kld`].
pub const KLD_SMOOTHING: f64 = 1e-8;

/// Default Huber threshold.
pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Jsd,
    Kld,
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        x * (x / y).ln()
    } else {
        0.0
    }
}

/// `D_KL(p ‖ q)` in nats. Both arguments get `smoothing` added to every
/// entry and are renormalized, so mismatched supports stay finite.
pub fn kld(p: &[f64], q: &[f64], smoothing: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let zp: f64 = p.iter().map(|v| v + smoothing).sum();
    let zq: f64 = q.iter().map(|v| v + smoothing).sum();
    p.iter()
        .zip(q)
        .map(|(&a, &b)| xlogy_ratio((a + smoothing) / zp, (b + smoothing) / zq))
        .sum::<f64>()
        .max(0.0)
}

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`. The per-entry terms
/// are symmetric in `(p, q)`, so swapping the arguments gives the same bits.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        // min/max ordering makes each term exactly symmetric
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        acc += 0.5 * (xlogy_ratio(lo, m) + xlogy_ratio(hi, m));
    }
    acc.clamp(0.0, std::f64::consts::LN_2)
}

/// `∂ JSD(p, q) / ∂ q_i = ½ ln(q_i / m_i)` (0 where `q_i = 0`).
pub fn jsd_grad_q(p: &[f64], q: &[f64], out: &mut [f64]) {
    for ((o, &a), &b) in out.iter_mut().zip(p).zip(q) {
        *o = if b > 0.0 { 0.5 * (b / (0.5 * (a + b))).ln() } else { 0.0 };
    }
}

pub fn distance(d: Distance, p: &[f64], q: &[f64]) -> f64 {
    match d {
        Distance::Jsd => jsd(p, q),
        Distance::Kld => kld(p, q, KLD_SMOOTHING),
    }
}

/// Per-column distances `d(y_i, ŷ_i)`.
pub fn column_distances(y: &SeriesImage, yhat: &SeriesImage, d: Distance) -> Result<Vec<f64>> {
    y.same_shape(yhat)?;
    Ok(y.columns()
        .zip(yhat.columns())
        .map(|(a, b)| distance(d, &a, &b))
        .collect())
}

/// `Σ_i d(y_i, ŷ_i)` over the image columns.
pub fn columnwise_loss(y: &SeriesImage, yhat: &SeriesImage, d: Distance) -> Result<f64> {
    Ok(column_distances(y, yhat, d)?.iter().sum())
}

/// Mean elementwise Huber penalty.
pub fn huber(a: &[f64], b: &[f64], delta: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::mismatch(a.len(), b.len()));
    }
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be > 0"));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| huber_elem(x - y, delta))
        .sum();
    Ok(total / a.len() as f64)
}

#[inline]
pub fn huber_elem(r: f64, delta: f64) -> f64 {
    let ar = r.abs();
    if ar <= delta {
        0.5 * r * r
    } else {
        delta * (ar - 0.5 * delta)
    }
}

/// Derivative of [`huber_elem`] with respect to the residual.
#[inline]
pub fn huber_elem_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}
