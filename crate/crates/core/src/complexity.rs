//! Weighted permutation entropy over ordinal triplets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinal window length. Fixed at three, giving 3! = 6 patterns.
pub const EMBED_DIM: usize = 3;
const N_PATTERNS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WpeConfig {
    /// Values closer than this are treated as tied and ordered by index.
    pub tie_epsilon: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self { tie_epsilon: 0.0 }
    }
}

/// Index (0..6) of the permutation that sorts `w` ascending; ties within
/// `eps` keep index order.
pub fn ordinal_pattern(w: [f64; 3], eps: f64) -> usize {
    let mut order = [0usize, 1, 2];
    // insertion sort keeps equal elements in index order
    for i in 1..3 {
        let mut j = i;
        while j > 0 && w[order[j - 1]] - w[order[j]] > eps {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    match order {
        [0, 1, 2] => 0,
        [0, 2, 1] => 1,
        [1, 0, 2] => 2,
        [1, 2, 0] => 3,
        [2, 0, 1] => 4,
        [2, 1, 0] => 5,
        _ => unreachable!(),
    }
}

fn triplet_variance(w: [f64; 3]) -> f64 {
    let mean = (w[0] + w[1] + w[2]) / 3.0;
    w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0
}

/// Normalized weighted permutation entropy in `[0, 1]`. Each triplet is
/// weighted by its population variance; a series with zero total weight
/// (constant) has entropy 0.
pub fn wpe(series: &[f64], config: &WpeConfig) -> Result<f64> {
    if series.len() < EMBED_DIM + 1 {
        return Err(Error::TooShort {
            needed: EMBED_DIM + 1,
            got: series.len(),
        });
    }
    let mut mass = [0.0f64; N_PATTERNS];
    for w in series.windows(EMBED_DIM) {
        let w = [w[0], w[1], w[2]];
        mass[ordinal_pattern(w, config.tie_epsilon)] += triplet_variance(w);
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Ok(0.0);
    }
    let h: f64 = mass
        .iter()
        .filter(|&&m| m > 0.0)
        .map(|&m| {
            let p = m / total;
            -p * p.ln()
        })
        .sum();
    Ok((h / (N_PATTERNS as f64).ln()).clamp(0.0, 1.0))
}

/// Equal-width histogram over `[0, 1]`; returns `(edges, counts)`.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let bins = bins.max(1);
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v * bins as f64).floor() as isize).clamp(0, bins as isize - 1);
        counts[b as usize] += 1;
    }
    (edges, counts)
}
