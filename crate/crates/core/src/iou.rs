//! Column-wise intersection-over-union between images.
//!
//! Each column is reduced to the 1-D bounding interval of its "on" pixels;
//! corresponding intervals of two images are compared by IoU over inclusive
//! pixel rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::SeriesImage;

/// Decides which pixels of a column count as "on".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `value >= fraction × column max`.
    RelativeToMax { fraction: f64 },
    /// `value > 1 / height`, i.e. above the uniform distribution.
    AboveUniform,
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::RelativeToMax { fraction: 0.2 }
    }
}

impl ThresholdRule {
    fn is_on(&self, v: f64, col_max: f64, height: usize) -> bool {
        match *self {
            ThresholdRule::RelativeToMax { fraction } => v >= fraction * col_max,
            ThresholdRule::AboveUniform => v > 1.0 / height as f64,
        }
    }
}

/// Inclusive row interval; `Empty` when no pixel is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowInterval {
    Empty,
    Span { lo: usize, hi: usize },
}

impl RowInterval {
    pub fn len(&self) -> usize {
        match *self {
            RowInterval::Empty => 0,
            RowInterval::Span { lo, hi } => hi - lo + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, RowInterval::Empty)
    }
}

pub fn column_bbox(column: &[f64], rule: ThresholdRule) -> RowInterval {
    let col_max = column.iter().copied().fold(0.0, f64::max);
    if !(col_max > 0.0) {
        return RowInterval::Empty;
    }
    let h = column.len();
    let mut on = column
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0 && rule.is_on(v, col_max, h))
        .map(|(r, _)| r);
    match on.next() {
        None => RowInterval::Empty,
        Some(lo) => RowInterval::Span {
            lo,
            hi: on.next_back().unwrap_or(lo),
        },
    }
}

/// Two empty intervals score 1, one empty interval scores 0.
pub fn column_iou(a: RowInterval, b: RowInterval) -> f64 {
    match (a, b) {
        (RowInterval::Empty, RowInterval::Empty) => 1.0,
        (RowInterval::Empty, _) | (_, RowInterval::Empty) => 0.0,
        (RowInterval::Span { lo: alo, hi: ahi }, RowInterval::Span { lo: blo, hi: bhi }) => {
            let lo = alo.max(blo);
            let hi = ahi.min(bhi);
            let inter = if hi >= lo { hi - lo + 1 } else { 0 };
            let union = a.len() + b.len() - inter;
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouProfile {
    pub per_column: Vec<f64>,
    /// Overlap fraction separating the reconstruction and prediction regions.
    pub overlap: f64,
}

impl IouProfile {
    /// First column of the prediction region.
    pub fn split_column(&self) -> Result<usize> {
        split_column(self.per_column.len(), self.overlap)
    }

    pub fn prediction_region(&self) -> Result<&[f64]> {
        Ok(&self.per_column[self.split_column()?..])
    }
}

/// `c · width`, required to be an integer.
pub fn split_column(width: usize, overlap: f64) -> Result<usize> {
    let s = overlap * width as f64;
    let sr = s.round();
    if (s - sr).abs() > 1e-9 || sr as usize > width {
        return Err(Error::param(
            "overlap",
            format!("c·width = {s} is not an integer column"),
        ));
    }
    Ok(sr as usize)
}

pub fn image_iou_profile(
    gt: &SeriesImage,
    pred: &SeriesImage,
    rule: ThresholdRule,
    overlap: f64,
) -> Result<IouProfile> {
    gt.same_shape(pred)?;
    let per_column = gt
        .columns()
        .zip(pred.columns())
        .map(|(a, b)| column_iou(column_bbox(&a, rule), column_bbox(&b, rule)))
        .collect();
    Ok(IouProfile {
        per_column,
        overlap,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean IoU over the reconstruction and the prediction region.
pub fn region_scores(profile: &IouProfile) -> Result<(f64, f64)> {
    let split = profile.split_column()?;
    Ok((
        mean(&profile.per_column[..split]),
        mean(&profile.per_column[split..]),
    ))
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let m = mean(values);
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len().max(1) as f64;
        Self {
            mean: m,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn span(lo: usize, hi: usize) -> RowInterval {
        RowInterval::Span { lo, hi }
    }

    #[test]
    fn bbox_cases() {
        let mut col = vec![0.0; 10];
        col[5] = 1.0;
        assert_eq!(column_bbox(&col, ThresholdRule::default()), span(5, 5));
        let mut col = vec![0.01; 10];
        col[2] = 0.4;
        col[7] = 0.3;
        assert_eq!(column_bbox(&col, ThresholdRule::default()), span(2, 7));
        assert_eq!(column_bbox(&[0.0; 4], ThresholdRule::default()), RowInterval::Empty);
        assert_eq!(column_bbox(&[0.25; 4], ThresholdRule::AboveUniform), RowInterval::Empty);
    }

    #[test]
    fn bbox_shrinks_as_the_threshold_rises() {
        // softmax of a parabola: diffuse, single-peaked
        let logits: Vec<f64> = (0..32).map(|r| -((r as f64 - 12.0) / 4.0).powi(2)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let col: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let mut prev = usize::MAX;
        for k in 1..20 {
            let len = column_bbox(&col, ThresholdRule::RelativeToMax { fraction: k as f64 * 0.05 }).len();
            assert!(len <= prev);
            prev = len;
        }
        assert!(prev >= 1);
    }

    #[test]
    fn iou_cases() {
        assert_eq!(column_iou(span(3, 9), span(3, 9)), 1.0);
        assert_eq!(column_iou(span(10, 20), span(15, 25)), 0.375);
        assert_eq!(column_iou(span(0, 3), span(10, 12)), 0.0);
        assert_eq!(column_iou(RowInterval::Empty, RowInterval::Empty), 1.0);
        assert_eq!(column_iou(RowInterval::Empty, span(1, 1)), 0.0);
    }

    #[test]
    fn profile_of_one_hot_images() {
        let (h, w) = (8, 4);
        let mut a = vec![0.0; h * w];
        let mut b = vec![0.0; h * w];
        for c in 0..w {
            a[(c + 1) * w + c] = 1.0;
            b[(c + 2) * w + c] = 1.0;
        }
        let a = SeriesImage::from_pixels(h, w, a, (0.0, 1.0)).unwrap();
        let b = SeriesImage::from_pixels(h, w, b, (0.0, 1.0)).unwrap();
        let self_p = image_iou_profile(&a, &a, ThresholdRule::default(), 0.75).unwrap();
        assert!(self_p.per_column.iter().all(|v| *v == 1.0));
        let shifted = image_iou_profile(&a, &b, ThresholdRule::default(), 0.75).unwrap();
        assert!(shifted.per_column.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn regions() {
        let p = IouProfile { per_column: vec![0.5; 64], overlap: 0.75 };
        assert_eq!(region_scores(&p).unwrap(), (0.5, 0.5));
        let mut v = vec![1.0; 48];
        v.extend(vec![0.0; 16]);
        let p = IouProfile { per_column: v, overlap: 0.75 };
        assert_eq!(region_scores(&p).unwrap(), (1.0, 0.0));
        assert_eq!(p.prediction_region().unwrap().len(), 16);
        let bad = IouProfile { per_column: vec![0.0; 10], overlap: 0.75 };
        assert!(region_scores(&bad).is_err());
    }

    #[test]
    fn mean_std_formatting() {
        let m = MeanStd::of(&[0.42, 0.68]);
        assert!((m.mean - 0.55).abs() < 1e-12 && (m.std - 0.13).abs() < 1e-12);
        assert_eq!(m.to_string(), "0.55±0.13");
    }

    fn interval(h: usize) -> impl Strategy<Value = RowInterval> {
        prop_oneof![
            1 => Just(RowInterval::Empty),
            9 => (0..h, 0..h).prop_map(|(a, b)| span(a.min(b), a.max(b))),
        ]
    }

    proptest! {
        #[test]
        fn iou_symmetry_identity_translation(a in interval(40), b in interval(40), shift in 0usize..20) {
            let ab = column_iou(a, b);
            prop_assert_eq!(ab, column_iou(b, a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
            let mv = |x: RowInterval| match x {
                RowInterval::Empty => x,
                RowInterval::Span { lo, hi } => span(lo + shift, hi + shift),
            };
            prop_assert_eq!(ab, column_iou(mv(a), mv(b)));
        }
    }
}
