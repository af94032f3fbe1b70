//! Series ⇄ image conversion.
//!
//! A series is drawn as an anti-aliased polyline into an `height × width`
//! canvas whose columns are then normalized into probability distributions
//! over rows. Row 0 is the top of the image and holds the largest value.
//! Each image carries the value bounds it was drawn with, so decoding the
//! argmax row of a column recovers a value to within one vertical bin.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Intensity given to rows a steep segment passes through. Kept below the
/// smallest possible peak weight (0.5) of the sample's own row split so the
/// column argmax always stays on the sample.
pub const STROKE_FILL: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSpec {
    pub width: usize,
    pub height: usize,
    /// Margin added around the value and time bounds.
    pub epsilon: f64,
    pub antialias: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            epsilon: 1e-6,
            antialias: true,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::param("render", "width and height must be >= 2"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// A column-stochastic image plus the axis bounds it was rendered with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesImage {
    pub height: usize,
    pub width: usize,
    /// Row-major, `pixels[r * width + c]`.
    pub pixels: Vec<f64>,
    pub value_lo: f64,
    pub value_hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl SeriesImage {
    pub fn from_pixels(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        value_bounds: (f64, f64),
    ) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::mismatch(height * width, pixels.len()));
        }
        if !(value_bounds.0 < value_bounds.1) {
            return Err(Error::param("value bounds", "lo must be < hi"));
        }
        Ok(Self {
            height,
            width,
            pixels,
            value_lo: value_bounds.0,
            value_hi: value_bounds.1,
            t_lo: 0.0,
            t_hi: (width - 1) as f64,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.height).map(|r| self.get(r, col)).collect()
    }

    pub fn columns(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.width).map(move |c| self.column(c))
    }

    pub fn same_shape(&self, other: &SeriesImage) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::mismatch(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        Ok(())
    }

    /// Largest deviation of a column sum from 1, or `None` if any entry
    /// is negative, above 1, or non-finite.
    pub fn stochastic_error(&self) -> Option<f64> {
        if self
            .pixels
            .iter()
            .any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0 + 1e-12)
        {
            return None;
        }
        Some(
            (0..self.width)
                .map(|c| ((0..self.height).map(|r| self.get(r, c)).sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Vertical size of one row step in value units.
    pub fn bin_size(&self) -> f64 {
        (self.value_hi - self.value_lo) / (self.height - 1) as f64
    }

    /// Value at the center of `row`.
    pub fn row_value(&self, row: usize) -> f64 {
        self.value_hi - row as f64 * self.bin_size()
    }
}

/// Values of the polyline through `values` (sample `i` at time `i`) at
/// `width` equally spaced times spanning the series.
pub fn resample(values: &[f64], width: usize) -> Vec<f64> {
    let n = values.len();
    if n == width {
        return values.to_vec();
    }
    if n == 1 {
        return vec![values[0]; width];
    }
    (0..width)
        .map(|j| {
            let t = j as f64 * (n - 1) as f64 / (width - 1) as f64;
            let i = (t.floor() as usize).min(n - 2);
            let frac = t - i as f64;
            values[i] * (1.0 - frac) + values[i + 1] * frac
        })
        .collect()
}

/// Draws `values` and normalizes every column to sum 1.
pub fn render(values: &[f64], spec: &RenderSpec) -> Result<SeriesImage> {
    spec.validate()?;
    if values.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite sample".into()));
    }
    let (h, w) = (spec.height, spec.width);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (min - spec.epsilon, max + spec.epsilon);

    // fractional row of every column's sample
    let rows: Vec<f64> = resample(values, w)
        .iter()
        .map(|v| ((hi - v) / (hi - lo) * (h - 1) as f64).clamp(0.0, (h - 1) as f64))
        .collect();

    let mut pixels = vec![0.0f64; h * w];
    for (c, &f) in rows.iter().enumerate() {
        let mut put = |r: usize, v: f64| {
            let p = &mut pixels[r * w + c];
            *p = p.max(v);
        };
        if !spec.antialias {
            put(f.round() as usize, 1.0);
            continue;
        }
        let r0 = f.floor() as usize;
        let frac = f - r0 as f64;
        put(r0, 1.0 - frac);
        if r0 + 1 < h {
            put(r0 + 1, frac);
        }
        // portion of the polyline inside this column: from the midpoint
        // with the left neighbour to the midpoint with the right one
        let left = if c > 0 { 0.5 * (rows[c - 1] + f) } else { f };
        let right = if c + 1 < w { 0.5 * (f + rows[c + 1]) } else { f };
        let span_lo = f.min(left).min(right);
        let span_hi = f.max(left).max(right);
        let first = (span_lo - 0.5).ceil().max(0.0) as usize;
        let last = ((span_hi + 0.5).floor() as usize).min(h - 1);
        for r in first..=last {
            let cover = (span_hi.min(r as f64 + 0.5) - span_lo.max(r as f64 - 0.5)).max(0.0);
            if cover > 0.0 {
                put(r, STROKE_FILL * cover.min(1.0));
            }
        }
    }
    normalize_in_place(&mut pixels, h, w);
    Ok(SeriesImage {
        height: h,
        width: w,
        pixels,
        value_lo: lo,
        value_hi: hi,
        t_lo: -spec.epsilon,
        t_hi: (values.len() - 1) as f64 + spec.epsilon,
    })
}

pub fn render_series(series: &TimeSeries, spec: &RenderSpec) -> Result<SeriesImage> {
    render(&series.values, spec)
}

/// Divides each column by its sum; blank columns become uniform.
fn normalize_in_place(pixels: &mut [f64], h: usize, w: usize) {
    for c in 0..w {
        let sum: f64 = (0..h).map(|r| pixels[r * w + c]).sum();
        if sum > 0.0 {
            for r in 0..h {
                pixels[r * w + c] /= sum;
            }
        } else {
            for r in 0..h {
                pixels[r * w + c] = 1.0 / h as f64;
            }
        }
    }
}

/// Converts a raw 8-bit plot (dark ink on white, values in `[0, 255]`,
/// row-major) into a column-stochastic image: `x = 1 - raw/255`, then each
/// column is divided by its sum.
pub fn normalize_columns(
    raw: &[f64],
    height: usize,
    width: usize,
    value_bounds: (f64, f64),
) -> Result<SeriesImage> {
    if raw.len() != height * width {
        return Err(Error::mismatch(height * width, raw.len()));
    }
    let mut pixels: Vec<f64> = raw
        .iter()
        .map(|v| (1.0 - v.clamp(0.0, 255.0) / 255.0).max(0.0))
        .collect();
    normalize_in_place(&mut pixels, height, width);
    SeriesImage::from_pixels(height, width, pixels, value_bounds)
}

/// Argmax row of every column (ties go to the smaller row index), mapped
/// back through the image's value bounds.
pub fn decode(image: &SeriesImage) -> Vec<f64> {
    (0..image.width)
        .map(|c| {
            let mut best = 0;
            for r in 1..image.height {
                if image.get(r, c) > image.get(best, c) {
                    best = r;
                }
            }
            image.row_value(best)
        })
        .collect()
}

pub fn decode_series(image: &SeriesImage) -> Result<TimeSeries> {
    let dt = (image.t_hi - image.t_lo) / (image.width - 1) as f64;
    TimeSeries::with_meta(decode(image), dt, Some("decoded".into()))
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

/// Input/target window geometry. The target starts `shift = (1 - c)·L`
/// samples after the input, so its first `c` fraction repeats the input's
/// tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub overlap: f64,
    pub input_len: usize,
}

impl WindowSpec {
    pub fn new(overlap: f64, input_len: usize) -> Result<Self> {
        let w = Self { overlap, input_len };
        w.shift()?;
        Ok(w)
    }

    /// Largest window that fits a series of `series_len` samples.
    pub fn for_series_len(overlap: f64, series_len: usize) -> Result<Self> {
        let l = (series_len as f64 / (2.0 - overlap)).round() as usize;
        let w = Self::new(overlap, l)?;
        if w.total_len()? > series_len {
            return Err(Error::param(
                "window",
                format!("no integral window for length {series_len} at c = {overlap}"),
            ));
        }
        Ok(w)
    }

    /// Number of samples the target is shifted by.
    pub fn shift(&self) -> Result<usize> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::param("overlap", "must satisfy 0 <= c < 1"));
        }
        let k = (1.0 - self.overlap) * self.input_len as f64;
        let kr = k.round();
        if kr < 1.0 || (k - kr).abs() > 1e-9 {
            return Err(Error::param(
                "window",
                format!("(1 - c)·L = {k} must be a positive integer"),
            ));
        }
        Ok(kr as usize)
    }

    /// Samples consumed by one input/target pair.
    pub fn total_len(&self) -> Result<usize> {
        Ok(self.input_len + self.shift()?)
    }

    /// Samples the target shares with the input.
    pub fn overlap_len(&self) -> Result<usize> {
        Ok(self.input_len - self.shift()?)
    }
}

pub fn window_pair(values: &[f64], spec: &WindowSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = spec.shift()?;
    let need = spec.input_len + k;
    if values.len() < need {
        return Err(Error::TooShort {
            needed: need,
            got: values.len(),
        });
    }
    Ok((
        values[..spec.input_len].to_vec(),
        values[k..k + spec.input_len].to_vec(),
    ))
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

pub const VFIM_MAGIC: &[u8; 4] = b"VFIM";
pub const VFIM_VERSION: u32 = 1;

/// Binary PGM with every column scaled so its maximum is 255.
pub fn to_pgm(image: &SeriesImage) -> Vec<u8> {
    let (h, w) = (image.height, image.width);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let col_max: Vec<f64> = (0..w)
        .map(|c| (0..h).map(|r| image.get(r, c)).fold(0.0, f64::max))
        .collect();
    for r in 0..h {
        for (c, &m) in col_max.iter().enumerate() {
            let v = if m > 0.0 { image.get(r, c) / m } else { 0.0 };
            out.push((255.0 * v).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

/// Exact distributions: 16-byte header (magic, version, height, width as
/// little-endian u32) followed by row-major little-endian f32 pixels.
pub fn to_vfim(image: &SeriesImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * image.pixels.len());
    out.extend_from_slice(VFIM_MAGIC);
    out.extend_from_slice(&VFIM_VERSION.to_le_bytes());
    out.extend_from_slice(&(image.height as u32).to_le_bytes());
    out.extend_from_slice(&(image.width as u32).to_le_bytes());
    for p in &image.pixels {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out
}

/// Parses a VFIM buffer into `(height, width, pixels)`.
pub fn from_vfim(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..4] != VFIM_MAGIC {
        return Err(Error::DegenerateInput("not a VFIM image".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) as u32 != VFIM_VERSION {
        return Err(Error::DegenerateInput(format!("unsupported VFIM version {}", word(4))));
    }
    let (h, w) = (word(8), word(12));
    if bytes.len() != 16 + 4 * h * w {
        return Err(Error::mismatch(16 + 4 * h * w, bytes.len()));
    }
    let pixels = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((h, w, pixels))
}

pub fn write_pgm(path: &Path, image: &SeriesImage) -> Result<()> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&to_pgm(image)))
        .map_err(|e| Error::io(path, e))
}

pub fn write_vfim(path: &Path, image: &SeriesImage) -> Result<()> {
    fs::write(path, to_vfim(image)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn argmax_rows(img: &SeriesImage) -> Vec<usize> {
        (0..img.width)
            .map(|c| {
                let col = img.column(c);
                let mut best = 0;
                for r in 1..col.len() {
                    if col[r] > col[best] {
                        best = r;
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn constant_series_sits_in_the_middle() {
        let img = render(&[3.0; 10], &RenderSpec::default()).unwrap();
        for c in 0..img.width {
            let col = img.column(c);
            assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((col[31] - 0.5).abs() < 1e-6 && (col[32] - 0.5).abs() < 1e-6);
        }
        let back = decode(&img);
        assert!(back.iter().all(|v| (v - 3.0).abs() <= img.bin_size()));
    }

    #[test]
    fn ramp_argmax_climbs_from_bottom_to_top() {
        let spec = RenderSpec::default();
        let ramp: Vec<f64> = (0..spec.width).map(|i| i as f64).collect();
        let img = render(&ramp, &spec).unwrap();
        let rows = argmax_rows(&img);
        assert_eq!(rows[0], spec.height - 1);
        assert_eq!(*rows.last().unwrap(), 0);
        assert!(rows.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn eight_bit_pipeline_negates_then_normalizes() {
        let img = normalize_columns(&[255.0, 127.5, 0.0, 255.0], 4, 1, (0.0, 1.0)).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 0.0];
        for (a, b) in img.pixels.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let img = normalize_columns(&[255.0, 255.0, 0.0, 255.0], 4, 1, (0.0, 1.0)).unwrap();
        assert_eq!(img.pixels, vec![0.0, 0.0, 1.0, 0.0]);
        let img = normalize_columns(&[255.0; 4], 4, 1, (0.0, 1.0)).unwrap();
        assert_eq!(img.pixels, vec![0.25; 4]);
    }

    #[test]
    fn eight_bit_requantization_round_trip() {
        let mut rng = rng::substream(11, 0);
        for _ in 0..50 {
            let s: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let img = render(&s, &RenderSpec::default()).unwrap();
            // back to a dark-ink 8-bit plot
            let (h, w) = (img.height, img.width);
            let mut raw = vec![0.0; h * w];
            for c in 0..w {
                let m = (0..h).map(|r| img.get(r, c)).fold(0.0, f64::max);
                for r in 0..h {
                    raw[r * w + c] = (255.0 * (1.0 - img.get(r, c) / m)).round();
                }
            }
            let back = normalize_columns(&raw, h, w, (img.value_lo, img.value_hi)).unwrap();
            for c in 0..w {
                // Quantization perturbs each scaled entry x_i = p_i/max by at
                // most 1/510; after renormalization by S = Σx the error is
                // bounded by (|e_i|·S + x_i·|E|) / (S·(S - |E|)).
                let x: Vec<f64> = img.column(c).iter().map(|p| p / img.column(c).iter().fold(0.0, |a: f64, b| a.max(*b))).collect();
                let s_sum: f64 = x.iter().sum();
                let nonzero = x.iter().filter(|v| **v > 0.0).count() as f64;
                let e_tot = nonzero / 510.0;
                for (r, &xr) in x.iter().enumerate() {
                    let bound = (s_sum / 510.0 + xr * e_tot) / (s_sum * (s_sum - e_tot));
                    let err = (back.get(r, c) - img.get(r, c)).abs();
                    assert!(err <= bound + 1e-12, "err {err} > bound {bound}");
                    if xr == 0.0 {
                        assert_eq!(back.get(r, c), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn decode_top_row_is_top_of_range() {
        let mut pixels = vec![0.0; 64 * 2];
        pixels[0] = 1.0;
        pixels[63 * 2 + 1] = 1.0;
        let img = SeriesImage::from_pixels(64, 2, pixels, (0.0, 63.0)).unwrap();
        assert_eq!(decode(&img), vec![63.0, 0.0]);
    }

    #[test]
    fn window_arithmetic() {
        let s: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let w = WindowSpec::new(0.75, 80).unwrap();
        assert_eq!(w.shift().unwrap(), 20);
        let (x, y) = window_pair(&s, &w).unwrap();
        assert_eq!(x, s[..80].to_vec());
        assert_eq!(y, s[20..100].to_vec());

        let w0 = WindowSpec::new(0.0, 50).unwrap();
        let (x, y) = window_pair(&s, &w0).unwrap();
        assert!(x.iter().all(|v| !y.contains(v)));

        assert!(WindowSpec::new(1.0, 80).is_err());
        assert!(WindowSpec::new(0.75, 81).is_err());
        assert!(matches!(window_pair(&s[..99], &w), Err(Error::TooShort { .. })));
        assert_eq!(WindowSpec::for_series_len(0.75, 200).unwrap().input_len, 160);
    }

    #[test]
    fn vfim_and_pgm_layout() {
        let img = render(&[0.0, 1.0, 0.5, 0.25], &RenderSpec { width: 4, height: 3, ..Default::default() }).unwrap();
        let bytes = to_vfim(&img);
        assert_eq!(&bytes[..4], b"VFIM");
        assert_eq!(bytes.len(), 16 + 4 * 12);
        let (h, w, px) = from_vfim(&bytes).unwrap();
        assert_eq!((h, w), (3, 4));
        assert!(px.iter().zip(&img.pixels).all(|(a, b)| (*a as f64 - b).abs() < 1e-7));
        let pgm = to_pgm(&img);
        assert!(pgm.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(pgm.len(), 11 + 12);
        // every column has a 255 at its peak
        let body = &pgm[11..];
        for c in 0..4 {
            assert_eq!((0..3).map(|r| body[r * 4 + c]).max(), Some(255));
        }
    }

    proptest! {
        #[test]
        fn rendered_images_are_column_stochastic_and_ordered(
            v in prop::collection::vec(-1e3f64..1e3, 2..150),
            aa in any::<bool>(),
        ) {
            let spec = RenderSpec { antialias: aa, ..Default::default() };
            let img = render(&v, &spec).unwrap();
            let err = img.stochastic_error().expect("entries in [0,1]");
            prop_assert!(err < 1e-6);
            // argmax row is monotone in the decoded value
            let back = decode(&img);
            let rows = argmax_rows(&img);
            for i in 0..rows.len() {
                for j in 0..rows.len() {
                    if rows[i] < rows[j] {
                        prop_assert!(back[i] > back[j]);
                    }
                }
            }
            let want = resample(&v, spec.width);
            let bin = (img.value_hi - img.value_lo) / spec.height as f64;
            for (a, b) in back.iter().zip(&want) {
                prop_assert!((a - b).abs() <= bin, "{} vs {} (bin {})", a, b, bin);
            }
        }

        #[test]
        fn affine_transforms_do_not_change_the_image(
            v in prop::collection::vec(-10.0f64..10.0, 4..100),
            a in 0.5f64..3.0,
            b in -5.0f64..5.0,
        ) {
            let range = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - v.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(range > 1.0);
            let spec = RenderSpec::default();
            let base = render(&v, &spec).unwrap();
            let t: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let moved = render(&t, &spec).unwrap();
            // the fixed ε margin is the only term that does not rescale
            let max_diff = base.pixels.iter().zip(&moved.pixels).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(max_diff < 1e-4, "max pixel diff {}", max_diff);
        }
    }
}
