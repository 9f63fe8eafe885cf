//! Scan normalization: hysteresis thresholding, median filtering, dilation
//! and canvas fitting.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dataset::Community;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Canvas, RasterImage};

/// Upper bound on radius-1 dilation passes during normalization.
pub const MAX_DILATIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessParams {
    pub low_thresh: f64,
    pub high_thresh: f64,
    pub median_window: usize,
    pub target_stroke_width: f64,
    pub canvas: Canvas,
    pub margin: usize,
}

impl Default for PreprocessParams {
    fn default() -> Self {
        PreprocessParams {
            low_thresh: 0.3,
            high_thresh: 0.6,
            median_window: 3,
            target_stroke_width: 3.0,
            canvas: Canvas::default(),
            margin: 6,
        }
    }
}

impl PreprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.low_thresh)
            || !(0.0..=1.0).contains(&self.high_thresh)
            || self.low_thresh >= self.high_thresh
        {
            return Err(Error::param(format!(
                "thresholds must satisfy 0 <= low < high <= 1 (got {} / {})",
                self.low_thresh, self.high_thresh
            )));
        }
        if self.median_window % 2 == 0 {
            return Err(Error::param("median window must be odd"));
        }
        if self.target_stroke_width.is_nan() || self.target_stroke_width <= 0.0 {
            return Err(Error::param("target stroke width must be positive"));
        }
        let inner_h = self.canvas.height as isize - 2 * (self.margin + MAX_DILATIONS) as isize;
        let inner_w = self.canvas.width as isize - 2 * (self.margin + MAX_DILATIONS) as isize;
        if inner_h < 1 || inner_w < 1 {
            return Err(Error::param("margin leaves no room on the canvas"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSignature {
    pub mask: BinaryMask,
    pub source_id: String,
    pub community: Community,
    pub stroke_width_estimate: f64,
}

/// Two-level threshold: strong pixels (>= `high`) seed an 8-connected flood
/// fill through weak pixels (>= `low`).
pub fn hysteresis_threshold(img: &RasterImage, low: f64, high: f64) -> Result<BinaryMask> {
    if !(low < high) || low < 0.0 || high > 1.0 {
        return Err(Error::param(format!(
            "hysteresis requires 0 <= low < high <= 1 (got {low} / {high})"
        )));
    }
    let (w, h) = (img.width, img.height);
    let mut out = BinaryMask::zeros(w, h);
    let mut queue = VecDeque::new();
    for (i, &p) in img.pixels.iter().enumerate() {
        if p >= high {
            out.bits[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out.bits[j] == 0 && img.pixels[j] >= low {
                    out.bits[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(out)
}

/// Mirror an out-of-range index back into `0..n` (edge sample repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Binary median over a `window`x`window` neighborhood with reflected edges.
pub fn median_filter(mask: &BinaryMask, window: usize) -> Result<BinaryMask> {
    if window % 2 == 0 {
        return Err(Error::param(format!("median window must be odd, got {window}")));
    }
    if window == 1 {
        return Ok(mask.clone());
    }
    let r = (window / 2) as isize;
    let majority = window * window / 2;
    let mut out = BinaryMask::zeros(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            let mut ones = 0;
            for dy in -r..=r {
                let sy = reflect(y as isize + dy, mask.height);
                for dx in -r..=r {
                    let sx = reflect(x as isize + dx, mask.width);
                    ones += usize::from(mask.get(sx, sy));
                }
            }
            out.set(x, y, ones > majority);
        }
    }
    Ok(out)
}

/// Dilation by a square structuring element of side `2 * radius + 1`.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width, mask.height);
    // Separable: horizontal pass then vertical pass.
    let mut horiz = BinaryMask::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            if (lo..=hi).any(|sx| mask.get(sx, y)) {
                horiz.set(x, y, true);
            }
        }
    }
    let mut out = BinaryMask::zeros(w, h);
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            if (lo..=hi).any(|sy| horiz.get(x, sy)) {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Zhang-Suen thinning to a one-pixel-wide skeleton.
pub fn thin(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut img = mask.clone();
    let at = |m: &BinaryMask, x: isize, y: isize| -> u8 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0
        } else {
            m.bits[y as usize * w + x as usize]
        }
    };
    let mut to_clear = Vec::new();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            to_clear.clear();
            for y in 0..h as isize {
                for x in 0..w as isize {
                    if at(&img, x, y) == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, x, y - 1),
                        at(&img, x + 1, y - 1),
                        at(&img, x + 1, y),
                        at(&img, x + 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x - 1, y + 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if a != 1 {
                        continue;
                    }
                    let (c1, c2) = if pass == 0 {
                        (p[0] * p[2] * p[4], p[2] * p[4] * p[6])
                    } else {
                        (p[0] * p[2] * p[6], p[0] * p[4] * p[6])
                    };
                    if c1 == 0 && c2 == 0 {
                        to_clear.push(y as usize * w + x as usize);
                    }
                }
            }
            for &i in &to_clear {
                img.bits[i] = 0;
            }
            changed |= !to_clear.is_empty();
        }
        if !changed {
            return img;
        }
    }
}

/// Mean stroke width: foreground area divided by skeleton length.
pub fn estimate_stroke_width(mask: &BinaryMask) -> Result<f64> {
    let area = mask.count();
    if area == 0 {
        return Err(Error::EmptySignature);
    }
    let skeleton = thin(mask);
    let s = skeleton.count().max(1) as f64;
    let e = skeleton_endpoints(&skeleton) as f64;
    let a = area as f64;
    if e == 0.0 {
        return Ok(a / s);
    }
    // Thinning eats about half a stroke width at every free end, so the
    // skeleton length is taken as s + e*w/2 and w = a / length solved for w.
    Ok((-s + (s * s + 2.0 * e * a).sqrt()) / e)
}

/// Skeleton pixels with exactly one 8-neighbour.
fn skeleton_endpoints(skeleton: &BinaryMask) -> usize {
    let (w, h) = (skeleton.width as isize, skeleton.height as isize);
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            if !skeleton.get(x as usize, y as usize) {
                continue;
            }
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && nx < w && ny < h && skeleton.get(nx as usize, ny as usize) {
                        n += 1;
                    }
                }
            }
            if n == 1 {
                count += 1;
            }
        }
    }
    count
}

/// Crop `mask` to its bounding box and scale it (aspect preserved) into a
/// `region_h` x `region_w` box centered on `canvas`.
///
/// Each output pixel is set if any source pixel under its footprint is set,
/// so thin strokes survive downscaling. A scale of exactly 1 copies pixels.
fn fit_to_canvas(mask: &BinaryMask, canvas: Canvas, region_h: usize, region_w: usize) -> BinaryMask {
    let mut out = BinaryMask::zeros(canvas.width, canvas.height);
    let Some((x0, y0, x1, y1)) = mask.bbox() else {
        return out;
    };
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let scale = (region_h as f64 / bh as f64).min(region_w as f64 / bw as f64);
    let th = ((bh as f64 * scale).round() as usize).clamp(1, region_h);
    let tw = ((bw as f64 * scale).round() as usize).clamp(1, region_w);
    let oy = (canvas.height - th) / 2;
    let ox = (canvas.width - tw) / 2;
    let span = |t: usize, target: usize, source: usize| {
        let lo = t * source / target;
        let hi = ((t + 1) * source).div_ceil(target).max(lo + 1);
        lo..hi.min(source)
    };
    for ty in 0..th {
        let rows = span(ty, th, bh);
        for tx in 0..tw {
            let cols = span(tx, tw, bw);
            let hit = rows
                .clone()
                .any(|sy| cols.clone().any(|sx| mask.get(x0 + sx, y0 + sy)));
            if hit {
                out.set(ox + tx, oy + ty, true);
            }
        }
    }
    out
}

/// Full normalization of one scan onto the run canvas.
///
/// Threshold, then for `k = 0..=MAX_DILATIONS`: fit the foreground into the
/// canvas inner box shrunk by `k` on every side, dilate `k` times, median
/// filter, and stop at the first `k` whose width estimate reaches the target.
/// Shrinking the box by `k` keeps the dilated result's bounding box exactly
/// on the inner box, which makes the procedure a fixed point on its own
/// output.
pub fn normalize_signature(
    img: &RasterImage,
    params: &PreprocessParams,
    source_id: &str,
    community: Community,
) -> Result<ProcessedSignature> {
    params.validate()?;
    let faint = || Error::FaintScan {
        source_id: source_id.to_string(),
    };
    let thresholded = hysteresis_threshold(img, params.low_thresh, params.high_thresh)?;
    if thresholded.is_blank() {
        return Err(faint());
    }
    let canvas = params.canvas;
    let mut best: Option<(BinaryMask, f64)> = None;
    for k in 0..=MAX_DILATIONS {
        let pad = params.margin + k;
        let fitted = fit_to_canvas(
            &thresholded,
            canvas,
            canvas.height - 2 * pad,
            canvas.width - 2 * pad,
        );
        let mut grown = fitted;
        for _ in 0..k {
            grown = dilate(&grown, 1);
        }
        let cleaned = median_filter(&grown, params.median_window)?;
        if cleaned.is_blank() {
            continue;
        }
        let width = estimate_stroke_width(&cleaned)?;
        let done = width >= params.target_stroke_width;
        best = Some((cleaned, width));
        if done {
            break;
        }
    }
    let (mask, width) = best.ok_or_else(faint)?;
    let frac = mask.foreground_fraction();
    if frac >= 0.5 {
        return Err(Error::param(format!(
            "`{source_id}` covers {:.0}% of the canvas; not a signature",
            frac * 100.0
        )));
    }
    Ok(ProcessedSignature {
        mask,
        source_id: source_id.to_string(),
        community,
        stroke_width_estimate: width,
    })
}
