//! Curator ratings and the auxiliary generator-loss weights they drive.
//!
//! Ratings and manual weight overrides are append-only JSON-lines logs. The
//! [`FeedbackState`] is a pure fold over those logs: at every epoch boundary
//! the training worker consumes whatever was appended since the previous
//! boundary, so replaying the logs with the recorded boundaries rebuilds the
//! state exactly.
//!
//! Two image statistics feed the loss:
//!
//! * direction diversity, the normalized entropy of the stroke-orientation
//!   histogram (an interpretation of "more diverse shape"),
//! * a thickness penalty, the squared relative deviation of the stroke width
//!   from a target.
//!
//! Each has a hard definition used for reporting and a smooth surrogate with
//! an analytic input gradient used inside training.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::estimate_stroke_width;
use crate::raster::RasterImage;

const N_BINS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Like,
    Dislike,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Tag {
    TooBlurry,
    StrokesTooThick,
    StrokesTooThin,
    MoreDirectionDiversity,
    TooSimple,
    Other(String),
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::TooBlurry => f.write_str("too-blurry"),
            Tag::StrokesTooThick => f.write_str("strokes-too-thick"),
            Tag::StrokesTooThin => f.write_str("strokes-too-thin"),
            Tag::MoreDirectionDiversity => f.write_str("more-direction-diversity"),
            Tag::TooSimple => f.write_str("too-simple"),
            Tag::Other(text) => write!(f, "other:{text}"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "too-blurry" => Tag::TooBlurry,
            "strokes-too-thick" => Tag::StrokesTooThick,
            "strokes-too-thin" => Tag::StrokesTooThin,
            "more-direction-diversity" => Tag::MoreDirectionDiversity,
            "too-simple" => Tag::TooSimple,
            _ => match s.strip_prefix("other:") {
                Some(text) => Tag::Other(text.to_string()),
                None => {
                    return Err(Error::Parse {
                        context: "rating tag".into(),
                        message: format!("unknown tag `{s}`"),
                    })
                }
            },
        })
    }
}

impl TryFrom<String> for Tag {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Tag> for String {
    fn from(t: Tag) -> String {
        t.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub sample_id: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub tags: BTreeSet<Tag>,
    pub author: String,
    pub timestamp: String,
}

impl Rating {
    pub fn has(&self, tag: &Tag) -> bool {
        self.tags.contains(tag)
    }
}

/// A manual α/β override submitted through the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightOverride {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub target_thickness: Option<f64>,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: i64,
    pub alpha: f64,
    pub beta: f64,
    pub rule: String,
}

/// Log offsets consumed at one epoch boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub epoch: i64,
    pub ratings_upto: usize,
    pub overrides_upto: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    pub run_id: String,
    pub alpha: f64,
    pub beta: f64,
    pub target_thickness: f64,
    pub history: Vec<HistoryRecord>,
    #[serde(default)]
    pub boundaries: Vec<Boundary>,
}

impl FeedbackState {
    pub fn new(run_id: impl Into<String>, target_thickness: f64) -> Self {
        FeedbackState {
            run_id: run_id.into(),
            alpha: 0.0,
            beta: 0.0,
            target_thickness,
            history: Vec::new(),
            boundaries: Vec::new(),
        }
    }

    pub fn ratings_consumed(&self) -> usize {
        self.boundaries.last().map_or(0, |b| b.ratings_upto)
    }

    pub fn overrides_consumed(&self) -> usize {
        self.boundaries.last().map_or(0, |b| b.overrides_upto)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::write_atomic(path, text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    fn record(&mut self, epoch: i64, rule: &str) {
        self.history.push(HistoryRecord {
            epoch,
            alpha: self.alpha,
            beta: self.beta,
            rule: rule.to_string(),
        });
    }

    /// Apply a manual override, recording it in the history.
    pub fn apply_override(&mut self, epoch: i64, ov: &WeightOverride) -> Result<()> {
        if !(ov.alpha >= 0.0 && ov.beta >= 0.0 && ov.alpha.is_finite() && ov.beta.is_finite()) {
            return Err(Error::param("feedback weights must be finite and non-negative"));
        }
        if let Some(t) = ov.target_thickness {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param("target thickness must be positive"));
            }
            self.target_thickness = t;
        }
        self.alpha = ov.alpha;
        self.beta = ov.beta;
        self.record(epoch, "manual-override");
        Ok(())
    }
}

/// Thresholds of the rating rule table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub tag_threshold: usize,
    pub step: f64,
    pub cap: f64,
    /// Multiplier applied to the thickness target when strokes are reported
    /// too thin.
    pub thin_target_factor: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            tag_threshold: 3,
            step: 0.1,
            cap: 1.0,
            thin_target_factor: 1.1,
        }
    }
}

/// Keep only the latest rating per `(sample_id, author)`, in log order of
/// those latest submissions.
pub fn latest_wins(ratings: &[Rating]) -> Vec<&Rating> {
    let mut last: HashMap<(&str, &str), usize> = HashMap::new();
    for (i, r) in ratings.iter().enumerate() {
        last.insert((r.sample_id.as_str(), r.author.as_str()), i);
    }
    ratings
        .iter()
        .enumerate()
        .filter(|(i, r)| last[&(r.sample_id.as_str(), r.author.as_str())] == *i)
        .map(|(_, r)| r)
        .collect()
}

/// Run the rule table over one window of ratings.
///
/// Rules, in order:
/// 1. `tag_threshold` DISLIKEs tagged strokes-too-thick: β += step.
/// 2. `tag_threshold` ratings tagged more-direction-diversity: α += step.
/// 3. `tag_threshold` ratings tagged strokes-too-thin: β += step and the
///    thickness target grows by `thin_target_factor`.
///
/// Weights are capped at `cap`; every firing appends a history record.
pub fn apply_feedback_policy(
    window: &[Rating],
    state: &FeedbackState,
    epoch: i64,
    cfg: &PolicyConfig,
) -> FeedbackState {
    let mut next = state.clone();
    let current = latest_wins(window);
    let count = |pred: &dyn Fn(&Rating) -> bool| current.iter().filter(|r| pred(r)).count();

    let thick = count(&|r| r.verdict == Verdict::Dislike && r.has(&Tag::StrokesTooThick));
    if thick >= cfg.tag_threshold {
        next.beta = (next.beta + cfg.step).min(cfg.cap);
        next.record(epoch, "strokes-too-thick");
    }
    let diverse = count(&|r| r.has(&Tag::MoreDirectionDiversity));
    if diverse >= cfg.tag_threshold {
        next.alpha = (next.alpha + cfg.step).min(cfg.cap);
        next.record(epoch, "more-direction-diversity");
    }
    let thin = count(&|r| r.has(&Tag::StrokesTooThin));
    if thin >= cfg.tag_threshold {
        next.beta = (next.beta + cfg.step).min(cfg.cap);
        next.target_thickness *= cfg.thin_target_factor;
        next.record(epoch, "strokes-too-thin");
    }
    next
}

/// Close the epoch `epoch`: consume new ratings through the rule table, then
/// new overrides in log order, and record the consumed offsets.
pub fn advance_epoch(
    state: &FeedbackState,
    ratings: &[Rating],
    overrides: &[WeightOverride],
    epoch: i64,
    cfg: &PolicyConfig,
) -> Result<FeedbackState> {
    let r0 = state.ratings_consumed().min(ratings.len());
    let o0 = state.overrides_consumed().min(overrides.len());
    let mut next = apply_feedback_policy(&ratings[r0..], state, epoch, cfg);
    for ov in &overrides[o0..] {
        next.apply_override(epoch, ov)?;
    }
    next.boundaries.push(Boundary {
        epoch,
        ratings_upto: ratings.len(),
        overrides_upto: overrides.len(),
    });
    Ok(next)
}

/// Rebuild a state from scratch out of the logs and recorded boundaries.
pub fn replay(
    initial: &FeedbackState,
    ratings: &[Rating],
    overrides: &[WeightOverride],
    boundaries: &[Boundary],
    cfg: &PolicyConfig,
) -> Result<FeedbackState> {
    let mut state = initial.clone();
    for b in boundaries {
        if b.ratings_upto > ratings.len() || b.overrides_upto > overrides.len() {
            return Err(Error::param("boundary points past the end of the log"));
        }
        state = advance_epoch(
            &state,
            &ratings[..b.ratings_upto],
            &overrides[..b.overrides_upto],
            b.epoch,
            cfg,
        )?;
    }
    Ok(state)
}

/// State as it will look once pending overrides are consumed; what the API
/// reports between epoch boundaries.
pub fn effective_state(state: &FeedbackState, overrides: &[WeightOverride], epoch: i64) -> Result<FeedbackState> {
    let mut next = state.clone();
    for ov in overrides.iter().skip(state.overrides_consumed()) {
        next.apply_override(epoch, ov)?;
    }
    Ok(next)
}

/// Append one record to a JSON-lines log.
pub fn append_jsonl<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

/// Read a JSON-lines log; a missing file is an empty log. A trailing partial
/// line (torn write) is ignored.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

// ---------------------------------------------------------------------------
// Image statistics

#[inline]
fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Central differences with replicated borders.
fn gradients(img: &RasterImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let xl = clamp_idx(x as isize - 1, w);
            let xr = clamp_idx(x as isize + 1, w);
            let yu = clamp_idx(y as isize - 1, h);
            let yd = clamp_idx(y as isize + 1, h);
            gx[y * w + x] = (img.get(xr, y) - img.get(xl, y)) / 2.0;
            gy[y * w + x] = (img.get(x, yd) - img.get(x, yu)) / 2.0;
        }
    }
    (gx, gy)
}

fn normalized_entropy(hist: &[f64]) -> f64 {
    let total: f64 = hist.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = hist
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    (h / (N_BINS as f64).ln()).clamp(0.0, 1.0)
}

/// Orientation bin for a gradient, 8 bins over `[0, π)` centred on multiples
/// of π/8.
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let theta = gy.atan2(gx).rem_euclid(PI);
    let width = PI / N_BINS as f64;
    (((theta + width / 2.0) / width).floor() as usize) % N_BINS
}

/// Magnitude-weighted orientation histogram over pixels that are foreground
/// (> 0.5) or 8-adjacent to foreground.
pub fn orientation_histogram(img: &RasterImage) -> [f64; N_BINS] {
    let (w, h) = (img.width, img.height);
    let fg = img.binarize(0.5);
    let (gx, gy) = gradients(img);
    let mut hist = [0.0; N_BINS];
    for y in 0..h {
        for x in 0..w {
            let near = (-1..=1).any(|dy: isize| {
                (-1..=1).any(|dx: isize| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx >= 0
                        && ny >= 0
                        && (nx as usize) < w
                        && (ny as usize) < h
                        && fg.get(nx as usize, ny as usize)
                })
            });
            if !near {
                continue;
            }
            let i = y * w + x;
            let m = gx[i].hypot(gy[i]);
            if m > 1e-12 {
                hist[orientation_bin(gx[i], gy[i])] += m;
            }
        }
    }
    hist
}

/// Normalized orientation entropy in `[0, 1]`; 0 for an empty image.
pub fn direction_diversity(img: &RasterImage) -> f64 {
    normalized_entropy(&orientation_histogram(img))
}

/// `((width - target) / target)^2` on the binarized image, 0 when empty.
pub fn thickness_penalty(img: &RasterImage, target: f64) -> f64 {
    match estimate_stroke_width(&img.binarize(0.5)) {
        Ok(width) => ((width - target) / target).powi(2),
        Err(_) => 0.0,
    }
}

/// Reported (hard) auxiliary loss: batch mean of
/// `α (1 - diversity) + β thickness_penalty`.
pub fn augmented_loss_terms(batch: &[RasterImage], alpha: f64, beta: f64, target: f64) -> f64 {
    if batch.is_empty() || (alpha == 0.0 && beta == 0.0) {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .map(|img| {
            let mut v = 0.0;
            if alpha != 0.0 {
                v += alpha * (1.0 - direction_diversity(img));
            }
            if beta != 0.0 {
                v += beta * thickness_penalty(img, target);
            }
            v
        })
        .sum();
    total / batch.len() as f64
}

const SOFT_TEMP: f64 = 0.1;
const GRAD_EPS: f64 = 1e-8;
const HIST_EPS: f64 = 1e-12;
/// Concentration of the soft orientation kernel; about 98% of a single
/// orientation lands in its own bin.
const VM_KAPPA: f64 = 16.0;

/// Bin center in doubled-angle space.
fn bin_center(k: usize) -> f64 {
    k as f64 * PI / 4.0
}

/// Smooth assignment of doubled angle `phi` over the bins (von Mises weights).
fn soft_bins(phi: f64) -> [f64; N_BINS] {
    let mut q = [0.0; N_BINS];
    for (k, v) in q.iter_mut().enumerate() {
        *v = (VM_KAPPA * ((phi - bin_center(k)).cos() - 1.0)).exp();
    }
    let z: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= z);
    q
}
const TV_EPS: f64 = 1e-10;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn soft_foreground(img: &RasterImage) -> Vec<f64> {
    img.pixels.iter().map(|&p| sigmoid((p - 0.5) / SOFT_TEMP)).collect()
}

/// Smooth direction diversity and its gradient with respect to every pixel.
///
/// Foreground is `sigmoid((x - 0.5) / 0.1)`, adjacency is a soft OR over the
/// 3x3 neighbourhood, orientations are spread over the bins with a von Mises
/// kernel in doubled-angle space so the histogram is smooth in the gradients.
pub fn soft_direction_diversity(img: &RasterImage) -> (f64, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let n = w * h;
    let s = soft_foreground(img);
    let (gx, gy) = gradients(img);

    let neighbours = |x: usize, y: usize| {
        let ys = y.saturating_sub(1)..=(y + 1).min(h - 1);
        ys.flat_map(move |ny| (x.saturating_sub(1)..=(x + 1).min(w - 1)).map(move |nx| ny * w + nx))
    };

    let mut adj = vec![0.0; n];
    let mut mag = vec![0.0; n];
    let mut phi = vec![0.0; n];
    let mut hist = [0.0; N_BINS];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let keep: f64 = neighbours(x, y).map(|j| 1.0 - s[j]).product();
            adj[i] = 1.0 - keep;
            // r / sqrt(r + eps) rather than sqrt(r + eps): the weight must vanish
            // where the angle is undefined.
            let r = gx[i] * gx[i] + gy[i] * gy[i];
            mag[i] = r / (r + GRAD_EPS).sqrt();
            phi[i] = 2.0 * gy[i].atan2(gx[i]);
            let q = soft_bins(phi[i]);
            let weight = adj[i] * mag[i];
            for k in 0..N_BINS {
                hist[k] += weight * q[k];
            }
        }
    }

    let total: f64 = hist.iter().sum::<f64>() + N_BINS as f64 * HIST_EPS;
    let ln_bins = (N_BINS as f64).ln();
    let p: Vec<f64> = hist.iter().map(|&v| (v + HIST_EPS) / total).collect();
    let entropy = -p.iter().map(|&q| q * q.ln()).sum::<f64>() / ln_bins;
    let dp: Vec<f64> = p.iter().map(|&q| -(q.ln() + 1.0) / ln_bins).collect();
    let mean_dp: f64 = p.iter().zip(&dp).map(|(q, d)| q * d).sum();
    let dh: Vec<f64> = dp.iter().map(|d| (d - mean_dp) / total).collect();

    let mut d_adj = vec![0.0; n];
    let mut d_gx = vec![0.0; n];
    let mut d_gy = vec![0.0; n];
    for i in 0..n {
        let q = soft_bins(phi[i]);
        let a: Vec<f64> = (0..N_BINS).map(|k| -VM_KAPPA * (phi[i] - bin_center(k)).sin()).collect();
        let a_mean: f64 = q.iter().zip(&a).map(|(q, a)| q * a).sum();
        let d_weight: f64 = (0..N_BINS).map(|k| dh[k] * q[k]).sum();
        let d_phi: f64 = (0..N_BINS).map(|k| dh[k] * q[k] * (a[k] - a_mean)).sum::<f64>() * adj[i];
        d_adj[i] = d_weight * mag[i];
        let d_mag = d_weight * adj[i];
        let re = gx[i] * gx[i] + gy[i] * gy[i] + GRAD_EPS;
        let dm_dr = (re + GRAD_EPS) / (2.0 * re * re.sqrt());
        // weight * dphi/dg with mag / r == 1 / sqrt(re), finite at r == 0.
        let d_ang = d_phi * 2.0 / re.sqrt();
        d_gx[i] = d_mag * 2.0 * gx[i] * dm_dr - d_ang * gy[i];
        d_gy[i] = d_mag * 2.0 * gy[i] * dm_dr + d_ang * gx[i];
    }

    let mut grad = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let xl = clamp_idx(x as isize - 1, w);
            let xr = clamp_idx(x as isize + 1, w);
            let yu = clamp_idx(y as isize - 1, h);
            let yd = clamp_idx(y as isize + 1, h);
            grad[y * w + xr] += d_gx[i] / 2.0;
            grad[y * w + xl] -= d_gx[i] / 2.0;
            grad[yd * w + x] += d_gy[i] / 2.0;
            grad[yu * w + x] -= d_gy[i] / 2.0;
            // Soft OR: d adj / d s_j = product of (1 - s) over the other cells.
            if d_adj[i] != 0.0 {
                let cells: Vec<usize> = neighbours(x, y).collect();
                for (a, &j) in cells.iter().enumerate() {
                    let others: f64 = cells
                        .iter()
                        .enumerate()
                        .filter(|&(b, _)| b != a)
                        .map(|(_, &k)| 1.0 - s[k])
                        .product();
                    let ds = s[j] * (1.0 - s[j]) / SOFT_TEMP;
                    grad[j] += d_adj[i] * others * ds;
                }
            }
        }
    }
    (entropy, grad)
}

/// Smooth stroke width `2 * area / perimeter` of the soft foreground, where
/// the perimeter is the total variation with forward differences.
pub fn soft_stroke_width(img: &RasterImage) -> (f64, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let s = soft_foreground(img);
    let at = |x: usize, y: usize| if x < w && y < h { s[y * w + x] } else { 0.0 };
    let area: f64 = s.iter().sum();
    let mut perim = 0.0;
    let mut tv = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let dx = at(x + 1, y) - at(x, y);
            let dy = at(x, y + 1) - at(x, y);
            let norm = (dx * dx + dy * dy + TV_EPS).sqrt();
            perim += norm;
            tv.push((dx / norm, dy / norm));
        }
    }
    let width = 2.0 * area / perim;
    let d_area = 2.0 / perim;
    let d_perim = -2.0 * area / (perim * perim);
    let mut grad_s = vec![d_area; w * h];
    for y in 0..h {
        for x in 0..w {
            let (ux, uy) = tv[y * w + x];
            grad_s[y * w + x] -= d_perim * (ux + uy);
            if x + 1 < w {
                grad_s[y * w + x + 1] += d_perim * ux;
            }
            if y + 1 < h {
                grad_s[(y + 1) * w + x] += d_perim * uy;
            }
        }
    }
    let grad = grad_s
        .iter()
        .zip(&s)
        .map(|(g, &v)| g * v * (1.0 - v) / SOFT_TEMP)
        .collect();
    (width, grad)
}

/// Smooth thickness penalty and its input gradient; zero on empty images.
pub fn soft_thickness_penalty(img: &RasterImage, target: f64) -> (f64, Vec<f64>) {
    let area: f64 = soft_foreground(img).iter().sum();
    if area < 0.5 {
        return (0.0, vec![0.0; img.pixels.len()]);
    }
    let (width, grad_w) = soft_stroke_width(img);
    let dev = (width - target) / target;
    let scale = 2.0 * dev / target;
    (dev * dev, grad_w.into_iter().map(|g| g * scale).collect())
}

/// In-training auxiliary term for one image: `α (1 - D) + β T` using the
/// smooth surrogates, with its gradient.
pub fn augmented_loss_surrogate(img: &RasterImage, alpha: f64, beta: f64, target: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; img.pixels.len()];
    if alpha != 0.0 {
        let (d, g) = soft_direction_diversity(img);
        value += alpha * (1.0 - d);
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc -= alpha * gi;
        }
    }
    if beta != 0.0 {
        let (t, g) = soft_thickness_penalty(img, target);
        value += beta * t;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += beta * gi;
        }
    }
    (value, grad)
}
