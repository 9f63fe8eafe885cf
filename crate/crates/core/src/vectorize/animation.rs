//! Arc-length-timed signing schedule.

use serde::{Deserialize, Serialize};

use super::bspline::{Point, SplinePath};
use crate::error::{Error, Result};

/// Pause between consecutive strokes, in seconds.
pub const PEN_LIFT_SECONDS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    #[default]
    Black,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Draw,
    PenLift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Index into the input strokes; `None` for pen lifts.
    pub stroke: Option<usize>,
    pub t_start: f64,
    pub t_end: f64,
    pub points: Vec<Point>,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnimationScript {
    pub total_duration: f64,
    pub color_mode: ColorMode,
    pub segments: Vec<Segment>,
}

/// Schedule the strokes over one `total_duration` cycle. Drawing time is
/// split in proportion to arc length after reserving a fixed pen-lift gap
/// between consecutive strokes. Zero-length strokes are dropped.
pub fn build_animation(strokes: &[SplinePath], total_duration: f64, color_mode: ColorMode) -> Result<AnimationScript> {
    if !(total_duration > 0.0) || !total_duration.is_finite() {
        return Err(Error::param("total duration must be positive"));
    }
    let mut kept: Vec<(usize, &SplinePath, f64)> = Vec::new();
    for (i, s) in strokes.iter().enumerate() {
        let len = s.length();
        if len > 1e-9 {
            kept.push((i, s, len));
        } else {
            log::warn!("dropping zero-length stroke {i}");
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty("stroke list"));
    }
    let gaps = (kept.len() - 1) as f64 * PEN_LIFT_SECONDS;
    let drawing = total_duration - gaps;
    if drawing <= 0.0 {
        return Err(Error::param(format!(
            "{} strokes need more than {total_duration} s of pen lifts",
            kept.len()
        )));
    }
    let total_len: f64 = kept.iter().map(|k| k.2).sum();

    let mut segments = Vec::with_capacity(2 * kept.len());
    let mut clock = 0.0;
    for (pos, &(index, stroke, len)) in kept.iter().enumerate() {
        if pos > 0 {
            let prev_end = *segments
                .last()
                .map(|s: &Segment| s.points.last().unwrap())
                .unwrap();
            let next_start = stroke.control_points[0];
            segments.push(Segment {
                kind: SegmentKind::PenLift,
                stroke: None,
                t_start: clock,
                t_end: clock + PEN_LIFT_SECONDS,
                points: vec![prev_end, next_start],
            });
            clock += PEN_LIFT_SECONDS;
        }
        let last = pos == kept.len() - 1;
        let end = if last { total_duration } else { clock + drawing * len / total_len };
        let n = (len.ceil() as usize).max(2);
        segments.push(Segment {
            kind: SegmentKind::Draw,
            stroke: Some(index),
            t_start: clock,
            t_end: end,
            points: stroke.resample_arclength(n)?,
        });
        clock = end;
    }
    Ok(AnimationScript {
        total_duration,
        color_mode,
        segments,
    })
}
