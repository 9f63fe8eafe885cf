//! From annotated anchors to manufacturable stroke paths: spline fitting,
//! arc-length timing and export.

mod animation;
mod bspline;
mod export;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Canvas;

pub use animation::{build_animation, AnimationScript, ColorMode, Segment, SegmentKind, PEN_LIFT_SECONDS};
pub use bspline::{
    averaged_knots, basis_funs, chord_parameters, collapse_coincident, cubic_bezier_point, find_span,
    fit_bspline, Point, SplinePath, ARC_SAMPLES,
};
pub use export::{export_animation_json, export_svg, parse_svg_paths, scale_for_fabrication, FabricationDoc};

/// Hand-annotated anchors for one sample: ordered strokes of ordered points
/// in canvas pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub sample_id: String,
    pub strokes: Vec<Vec<Point>>,
}

impl AnchorSet {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: AnchorSet = serde_json::from_str(&text)?;
        Ok(set)
    }

    pub fn validate(&self, canvas: Canvas) -> Result<()> {
        if self.strokes.is_empty() {
            return Err(Error::Empty("anchor set"));
        }
        for (i, stroke) in self.strokes.iter().enumerate() {
            if stroke.len() < 2 {
                return Err(Error::param(format!("stroke {i} has fewer than 2 anchors")));
            }
            for p in stroke {
                let inside = p[0] >= 0.0
                    && p[1] >= 0.0
                    && p[0] <= canvas.width as f64
                    && p[1] <= canvas.height as f64;
                if !inside {
                    return Err(Error::param(format!(
                        "anchor ({}, {}) in stroke {i} lies outside the {}x{} canvas",
                        p[0], p[1], canvas.height, canvas.width
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The fitted strokes of one signature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub sample_id: String,
    pub canvas: Canvas,
    pub strokes: Vec<SplinePath>,
}

impl PathSet {
    pub fn fit(anchors: &AnchorSet, canvas: Canvas, smoothing: f64) -> Result<Self> {
        anchors.validate(canvas)?;
        let strokes = anchors
            .strokes
            .iter()
            .map(|s| fit_bspline(s, 3, smoothing))
            .collect::<Result<Vec<_>>>()?;
        Ok(PathSet {
            sample_id: anchors.sample_id.clone(),
            canvas,
            strokes,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let set: PathSet = serde_json::from_str(&text)?;
        for s in &set.strokes {
            s.validate()?;
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        crate::write_atomic(path, text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Axis-aligned bounds of the curves `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for s in &self.strokes {
            for i in 0..=ARC_SAMPLES {
                let p = s.eval_unchecked(i as f64 / ARC_SAMPLES as f64);
                b = Some(match b {
                    None => (p[0], p[1], p[0], p[1]),
                    Some((x0, y0, x1, y1)) => (x0.min(p[0]), y0.min(p[1]), x1.max(p[0]), y1.max(p[1])),
                });
            }
        }
        b
    }
}
