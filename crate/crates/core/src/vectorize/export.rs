//! SVG, animation and fabrication documents.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::animation::AnimationScript;
use super::bspline::{Point, SplinePath};
use super::PathSet;
use crate::error::{Error, Result};

/// One `<path>` per stroke, built from cubic Bézier commands. Coordinates
/// are printed in shortest round-trip form, so parsing recovers them exactly.
pub fn export_svg(paths: &PathSet, stroke_width: f64) -> String {
    let (w, h) = (paths.canvas.width, paths.canvas.height);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for (i, stroke) in paths.strokes.iter().enumerate() {
        let segs = stroke.to_cubic_beziers();
        let mut d = format!("M {},{}", segs[0][0][0], segs[0][0][1]);
        for seg in &segs {
            let _ = write!(
                d,
                " C {},{} {},{} {},{}",
                seg[1][0], seg[1][1], seg[2][0], seg[2][1], seg[3][0], seg[3][1]
            );
        }
        let _ = writeln!(
            svg,
            r#"  <path id="stroke-{i}" d="{d}" fill="none" stroke="black" stroke-width="{stroke_width}" stroke-linecap="round"/>"#
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Parse the cubic segments back out of SVG written by [`export_svg`].
pub fn parse_svg_paths(svg: &str) -> Result<Vec<Vec<[Point; 4]>>> {
    let bad = |msg: &str| Error::Parse {
        context: "svg path".into(),
        message: msg.to_string(),
    };
    let mut out = Vec::new();
    let mut rest = svg;
    while let Some(start) = rest.find(" d=\"") {
        let body = &rest[start + 4..];
        let end = body.find('"').ok_or_else(|| bad("unterminated d attribute"))?;
        let d = &body[..end];
        rest = &body[end..];

        let tokens: Vec<&str> = d
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        let mut pos = 0;
        let mut expect = |word: &str| -> Result<()> {
            if tokens.get(pos) == Some(&word) {
                pos += 1;
                Ok(())
            } else {
                Err(bad(&format!("expected `{word}`")))
            }
        };
        expect("M")?;
        let mut nums = tokens[pos..].iter();
        let num = |it: &mut std::slice::Iter<&str>| -> Result<f64> {
            it.next()
                .ok_or_else(|| bad("truncated path"))?
                .parse::<f64>()
                .map_err(|e| bad(&e.to_string()))
        };
        let mut current = [num(&mut nums)?, num(&mut nums)?];
        let mut segs = Vec::new();
        loop {
            match nums.next() {
                None => break,
                Some(&"C") => {
                    let c1 = [num(&mut nums)?, num(&mut nums)?];
                    let c2 = [num(&mut nums)?, num(&mut nums)?];
                    let end = [num(&mut nums)?, num(&mut nums)?];
                    segs.push([current, c1, c2, end]);
                    current = end;
                }
                Some(other) => return Err(bad(&format!("unsupported token `{other}`"))),
            }
        }
        out.push(segs);
    }
    Ok(out)
}

pub fn export_animation_json(script: &AnimationScript) -> Result<String> {
    Ok(serde_json::to_string_pretty(script)?)
}

/// Paths scaled for fabrication, with physical extents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricationDoc {
    pub sample_id: String,
    pub units: String,
    pub scale_factor: f64,
    pub inches_per_pixel: f64,
    /// Extent of the scaled curves, in scaled pixel units.
    pub width_px: f64,
    pub height_px: f64,
    /// Physical extent of the scaled curves, in inches.
    pub width: f64,
    pub height: f64,
    pub strokes: Vec<SplinePath>,
}

/// Multiply every coordinate by `factor` and record the resulting size in
/// inches, given `inches_per_pixel` for the original canvas.
pub fn scale_for_fabrication(paths: &PathSet, factor: f64, inches_per_pixel: f64) -> Result<FabricationDoc> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::param(format!("scale factor must be positive, got {factor}")));
    }
    if !(inches_per_pixel > 0.0) || !inches_per_pixel.is_finite() {
        return Err(Error::param("inches per pixel must be positive"));
    }
    let strokes: Vec<SplinePath> = paths
        .strokes
        .iter()
        .map(|s| s.map_points(|p| [p[0] * factor, p[1] * factor]))
        .collect();
    let (x0, y0, x1, y1) = paths.bounds().ok_or(Error::Empty("path set"))?;
    let width_px = (x1 - x0) * factor;
    let height_px = (y1 - y0) * factor;
    Ok(FabricationDoc {
        sample_id: paths.sample_id.clone(),
        units: "in".into(),
        scale_factor: factor,
        inches_per_pixel,
        width_px,
        height_px,
        width: width_px * inches_per_pixel,
        height: height_px * inches_per_pixel,
        strokes,
    })
}
