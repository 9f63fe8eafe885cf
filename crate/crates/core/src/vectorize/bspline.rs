//! Clamped b-spline curves in the plane: fitting, evaluation, knot insertion
//! and arc-length resampling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Samples used for the cumulative chord-length table.
pub const ARC_SAMPLES: usize = 1024;

const COINCIDENT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplinePath {
    pub degree: usize,
    pub control_points: Vec<Point>,
    pub knots: Vec<f64>,
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Drop anchors that coincide with their predecessor.
pub fn collapse_coincident(anchors: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(anchors.len());
    for &a in anchors {
        if out.last().is_none_or(|&prev| dist(prev, a) > COINCIDENT) {
            out.push(a);
        }
    }
    out
}

/// Normalized cumulative chord length of the anchor polyline.
///
/// Chords are measured in the metric of the inverse anchor covariance, which
/// makes the parameters (and so the fit) invariant under affine maps. Nearly
/// collinear anchors have no such metric; plain Euclidean chords are already
/// affine invariant there.
pub fn chord_parameters(anchors: &[Point]) -> Vec<f64> {
    let chord = chord_metric(anchors);
    let mut t = Vec::with_capacity(anchors.len());
    let mut acc = 0.0;
    t.push(0.0);
    for w in anchors.windows(2) {
        acc += chord(w[0], w[1]);
        t.push(acc);
    }
    let total = acc;
    for v in &mut t {
        *v /= total;
    }
    if let Some(last) = t.last_mut() {
        *last = 1.0;
    }
    t
}

fn chord_metric(anchors: &[Point]) -> impl Fn(Point, Point) -> f64 {
    let n = anchors.len().max(1) as f64;
    let mx = anchors.iter().map(|a| a[0]).sum::<f64>() / n;
    let my = anchors.iter().map(|a| a[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for a in anchors {
        let (dx, dy) = (a[0] - mx, a[1] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let det = sxx * syy - sxy * sxy;
    // Adjugate of the covariance; the 1/det factor cancels on normalizing.
    let q = if det > 1e-10 * (sxx + syy).powi(2) {
        Some((syy, -sxy, sxx))
    } else {
        None
    };
    move |a: Point, b: Point| {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        match q {
            Some((a11, a12, a22)) => (a11 * dx * dx + 2.0 * a12 * dx * dy + a22 * dy * dy).max(0.0).sqrt(),
            None => dx.hypot(dy),
        }
    }
}

/// Clamped knot vector whose interior knots average `degree` consecutive
/// parameters, which keeps the interpolation matrix nonsingular.
pub fn averaged_knots(params: &[f64], degree: usize) -> Vec<f64> {
    let n = params.len();
    let mut knots = vec![0.0; degree + 1];
    for j in 1..n - degree {
        let avg = params[j..j + degree].iter().sum::<f64>() / degree as f64;
        knots.push(avg);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    knots
}

/// Index `k` of the knot span `[knots[k], knots[k+1])` containing `t`, with
/// `t == 1` mapped to the last non-empty span.
pub fn find_span(knots: &[f64], degree: usize, n_ctrl: usize, t: f64) -> usize {
    if t >= knots[n_ctrl] {
        return n_ctrl - 1;
    }
    let (mut lo, mut hi) = (degree, n_ctrl);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The `degree + 1` nonzero basis values at `t` for span `span`
/// (triangular Cox-de Boor table).
pub fn basis_funs(knots: &[f64], degree: usize, span: usize, t: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}

/// Fit a clamped b-spline through `anchors` with chord-length parameters.
///
/// The control count equals the anchor count. With `smoothing == 0` the
/// curve interpolates every anchor; otherwise it minimizes the squared anchor
/// residual plus `smoothing` times the squared second differences of the
/// control polygon, with both endpoints pinned to the first/last anchor.
/// The degree drops to `anchors - 1` when there are too few anchors.
pub fn fit_bspline(anchors: &[Point], degree: usize, smoothing: f64) -> Result<SplinePath> {
    if degree == 0 {
        return Err(Error::param("spline degree must be at least 1"));
    }
    if !(smoothing >= 0.0) || !smoothing.is_finite() {
        return Err(Error::param(format!("smoothing must be finite and >= 0, got {smoothing}")));
    }
    if anchors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::param("anchor coordinates must be finite"));
    }
    let pts = collapse_coincident(anchors);
    if pts.len() < 2 {
        return Err(Error::param("a stroke needs at least 2 distinct anchors"));
    }
    let m = pts.len();
    let p = degree.min(m - 1);
    let params = chord_parameters(&pts);
    let knots = averaged_knots(&params, p);

    let mut basis = DMatrix::<f64>::zeros(m, m);
    for (i, &t) in params.iter().enumerate() {
        let span = find_span(&knots, p, m, t);
        for (k, v) in basis_funs(&knots, p, span, t).into_iter().enumerate() {
            basis[(i, span - p + k)] = v;
        }
    }

    let control_points = if smoothing == 0.0 || m <= 2 {
        let lu = basis.lu();
        let mut ctrl = vec![[0.0; 2]; m];
        for axis in 0..2 {
            let rhs = DVector::from_iterator(m, pts.iter().map(|q| q[axis]));
            let sol = lu
                .solve(&rhs)
                .ok_or_else(|| Error::param("singular interpolation system"))?;
            for (c, v) in ctrl.iter_mut().zip(sol.iter()) {
                c[axis] = *v;
            }
        }
        // Clamped curves pass through the end controls; pin them exactly.
        ctrl[0] = pts[0];
        ctrl[m - 1] = pts[m - 1];
        ctrl
    } else {
        smoothed_controls(&basis, &pts, smoothing)?
    };

    Ok(SplinePath {
        degree: p,
        control_points,
        knots,
    })
}

fn smoothed_controls(basis: &DMatrix<f64>, pts: &[Point], smoothing: f64) -> Result<Vec<Point>> {
    let m = pts.len();
    let mut diff2 = DMatrix::<f64>::zeros(m.saturating_sub(2), m);
    for r in 0..m.saturating_sub(2) {
        diff2[(r, r)] = 1.0;
        diff2[(r, r + 1)] = -2.0;
        diff2[(r, r + 2)] = 1.0;
    }
    let normal = basis.transpose() * basis + diff2.transpose() * &diff2 * smoothing;
    let interior = m - 2;
    let reduced = normal.view((1, 1), (interior, interior)).clone_owned();
    let chol = reduced
        .cholesky()
        .ok_or_else(|| Error::param("smoothing system is not positive definite"))?;
    let mut ctrl = vec![[0.0; 2]; m];
    ctrl[0] = pts[0];
    ctrl[m - 1] = pts[m - 1];
    for axis in 0..2 {
        let target = DVector::from_iterator(m, pts.iter().map(|q| q[axis]));
        let rhs_full = basis.transpose() * target;
        let mut rhs = DVector::zeros(interior);
        for i in 0..interior {
            rhs[i] = rhs_full[i + 1]
                - normal[(i + 1, 0)] * pts[0][axis]
                - normal[(i + 1, m - 1)] * pts[m - 1][axis];
        }
        let sol = chol.solve(&rhs);
        for i in 0..interior {
            ctrl[i + 1][axis] = sol[i];
        }
    }
    Ok(ctrl)
}

impl SplinePath {
    pub fn validate(&self) -> Result<()> {
        let n = self.control_points.len();
        if self.degree == 0 || n < self.degree + 1 {
            return Err(Error::param("spline needs at least degree + 1 control points"));
        }
        if self.knots.len() != n + self.degree + 1 {
            return Err(Error::param("knot count must equal controls + degree + 1"));
        }
        if self.knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("knots must be non-decreasing"));
        }
        Ok(())
    }

    /// Point on the curve by de Boor's algorithm; `t` must lie in `[0, 1]`.
    pub fn evaluate(&self, t: f64) -> Result<Point> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::param(format!("curve parameter {t} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> Point {
        let p = self.degree;
        let n = self.control_points.len();
        let k = find_span(&self.knots, p, n, t);
        let mut d: Vec<Point> = (0..=p).map(|j| self.control_points[j + k - p]).collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = j + k - p;
                let denom = self.knots[i + p + 1 - r] - self.knots[i];
                let alpha = if denom == 0.0 { 0.0 } else { (t - self.knots[i]) / denom };
                d[j] = [
                    (1.0 - alpha) * d[j - 1][0] + alpha * d[j][0],
                    (1.0 - alpha) * d[j - 1][1] + alpha * d[j][1],
                ];
            }
        }
        d[p]
    }

    /// Boehm knot insertion of `u` (once).
    pub fn insert_knot(&self, u: f64) -> SplinePath {
        let p = self.degree;
        let n = self.control_points.len();
        let k = find_span(&self.knots, p, n, u);
        let mut ctrl = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let point = if i + p <= k {
                self.control_points[i]
            } else if i > k {
                self.control_points[i - 1]
            } else {
                let denom = self.knots[i + p] - self.knots[i];
                let a = if denom == 0.0 { 0.0 } else { (u - self.knots[i]) / denom };
                let (c0, c1) = (self.control_points[i - 1], self.control_points[i]);
                [(1.0 - a) * c0[0] + a * c1[0], (1.0 - a) * c0[1] + a * c1[1]]
            };
            ctrl.push(point);
        }
        let mut knots = self.knots.clone();
        knots.insert(k + 1, u);
        SplinePath {
            degree: p,
            control_points: ctrl,
            knots,
        }
    }

    /// Decompose into cubic Bézier segments (lower degrees are elevated).
    pub fn to_cubic_beziers(&self) -> Vec<[Point; 4]> {
        let p = self.degree;
        let mut path = self.clone();
        let interior: Vec<f64> = {
            let mut v: Vec<f64> = self.knots[p + 1..self.knots.len() - p - 1].to_vec();
            v.dedup();
            v
        };
        for u in interior {
            let mult = path.knots.iter().filter(|&&k| k == u).count();
            for _ in mult..p {
                path = path.insert_knot(u);
            }
        }
        let segments = (path.control_points.len() - 1) / p;
        (0..segments)
            .map(|s| {
                let c = &path.control_points[s * p..=s * p + p];
                elevate_to_cubic(c)
            })
            .collect()
    }

    /// Chord-accumulated arc-length table over `ARC_SAMPLES` uniform steps.
    fn arc_table(&self) -> (Vec<f64>, Vec<f64>) {
        let ts: Vec<f64> = (0..=ARC_SAMPLES).map(|i| i as f64 / ARC_SAMPLES as f64).collect();
        let pts: Vec<Point> = ts.iter().map(|&t| self.eval_unchecked(t)).collect();
        let mut cum = Vec::with_capacity(pts.len());
        cum.push(0.0);
        for w in pts.windows(2) {
            let last = *cum.last().unwrap();
            cum.push(last + dist(w[0], w[1]));
        }
        (ts, cum)
    }

    pub fn length(&self) -> f64 {
        *self.arc_table().1.last().unwrap()
    }

    /// Curve parameter at fraction `s` of total arc length.
    fn parameter_at(ts: &[f64], cum: &[f64], s: f64) -> f64 {
        let total = *cum.last().unwrap();
        if total == 0.0 {
            return 0.0;
        }
        let target = s * total;
        let j = cum.partition_point(|&c| c < target).clamp(1, cum.len() - 1);
        let seg = cum[j] - cum[j - 1];
        let f = if seg > 0.0 { (target - cum[j - 1]) / seg } else { 0.0 };
        ts[j - 1] + f * (ts[j] - ts[j - 1])
    }

    /// `n >= 2` points spaced evenly by arc length, endpoints included.
    pub fn resample_arclength(&self, n: usize) -> Result<Vec<Point>> {
        if n < 2 {
            return Err(Error::param("resampling needs at least 2 points"));
        }
        let (ts, cum) = self.arc_table();
        Ok((0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                let t = if i == n - 1 { 1.0 } else { Self::parameter_at(&ts, &cum, s) };
                self.eval_unchecked(t)
            })
            .collect())
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> SplinePath {
        SplinePath {
            degree: self.degree,
            control_points: self.control_points.iter().map(|&c| f(c)).collect(),
            knots: self.knots.clone(),
        }
    }
}

fn elevate_to_cubic(c: &[Point]) -> [Point; 4] {
    let lerp = |a: Point, b: Point, t: f64| [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
    match c.len() {
        2 => [c[0], lerp(c[0], c[1], 1.0 / 3.0), lerp(c[0], c[1], 2.0 / 3.0), c[1]],
        3 => [c[0], lerp(c[0], c[1], 2.0 / 3.0), lerp(c[2], c[1], 2.0 / 3.0), c[2]],
        4 => [c[0], c[1], c[2], c[3]],
        _ => unreachable!("segments are built with degree 1..=3"),
    }
}

pub fn cubic_bezier_point(seg: &[Point; 4], t: f64) -> Point {
    let u = 1.0 - t;
    let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
    let mut p = [0.0; 2];
    for (k, c) in seg.iter().enumerate() {
        p[0] += w[k] * c[0];
        p[1] += w[k] * c[1];
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_anchors_give_a_line() {
        let s = fit_bspline(&[[0.0, 0.0], [10.0, 5.0]], 3, 0.0).unwrap();
        assert_eq!(s.degree, 1);
        let mid = s.evaluate(0.5).unwrap();
        assert!((mid[0] - 5.0).abs() < 1e-12 && (mid[1] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn too_few_anchors_and_bad_parameters() {
        assert!(fit_bspline(&[[1.0, 1.0]], 3, 0.0).is_err());
        // Coincident anchors collapse to one.
        assert!(fit_bspline(&[[1.0, 1.0], [1.0, 1.0]], 3, 0.0).is_err());
        let s = fit_bspline(&[[0.0, 0.0], [1.0, 0.0], [2.0, 1.0]], 3, 0.0).unwrap();
        assert_eq!(s.degree, 2);
        assert!(s.evaluate(1.5).is_err());
        assert!(s.evaluate(-0.1).is_err());
    }

    #[test]
    fn coincident_anchors_are_collapsed() {
        let s = fit_bspline(&[[0.0, 0.0], [0.0, 0.0], [4.0, 0.0], [8.0, 2.0], [8.0, 2.0]], 3, 0.0).unwrap();
        assert_eq!(s.control_points.len(), 3);
        s.validate().unwrap();
    }

    #[test]
    fn knot_structure_invariants() {
        let anchors: Vec<Point> = (0..9).map(|i| [i as f64 * 3.0, (i as f64).sin() * 4.0]).collect();
        for smoothing in [0.0, 0.5, 10.0] {
            let s = fit_bspline(&anchors, 3, smoothing).unwrap();
            s.validate().unwrap();
            assert!(s.knots[..4].iter().all(|&k| k == 0.0));
            assert!(s.knots[s.knots.len() - 4..].iter().all(|&k| k == 1.0));
            assert_eq!(s.evaluate(0.0).unwrap(), anchors[0]);
            assert_eq!(s.evaluate(1.0).unwrap(), anchors[8]);
        }
    }

    #[test]
    fn smoothing_reduces_roughness() {
        let anchors: Vec<Point> = (0..12)
            .map(|i| [i as f64 * 2.0, if i % 2 == 0 { 0.0 } else { 3.0 }])
            .collect();
        let rough = |s: &SplinePath| -> f64 {
            s.control_points
                .windows(3)
                .map(|w| {
                    let d = [w[0][0] - 2.0 * w[1][0] + w[2][0], w[0][1] - 2.0 * w[1][1] + w[2][1]];
                    d[0] * d[0] + d[1] * d[1]
                })
                .sum()
        };
        let a = fit_bspline(&anchors, 3, 0.0).unwrap();
        let b = fit_bspline(&anchors, 3, 5.0).unwrap();
        assert!(rough(&b) < rough(&a));
    }

    #[test]
    fn knot_insertion_preserves_shape() {
        let anchors: Vec<Point> = (0..7).map(|i| [i as f64, (i as f64 * 0.9).cos()]).collect();
        let s = fit_bspline(&anchors, 3, 0.0).unwrap();
        let r = s.insert_knot(0.37).insert_knot(0.37);
        for i in 0..=50 {
            let t = i as f64 / 50.0;
            let (a, b) = (s.evaluate(t).unwrap(), r.evaluate(t).unwrap());
            assert!(dist(a, b) < 1e-12);
        }
    }

    #[test]
    fn bezier_decomposition_traces_curve() {
        for n in [2usize, 3, 4, 8] {
            let anchors: Vec<Point> = (0..n).map(|i| [i as f64 * 5.0, (i as f64).sqrt() * 3.0]).collect();
            let s = fit_bspline(&anchors, 3, 0.0).unwrap();
            let segs = s.to_cubic_beziers();
            assert_eq!(segs[0][0], anchors[0]);
            let end = segs.last().unwrap()[3];
            assert!(dist(end, anchors[n - 1]) < 1e-12);
            for w in segs.windows(2) {
                assert!(dist(w[0][3], w[1][0]) < 1e-12);
            }
            // Each Bézier point lies on the spline (check via dense nearest).
            let dense: Vec<Point> = (0..=4000).map(|i| s.evaluate(i as f64 / 4000.0).unwrap()).collect();
            for seg in &segs {
                for k in 0..=10 {
                    let q = cubic_bezier_point(seg, k as f64 / 10.0);
                    let best = dense.iter().map(|&d| dist(d, q)).fold(f64::INFINITY, f64::min);
                    assert!(best < 0.05, "bezier point off curve by {best}");
                }
            }
        }
    }

    #[test]
    fn resample_straight_segment() {
        let s = fit_bspline(&[[0.0, 0.0], [100.0, 0.0]], 3, 0.0).unwrap();
        let pts = s.resample_arclength(5).unwrap();
        for (i, p) in pts.iter().enumerate() {
            assert!((p[0] - 25.0 * i as f64).abs() < 1e-9);
        }
        let two = s.resample_arclength(2).unwrap();
        assert_eq!(two, vec![[0.0, 0.0], [100.0, 0.0]]);
        assert!(s.resample_arclength(1).is_err());
    }
}
