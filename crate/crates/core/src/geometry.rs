//! Oriented rectangles, their four-vertex form, and overlap measures.
//!
//! Angles are in degrees at every public boundary. A box's `theta` is the
//! direction of its lengthwise (long) axis measured counter-clockwise from the
//! +x axis in the `(x, y)` frame, i.e. the long axis points along
//! `(cos theta, sin theta)`. With image coordinates (y down) this reads as a
//! clockwise angle on screen. The axis is undirected, so `theta` lives in
//! `(-90, 90]`.

use std::cmp::Ordering;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snap window used when wrapping angles onto `(-90, 90]`.
const ANGLE_SNAP_DEG: f64 = 1e-9;
/// Tolerance in pixels for accepting a quadrilateral as a rectangle.
pub const RECT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotates counter-clockwise by `rad` about the origin.
    pub fn rotate(self, rad: f64) -> Point {
        let (s, c) = rad.sin_cos();
        Point::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Wraps an axial angle onto `(-90, 90]`.
pub fn wrap_axial_deg(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(180.0);
    if (t - 90.0).abs() <= ANGLE_SNAP_DEG {
        return 90.0;
    }
    if t > 90.0 {
        t -= 180.0;
    }
    if t <= -90.0 + ANGLE_SNAP_DEG {
        // rem_euclid can return 180 - ulp for tiny negative inputs
        t = 90.0;
    }
    t
}

/// Canonical oriented rectangle: `w <= h`, `theta` in `(-90, 90]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    #[serde(rename = "theta_deg")]
    pub theta: f64,
}

impl RotatedBox {
    /// Builds a canonical box from a raw `(cx, cy, w, h, theta)` tuple in which
    /// `theta` is the direction of the `h` side.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        canonicalize(cx, cy, w, h, theta)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Unit vector along the long axis.
    pub fn long_axis(&self) -> Point {
        let (s, c) = self.theta.to_radians().sin_cos();
        Point::new(c, s)
    }

    /// Corners in counter-clockwise cyclic order (positive shoelace area).
    pub fn corners(&self) -> [Point; 4] {
        let d = self.long_axis() * (self.h / 2.0);
        let n = Point::new(-d.y, d.x) * (self.w / self.h);
        let c = self.center();
        [c - d - n, c + d - n, c + d + n, c - d + n]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> RotatedBox {
        RotatedBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Rotates the box about `pivot` by `deg` degrees.
    pub fn rotate_about(&self, pivot: Point, deg: f64) -> RotatedBox {
        let c = pivot + (self.center() - pivot).rotate(deg.to_radians());
        let theta = canonical_theta(self.w, self.h, self.theta + deg);
        RotatedBox {
            cx: c.x,
            cy: c.y,
            theta,
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.cx, self.cy, self.w, self.h, self.theta]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn canonical_theta(w: f64, h: f64, theta: f64) -> f64 {
    let t = wrap_axial_deg(theta);
    if w == h {
        // squares: pick the axis with theta in (0, 90]
        let t = t.rem_euclid(90.0);
        if t <= ANGLE_SNAP_DEG || (90.0 - t) <= ANGLE_SNAP_DEG {
            90.0
        } else {
            t
        }
    } else {
        t
    }
}

/// Returns the equal-geometry canonical box; swapping sides rotates the
/// lengthwise axis by 90 degrees.
pub fn canonicalize(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<RotatedBox> {
    if ![cx, cy, w, h, theta].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidBox("non-finite field".into()));
    }
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidBox(format!("non-positive side ({w}, {h})")));
    }
    let (w, h, theta) = if w > h { (h, w, theta + 90.0) } else { (w, h, theta) };
    Ok(RotatedBox {
        cx,
        cy,
        w,
        h,
        theta: canonical_theta(w, h, theta),
    })
}

/// Four vertices in collated order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadBox {
    pub xs: [f64; 4],
    pub ys: [f64; 4],
}

impl QuadBox {
    pub fn from_points(pts: [Point; 4]) -> Self {
        QuadBox {
            xs: pts.map(|p| p.x),
            ys: pts.map(|p| p.y),
        }
    }

    pub fn points(&self) -> [Point; 4] {
        std::array::from_fn(|i| Point::new(self.xs[i], self.ys[i]))
    }

    pub fn centroid(&self) -> Point {
        Point::new(self.xs.iter().sum::<f64>() / 4.0, self.ys.iter().sum::<f64>() / 4.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> QuadBox {
        QuadBox {
            xs: self.xs.map(|x| x + dx),
            ys: self.ys.map(|y| y + dy),
        }
    }

    /// Re-orders the vertices by the collation rule, taking the lengthwise
    /// angle from the minimum-area rectangle of the vertices. Degenerate quads
    /// (all vertices collinear) are collated with a zero angle.
    pub fn collate(&self) -> QuadBox {
        let pts = self.points();
        let alpha = min_area_rect(&pts).map(|r| r.theta).unwrap_or(0.0);
        QuadBox::from_points(collate_points(pts, self.centroid(), alpha))
    }

    pub fn is_finite(&self) -> bool {
        self.xs.iter().chain(self.ys.iter()).all(|v| v.is_finite())
    }
}

/// Orders four vertices: derotate by `-alpha_deg` about `center`, then sort by
/// `(y, x)`.
pub fn collate_points(pts: [Point; 4], center: Point, alpha_deg: f64) -> [Point; 4] {
    let rad = -alpha_deg.to_radians();
    let local: [Point; 4] = pts.map(|p| (p - center).rotate(rad));
    let scale = local.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut idx = [0usize, 1, 2, 3];
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (local[a], local[b]);
        if (pa.y - pb.y).abs() > tol {
            pa.y.total_cmp(&pb.y)
        } else if (pa.x - pb.x).abs() > tol {
            pa.x.total_cmp(&pb.x)
        } else {
            Ordering::Equal
        }
    });
    idx.map(|i| pts[i])
}

/// The 5-d to 8-d transform: corners of the box in collated order.
pub fn to_quad(b: &RotatedBox) -> QuadBox {
    QuadBox::from_points(collate_points(b.corners(), b.center(), b.theta))
}

/// Inverse of [`to_quad`] for quads that are rectangles within
/// [`RECT_TOLERANCE`]. Vertex order does not matter.
pub fn from_quad(q: &QuadBox) -> Result<RotatedBox> {
    if !q.is_finite() {
        return Err(Error::InvalidBox("non-finite vertex".into()));
    }
    let c = q.centroid();
    let mut pts = q.points();
    pts.sort_by(|a, b| {
        let ta = (a.y - c.y).atan2(a.x - c.x);
        let tb = (b.y - c.y).atan2(b.x - c.x);
        ta.total_cmp(&tb)
    });
    let e: [Point; 4] = std::array::from_fn(|i| pts[(i + 1) % 4] - pts[i]);
    let (l0, l1) = (e[0].norm(), e[1].norm());
    if l0 <= RECT_TOLERANCE || l1 <= RECT_TOLERANCE {
        return Err(Error::NotRectangular { residual: l0.min(l1) });
    }
    let residual = (e[0] + e[2])
        .norm()
        .max((e[1] + e[3]).norm())
        .max((e[0].dot(e[1]) / l1).abs());
    if residual > RECT_TOLERANCE {
        return Err(Error::NotRectangular { residual });
    }
    // average opposite edges to damp rounding
    let a = (e[0] - e[2]) * 0.5;
    let b = (e[1] - e[3]) * 0.5;
    let (la, lb) = (a.norm(), b.norm());
    let (w, h, dir) = if la >= lb { (lb, la, a) } else { (la, lb, b) };
    let theta = dir.y.atan2(dir.x).to_degrees();
    canonicalize(c.x, c.y, w, h, theta)
}

/// Convex hull in counter-clockwise order without collinear points
/// (monotone chain).
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if (b - a).cross(p - a) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Signed shoelace area (positive for counter-clockwise rings).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>()
}

/// Minimum-area enclosing rectangle by rotating calipers over the convex hull.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedBox> {
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::DegenerateGeometry("non-finite point".into()));
    }
    let hull = convex_hull(points);
    let n = hull.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    let extent = hull.iter().map(|p| (*p - hull[0]).norm()).fold(0.0, f64::max);
    if polygon_area(&hull) <= 1e-12 * extent * extent {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }

    let next = |i: usize| (i + 1) % n;
    let mut best: Option<(f64, Point, Point, f64, f64, f64, f64)> = None;
    // caliper indices: far along the edge, farthest from the edge, far behind
    let (mut j, mut k, mut m) = (1usize, 1usize, 0usize);
    for i in 0..n {
        let e = hull[next(i)] - hull[i];
        let u = e * (1.0 / e.norm());
        let nrm = Point::new(-u.y, u.x);
        if i == 0 {
            j = next(i);
        }
        for _ in 0..n {
            if hull[next(j)].dot(u) > hull[j].dot(u) {
                j = next(j);
            } else {
                break;
            }
        }
        if i == 0 {
            k = j;
        }
        for _ in 0..n {
            if hull[next(k)].dot(nrm) > hull[k].dot(nrm) {
                k = next(k);
            } else {
                break;
            }
        }
        if i == 0 {
            m = k;
        }
        for _ in 0..n {
            if hull[next(m)].dot(u) < hull[m].dot(u) {
                m = next(m);
            } else {
                break;
            }
        }
        let s_max = hull[j].dot(u);
        let s_min = hull[m].dot(u);
        let t_min = hull[i].dot(nrm);
        let t_max = hull[k].dot(nrm);
        let area = (s_max - s_min) * (t_max - t_min);
        if best.as_ref().is_none_or(|b| area < b.0) {
            best = Some((area, u, nrm, s_min, s_max, t_min, t_max));
        }
    }
    let (_, u, nrm, s_min, s_max, t_min, t_max) = best.expect("hull has edges");
    let center = u * ((s_min + s_max) / 2.0) + nrm * ((t_min + t_max) / 2.0);
    let (lu, ln) = (s_max - s_min, t_max - t_min);
    // `w` is the side across `u`, `theta` points along `u`; canonicalize swaps
    // when the span along `u` is the shorter one.
    let theta_h = nrm.y.atan2(nrm.x).to_degrees();
    canonicalize(center.x, center.y, lu, ln, theta_h)
}

/// Axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl AxisBox {
    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin).max(0.0) * (self.ymax - self.ymin).max(0.0)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn iou(&self, o: &AxisBox) -> f64 {
        let iw = self.xmax.min(o.xmax) - self.xmin.max(o.xmin);
        let ih = self.ymax.min(o.ymax) - self.ymin.max(o.ymin);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        let union = self.area() + o.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }
}

/// Tightest axis-aligned rectangle around the box.
pub fn aabb(b: &RotatedBox) -> AxisBox {
    let (s, c) = b.theta.to_radians().sin_cos();
    let hx = 0.5 * (b.h * c.abs() + b.w * s.abs());
    let hy = 0.5 * (b.h * s.abs() + b.w * c.abs());
    AxisBox {
        xmin: b.cx - hx,
        ymin: b.cy - hy,
        xmax: b.cx + hx,
        ymax: b.cy + hy,
    }
}

/// Overlap of the axis-aligned conversions of two boxes.
pub fn iou_axis(a: &RotatedBox, b: &RotatedBox) -> f64 {
    aabb(a).iou(&aabb(b))
}

/// Clips a polygon against a convex counter-clockwise polygon
/// (Sutherland-Hodgman).
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b - a;
        let side = |p: Point| edge.cross(p - a);
        let input = std::mem::take(&mut out);
        let len = input.len();
        for k in 0..len {
            let cur = input[k];
            let prev = input[(k + len - 1) % len];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(prev + (cur - prev) * (sp / (sp - sc)));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(prev + (cur - prev) * (sp / (sp - sc)));
            }
        }
    }
    out
}

/// Exact intersection area of two oriented rectangles.
pub fn intersection_area(a: &RotatedBox, b: &RotatedBox) -> f64 {
    // cheap reject on circumscribed circles
    let ra = 0.5 * a.w.hypot(a.h);
    let rb = 0.5 * b.w.hypot(b.h);
    if (a.center() - b.center()).norm() >= ra + rb {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.corners(), &b.corners())).max(0.0)
}

/// Exact overlap ratio of two oriented rectangles.
pub fn iou_rotated(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy rotated non-maximum suppression. Returns the indices of the kept
/// boxes in descending score order (ties by input order).
pub fn nms_rotated(boxes: &[RotatedBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou_rotated(&boxes[k], &boxes[i]) < iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn assert_box(b: RotatedBox, e: (f64, f64, f64, f64, f64)) {
        let got = [b.cx, b.cy, b.w, b.h, b.theta];
        let exp = [e.0, e.1, e.2, e.3, e.4];
        for (g, x) in got.iter().zip(exp) {
            assert!(close(*g, x, 1e-9), "{got:?} != {exp:?}");
        }
    }

    #[test]
    fn canonicalize_examples() {
        assert_box(canonicalize(0., 0., 4., 2., 0.).unwrap(), (0., 0., 2., 4., 90.));
        assert_box(canonicalize(0., 0., 2., 4., 30.).unwrap(), (0., 0., 2., 4., 30.));
        // 120 + 90 = 210 wraps to 30
        assert_box(canonicalize(5., 5., 3., 1., 120.).unwrap(), (5., 5., 1., 3., 30.));
        assert_box(canonicalize(0., 0., 1., 2., -90.).unwrap(), (0., 0., 1., 2., 90.));
    }

    #[test]
    fn canonicalize_rejects_bad_sides() {
        assert!(matches!(canonicalize(0., 0., 0., 2., 0.), Err(Error::InvalidBox(_))));
        assert!(matches!(canonicalize(0., 0., 1., -2., 0.), Err(Error::InvalidBox(_))));
        assert!(canonicalize(0., 0., 1., 2., f64::NAN).is_err());
    }

    #[test]
    fn square_tie_break() {
        assert_eq!(canonicalize(0., 0., 2., 2., 0.).unwrap().theta, 90.);
        assert!(close(canonicalize(0., 0., 2., 2., -30.).unwrap().theta, 60., 1e-12));
        assert!(close(canonicalize(0., 0., 2., 2., 45.).unwrap().theta, 45., 1e-12));
    }

    #[test]
    fn to_quad_axis_aligned() {
        let q = to_quad(&RotatedBox::new(0., 0., 2., 4., 90.).unwrap());
        let mut pts: Vec<(i64, i64)> = q
            .points()
            .iter()
            .map(|p| (p.x.round() as i64, p.y.round() as i64))
            .collect();
        for (p, r) in q.points().iter().zip(&pts) {
            assert!(close(p.x, r.0 as f64, 1e-12) && close(p.y, r.1 as f64, 1e-12));
        }
        // collated: derotated by -90 then sorted by (y, x)
        assert_eq!(pts, vec![(1, -2), (1, 2), (-1, -2), (-1, 2)]);
        pts.sort();
        assert_eq!(pts, vec![(-1, -2), (-1, 2), (1, -2), (1, 2)]);
    }

    #[test]
    fn to_quad_diamond() {
        let q = to_quad(&RotatedBox::new(0., 0., 2., 2., 45.).unwrap());
        let r2 = 2f64.sqrt();
        for p in q.points() {
            assert!(close(p.norm(), r2, 1e-12));
            assert!(close(p.x, 0., 1e-12) || close(p.y, 0., 1e-12));
        }
    }

    #[test]
    fn from_quad_unit_square() {
        let q = QuadBox {
            xs: [0., 1., 1., 0.],
            ys: [0., 0., 1., 1.],
        };
        assert_box(from_quad(&q).unwrap(), (0.5, 0.5, 1., 1., 90.));
    }

    #[test]
    fn from_quad_rotated_rectangle() {
        let b = RotatedBox::new(3., -2., 2., 5., 30.).unwrap();
        assert_box(from_quad(&to_quad(&b)).unwrap(), (3., -2., 2., 5., 30.));
        let b = RotatedBox::new(3., -2., 5., 2., 30.).unwrap();
        assert!(close(b.theta, -60., 1e-12));
        assert_box(from_quad(&to_quad(&b)).unwrap(), (3., -2., 2., 5., -60.));
    }

    #[test]
    fn from_quad_rejects_non_rectangles() {
        let q = QuadBox {
            xs: [0., 2., 1.5, 0.],
            ys: [0., 0., 1., 1.],
        };
        assert!(matches!(from_quad(&q), Err(Error::NotRectangular { .. })));
    }

    #[test]
    fn min_area_rect_axis_aligned() {
        let pts = [
            Point::new(0., 0.),
            Point::new(2., 0.),
            Point::new(2., 1.),
            Point::new(0., 1.),
        ];
        assert_box(min_area_rect(&pts).unwrap(), (1., 0.5, 1., 2., 0.));
    }

    #[test]
    fn min_area_rect_recovers_rectangle() {
        let b = RotatedBox::new(10., 4., 3., 7., -20.).unwrap();
        let r = min_area_rect(&b.corners()).unwrap();
        assert!(close(r.area(), b.area(), 1e-9));
        assert!(close(r.theta, b.theta, 1e-9));
    }

    #[test]
    fn min_area_rect_degenerate() {
        let line = [Point::new(0., 0.), Point::new(1., 1.), Point::new(2., 2.)];
        assert!(matches!(min_area_rect(&line), Err(Error::DegenerateGeometry(_))));
        let same = [Point::new(1., 1.); 4];
        assert!(min_area_rect(&same).is_err());
        assert!(min_area_rect(&line[..2]).is_err());
    }

    #[test]
    fn aabb_examples() {
        let a = aabb(&RotatedBox::new(1., 2., 2., 4., 90.).unwrap());
        assert!(close(a.xmin, 0., 1e-12) && close(a.xmax, 2., 1e-12));
        assert!(close(a.ymin, 0., 1e-12) && close(a.ymax, 4., 1e-12));
        let a = aabb(&RotatedBox::new(0., 0., 2., 2., 45.).unwrap());
        let r2 = 2f64.sqrt();
        assert!(close(a.xmin, -r2, 1e-12) && close(a.ymax, r2, 1e-12));
    }

    #[test]
    fn iou_axis_examples() {
        let a = RotatedBox::new(1., 1., 2., 2., 90.).unwrap();
        let b = RotatedBox::new(2., 1., 2., 2., 90.).unwrap();
        assert!(close(iou_axis(&a, &b), 1. / 3., 1e-12));
        assert_eq!(iou_axis(&a, &a), 1.0);
        assert_eq!(iou_axis(&a, &a.translate(10., 0.)), 0.0);
    }

    #[test]
    fn iou_rotated_examples() {
        let a = RotatedBox::new(0., 0., 2., 4., 30.).unwrap();
        assert!(close(iou_rotated(&a, &a), 1., 1e-12));
        assert_eq!(iou_rotated(&a, &a.translate(20., 0.)), 0.0);
        // concentric square and 45-degree diamond: octagon of area 8(sqrt2 - 1)
        let s = RotatedBox::new(0., 0., 2., 2., 90.).unwrap();
        let d = RotatedBox::new(0., 0., 2., 2., 45.).unwrap();
        let inter = 8.0 * (2f64.sqrt() - 1.0);
        assert!(close(iou_rotated(&s, &d), inter / (8.0 - inter), 1e-12));
    }

    #[test]
    fn nms_examples() {
        let a = RotatedBox::new(0., 0., 2., 4., 30.).unwrap();
        assert_eq!(nms_rotated(&[a], &[0.3], 0.5), vec![0]);
        assert_eq!(nms_rotated(&[a, a], &[0.8, 0.9], 0.5), vec![1]);
        assert!(nms_rotated(&[], &[], 0.5).is_empty());
    }

    #[test]
    fn wrap_axial() {
        assert_eq!(wrap_axial_deg(90.0), 90.0);
        assert_eq!(wrap_axial_deg(-90.0), 90.0);
        assert_eq!(wrap_axial_deg(270.0), 90.0);
        assert!(close(wrap_axial_deg(-91.0), 89.0, 1e-12));
        assert!(close(wrap_axial_deg(179.0), -1.0, 1e-12));
        assert_eq!(wrap_axial_deg(-1e-300), 0.0);
    }
}
