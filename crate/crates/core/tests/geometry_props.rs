use orient_det::geometry::{
    aabb, convex_hull, from_quad, intersection_area, iou_axis, iou_rotated, min_area_rect, polygon_area, to_quad,
    Point, QuadBox, RotatedBox,
};
use proptest::prelude::*;

fn rbox() -> impl Strategy<Value = RotatedBox> {
    (
        -50.0..50.0f64,
        -50.0..50.0f64,
        1.0..30.0f64,
        1.0..30.0f64,
        -89.999..90.0f64,
    )
        .prop_map(|(cx, cy, w, h, t)| RotatedBox::new(cx, cy, w, h, t).unwrap())
}

fn points() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 3..10)
        .prop_map(|v| v.into_iter().map(|(x, y)| Point::new(x, y)).collect())
}

fn close(a: &RotatedBox, b: &RotatedBox, tol: f64) -> bool {
    let dt = (a.theta - b.theta).abs();
    (a.cx - b.cx).abs() < tol
        && (a.cy - b.cy).abs() < tol
        && (a.w - b.w).abs() < tol
        && (a.h - b.h).abs() < tol
        && (dt < tol || (dt - 180.0).abs() < tol)
}

/// Smallest bounding-rectangle area over a 0.01 degree sweep.
fn sweep_min_area(pts: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..9000 {
        let a = (k as f64 * 0.01).to_radians();
        let (s, c) = a.sin_cos();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            let u = c * p.x + s * p.y;
            let v = -s * p.x + c * p.y;
            x0 = x0.min(u);
            x1 = x1.max(u);
            y0 = y0.min(v);
            y1 = y1.max(v);
        }
        best = best.min((x1 - x0) * (y1 - y0));
    }
    best
}

proptest! {
    #[test]
    fn quad_round_trip(b in rbox()) {
        prop_assume!((b.w - b.h).abs() > 1e-6);
        let back = from_quad(&to_quad(&b)).unwrap();
        prop_assert!(close(&b, &back, 1e-9), "{b:?} -> {back:?}");
    }

    #[test]
    fn collation_ignores_vertex_order(b in rbox(), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let q = to_quad(&b);
        let p = q.points();
        let shuffled = QuadBox::from_points([p[perm[0]], p[perm[1]], p[perm[2]], p[perm[3]]]).collate();
        for (a, c) in shuffled.points().iter().zip(q.collate().points()) {
            prop_assert!((a.x - c.x).abs() < 1e-9 && (a.y - c.y).abs() < 1e-9);
        }
    }

    #[test]
    fn min_area_rect_of_rectangle_keeps_area(b in rbox()) {
        let r = min_area_rect(&b.corners()).unwrap();
        prop_assert!((r.area() - b.area()).abs() < 1e-9 * b.area().max(1.0));
    }

    #[test]
    fn min_area_rect_dominates_sweep(pts in points()) {
        prop_assume!(polygon_area(&convex_hull(&pts)) > 1e-3);
        let r = min_area_rect(&pts).unwrap();
        prop_assert!(r.area() <= sweep_min_area(&pts) * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in rbox(), b in rbox()) {
        let ab = iou_rotated(&a, &b);
        prop_assert!((ab - iou_rotated(&b, &a)).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!(intersection_area(&a, &b) <= a.area().min(b.area()) * (1.0 + 1e-9));
        // the enclosing axis-aligned boxes overlap at least as much
        prop_assert!(intersection_area(&a, &b) <= aabb_inter(&a, &b) + 1e-9);
    }

    #[test]
    fn iou_is_one_only_for_the_same_box(a in rbox(), d in 0.01..5.0f64) {
        prop_assert!((iou_rotated(&a, &a) - 1.0).abs() < 1e-9);
        let moved = a.translate(d, 0.0);
        prop_assert!(iou_rotated(&a, &moved) < 1.0 - 1e-6);
    }

    #[test]
    fn axis_iou_matches_rotated_for_upright_boxes(
        a in rbox(), b in rbox(), ta in prop::bool::ANY, tb in prop::bool::ANY
    ) {
        let up = |r: &RotatedBox, flag: bool| RotatedBox::new(r.cx, r.cy, r.w, r.h, if flag { 90.0 } else { 0.0 }).unwrap();
        let (a, b) = (up(&a, ta), up(&b, tb));
        prop_assert!(iou_axis(&a, &b) >= 0.0);
        prop_assert!((iou_axis(&a, &b) - iou_rotated(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn iou_invariant_under_shared_rotation(a in rbox(), b in rbox(), deg in -180.0..180.0f64, px in -20.0..20.0f64, py in -20.0..20.0f64) {
        let pivot = Point::new(px, py);
        let before = iou_rotated(&a, &b);
        let after = iou_rotated(&a.rotate_about(pivot, deg), &b.rotate_about(pivot, deg));
        prop_assert!((before - after).abs() < 1e-9, "{before} vs {after}");
    }
}

fn aabb_inter(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let (p, q) = (aabb(a), aabb(b));
    let w = (p.xmax.min(q.xmax) - p.xmin.max(q.xmin)).max(0.0);
    let h = (p.ymax.min(q.ymax) - p.ymin.max(q.ymin)).max(0.0);
    w * h
}
