//! Rotated-box basics: canonical form, corners, overlap measures, the
//! minimum-area rectangle and suppression.
//!
//!     cargo run --example geometry

use orient_det::boxcodec::{decode, encode};
use orient_det::geometry::{iou_axis, iou_rotated, min_area_rect, nms_rotated, to_quad, Point, RotatedBox};

fn main() -> orient_det::Result<()> {
    // given wider than tall, so the sides swap and the angle shifts by 90
    let a = RotatedBox::new(50.0, 50.0, 40.0, 16.0, 30.0)?;
    println!("canonical: w {:.1} h {:.1} theta {:.1}", a.w, a.h, a.theta);
    for (i, c) in a.corners().iter().enumerate() {
        println!("  corner {i}: ({:.2}, {:.2})", c.x, c.y);
    }

    let b = a.rotate_about(a.center(), 20.0).translate(3.0, -2.0);
    println!(
        "rotated IoU {:.4}  axis-aligned IoU {:.4}",
        iou_rotated(&a, &b),
        iou_axis(&a, &b)
    );

    let pts = [
        Point { x: 0.0, y: 0.0 },
        Point { x: 10.0, y: 2.0 },
        Point { x: 9.0, y: 7.0 },
        Point { x: -1.0, y: 5.0 },
        Point { x: 4.0, y: 3.0 },
    ];
    let r = min_area_rect(&pts)?;
    println!(
        "min-area rect: ({:.2}, {:.2}) {:.2} x {:.2} at {:.2} deg",
        r.cx, r.cy, r.w, r.h, r.theta
    );

    let t = encode(&to_quad(&a), &to_quad(&b), a.w, a.h)?;
    let back = min_area_rect(&decode(&to_quad(&a), &t, a.w, a.h)?.points())?;
    println!("offsets tx {:.3?} ty {:.3?}", t.tx, t.ty);
    println!(
        "decoded: ({:.3}, {:.3}) {:.3} x {:.3} at {:.3}",
        back.cx, back.cy, back.w, back.h, back.theta
    );

    let boxes = [a, b, a.translate(60.0, 0.0)];
    let keep = nms_rotated(&boxes, &[0.9, 0.8, 0.7], 0.3);
    println!("kept after suppression: {keep:?}");
    Ok(())
}
