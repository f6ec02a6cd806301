//! Rotatable position-sensitive pooling: each of the 3x3 bins of an oriented
//! region averages its own channel group, the bins vote, and a softmax turns
//! the votes into class scores.
//!
//!     cargo run --example pooling

use orient_det::geometry::RotatedBox;
use orient_det::pooling::{channel_index, pool_angle, rps_pool, softmax_scores, vote, ScoreMapStack, K};

fn main() -> orient_det::Result<()> {
    let (w, h) = (24, 24);
    // background group reads 0, object group reads 1 inside a tilted bar
    let bar = RotatedBox::new(12.0, 12.0, 5.0, 14.0, 30.0)?;
    let inside = |u: usize, v: usize| {
        let (dx, dy) = (u as f64 - bar.cx, v as f64 - bar.cy);
        let t = bar.theta.to_radians();
        let along = dx * t.cos() + dy * t.sin();
        let across = -dx * t.sin() + dy * t.cos();
        along.abs() <= bar.h / 2.0 && across.abs() <= bar.w / 2.0
    };
    let maps = ScoreMapStack::from_fn(w, h, 2 * K * K, |c, u, v| {
        let object = c >= K * K;
        if object == inside(u, v) {
            1.0
        } else {
            0.0
        }
    });

    for roi in [bar, RotatedBox::new(12.0, 12.0, 5.0, 14.0, -60.0)?] {
        let bins = rps_pool(&maps, &roi)?;
        let r = vote(&bins);
        let p = softmax_scores(&r);
        println!(
            "region at {:5.1} deg (pool angle {:6.1}): votes {:.3?} -> object {:.3}",
            roi.theta,
            pool_angle(roi.theta)?,
            r,
            p[1]
        );
        for j in 1..=K {
            let row: Vec<String> = (1..=K).map(|i| format!("{:.2}", bins.get(i, j, 1))).collect();
            println!("    object bins row {j}: {}", row.join(" "));
        }
    }
    println!("channel of bin (2, 3), group 1: {}", channel_index(K, 2, 3, 1));
    Ok(())
}
