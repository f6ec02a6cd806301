//! Batch-averaged anchors: sizes come from the mean ground-truth box of a
//! batch, replicated over four angles and three scales at every cell.
//!
//!     cargo run --example anchors

use orient_det::anchors::{bar_stats, generate_anchors, AnchorConfig};
use orient_det::synth::{gen_scenes, SceneSpec};

fn main() -> orient_det::Result<()> {
    let scenes = gen_scenes(&SceneSpec::default(), 8)?;
    let batch: Vec<_> = scenes.iter().map(|s| s.gts.clone()).collect();
    let stats = bar_stats(&batch)?;
    println!(
        "batch of {} boxes: w_hat {:.2}  h_hat {:.2}",
        stats.n_boxes, stats.w_hat, stats.h_hat
    );

    let cfg = AnchorConfig::default();
    let set = generate_anchors(&cfg, &stats)?;
    println!(
        "{} anchors on a {}x{} grid, {} per cell",
        set.len(),
        set.grid_w,
        set.grid_h,
        set.per_cell
    );
    for a in &set.anchors[..set.per_cell] {
        println!(
            "  angle {:>2} scale {}: {:5.1} x {:5.1} at {:6.1} deg  (kw {:.1}, kh {:.1})",
            a.angle_idx, a.scale_idx, a.rbox.w, a.rbox.h, a.rbox.theta, a.kw, a.kh
        );
    }
    Ok(())
}
