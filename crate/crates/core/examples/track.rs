//! Tracks a synthetic moving-object sequence with dropped detections and
//! compares raw detections against detection-by-tracking.
//!
//!     cargo run --release --example track -- [frames] [seed]

use orient_det::pipeline::tracking_report;
use orient_det::synth::{gen_sequence, Motion, SceneSpec};
use orient_det::tracking::TrackerConfig;

fn main() -> orient_det::Result<()> {
    let mut args = std::env::args().skip(1);
    let frames = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let spec = SceneSpec {
        seed,
        ..SceneSpec::default()
    };
    let motion = Motion::ConstantVelocity {
        speed: (0.5, 2.0),
        spin: (0.0, 1.0),
    };
    let seq = gen_sequence(&spec, frames, &motion)?;
    let (outputs, rep) = tracking_report(&seq, &TrackerConfig::default(), 0.5, 0.5)?;
    let ids: std::collections::BTreeSet<u64> = outputs
        .iter()
        .flat_map(|o| o.tracks.iter().chain(&o.recovered).map(|t| t.track_id))
        .collect();
    println!(
        "{frames} frames, {} tracks, {} recovered boxes",
        ids.len(),
        rep.recovered
    );
    for (name, s) in [("raw", &rep.raw), ("by tracking", &rep.by_tracking)] {
        println!(
            "{name:>12}: recall {:.3}  precision {:.3}  (tp {} fp {} fn {})",
            s.recall, s.precision, s.counts.tp, s.counts.fp, s.counts.fn_
        );
    }
    Ok(())
}
