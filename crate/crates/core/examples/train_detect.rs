//! Trains the toy two-stage head on synthetic scenes, then detects on held-out
//! scenes and prints recall, precision and AP.
//!
//!     cargo run --release --example train_detect -- [steps] [lr]

use orient_det::evaluation::summarize;
use orient_det::model::{train, DetectConfig, TrainConfig};
use orient_det::pipeline::{detect_scenes, ground_truths};
use orient_det::synth::{gen_scenes, SceneSpec};

fn main() -> orient_det::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let mut cfg = TrainConfig {
        steps,
        log_every: 250,
        ..TrainConfig::default()
    };
    if let Some(lr) = std::env::args().nth(2).and_then(|s| s.parse().ok()) {
        cfg.hp.lr = lr;
    }
    let t0 = std::time::Instant::now();
    let (model, _) = train(&cfg, |r| {
        println!(
            "iter {:5}  L1 {:.4}  L2 {:.3}  joint {:.3}",
            r.iteration, r.l1, r.l2, r.joint
        )
    })?;
    println!("trained in {:.1?}", t0.elapsed());

    let held_out = gen_scenes(
        &SceneSpec {
            seed: 1_000_003,
            ..cfg.spec.clone()
        },
        100,
    )?;
    let dets = detect_scenes(&model, &held_out, &DetectConfig::default())?;
    let s = summarize(
        &dets,
        &ground_truths(&held_out),
        0.5,
        DetectConfig::default().score_threshold,
    );
    println!(
        "held-out: recall {:.3}  precision {:.3}  AP {:.3}  ({} detections)",
        s.recall,
        s.precision,
        s.ap,
        dets.len()
    );
    Ok(())
}
