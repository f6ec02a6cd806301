//! Scores noisy synthetic detections: AP, precision, recall, the recall
//! curve over overlap thresholds and the orientation-deviation histogram.
//!
//!     cargo run --example eval

use orient_det::evaluation::{orientation_deviation, pr_curve, recall_iou_curve, summarize};
use orient_det::pipeline::{ground_truths, image_id};
use orient_det::synth::{gen_detections, gen_scenes, SceneSpec};

fn main() -> orient_det::Result<()> {
    let spec = SceneSpec::default();
    let scenes = gen_scenes(&spec, 200)?;
    let mut rng = spec.rng();
    let mut dets = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        dets.extend(gen_detections(&image_id(i), &s.gts, &spec, &mut rng)?);
    }
    let gts = ground_truths(&scenes);

    let s = summarize(&dets, &gts, 0.5, 0.5);
    println!(
        "{} boxes, {} detections: AP {:.3}  precision {:.3}  recall {:.3}  F1 {:.3}",
        gts.len(),
        dets.len(),
        s.ap,
        s.precision,
        s.recall,
        s.f1
    );
    let pr = pr_curve(&dets, &gts, 0.5);
    println!("precision envelope has {} points", pr.x.len());

    let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    print!("{}", recall_iou_curve(&dets, &gts, &grid, 0.5).to_csv("iou", "recall"));

    let h = orientation_deviation(&dets, &gts, 0.5, 10.0);
    println!(
        "orientation deviation (angle noise {} deg):",
        spec.noise.angle_sigma_deg
    );
    for (c, m) in h.centers.iter().zip(&h.mass) {
        if *m > 0.0 {
            println!("  {:>5.0}: {:5.1}% {}", c, 100.0 * m, "#".repeat((m * 100.0) as usize));
        }
    }
    println!("mass within 10 deg: {:.1}%", 100.0 * h.mass_within(10.0));
    Ok(())
}
