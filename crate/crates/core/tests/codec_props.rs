use orient_det::anchors::{bar_stats, generate_anchors, AnchorConfig, BatchStats};
use orient_det::boxcodec::{decode, encode, match_boxes, AnchorLabel};
use orient_det::geometry::{to_quad, QuadBox, RotatedBox};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

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

fn sorted_points(q: &QuadBox) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = q.points().iter().map(|p| (p.x, p.y)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    v
}

proptest! {
    #[test]
    fn decode_inverts_encode(a in rbox(), t in rbox(), kw in 0.5..40.0f64, kh in 0.5..40.0f64) {
        let off = encode(&to_quad(&a), &to_quad(&t), kw, kh).unwrap();
        let back = decode(&to_quad(&a), &off, kw, kh).unwrap();
        for (p, q) in sorted_points(&back).iter().zip(sorted_points(&to_quad(&t))) {
            prop_assert!((p.0 - q.0).abs() < 1e-9 && (p.1 - q.1).abs() < 1e-9);
        }
    }

    #[test]
    fn encode_ignores_joint_translation(a in rbox(), t in rbox(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
        let e0 = encode(&to_quad(&a), &to_quad(&t), a.w, a.h).unwrap();
        let e1 = encode(&to_quad(&a.translate(dx, dy)), &to_quad(&t.translate(dx, dy)), a.w, a.h).unwrap();
        for (x, y) in e0.to_array().iter().zip(e1.to_array()) {
            prop_assert!((x - y).abs() < 1e-9, "{e0:?} vs {e1:?}");
        }
    }

    #[test]
    fn normalizer_scaling_divides_offsets(a in rbox(), t in rbox(), s in 0.1..10.0f64) {
        let e0 = encode(&to_quad(&a), &to_quad(&t), a.w, a.h).unwrap();
        let e1 = encode(&to_quad(&a), &to_quad(&t), a.w * s, a.h * s).unwrap();
        for (x, y) in e0.to_array().iter().zip(e1.to_array()) {
            prop_assert!((x / s - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn match_partition_ignores_gt_order(
        boxes in prop::collection::vec(rbox(), 1..30),
        gts in prop::collection::vec(rbox(), 1..6),
        seed in any::<u64>(),
    ) {
        let mut shuffled = gts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = match_boxes(&boxes, &gts, 0.5, 0.3);
        let b = match_boxes(&boxes, &shuffled, 0.5, 0.3);
        prop_assert_eq!(&a.labels, &b.labels);
        for i in 0..boxes.len() {
            if a.labels[i] == AnchorLabel::Target {
                // same box, or an exact tie
                let (ga, gb) = (gts[a.matched[i].unwrap()], shuffled[b.matched[i].unwrap()]);
                prop_assert!(ga == gb || a.max_iou[i] == b.max_iou[i]);
            }
        }
    }

    #[test]
    fn anchor_count_and_canonical_form(
        gw in 1usize..6, gh in 1usize..6,
        angles in prop::collection::vec(-180.0..180.0f64, 1..5),
        scales in prop::collection::vec(0.25..4.0f64, 1..4),
        w in 1.0..40.0f64, h in 1.0..40.0f64,
    ) {
        let cfg = AnchorConfig { angles: angles.clone(), scales: scales.clone(), feature_stride: 4.0, grid_w: gw, grid_h: gh };
        let set = generate_anchors(&cfg, &BatchStats { w_hat: w, h_hat: h, n_boxes: 1 }).unwrap();
        prop_assert_eq!(set.len(), gw * gh * angles.len() * scales.len());
        for a in &set.anchors {
            let b = a.rbox;
            prop_assert!(b.w <= b.h && b.w > 0.0);
            prop_assert!(b.theta > -90.0 && b.theta <= 90.0);
        }
    }

    #[test]
    fn bar_stats_ignore_shuffling(
        batch in prop::collection::vec(prop::collection::vec(rbox(), 0..5), 1..6),
        seed in any::<u64>(),
    ) {
        prop_assume!(batch.iter().any(|i| !i.is_empty()));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut other: Vec<Vec<RotatedBox>> = batch.clone();
        for img in &mut other {
            img.shuffle(&mut rng);
        }
        other.shuffle(&mut rng);
        let (a, b) = (bar_stats(&batch).unwrap(), bar_stats(&other).unwrap());
        prop_assert_eq!(a.n_boxes, b.n_boxes);
        prop_assert!((a.w_hat - b.w_hat).abs() < 1e-9 && (a.h_hat - b.h_hat).abs() < 1e-9);
    }
}
