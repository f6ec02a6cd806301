use orient_det::boxcodec::RegressTarget;
use orient_det::evaluation::{
    average_precision, match_detections, orientation_deviation, recall_iou_curve, Detection, GroundTruth,
};
use orient_det::geometry::RotatedBox;
use orient_det::losses::{cls_loss, cls_loss_logits, joint_loss, reg_loss, smooth_l1, smooth_l1_grad, HyperParams};
use proptest::prelude::*;

fn target() -> impl Strategy<Value = RegressTarget> {
    prop::array::uniform8(-3.0..3.0f64).prop_map(RegressTarget::from_array)
}

fn rbox() -> impl Strategy<Value = RotatedBox> {
    (0.0..60.0f64, 0.0..60.0f64, 2.0..10.0f64, 4.0..20.0f64, -89.999..90.0f64)
        .prop_map(|(cx, cy, w, h, t)| RotatedBox::new(cx, cy, w, h, t).unwrap())
}

/// Ground truth in two images plus detections that are noisy copies or
/// random boxes.
fn scene() -> impl Strategy<Value = (Vec<Detection>, Vec<GroundTruth>)> {
    let gts = prop::collection::vec((rbox(), 0usize..2), 1..8);
    gts.prop_flat_map(|gts| {
        let n = gts.len();
        let dets = prop::collection::vec(
            (
                0..n,
                -3.0..3.0f64,
                -3.0..3.0f64,
                -20.0..20.0f64,
                0.0..1.0f64,
                rbox(),
                prop::bool::weighted(0.7),
            ),
            0..12,
        );
        (Just(gts), dets)
    })
    .prop_map(|(gts, dets)| {
        let g: Vec<GroundTruth> = gts
            .iter()
            .map(|(b, img)| GroundTruth::new(format!("i{img}"), *b))
            .collect();
        let d = dets
            .into_iter()
            .map(|(k, dx, dy, dt, s, r, copy)| {
                let (b, img) = gts[k];
                let rb = if copy {
                    RotatedBox::new(b.cx + dx, b.cy + dy, b.w, b.h, b.theta + dt).unwrap()
                } else {
                    r
                };
                Detection::new(format!("i{img}"), rb, s)
            })
            .collect();
        (d, g)
    })
}

proptest! {
    #[test]
    fn losses_are_nonnegative_and_zero_only_when_exact(t in target(), u in target(), p in 0.0..1.0f64) {
        prop_assert!(reg_loss(&t, &u) >= 0.0);
        prop_assert!(reg_loss(&t, &t) == 0.0);
        if t != u {
            prop_assert!(reg_loss(&t, &u) > 0.0);
        }
        let l = cls_loss(&[1.0 - p, p], &[0.0, 1.0]).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(cls_loss(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn smooth_l1_gradient_matches_differences(x in -4.0..4.0f64) {
        let h = 1e-6;
        prop_assume!(((x.abs() - 1.0).abs()) > 2.0 * h);
        let fd = (smooth_l1(x + h) - smooth_l1(x - h)) / (2.0 * h);
        prop_assert!((fd - smooth_l1_grad(x)).abs() < 1e-6);
    }

    #[test]
    fn logit_gradient_matches_differences(a in -8.0..8.0f64, b in -8.0..8.0f64, class in 0usize..2) {
        let h = 1e-6;
        let (_, g) = cls_loss_logits(&[a, b], class);
        let f = |x: f64, y: f64| cls_loss_logits(&[x, y], class).0;
        let fa = (f(a + h, b) - f(a - h, b)) / (2.0 * h);
        let fb = (f(a, b + h) - f(a, b - h)) / (2.0 * h);
        prop_assert!((fa - g[0]).abs() < 1e-6 && (fb - g[1]).abs() < 1e-6);
    }

    #[test]
    fn joint_loss_is_additive(
        l1 in prop::collection::vec(0.0..10.0f64, 2..10),
        l2 in prop::collection::vec(0.0..10.0f64, 2..10),
        cut in 0usize..10,
        eta in 0.1..5.0f64,
    ) {
        let hp = HyperParams { eta, ..Default::default() };
        let (c1, c2) = (cut.min(l1.len()), cut.min(l2.len()));
        let whole = joint_loss(&l1, &l2, &[], &hp);
        let parts = joint_loss(&l1[..c1], &l2[..c2], &[], &hp) + joint_loss(&l1[c1..], &l2[c2..], &[], &hp);
        prop_assert!((whole - parts).abs() < 1e-9);
    }

    #[test]
    fn matching_counts_balance((dets, gts) in scene(), iou in 0.1..0.9f64) {
        let c = match_detections(&dets, &gts, iou).counts();
        prop_assert_eq!(c.tp + c.fn_, gts.len());
        prop_assert_eq!(c.tp + c.fp, dets.len());
    }

    #[test]
    fn ap_ignores_monotone_rescoring((dets, gts) in scene()) {
        let squashed: Vec<Detection> = dets
            .iter()
            .map(|d| Detection { score: (3.0 * d.score).exp() - 7.0, ..d.clone() })
            .collect();
        prop_assert_eq!(average_precision(&dets, &gts, 0.5), average_precision(&squashed, &gts, 0.5));
    }

    #[test]
    fn recall_falls_with_the_overlap_threshold((dets, gts) in scene()) {
        let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let c = recall_iou_curve(&dets, &gts, &grid, 0.0);
        prop_assert!(c.y.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn histogram_mass_sums_to_one((dets, gts) in scene()) {
        let h = orientation_deviation(&dets, &gts, 0.5, 10.0);
        if !h.deltas.is_empty() {
            prop_assert!((h.mass.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicating_a_match_cannot_raise_ap((dets, gts) in scene(), pick in any::<prop::sample::Index>(), s in 0.0..1.0f64) {
        let m = match_detections(&dets, &gts, 0.5);
        let tps: Vec<usize> = (0..dets.len()).filter(|&i| m.det_tp[i]).collect();
        prop_assume!(!tps.is_empty());
        // the duplicate ranks below the detection that already claimed the gt
        let orig = &dets[tps[pick.index(tps.len())]];
        let mut more = dets.clone();
        more.push(Detection { score: s * orig.score, ..orig.clone() });
        prop_assert!(average_precision(&more, &gts, 0.5) <= average_precision(&dets, &gts, 0.5) + 1e-12);
    }
}
