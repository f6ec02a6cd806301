//! Detection-vs-ground-truth matching and the usual detection metrics.
//!
//! Overlap is measured on the axis-aligned bounding rectangles of both boxes
//! ([`iou_axis`]). Matching is greedy in descending score order and
//! PASCAL-style: a detection is a true positive when its best-overlapping
//! ground truth (same image, same class) reaches the threshold and has not
//! been claimed yet.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geometry::{iou_axis, wrap_axial_deg, RotatedBox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    #[serde(flatten)]
    pub rbox: RotatedBox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, rbox: RotatedBox, score: f64) -> Self {
        Self {
            image_id: image_id.into(),
            rbox,
            score,
            class: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: String,
    #[serde(flatten)]
    pub rbox: RotatedBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
}

impl GroundTruth {
    pub fn new(image_id: impl Into<String>, rbox: RotatedBox) -> Self {
        Self {
            image_id: image_id.into(),
            rbox,
            class: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Per detection (input order): true positive?
    pub det_tp: Vec<bool>,
    /// Per detection: the ground truth it claimed.
    pub det_gt: Vec<Option<usize>>,
    /// Per ground truth (input order): claimed by some detection?
    pub gt_matched: Vec<bool>,
}

impl MatchResult {
    pub fn counts(&self) -> Counts {
        let tp = self.det_tp.iter().filter(|&&t| t).count();
        Counts {
            tp,
            fp: self.det_tp.len() - tp,
            fn_: self.gt_matched.iter().filter(|&&m| !m).count(),
        }
    }
}

/// Detection indices sorted by descending score, ties in input order.
pub fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order
}

pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut by_key: HashMap<(&str, Option<&str>), Vec<usize>> = HashMap::new();
    for (g, gt) in gts.iter().enumerate() {
        by_key
            .entry((gt.image_id.as_str(), gt.class.as_deref()))
            .or_default()
            .push(g);
    }
    let mut out = MatchResult {
        det_tp: vec![false; dets.len()],
        det_gt: vec![None; dets.len()],
        gt_matched: vec![false; gts.len()],
    };
    for d in score_order(dets) {
        let det = &dets[d];
        let Some(cands) = by_key.get(&(det.image_id.as_str(), det.class.as_deref())) else {
            continue;
        };
        let mut best: Option<(f64, usize)> = None;
        for &g in cands {
            let iou = iou_axis(&det.rbox, &gts[g].rbox);
            if best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, g));
            }
        }
        if let Some((iou, g)) = best {
            if iou >= iou_threshold && !out.gt_matched[g] {
                out.gt_matched[g] = true;
                out.det_tp[d] = true;
                out.det_gt[d] = Some(g);
            }
        }
    }
    out
}

/// `(TP / (TP + FP), TP / (TP + FN))`; precision is 1 with no detections and
/// recall is 0 with no ground truth.
pub fn precision_recall(c: Counts) -> (f64, f64) {
    let p = if c.tp + c.fp == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let r = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    (p, r)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Precision/recall after each detection in score order.
pub fn pr_points(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> Vec<(f64, f64)> {
    let m = match_detections(dets, gts, iou_threshold);
    let n_gt = gts.len();
    let (mut tp, mut fp) = (0usize, 0usize);
    score_order(dets)
        .into_iter()
        .map(|d| {
            if m.det_tp[d] {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (tp + fp) as f64)
        })
        .collect()
}

/// All-points interpolated average precision.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let pts = pr_points(dets, gts, iou_threshold);
    let mut rec: Vec<f64> = Vec::with_capacity(pts.len() + 2);
    let mut prec: Vec<f64> = Vec::with_capacity(pts.len() + 2);
    rec.push(0.0);
    prec.push(0.0);
    for (r, p) in pts {
        rec.push(r);
        prec.push(p);
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * prec[i]).sum()
}

/// Mean of per-class AP over the classes present in the ground truth.
pub fn mean_average_precision(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> f64 {
    let mut classes: BTreeMap<Option<&str>, (Vec<Detection>, Vec<GroundTruth>)> = BTreeMap::new();
    for g in gts {
        classes.entry(g.class.as_deref()).or_default().1.push(g.clone());
    }
    for d in dets {
        if let Some(e) = classes.get_mut(&d.class.as_deref()) {
            e.0.push(d.clone());
        }
    }
    if classes.is_empty() {
        return 0.0;
    }
    let n = classes.len() as f64;
    classes
        .values()
        .map(|(d, g)| average_precision(d, g, iou_threshold))
        .sum::<f64>()
        / n
}

/// Ordered `(x, y)` samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl EvalCurve {
    pub fn to_csv(&self, x_name: &str, y_name: &str) -> String {
        let mut s = format!("{x_name},{y_name}\n");
        for (x, y) in self.x.iter().zip(&self.y) {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }
}

/// Scalar report for one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub iou_threshold: f64,
    pub score_cutoff: f64,
    pub ap: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_f1: f64,
    pub counts: Counts,
}

fn above(dets: &[Detection], cutoff: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score >= cutoff).cloned().collect()
}

pub fn summarize(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64, score_cutoff: f64) -> EvalSummary {
    let kept = above(dets, score_cutoff);
    let counts = match_detections(&kept, gts, iou_threshold).counts();
    let (precision, recall) = precision_recall(counts);
    let best_f1 = pr_points(dets, gts, iou_threshold)
        .into_iter()
        .map(|(r, p)| f1(p, r))
        .fold(0.0, f64::max);
    EvalSummary {
        iou_threshold,
        score_cutoff,
        ap: average_precision(dets, gts, iou_threshold),
        precision,
        recall,
        f1: f1(precision, recall),
        best_f1,
        counts,
    }
}

/// Envelope precision at each distinct recall level.
pub fn pr_curve(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> EvalCurve {
    let pts = pr_points(dets, gts, iou_threshold);
    let mut curve = EvalCurve::default();
    let mut best = 0.0f64;
    for i in (0..pts.len()).rev() {
        best = best.max(pts[i].1);
        let r = pts[i].0;
        if curve.x.last().is_none_or(|&x| r < x) {
            curve.x.push(r);
            curve.y.push(best);
        }
    }
    curve.x.reverse();
    curve.y.reverse();
    curve
}

/// Recall at each overlap threshold in `iou_grid`, using detections scoring at
/// least `score_cutoff`.
pub fn recall_iou_curve(dets: &[Detection], gts: &[GroundTruth], iou_grid: &[f64], score_cutoff: f64) -> EvalCurve {
    assert!(
        iou_grid.windows(2).all(|w| w[0] < w[1]),
        "iou grid must be strictly increasing"
    );
    let kept = above(dets, score_cutoff);
    EvalCurve {
        x: iou_grid.to_vec(),
        y: iou_grid
            .iter()
            .map(|&t| precision_recall(match_detections(&kept, gts, t).counts()).1)
            .collect(),
    }
}

/// Normalized histogram of axial angle errors of true-positive pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleHistogram {
    pub bin_width: f64,
    /// Bin centers; bin `c` covers `(c - width/2, c + width/2]`, with the
    /// bin at 90 also covering the wrap-around side near -90.
    pub centers: Vec<f64>,
    pub mass: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl AngleHistogram {
    pub fn peak_center(&self) -> Option<f64> {
        let (i, _) = self
            .mass
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
        Some(self.centers[i])
    }

    /// Fraction of deltas with `|delta| <= limit`.
    pub fn mass_within(&self, limit: f64) -> f64 {
        if self.deltas.is_empty() {
            return 0.0;
        }
        self.deltas.iter().filter(|d| d.abs() <= limit).count() as f64 / self.deltas.len() as f64
    }
}

/// Axial angle difference wrapped onto `(-90, 90]`.
pub fn angle_delta(pred: f64, gt: f64) -> f64 {
    wrap_axial_deg(pred - gt)
}

pub fn orientation_deviation(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_threshold: f64,
    bin_width: f64,
) -> AngleHistogram {
    assert!(
        bin_width > 0.0 && (180.0 / bin_width).fract() == 0.0,
        "bin width must divide 180"
    );
    let m = match_detections(dets, gts, iou_threshold);
    let deltas: Vec<f64> = (0..dets.len())
        .filter_map(|d| m.det_gt[d].map(|g| angle_delta(dets[d].rbox.theta, gts[g].rbox.theta)))
        .collect();
    let n_bins = (180.0 / bin_width) as usize;
    // centers at -90 + width, ..., 90
    let centers: Vec<f64> = (1..=n_bins).map(|k| -90.0 + k as f64 * bin_width).collect();
    let mut mass = vec![0.0; n_bins];
    for &d in &deltas {
        let k = ((d + 90.0 - bin_width / 2.0) / bin_width).ceil() as isize - 1;
        let k = k.rem_euclid(n_bins as isize) as usize;
        mass[k] += 1.0;
    }
    if !deltas.is_empty() {
        let n = deltas.len() as f64;
        mass.iter_mut().for_each(|m| *m /= n);
    }
    AngleHistogram {
        bin_width,
        centers,
        mass,
        deltas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rb(cx: f64, cy: f64) -> RotatedBox {
        RotatedBox::new(cx, cy, 4.0, 8.0, 90.0).unwrap()
    }

    fn det(cx: f64, score: f64) -> Detection {
        Detection::new("a", rb(cx, 0.0), score)
    }

    fn gt(cx: f64) -> GroundTruth {
        GroundTruth::new("a", rb(cx, 0.0))
    }

    #[test]
    fn identical_detections_are_all_tp() {
        let gts: Vec<GroundTruth> = (0..4).map(|i| gt(i as f64 * 20.0)).collect();
        let dets: Vec<Detection> = (0..4).map(|i| det(i as f64 * 20.0, 0.9)).collect();
        let c = match_detections(&dets, &gts, 0.5).counts();
        assert_eq!(c, Counts { tp: 4, fp: 0, fn_: 0 });
        assert_eq!(average_precision(&dets, &gts, 0.5), 1.0);
    }

    #[test]
    fn no_detections() {
        let gts = vec![gt(0.0), gt(20.0)];
        let c = match_detections(&[], &gts, 0.5).counts();
        assert_eq!(c, Counts { tp: 0, fp: 0, fn_: 2 });
        assert_eq!(precision_recall(c), (1.0, 0.0));
    }

    #[test]
    fn duplicate_is_false_positive() {
        let gts = vec![gt(0.0)];
        let dets = vec![det(0.0, 0.9), det(0.0, 0.8)];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!(m.det_tp, vec![true, false]);
    }

    #[test]
    fn images_do_not_mix() {
        let gts = vec![GroundTruth::new("b", rb(0.0, 0.0))];
        let dets = vec![det(0.0, 0.9)];
        assert_eq!(match_detections(&dets, &gts, 0.5).counts().tp, 0);
    }

    #[test]
    fn table_row_arithmetic() {
        let (p, r) = precision_recall(Counts {
            tp: 435,
            fp: 2,
            fn_: 46,
        });
        assert!((p - 435.0 / 437.0).abs() < 1e-15);
        assert!((r * 1000.0).round() == 904.0);
        assert!((f1(0.993, 0.904) - 0.946).abs() < 5e-4);
        assert_eq!(f1(1.0, 1.0), 1.0);
        assert_eq!(f1(1.0, 0.0), 0.0);
        assert_eq!(f1(0.0, 0.0), 0.0);
    }

    #[test]
    fn all_false_gives_zero_ap() {
        let gts = vec![gt(0.0)];
        let dets = vec![det(50.0, 0.9), det(80.0, 0.3)];
        assert_eq!(average_precision(&dets, &gts, 0.5), 0.0);
    }

    #[test]
    fn three_detection_toy() {
        // TP(.9), FP(.8), TP(.7) over 2 gts: envelope 1 on [0, .5], 2/3 on (.5, 1]
        let gts = vec![gt(0.0), gt(20.0)];
        let dets = vec![det(0.0, 0.9), det(100.0, 0.8), det(20.0, 0.7)];
        let ap = average_precision(&dets, &gts, 0.5);
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn recall_iou_is_monotone() {
        let gts = vec![gt(0.0), gt(20.0)];
        let dets = vec![det(0.5, 0.9), det(22.0, 0.8)];
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let c = recall_iou_curve(&dets, &gts, &grid, 0.0);
        assert!(c.y.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(c.y[0], 1.0);
        assert_eq!(*c.y.last().unwrap(), 0.0);
    }

    #[test]
    fn angle_wrap_and_histogram() {
        assert!((angle_delta(89.0, -89.0) - -2.0).abs() < 1e-12);
        assert_eq!(angle_delta(10.0, 10.0), 0.0);
        let g = GroundTruth::new("a", RotatedBox::new(0., 0., 4., 8., 30.).unwrap());
        let d = Detection::new("a", g.rbox, 1.0);
        let h = orientation_deviation(&[d], &[g], 0.5, 5.0);
        assert_eq!(h.centers.len(), 36);
        assert_eq!(h.peak_center(), Some(0.0));
        assert_eq!(h.mass.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn histogram_wraps_at_ninety() {
        let g = GroundTruth::new("a", RotatedBox::new(0., 0., 6., 8., 0.).unwrap());
        // 89 and -89 degree errors both land in the bin centered at 90
        let d1 = Detection::new("a", RotatedBox::new(0., 0., 6., 8., 89.).unwrap(), 1.0);
        let h = orientation_deviation(&[d1], std::slice::from_ref(&g), 0.0, 5.0);
        assert_eq!(h.peak_center(), Some(90.0));
        let d2 = Detection::new("a", RotatedBox::new(0., 0., 6., 8., -89.).unwrap(), 1.0);
        let h = orientation_deviation(&[d2], &[g], 0.0, 5.0);
        assert_eq!(h.peak_center(), Some(90.0));
    }

    #[test]
    fn map_averages_classes() {
        let mut g1 = gt(0.0);
        g1.class = Some("car".into());
        let mut g2 = gt(20.0);
        g2.class = Some("van".into());
        let mut d1 = det(0.0, 0.9);
        d1.class = Some("car".into());
        let mut d2 = det(20.0, 0.9);
        d2.class = Some("car".into());
        assert_eq!(mean_average_precision(&[d1, d2], &[g1, g2], 0.5), 0.5);
    }

    #[test]
    fn jsonl_shape() {
        let d = det(1.0, 0.5);
        let v: serde_json::Value = serde_json::to_value(&d).unwrap();
        for k in ["image_id", "cx", "cy", "w", "h", "theta_deg", "score"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert!(v.get("class").is_none());
    }
}
