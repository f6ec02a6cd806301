//! Eight-dimensional vertex-offset regression targets and anchor labeling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::geometry::{iou_axis, QuadBox, RotatedBox};

/// Vertex offsets normalized by the anchor's scaled batch-mean size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegressTarget {
    pub tx: [f64; 4],
    pub ty: [f64; 4],
}

impl RegressTarget {
    /// `[tx0..tx3, ty0..ty3]`.
    pub fn to_array(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        out[..4].copy_from_slice(&self.tx);
        out[4..].copy_from_slice(&self.ty);
        out
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        RegressTarget {
            tx: [v[0], v[1], v[2], v[3]],
            ty: [v[4], v[5], v[6], v[7]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn check_normalizers(kw: f64, kh: f64) -> Result<()> {
    if kw > 0.0 && kh > 0.0 && kw.is_finite() && kh.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidNormalizer { kw, kh })
    }
}

/// Cyclic order of collated vertices (top-left, top-right, bottom-right,
/// bottom-left in the derotated frame).
const CYCLE: [usize; 4] = [0, 1, 3, 2];

/// Relabels the collated target so its vertices sit closest to the anchor's,
/// choosing among the four cyclic relabelings (the collated order wins ties).
/// Two nearly equal boxes on opposite sides of the +-90 degree wrap collate to
/// opposite corners; this restores the physical correspondence.
pub fn correspond(anchor: &QuadBox, target: &QuadBox) -> QuadBox {
    let dist = |q: &QuadBox| -> f64 {
        (0..4)
            .map(|i| (q.xs[i] - anchor.xs[i]).powi(2) + (q.ys[i] - anchor.ys[i]).powi(2))
            .sum()
    };
    let mut best = *target;
    let mut best_d = dist(target);
    for shift in 1..4 {
        let mut q = *target;
        for pos in 0..4 {
            let from = CYCLE[(pos + shift) % 4];
            q.xs[CYCLE[pos]] = target.xs[from];
            q.ys[CYCLE[pos]] = target.ys[from];
        }
        let d = dist(&q);
        if d < best_d - 1e-12 * best_d.max(1.0) {
            best = q;
            best_d = d;
        }
    }
    best
}

/// `t_x = (r_x - a_x) / kw`, `t_y = (r_y - a_y) / kh`, vertex by vertex after
/// collating both quads and matching the target's vertices to the anchor's
/// (see [`correspond`]).
pub fn encode(anchor: &QuadBox, target: &QuadBox, kw: f64, kh: f64) -> Result<RegressTarget> {
    check_normalizers(kw, kh)?;
    let a = anchor.collate();
    let r = correspond(&a, &target.collate());
    Ok(RegressTarget {
        tx: std::array::from_fn(|i| (r.xs[i] - a.xs[i]) / kw),
        ty: std::array::from_fn(|i| (r.ys[i] - a.ys[i]) / kh),
    })
}

/// Applies offsets to an anchor quad and re-collates the result.
pub fn decode(anchor: &QuadBox, t: &RegressTarget, kw: f64, kh: f64) -> Result<QuadBox> {
    check_normalizers(kw, kh)?;
    let a = anchor.collate();
    let q = QuadBox {
        xs: std::array::from_fn(|i| a.xs[i] + t.tx[i] * kw),
        ys: std::array::from_fn(|i| a.ys[i] + t.ty[i] * kh),
    };
    Ok(q.collate())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorLabel {
    Background,
    Target,
    /// Overlap between the negative and positive thresholds; skipped by the
    /// classification loss.
    Ignored,
}

/// Per-anchor training labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchLabels {
    pub labels: Vec<AnchorLabel>,
    /// Matched ground truth for target anchors.
    pub matched: Vec<Option<usize>>,
    pub max_iou: Vec<f64>,
}

impl MatchLabels {
    /// Regression mask: 1 for target anchors.
    pub fn phi(&self, i: usize) -> f64 {
        if self.labels[i] == AnchorLabel::Target {
            1.0
        } else {
            0.0
        }
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(|&i| self.labels[i] == AnchorLabel::Target)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.labels.len()).filter(|&i| self.labels[i] == AnchorLabel::Background)
    }
}

pub const DEFAULT_POS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_NEG_THRESHOLD: f64 = 0.3;

/// Labels boxes against ground truth by axis-aligned overlap: target when the
/// best overlap reaches `pos_threshold`, background below `neg_threshold`,
/// ignored in between. Ties go to the lowest ground-truth index.
pub fn match_boxes<'a, I>(boxes: I, gts: &[RotatedBox], pos_threshold: f64, neg_threshold: f64) -> MatchLabels
where
    I: IntoIterator<Item = &'a RotatedBox>,
{
    let mut out = MatchLabels {
        labels: Vec::new(),
        matched: Vec::new(),
        max_iou: Vec::new(),
    };
    for b in boxes {
        let mut best = (0.0, None);
        for (g, gt) in gts.iter().enumerate() {
            let iou = iou_axis(b, gt);
            if iou > best.0 {
                best = (iou, Some(g));
            }
        }
        let (iou, idx) = best;
        let label = if idx.is_some() && iou >= pos_threshold {
            AnchorLabel::Target
        } else if iou < neg_threshold {
            AnchorLabel::Background
        } else {
            AnchorLabel::Ignored
        };
        out.labels.push(label);
        out.matched.push(if label == AnchorLabel::Target { idx } else { None });
        out.max_iou.push(iou);
    }
    out
}

/// Labels every anchor of `anchors` (see [`match_boxes`]) with the default
/// negative threshold.
pub fn match_anchors(anchors: &AnchorSet, gts: &[RotatedBox], pos_threshold: f64) -> MatchLabels {
    match_boxes(
        anchors.boxes(),
        gts,
        pos_threshold,
        DEFAULT_NEG_THRESHOLD.min(pos_threshold),
    )
}

/// Draws up to `n_cls` labeled indices, at most a quarter of them targets,
/// filling the rest with background.
pub fn sample_minibatch<R: Rng + ?Sized>(labels: &MatchLabels, n_cls: usize, rng: &mut R) -> Vec<usize> {
    let mut pos: Vec<usize> = labels.positives().collect();
    let mut neg: Vec<usize> = labels.negatives().collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_pos = pos.len().min(n_cls / 4);
    let n_neg = neg.len().min(n_cls - n_pos);
    let mut out: Vec<usize> = pos[..n_pos].iter().chain(&neg[..n_neg]).copied().collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::to_quad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_encodes_to_zero() {
        let q = to_quad(&RotatedBox::new(3.0, 4.0, 2.0, 5.0, 20.0).unwrap());
        let t = encode(&q, &q, 2.0, 5.0).unwrap();
        assert_eq!(t.to_array(), [0.0; 8]);
    }

    #[test]
    fn uniform_shift() {
        let q = to_quad(&RotatedBox::new(3.0, 4.0, 2.0, 5.0, 20.0).unwrap());
        let t = encode(&q, &q.translate(2.0, 0.0), 2.0, 5.0).unwrap();
        for i in 0..4 {
            assert!((t.tx[i] - 1.0).abs() < 1e-12);
            assert!(t.ty[i].abs() < 1e-12);
        }
        let d = decode(&q, &t, 2.0, 5.0).unwrap();
        for i in 0..4 {
            assert!((d.xs[i] - q.xs[i] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_target_decodes_to_anchor() {
        let q = to_quad(&RotatedBox::new(-1.0, 4.0, 3.0, 3.5, -70.0).unwrap());
        let d = decode(&q, &RegressTarget::default(), 1.0, 1.0).unwrap();
        for i in 0..4 {
            assert!((d.xs[i] - q.xs[i]).abs() < 1e-12 && (d.ys[i] - q.ys[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_neighbours_encode_small() {
        // same physical box family across the +-90 wrap
        let a = to_quad(&RotatedBox::new(0.0, 0.0, 8.0, 16.0, 89.0).unwrap());
        let g = to_quad(&RotatedBox::new(0.0, 0.0, 8.0, 16.0, -89.0).unwrap());
        let t = encode(&a, &g, 8.0, 16.0).unwrap();
        assert!(t.to_array().iter().all(|v| v.abs() < 0.05), "{t:?}");
        let d = decode(&a, &t, 8.0, 16.0).unwrap();
        for i in 0..4 {
            assert!((d.xs[i] - g.xs[i]).abs() < 1e-9 && (d.ys[i] - g.ys[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_normalizers() {
        let q = to_quad(&RotatedBox::new(0.0, 0.0, 1.0, 2.0, 0.0).unwrap());
        assert!(matches!(encode(&q, &q, 0.0, 1.0), Err(Error::InvalidNormalizer { .. })));
        assert!(decode(&q, &RegressTarget::default(), 1.0, -1.0).is_err());
    }

    #[test]
    fn match_identity_and_disjoint() {
        let g = RotatedBox::new(10.0, 10.0, 4.0, 8.0, 30.0).unwrap();
        let far = g.translate(100.0, 0.0);
        let l = match_boxes([&g, &far], &[g], 0.5, 0.3);
        assert_eq!(l.labels, vec![AnchorLabel::Target, AnchorLabel::Background]);
        assert_eq!(l.matched, vec![Some(0), None]);
        assert_eq!(l.phi(0), 1.0);
        assert_eq!(l.phi(1), 0.0);
    }

    #[test]
    fn match_ignore_band() {
        let g = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 90.0).unwrap();
        // overlap 1/3
        let b = g.translate(1.0, 0.0);
        let l = match_boxes([&b], &[g], 0.5, 0.3);
        assert_eq!(l.labels[0], AnchorLabel::Ignored);
        assert_eq!(l.matched[0], None);
    }

    #[test]
    fn match_ties_take_lowest_index() {
        let g = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 90.0).unwrap();
        let l = match_boxes([&g], &[g, g], 0.5, 0.3);
        assert_eq!(l.matched[0], Some(0));
    }

    #[test]
    fn sampling_ratio() {
        let mut labels = MatchLabels {
            labels: vec![],
            matched: vec![],
            max_iou: vec![],
        };
        for i in 0..500 {
            let target = i % 5 == 0;
            labels.labels.push(if target {
                AnchorLabel::Target
            } else {
                AnchorLabel::Background
            });
            labels.matched.push(target.then_some(0));
            labels.max_iou.push(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_minibatch(&labels, 64, &mut rng);
        assert_eq!(s.len(), 64);
        assert_eq!(
            s.iter().filter(|&&i| labels.labels[i] == AnchorLabel::Target).count(),
            16
        );
    }
}
