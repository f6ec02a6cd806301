//! Toy two-stage detection head over a synthetic feature grid.
//!
//! Both stages are 1x1 linear maps (weights plus bias per output channel) over
//! the input grid. The proposal stage emits, per anchor template, two class
//! logits and eight offsets. The detection stage emits the 18-channel class
//! stack and the 72-channel offset stack that feed position-sensitive pooling.
//!
//! Training losses can be evaluated two ways: [`batch_loss`] runs the literal
//! chain (full maps, pooling, voting, softmax, losses) and is what the finite
//! difference check perturbs; [`batch_loss_grad`] uses the linearity of
//! pooling to work with per-bin mean inputs and returns the analytic gradient.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anchors::{bar_stats, generate_anchors, AnchorConfig, AnchorSet, BatchStats};
use crate::boxcodec::{decode, encode, match_boxes, AnchorLabel, RegressTarget, DEFAULT_NEG_THRESHOLD};
use crate::error::{Error, Result};
use crate::evaluation::Detection;
use crate::geometry::{iou_rotated, min_area_rect, nms_rotated, to_quad, RotatedBox};
use crate::losses::{
    cls_loss_logits, joint_loss, rdn_loss, reg_loss_grad, rrpn_loss, sgd_step, HeadLabel, HeadOutput, HyperParams,
};
use crate::pooling::{
    average_vote, pool_with, softmax_scores, to_feature_frame, vote, RoiSampling, ScoreMapStack, K, REG_DIMS,
};
use crate::stem::{stem, STEM_CHANNELS};
use crate::synth::{gen_scene_with, SceneSpec};

pub const RDN_CLS_CHANNELS: usize = K * K * 2;
pub const RDN_REG_CHANNELS: usize = K * K * REG_DIMS;
const BINS: usize = K * K;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub in_channels: usize,
    pub anchor_config: AnchorConfig,
    /// Anchor sizing statistics of the training set.
    pub stats: BatchStats,
    /// Row per output channel: `in_channels` weights then one bias. Proposal
    /// rows come first, then detection rows.
    pub params: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(anchor_config: AnchorConfig, stats: BatchStats) -> Self {
        let in_channels = STEM_CHANNELS;
        let a = anchor_config.anchors_per_cell();
        let rows = a * (2 + REG_DIMS) + RDN_CLS_CHANNELS + RDN_REG_CHANNELS;
        ToyModel {
            in_channels,
            anchor_config,
            stats,
            params: vec![0.0; rows * (in_channels + 1)],
        }
    }

    /// Zero-mean Gaussian initialization.
    pub fn init<R: Rng + ?Sized>(anchor_config: AnchorConfig, stats: BatchStats, std: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(anchor_config, stats);
        if std > 0.0 {
            let n = Normal::new(0.0, std).expect("positive std");
            m.params.iter_mut().for_each(|w| *w = n.sample(rng));
        }
        m
    }

    pub fn per_cell(&self) -> usize {
        self.anchor_config.anchors_per_cell()
    }

    fn stride(&self) -> usize {
        self.in_channels + 1
    }

    /// Parameters of the proposal stage; the detection stage follows them.
    pub fn rpn_params(&self) -> usize {
        self.rpn_rows() * self.stride()
    }

    pub fn rpn_rows(&self) -> usize {
        self.per_cell() * (2 + REG_DIMS)
    }

    fn rpn_cls_row(&self, template: usize, class: usize) -> usize {
        2 * template + class
    }

    fn rpn_reg_row(&self, template: usize, d: usize) -> usize {
        2 * self.per_cell() + REG_DIMS * template + d
    }

    fn rdn_row(&self, channel: usize) -> usize {
        self.rpn_rows() + channel
    }

    fn row(&self, r: usize) -> &[f64] {
        let s = self.stride();
        &self.params[r * s..(r + 1) * s]
    }

    fn apply_row(&self, r: usize, x: &[f64]) -> f64 {
        let w = self.row(r);
        let (bias, weights) = (w[self.in_channels], &w[..self.in_channels]);
        bias + weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    fn linear_maps(&self, input: &ScoreMapStack, first_row: usize, rows: usize) -> ScoreMapStack {
        let n = input.plane_len();
        let mut out = ScoreMapStack::zeros(input.width, input.height, rows);
        for o in 0..rows {
            let w = self.row(first_row + o);
            let plane = &mut out.values[o * n..(o + 1) * n];
            plane.iter_mut().for_each(|v| *v = w[self.in_channels]);
            for c in 0..self.in_channels {
                let wc = w[c];
                for (v, x) in plane.iter_mut().zip(input.channel(c)) {
                    *v += wc * x;
                }
            }
        }
        out
    }

    fn check_input(&self, input: &ScoreMapStack) -> Result<()> {
        if input.channels != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        Ok(())
    }

    /// Proposal maps: `2 * per_cell` class channels, then `8 * per_cell`
    /// offset channels.
    pub fn rpn_maps(&self, input: &ScoreMapStack) -> Result<ScoreMapStack> {
        self.check_input(input)?;
        Ok(self.linear_maps(input, 0, self.rpn_rows()))
    }

    /// Detection maps: the 18-channel class stack and the 72-channel offset
    /// stack.
    pub fn rdn_maps(&self, input: &ScoreMapStack) -> Result<(ScoreMapStack, ScoreMapStack)> {
        self.check_input(input)?;
        Ok((
            self.linear_maps(input, self.rdn_row(0), RDN_CLS_CHANNELS),
            self.linear_maps(input, self.rdn_row(RDN_CLS_CHANNELS), RDN_REG_CHANNELS),
        ))
    }

    pub fn anchors(&self) -> Result<AnchorSet> {
        generate_anchors(&self.anchor_config, &self.stats)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: ToyModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let expect = Self::zeros(m.anchor_config.clone(), m.stats).params.len();
        if m.params.len() != expect || m.in_channels != STEM_CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "model file has {} parameters, expected {expect}",
                m.params.len()
            )));
        }
        Ok(m)
    }
}

fn rpn_head(maps: &ScoreMapStack, per_cell: usize, anchor: usize) -> ([f64; 2], [f64; REG_DIMS]) {
    let (cell, k) = (anchor / per_cell, anchor % per_cell);
    let logits = [maps.channel(2 * k)[cell], maps.channel(2 * k + 1)[cell]];
    let t = std::array::from_fn(|d| maps.channel(2 * per_cell + REG_DIMS * k + d)[cell]);
    (logits, t)
}

/// A candidate region with its fixed pooling layout and supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiExample {
    /// Image-frame region.
    pub rroi: RotatedBox,
    pub sampling: RoiSampling,
    /// Per-bin mean of the input channels, `bin * in_channels + c`.
    pub bin_inputs: Vec<f64>,
    pub label: HeadLabel,
}

impl RoiExample {
    pub fn new(input: &ScoreMapStack, stride: f64, rroi: RotatedBox, label: HeadLabel) -> Result<Self> {
        let fr = to_feature_frame(&rroi, stride);
        let sampling = RoiSampling::new(input.width, input.height, &fr, K)?;
        let c = input.channels;
        let mut bin_inputs = vec![0.0; BINS * c];
        for (b, bin) in sampling.bins.iter().enumerate() {
            bin.for_each_weight(|p, w| {
                for ch in 0..c {
                    bin_inputs[b * c + ch] += w * input.channel(ch)[p];
                }
            });
        }
        Ok(RoiExample {
            rroi,
            sampling,
            bin_inputs,
            label,
        })
    }
}

/// One image's sampled training examples.
#[derive(Clone, Debug)]
pub struct SceneBatch<'a> {
    pub input: &'a ScoreMapStack,
    /// `(anchor index, label)`.
    pub anchors: Vec<(usize, HeadLabel)>,
    pub rois: Vec<&'a RoiExample>,
}

/// Loss values of a mini-batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub l1: f64,
    pub l2: f64,
    pub joint: f64,
}

/// Literal chain: full maps, per-anchor reads, pooling, voting, softmax.
pub fn batch_loss(model: &ToyModel, batches: &[SceneBatch], hp: &HyperParams) -> Result<LossParts> {
    let per_cell = model.per_cell();
    let mut l1s = Vec::with_capacity(batches.len());
    let mut l2s = Vec::with_capacity(batches.len());
    for b in batches {
        let rpn = model.rpn_maps(b.input)?;
        let mut preds = Vec::with_capacity(b.anchors.len());
        let mut labels = Vec::with_capacity(b.anchors.len());
        for (a, l) in &b.anchors {
            let (logits, t) = rpn_head(&rpn, per_cell, *a);
            let p = softmax_scores(&logits);
            preds.push(HeadOutput {
                probs: [p[0], p[1]],
                t: RegressTarget::from_array(t),
            });
            labels.push(l.clone());
        }
        l1s.push(rrpn_loss(&preds, &labels, hp)?);

        let (cls, reg) = model.rdn_maps(b.input)?;
        let mut preds = Vec::with_capacity(b.rois.len());
        let mut labels = Vec::with_capacity(b.rois.len());
        for r in &b.rois {
            let p = softmax_scores(&vote(&pool_with(&cls, &r.sampling)));
            preds.push(HeadOutput {
                probs: [p[0], p[1]],
                t: average_vote(&pool_with(&reg, &r.sampling)),
            });
            labels.push(r.label.clone());
        }
        l2s.push(rdn_loss(&preds, &labels, hp)?);
    }
    Ok(LossParts {
        l1: l1s.iter().sum(),
        l2: l2s.iter().sum(),
        joint: joint_loss(&l1s, &l2s, &model.params, hp),
    })
}

/// Loss and gradient of the data terms (the decay term's `2 phi w` is left to
/// [`sgd_step`]).
pub fn batch_loss_grad(model: &ToyModel, batches: &[SceneBatch], hp: &HyperParams) -> Result<(LossParts, Vec<f64>)> {
    let per_cell = model.per_cell();
    let c = model.in_channels;
    let s = model.stride();
    let mut grad = vec![0.0; model.params.len()];
    let mut add = |row: usize, g: f64, x: &[f64]| {
        let dst = &mut grad[row * s..(row + 1) * s];
        for ch in 0..c {
            dst[ch] += g * x[ch];
        }
        dst[c] += g;
    };
    let (mut l1, mut l2) = (0.0, 0.0);
    let mut x = vec![0.0; c];
    for b in batches {
        model.check_input(b.input)?;
        let (mut cls_sum, mut reg_sum) = (0.0, 0.0);
        for (a, label) in &b.anchors {
            let (cell, k) = (a / per_cell, a % per_cell);
            for (ch, xv) in x.iter_mut().enumerate() {
                *xv = b.input.channel(ch)[cell];
            }
            let logits = [
                model.apply_row(model.rpn_cls_row(k, 0), &x),
                model.apply_row(model.rpn_cls_row(k, 1), &x),
            ];
            let (loss, dl) = cls_loss_logits(&logits, label.class);
            cls_sum += loss;
            for (cls, g) in dl.iter().enumerate() {
                add(model.rpn_cls_row(k, cls), g / hp.n_cls, &x);
            }
            if label.phi != 0.0 {
                let t =
                    RegressTarget::from_array(std::array::from_fn(|d| model.apply_row(model.rpn_reg_row(k, d), &x)));
                reg_sum += label.phi * crate::losses::reg_loss(&t, &label.t_hat);
                let dt = reg_loss_grad(&t, &label.t_hat);
                for (d, g) in dt.iter().enumerate() {
                    add(model.rpn_reg_row(k, d), hp.lambda1 * label.phi * g / hp.n_reg, &x);
                }
            }
        }
        l1 += cls_sum / hp.n_cls + hp.lambda1 * reg_sum / hp.n_reg;

        let (mut cls_sum, mut reg_sum) = (0.0, 0.0);
        for r in &b.rois {
            let bin_x = |bin: usize| &r.bin_inputs[bin * c..(bin + 1) * c];
            let votes: Vec<f64> = (0..2)
                .map(|g| {
                    (0..BINS)
                        .map(|bin| model.apply_row(model.rdn_row(g * BINS + bin), bin_x(bin)))
                        .sum()
                })
                .collect();
            let (loss, dl) = cls_loss_logits(&votes, r.label.class);
            cls_sum += loss;
            for (g, dg) in dl.iter().enumerate() {
                for bin in 0..BINS {
                    add(model.rdn_row(g * BINS + bin), hp.eta * dg, bin_x(bin));
                }
            }
            if r.label.phi != 0.0 {
                let t = RegressTarget::from_array(std::array::from_fn(|d| {
                    (0..BINS)
                        .map(|bin| model.apply_row(model.rdn_row(RDN_CLS_CHANNELS + d * BINS + bin), bin_x(bin)))
                        .sum::<f64>()
                        / BINS as f64
                }));
                reg_sum += r.label.phi * crate::losses::reg_loss(&t, &r.label.t_hat);
                let dt = reg_loss_grad(&t, &r.label.t_hat);
                for (d, g) in dt.iter().enumerate() {
                    let scale = hp.eta * hp.lambda2 * r.label.phi * g / BINS as f64;
                    for bin in 0..BINS {
                        add(model.rdn_row(RDN_CLS_CHANNELS + d * BINS + bin), scale, bin_x(bin));
                    }
                }
            }
        }
        l2 += cls_sum + hp.lambda2 * reg_sum;
    }
    let decay: f64 = model.params.iter().map(|w| w * w).sum();
    Ok((
        LossParts {
            l1,
            l2,
            joint: l1 + hp.eta * l2 + hp.phi_decay * decay,
        },
        grad,
    ))
}

/// Analytic gradient of the joint loss, decay included.
pub fn joint_grad(model: &ToyModel, batches: &[SceneBatch], hp: &HyperParams) -> Result<Vec<f64>> {
    let (_, mut g) = batch_loss_grad(model, batches, hp)?;
    for (gi, w) in g.iter_mut().zip(&model.params) {
        *gi += 2.0 * hp.phi_decay * w;
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Denominator floor for the relative error of near-zero gradients.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares the analytic joint gradient against central differences of
/// [`batch_loss`] on `samples` randomly chosen parameters (all of them when
/// `samples` covers the vector).
pub fn grad_check<R: Rng + ?Sized>(
    model: &ToyModel,
    batches: &[SceneBatch],
    hp: &HyperParams,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let n = model.params.len();
    let idx: Vec<usize> = if samples >= n {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, samples).into_vec();
        v.sort_unstable();
        v
    };
    grad_check_at(model, batches, hp, &idx)
}

/// [`grad_check`] on the given parameter indices.
pub fn grad_check_at(
    model: &ToyModel,
    batches: &[SceneBatch],
    hp: &HyperParams,
    idx: &[usize],
) -> Result<GradCheckReport> {
    let analytic = joint_grad(model, batches, hp)?;
    let mut m = model.clone();
    let mut report = GradCheckReport {
        checked: idx.len(),
        max_rel_error: 0.0,
        max_abs_error: 0.0,
    };
    for &i in idx {
        let w = model.params[i];
        m.params[i] = w + GRAD_CHECK_STEP;
        let up = batch_loss(&m, batches, hp)?.joint;
        m.params[i] = w - GRAD_CHECK_STEP;
        let down = batch_loss(&m, batches, hp)?.joint;
        m.params[i] = w;
        let fd = (up - down) / (2.0 * GRAD_CHECK_STEP);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic[i], fd));
        report.max_abs_error = report.max_abs_error.max((analytic[i] - fd).abs());
    }
    Ok(report)
}

/// How detection-stage training regions are drawn around each scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiDraw {
    /// Perturbed copies of each ground truth.
    pub jitter_per_gt: usize,
    pub jitter_shift: f64,
    pub jitter_scale: f64,
    pub jitter_angle_deg: f64,
    /// Anchors overlapping a ground truth, per ground truth.
    pub near_anchors_per_gt: usize,
    /// Uniformly drawn anchors per scene.
    pub random_anchors: usize,
    /// Rotated overlap with a ground truth that makes a region a target.
    pub positive_overlap: f64,
    /// Regions between this and `positive_overlap` are left out.
    pub negative_overlap: f64,
}

impl Default for RoiDraw {
    fn default() -> Self {
        Self {
            jitter_per_gt: 8,
            jitter_shift: 0.2,
            jitter_scale: 0.2,
            jitter_angle_deg: 20.0,
            near_anchors_per_gt: 8,
            random_anchors: 24,
            positive_overlap: 0.5,
            negative_overlap: 0.5,
        }
    }
}

/// Precomputed supervision of one training image, sampled afresh each step.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub gts: Vec<RotatedBox>,
    /// Raw feature grid.
    pub features: ScoreMapStack,
    /// Stem output the heads read.
    pub input: ScoreMapStack,
    /// `(anchor, matched gt)`.
    pub pos_anchors: Vec<(usize, usize)>,
    pub neg_anchors: Vec<usize>,
    pub pos_rois: Vec<RoiExample>,
    pub neg_rois: Vec<RoiExample>,
}

fn anchor_label(anchors: &AnchorSet, a: usize, gt: Option<&RotatedBox>) -> Result<HeadLabel> {
    Ok(match gt {
        Some(g) => {
            let an = &anchors.anchors[a];
            HeadLabel {
                class: 1,
                phi: 1.0,
                t_hat: encode(&to_quad(&an.rbox), &to_quad(g), an.kw, an.kh)?,
            }
        }
        None => HeadLabel {
            class: 0,
            phi: 0.0,
            t_hat: RegressTarget::default(),
        },
    })
}

impl SceneData {
    pub fn new<R: Rng + ?Sized>(
        gts: Vec<RotatedBox>,
        features: ScoreMapStack,
        anchors: &AnchorSet,
        stride: f64,
        draw: &RoiDraw,
        rng: &mut R,
    ) -> Result<Self> {
        let input = stem(&features)?;
        let labels = match_boxes(anchors.boxes(), &gts, 0.5, DEFAULT_NEG_THRESHOLD);
        let mut pos_anchors = Vec::new();
        let mut neg_anchors = Vec::new();
        let mut near: Vec<Vec<usize>> = vec![Vec::new(); gts.len()];
        for (i, l) in labels.labels.iter().enumerate() {
            match l {
                AnchorLabel::Target => {
                    let g = labels.matched[i].expect("target has a match");
                    pos_anchors.push((i, g));
                    near[g].push(i);
                }
                AnchorLabel::Background => neg_anchors.push(i),
                AnchorLabel::Ignored => {}
            }
            if labels.max_iou[i] >= DEFAULT_NEG_THRESHOLD && labels.labels[i] != AnchorLabel::Target {
                if let Some(g) = best_gt(&anchors.anchors[i].rbox, &gts) {
                    near[g].push(i);
                }
            }
        }

        let mut candidates: Vec<RotatedBox> = Vec::new();
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        for (g, gt) in gts.iter().enumerate() {
            candidates.push(*gt);
            for _ in 0..draw.jitter_per_gt {
                let dx = draw.jitter_shift * gt.w * n.sample(rng);
                let dy = draw.jitter_shift * gt.h * n.sample(rng);
                let sw = (draw.jitter_scale * n.sample(rng)).exp();
                let sh = (draw.jitter_scale * n.sample(rng)).exp();
                let dt = draw.jitter_angle_deg * n.sample(rng);
                candidates.push(RotatedBox::new(
                    gt.cx + dx,
                    gt.cy + dy,
                    gt.w * sw,
                    gt.h * sh,
                    gt.theta + dt,
                )?);
            }
            let pool = &near[g];
            if !pool.is_empty() {
                for i in sample(rng, pool.len(), draw.near_anchors_per_gt.min(pool.len())) {
                    candidates.push(anchors.anchors[pool[i]].rbox);
                }
            }
        }
        for i in sample(rng, anchors.len(), draw.random_anchors.min(anchors.len())) {
            candidates.push(anchors.anchors[i].rbox);
        }

        let mut pos_rois = Vec::new();
        let mut neg_rois = Vec::new();
        for rroi in candidates {
            let (best, overlap) = roi_match(&rroi, &gts);
            if overlap >= draw.negative_overlap && overlap < draw.positive_overlap {
                continue;
            }
            let label = match best.filter(|_| overlap >= draw.positive_overlap) {
                Some(g) => HeadLabel {
                    class: 1,
                    phi: 1.0,
                    t_hat: encode(&to_quad(&rroi), &to_quad(&gts[g]), rroi.w, rroi.h)?,
                },
                None => HeadLabel {
                    class: 0,
                    phi: 0.0,
                    t_hat: RegressTarget::default(),
                },
            };
            let ex = match RoiExample::new(&input, stride, rroi, label) {
                Ok(ex) => ex,
                Err(Error::OutOfBounds) => continue,
                Err(e) => return Err(e),
            };
            // no gradient path through the bilinear fallback
            if ex.sampling.has_fallback() {
                continue;
            }
            if ex.label.class == 1 {
                pos_rois.push(ex);
            } else {
                neg_rois.push(ex);
            }
        }
        Ok(SceneData {
            gts,
            features,
            input,
            pos_anchors,
            neg_anchors,
            pos_rois,
            neg_rois,
        })
    }

    /// Draws at most `n_anchor` anchors and `n_roi` regions, each with at most
    /// a quarter positives.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        anchors: &AnchorSet,
        n_anchor: usize,
        n_roi: usize,
        rng: &mut R,
    ) -> Result<SceneBatch<'_>> {
        let (pi, ni) = split_sample(self.pos_anchors.len(), self.neg_anchors.len(), n_anchor, rng);
        let mut picked = Vec::with_capacity(pi.len() + ni.len());
        for i in pi {
            let (a, g) = self.pos_anchors[i];
            picked.push((a, anchor_label(anchors, a, Some(&self.gts[g]))?));
        }
        for i in ni {
            picked.push((self.neg_anchors[i], anchor_label(anchors, self.neg_anchors[i], None)?));
        }
        let (pr, nr) = split_sample(self.pos_rois.len(), self.neg_rois.len(), n_roi, rng);
        let rois = pr
            .into_iter()
            .map(|i| &self.pos_rois[i])
            .chain(nr.into_iter().map(|i| &self.neg_rois[i]))
            .collect();
        Ok(SceneBatch {
            input: &self.input,
            anchors: picked,
            rois,
        })
    }
}

/// Best ground truth by rotated overlap and that overlap. Ties go to the
/// lowest index.
fn roi_match(b: &RotatedBox, gts: &[RotatedBox]) -> (Option<usize>, f64) {
    let mut best = (None, 0.0);
    for (g, gt) in gts.iter().enumerate() {
        let v = iou_rotated(b, gt);
        if v > best.1 {
            best = (Some(g), v);
        }
    }
    best
}

fn best_gt(b: &RotatedBox, gts: &[RotatedBox]) -> Option<usize> {
    let mut best = (0.0, None);
    for (g, gt) in gts.iter().enumerate() {
        let v = crate::geometry::iou_axis(b, gt);
        if v > best.0 {
            best = (v, Some(g));
        }
    }
    best.1
}

fn split_sample<R: Rng + ?Sized>(n_pos: usize, n_neg: usize, n: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let take_pos = n_pos.min(n / 4);
    let take_neg = n_neg.min(n - take_pos);
    let mut p = sample(rng, n_pos, take_pos).into_vec();
    let mut q = sample(rng, n_neg, take_neg).into_vec();
    p.sort_unstable();
    q.sort_unstable();
    (p, q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hp: HyperParams,
    pub steps: usize,
    pub spec: SceneSpec,
    pub anchor_config: AnchorConfig,
    /// Size of the fixed training-scene pool.
    pub train_scenes: usize,
    pub rois_per_scene: usize,
    pub roi_draw: RoiDraw,
    pub init_std: f64,
    pub seed: u64,
    /// Log every this many iterations (and at the last one).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hp: HyperParams::default(),
            steps: 5000,
            spec: SceneSpec::default(),
            anchor_config: AnchorConfig::default(),
            train_scenes: 256,
            rois_per_scene: 32,
            roi_draw: RoiDraw::default(),
            init_std: 0.01,
            seed: 0,
            log_every: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub iteration: usize,
    pub l1: f64,
    pub l2: f64,
    pub joint: f64,
    pub lr: f64,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("iteration,L1,L2,joint,lr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.iteration, r.l1, r.l2, r.joint, r.lr));
    }
    s
}

/// Builds the training pool: scenes, anchor statistics and per-scene data.
pub fn prepare_training(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(AnchorSet, BatchStats, Vec<SceneData>)> {
    let mut anchor_config = cfg.anchor_config.clone();
    anchor_config.feature_stride = cfg.spec.stride as f64;
    anchor_config.grid_w = cfg.spec.grid_w();
    anchor_config.grid_h = cfg.spec.grid_h();
    let scenes = (0..cfg.train_scenes)
        .map(|_| gen_scene_with(&cfg.spec, rng))
        .collect::<Result<Vec<_>>>()?;
    let gts: Vec<&[RotatedBox]> = scenes.iter().map(|s| s.gts.as_slice()).collect();
    let stats = bar_stats(&gts)?;
    let anchors = generate_anchors(&anchor_config, &stats)?;
    let data = scenes
        .into_iter()
        .map(|s| {
            SceneData::new(
                s.gts,
                s.features,
                &anchors,
                anchor_config.feature_stride,
                &cfg.roi_draw,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((anchors, stats, data))
}

/// Mini-batch SGD on the joint loss. `on_log` sees each logged row as it is
/// produced. Aborts with a numeric error when the loss stops being finite.
pub fn train(cfg: &TrainConfig, mut on_log: impl FnMut(&LogRow)) -> Result<(ToyModel, Vec<LogRow>)> {
    cfg.hp.validate()?;
    cfg.spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (anchors, stats, data) = prepare_training(cfg, &mut rng)?;
    let mut anchor_config = cfg.anchor_config.clone();
    anchor_config.feature_stride = cfg.spec.stride as f64;
    anchor_config.grid_w = cfg.spec.grid_w();
    anchor_config.grid_h = cfg.spec.grid_h();
    let mut model = ToyModel::init(anchor_config, stats, cfg.init_std, &mut rng);
    let mut velocity = vec![0.0; model.params.len()];
    let mut log = Vec::new();
    let theta = cfg.hp.batch_size.min(data.len());
    for it in 0..cfg.steps {
        let lr = cfg.hp.lr_at(it);
        let picks = sample(&mut rng, data.len(), theta);
        let batches = picks
            .iter()
            .map(|i| data[i].sample(&anchors, cfg.hp.n_cls as usize, cfg.rois_per_scene, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (parts, grad) = batch_loss_grad(&model, &batches, &cfg.hp)?;
        if !parts.joint.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "loss diverged at iteration {it}: L1={} L2={} joint={}",
                parts.l1, parts.l2, parts.joint
            )));
        }
        if it % cfg.log_every.max(1) == 0 || it + 1 == cfg.steps {
            let row = LogRow {
                iteration: it,
                l1: parts.l1,
                l2: parts.l2,
                joint: parts.joint,
                lr,
            };
            on_log(&row);
            log.push(row);
        }
        sgd_step(&mut model.params, &mut velocity, &grad, lr, &cfg.hp)?;
    }
    if !model.is_finite() {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    Ok((model, log))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    /// Best-scoring anchors decoded before proposal suppression.
    pub rpn_top_n: usize,
    pub rpn_nms: f64,
    /// Proposals handed to the detection stage.
    pub rdn_top_n: usize,
    pub score_threshold: f64,
    pub final_nms: f64,
    /// Detection-stage regressions per region; 1 is a single pass.
    pub refine_passes: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            rpn_top_n: 2000,
            rpn_nms: 0.7,
            rdn_top_n: 300,
            score_threshold: 0.05,
            final_nms: 0.3,
            refine_passes: 2,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rpn_top_n == 0 || self.rdn_top_n == 0 {
            return Err(Error::Config("proposal caps must be >= 1".into()));
        }
        if self.refine_passes == 0 {
            return Err(Error::Config("refine_passes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub rbox: RotatedBox,
    pub score: f64,
}

/// Scores every anchor, decodes the best `rpn_top_n`, fits rectangles and
/// suppresses overlaps. Returned in descending score order, uncapped.
pub fn propose(
    model: &ToyModel,
    anchors: &AnchorSet,
    features: &ScoreMapStack,
    cfg: &DetectConfig,
) -> Result<Vec<Proposal>> {
    let input = &stem(features)?;
    let rpn = model.rpn_maps(input)?;
    if anchors.per_cell != model.per_cell() || anchors.grid_w != input.width || anchors.grid_h != input.height {
        return Err(Error::ShapeMismatch("anchor grid does not match the input grid".into()));
    }
    let per_cell = model.per_cell();
    let scores: Vec<f64> = (0..anchors.len())
        .map(|a| {
            let (logits, _) = rpn_head(&rpn, per_cell, a);
            softmax_scores(&logits)[1]
        })
        .collect();
    let mut order: Vec<usize> = (0..anchors.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(cfg.rpn_top_n);
    let mut boxes = Vec::with_capacity(order.len());
    let mut kept_scores = Vec::with_capacity(order.len());
    for a in order {
        let an = &anchors.anchors[a];
        let (_, t) = rpn_head(&rpn, per_cell, a);
        let q = decode(&to_quad(&an.rbox), &RegressTarget::from_array(t), an.kw, an.kh)?;
        if let Ok(b) = min_area_rect(&q.points()) {
            if b.w > 1e-3 && b.is_finite() {
                boxes.push(b);
                kept_scores.push(scores[a]);
            }
        }
    }
    let keep = nms_rotated(&boxes, &kept_scores, cfg.rpn_nms);
    Ok(keep
        .into_iter()
        .map(|i| Proposal {
            rbox: boxes[i],
            score: kept_scores[i],
        })
        .collect())
}

/// Scores and refines regions with the detection stage. Regions entirely off
/// the grid are skipped.
pub fn refine(
    model: &ToyModel,
    features: &ScoreMapStack,
    rois: &[RotatedBox],
    image_id: &str,
) -> Result<Vec<Detection>> {
    refine_passes(model, features, rois, image_id, 1)
}

/// Like [`refine`], but regresses each box `passes` times, feeding the
/// refined box back in as the region. The score is the one of the first pass;
/// a pass that leaves the grid keeps the previous box.
pub fn refine_passes(
    model: &ToyModel,
    features: &ScoreMapStack,
    rois: &[RotatedBox],
    image_id: &str,
    passes: usize,
) -> Result<Vec<Detection>> {
    let input = &stem(features)?;
    let (cls, reg) = model.rdn_maps(input)?;
    let stride = model.anchor_config.feature_stride;
    let head = |roi: &RotatedBox| -> Result<Option<(RotatedBox, f64)>> {
        let fr = to_feature_frame(roi, stride);
        let sampling = match RoiSampling::new(input.width, input.height, &fr, K) {
            Ok(s) => s,
            Err(Error::OutOfBounds) => return Ok(None),
            Err(e) => return Err(e),
        };
        let s = softmax_scores(&vote(&pool_with(&cls, &sampling)))[1];
        let t = average_vote(&pool_with(&reg, &sampling));
        let q = decode(&to_quad(roi), &t, roi.w, roi.h)?;
        Ok(match min_area_rect(&q.points()) {
            Ok(b) if b.w > 1e-3 && b.is_finite() => Some((b, s)),
            _ => None,
        })
    };
    let mut out = Vec::with_capacity(rois.len());
    for roi in rois {
        let Some((mut b, score)) = head(roi)? else { continue };
        for _ in 1..passes {
            match head(&b)? {
                Some((nb, _)) => b = nb,
                None => break,
            }
        }
        out.push(Detection::new(image_id, b, score));
    }
    Ok(out)
}

/// Full two-stage detection on one feature grid.
pub fn detect(
    model: &ToyModel,
    anchors: &AnchorSet,
    input: &ScoreMapStack,
    image_id: &str,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    let proposals = propose(model, anchors, input, cfg)?;
    detect_from_proposals(model, input, &proposals, image_id, cfg)
}

/// Detection stage over the first `rdn_top_n` proposals, then score
/// threshold and suppression.
pub fn detect_from_proposals(
    model: &ToyModel,
    input: &ScoreMapStack,
    proposals: &[Proposal],
    image_id: &str,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let rois: Vec<RotatedBox> = proposals.iter().take(cfg.rdn_top_n).map(|p| p.rbox).collect();
    let dets: Vec<Detection> = refine_passes(model, input, &rois, image_id, cfg.refine_passes)?
        .into_iter()
        .filter(|d| d.score >= cfg.score_threshold)
        .collect();
    let boxes: Vec<RotatedBox> = dets.iter().map(|d| d.rbox).collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    Ok(nms_rotated(&boxes, &scores, cfg.final_nms)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_setup(seed: u64) -> (ToyModel, AnchorSet, Vec<SceneData>) {
        let cfg = TrainConfig {
            train_scenes: 2,
            spec: SceneSpec {
                image_w: 64,
                image_h: 64,
                max_objects: 2,
                ..Default::default()
            },
            seed,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (anchors, stats, data) = prepare_training(&cfg, &mut rng).unwrap();
        let model = ToyModel::init(anchors_config(&anchors, &cfg), stats, 0.3, &mut rng);
        (model, anchors, data)
    }

    fn anchors_config(anchors: &AnchorSet, cfg: &TrainConfig) -> AnchorConfig {
        AnchorConfig {
            grid_w: anchors.grid_w,
            grid_h: anchors.grid_h,
            feature_stride: cfg.spec.stride as f64,
            ..cfg.anchor_config.clone()
        }
    }

    #[test]
    fn parameter_layout() {
        let m = ToyModel::zeros(
            AnchorConfig::default(),
            BatchStats {
                w_hat: 4.0,
                h_hat: 8.0,
                n_boxes: 1,
            },
        );
        assert_eq!(m.rpn_rows(), 120);
        assert_eq!(m.params.len(), (120 + 18 + 72) * (STEM_CHANNELS + 1));
    }

    #[test]
    fn factorized_loss_equals_literal_chain() {
        let (model, anchors, data) = small_setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batches: Vec<SceneBatch> = data
            .iter()
            .map(|d| d.sample(&anchors, 64, 16, &mut rng).unwrap())
            .collect();
        let hp = HyperParams::default();
        let a = batch_loss(&model, &batches, &hp).unwrap();
        let (b, _) = batch_loss_grad(&model, &batches, &hp).unwrap();
        assert!((a.l1 - b.l1).abs() < 1e-9 * a.l1.abs().max(1.0));
        assert!((a.l2 - b.l2).abs() < 1e-9 * a.l2.abs().max(1.0));
        assert!((a.joint - b.joint).abs() < 1e-9 * a.joint.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_differences() {
        let (model, anchors, data) = small_setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batches: Vec<SceneBatch> = data
            .iter()
            .map(|d| d.sample(&anchors, 64, 16, &mut rng).unwrap())
            .collect();
        let r = grad_check(&model, &batches, &HyperParams::default(), 100, &mut rng).unwrap();
        assert_eq!(r.checked, 100);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn empty_batch_gradient_is_pure_decay() {
        let (model, _, data) = small_setup(5);
        let b = SceneBatch {
            input: &data[0].input,
            anchors: vec![],
            rois: vec![],
        };
        let hp = HyperParams::default();
        let g = joint_grad(&model, &[b], &hp).unwrap();
        for (gi, w) in g.iter().zip(&model.params) {
            assert_eq!(*gi, 2.0 * hp.phi_decay * w);
        }
    }

    #[test]
    fn loss_is_additive_over_batch_split() {
        let (model, anchors, data) = small_setup(6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batches: Vec<SceneBatch> = data
            .iter()
            .map(|d| d.sample(&anchors, 64, 16, &mut rng).unwrap())
            .collect();
        let hp = HyperParams {
            phi_decay: 0.0,
            ..Default::default()
        };
        let whole = batch_loss(&model, &batches, &hp).unwrap().joint;
        let parts = batch_loss(&model, &batches[..1], &hp).unwrap().joint
            + batch_loss(&model, &batches[1..], &hp).unwrap().joint;
        assert!((whole - parts).abs() < 1e-9);
    }

    #[test]
    fn small_step_decreases_loss() {
        let (mut model, anchors, data) = small_setup(7);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batches: Vec<SceneBatch> = data
            .iter()
            .map(|d| d.sample(&anchors, 64, 16, &mut rng).unwrap())
            .collect();
        let hp = HyperParams {
            momentum: 0.0,
            ..Default::default()
        };
        let before = batch_loss(&model, &batches, &hp).unwrap().joint;
        let (_, g) = batch_loss_grad(&model, &batches, &hp).unwrap();
        let mut v = vec![0.0; g.len()];
        sgd_step(&mut model.params, &mut v, &g, 1e-4, &hp).unwrap();
        let after = batch_loss(&model, &batches, &hp).unwrap().joint;
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn training_samples_respect_caps() {
        let (_, anchors, data) = small_setup(8);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for d in &data {
            let b = d.sample(&anchors, 64, 16, &mut rng).unwrap();
            assert!(b.anchors.len() <= 64);
            assert!(b.anchors.iter().filter(|(_, l)| l.class == 1).count() <= 16);
            assert!(b.rois.len() <= 16);
            assert!(b.rois.iter().all(|r| !r.sampling.has_fallback()));
        }
    }

    #[test]
    fn zero_iterations_return_initial_model() {
        let cfg = TrainConfig {
            steps: 0,
            train_scenes: 2,
            ..Default::default()
        };
        let (m, log) = train(&cfg, |_| {}).unwrap();
        assert!(log.is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, stats, _) = prepare_training(&cfg, &mut rng).unwrap();
        let init = ToyModel::init(m.anchor_config.clone(), stats, cfg.init_std, &mut rng);
        assert_eq!(m, init);
    }

    #[test]
    fn model_file_round_trip() {
        let (model, _, _) = small_setup(1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        model.save(&p).unwrap();
        assert_eq!(ToyModel::load(&p).unwrap(), model);
    }

    #[test]
    fn caps_bound_outputs() {
        let (model, anchors, data) = small_setup(2);
        let cfg = DetectConfig {
            rpn_top_n: 50,
            rdn_top_n: 7,
            score_threshold: 0.0,
            ..Default::default()
        };
        let props = propose(&model, &anchors, &data[0].features, &cfg).unwrap();
        assert!(props.len() <= 50);
        let dets = detect(&model, &anchors, &data[0].features, "x", &cfg).unwrap();
        assert!(dets.len() <= 7);
    }
}
